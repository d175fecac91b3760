#ifndef DPLA_TRAINER_HPP
#define DPLA_TRAINER_HPP

// Training loop. Each epoch:
//   1. predict every unlabeled sample and re-estimate class ratios,
//   2. recompute omega (stage one) and the logit weights (stage two),
//   3. walk seeded mixed batches: forward, derive pseudo-labels / mask / pair
//      targets, evaluate the composite loss, backward, optimizer step.
// After each epoch the model is scored on a class-balanced held-out set.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "dpla/adjust.hpp"
#include "dpla/datagen.hpp"
#include "dpla/eval.hpp"
#include "dpla/losses.hpp"
#include "dpla/model.hpp"
#include "dpla/numerics.hpp"

namespace dpla {

struct ExperimentConfig {
  DatasetSpec data;
  double separation = 6.0;           // synthetic source only
  std::string cifar_path;            // non-empty selects the binary image source
  std::size_t test_per_class = 200;  // held-out balanced test set
  double omega_input_size = 0.0;     // S in omega; 0 means "use input_dim"
  AdjustConfig adjust;
  std::size_t hidden_dim = 128;
  std::size_t embed_dim = 64;
  Optimizer optimizer = Adam{};
  std::size_t epochs = 30;
  std::size_t batch_size = 200;
  std::uint64_t seed = 0;
  bool baseline_mode = false;
  double pair_threshold = 0.95;

  double omega_size() const noexcept {
    return omega_input_size > 0.0 ? omega_input_size : static_cast<double>(data.input_dim);
  }

  ModelDims model_dims() const { return {data.input_dim, hidden_dim, embed_dim, data.total_classes()}; }

  void validate() const {
    data.validate();
    adjust.validate();
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (hidden_dim < 1 || embed_dim < 1) throw std::invalid_argument("model widths must be >= 1");
    if (test_per_class < 1) throw std::invalid_argument("test_per_class must be >= 1");
    if (!(separation >= 0.0)) throw std::invalid_argument("separation must be >= 0");
    if (!(pair_threshold > -1.0 && pair_threshold < 1.0)) throw std::invalid_argument("pair_threshold must lie in (-1, 1)");
    const double lr = std::visit([](const auto& o) { return o.lr; }, optimizer);
    if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  }
};

/// Per-epoch constants of the adjustment.
struct EpochAdjustment {
  FrequencyTable freq;
  std::vector<double> omega;    // known classes
  std::vector<double> weights;  // all classes
  bool refine = true;
};

/// Everything derived from the current model that the loss treats as a
/// constant: pair targets, pseudo-labels, masks.
struct BatchTargets {
  std::vector<std::size_t> labels;  // first labels.size() rows are labeled
  std::vector<PairTarget> pairs;
  std::vector<std::size_t> ce_rows;
  std::vector<std::size_t> ce_targets;
  std::vector<std::size_t> pseudo;  // refined pseudo-label per unlabeled row
  std::vector<std::uint8_t> mask;   // confidence mask per unlabeled row
};

struct BatchTerms {
  LossValue pair, ce, b_ce, reg, total;
};

inline EpochAdjustment neutral_adjustment(std::size_t known, std::size_t total) {
  EpochAdjustment a;
  a.freq.estimated_ratios.assign(total, 1.0 / static_cast<double>(total));
  a.freq.pi_max = 1.0 / static_cast<double>(total);
  a.omega.assign(known, 1.0);
  a.weights.assign(total, 1.0);
  a.refine = false;
  return a;
}

inline BatchTargets derive_targets(const ForwardResult& fwd, std::span<const std::size_t> labels,
                                   const EpochAdjustment& adj, const AdjustConfig& cfg, double pair_threshold) {
  const std::size_t n = fwd.logits.rows();
  const std::size_t labeled = labels.size();
  BatchTargets t;
  t.labels.assign(labels.begin(), labels.end());
  t.pairs = make_pair_targets(fwd.embeddings, labels, pair_threshold);
  for (std::size_t r = 0; r < labeled; ++r) {
    t.ce_rows.push_back(r);
    t.ce_targets.push_back(labels[r]);
  }
  for (std::size_t r = labeled; r < n; ++r) {
    const auto f = fwd.logits.row(r);
    const auto p = softmax(f);
    const std::size_t guess = argmax(p);
    if (p[guess] >= cfg.rho) {
      t.ce_rows.push_back(r);
      t.ce_targets.push_back(guess);
    }
    t.pseudo.push_back(adj.refine ? refine_pseudo_label(f, adj.omega, cfg.tau_2) : argmax(f));
    t.mask.push_back(confidence_mask(scale_logits(adj.weights, f), cfg.rho) ? 1 : 0);
  }
  return t;
}

/// Composite loss of one batch with targets held fixed; every gradient is
/// with respect to the batch logits.
inline BatchTerms objective_terms(const Matrix& logits, const BatchTargets& t, const EpochAdjustment& adj,
                                  const AdjustConfig& cfg) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  const std::size_t labeled = t.labels.size();
  BatchTerms out;
  const Matrix probs = softmax_rows(logits);
  out.pair = pairwise_loss(probs, t.pairs);
  out.reg = entropy_reg(probs);

  std::vector<std::size_t> labeled_rows(labeled), unlabeled_rows(n - labeled);
  std::iota(labeled_rows.begin(), labeled_rows.end(), std::size_t{0});
  std::iota(unlabeled_rows.begin(), unlabeled_rows.end(), labeled);

  // Labeled rows and confident unlabeled rows are averaged separately so the
  // small labeled share is not diluted by the pseudo-labeled majority.
  out.ce = {0.0, Matrix(n, c)};
  auto add_ce = [&](std::span<const std::size_t> rows, std::span<const std::size_t> targets) {
    if (rows.empty()) return;
    LossValue part = ce_loss(gather_rows(logits, rows), targets);
    out.ce.value += part.value;
    scatter_add_rows(out.ce.grad, part.grad, rows);
  };
  const auto ce_rows = std::span<const std::size_t>(t.ce_rows);
  const auto ce_targets = std::span<const std::size_t>(t.ce_targets);
  add_ce(ce_rows.first(labeled), ce_targets.first(labeled));
  add_ce(ce_rows.subspan(labeled), ce_targets.subspan(labeled));

  out.b_ce = {0.0, Matrix(n, c)};
  if (labeled > 0) {
    LossValue part = balanced_ce_labeled(gather_rows(logits, labeled_rows), t.labels, adj.omega, cfg.tau_1);
    out.b_ce.value += part.value;
    scatter_add_rows(out.b_ce.grad, part.grad, labeled_rows);
  }
  if (!unlabeled_rows.empty()) {
    Matrix scaled(unlabeled_rows.size(), c);
    for (std::size_t i = 0; i < unlabeled_rows.size(); ++i) {
      const auto s = scale_logits(adj.weights, logits.row(unlabeled_rows[i]));
      std::copy(s.begin(), s.end(), scaled.row(i).begin());
    }
    LossValue part = masked_pseudo_ce(scaled, t.pseudo, t.mask);
    for (std::size_t i = 0; i < part.grad.rows(); ++i) {
      for (std::size_t k = 0; k < c; ++k) part.grad(i, k) *= adj.weights[k];
    }
    out.b_ce.value += part.value;
    scatter_add_rows(out.b_ce.grad, part.grad, unlabeled_rows);
  }

  out.total = total_loss(out.pair, out.ce, out.b_ce, out.reg, cfg.lambda_1, cfg.lambda_2);
  return out;
}

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  if (!top.empty() && !bottom.empty() && top.cols() != bottom.cols()) {
    throw std::invalid_argument("stack_rows: column mismatch");
  }
  const std::size_t cols = top.empty() ? bottom.cols() : top.cols();
  std::vector<double> data(top.data().begin(), top.data().end());
  data.insert(data.end(), bottom.data().begin(), bottom.data().end());
  return Matrix(top.rows() + bottom.rows(), cols, std::move(data));
}

/// Argmax over every head slot, evaluated in chunks.
inline std::vector<std::size_t> predict(const ModelState& model, const Matrix& features, std::size_t chunk = 1024) {
  std::vector<std::size_t> out;
  out.reserve(features.rows());
  for (std::size_t start = 0; start < features.rows(); start += chunk) {
    const std::size_t stop = std::min(features.rows(), start + chunk);
    std::vector<std::size_t> rows(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto fwd = forward(model, gather_rows(features, rows));
    for (std::size_t r = 0; r < fwd.logits.rows(); ++r) out.push_back(argmax(fwd.logits.row(r)));
  }
  return out;
}

inline std::vector<double> labeled_class_counts(const LabeledSamples& labeled, std::size_t known) {
  std::vector<double> counts(known, 0.0);
  for (std::size_t y : labeled.labels) counts[y] += 1.0;
  return counts;
}

/// Frequency estimation plus omega and weights for the coming epoch.
inline EpochAdjustment prepare_epoch(const ModelState& model, const RolsslSplits& splits,
                                     const ExperimentConfig& cfg) {
  const std::size_t total = splits.total_classes();
  if (cfg.baseline_mode) return neutral_adjustment(splits.known_classes(), total);
  EpochAdjustment adj;
  adj.freq = estimate_frequencies(predict(model, splits.unlabeled()), total);
  adj.freq.labeled_counts = labeled_class_counts(splits.labeled(), splits.known_classes());
  adj.omega = compute_omega(adj.freq.labeled_counts, static_cast<double>(total), cfg.omega_size(), cfg.adjust);
  adj.weights = second_stage_weights(adj.freq, cfg.adjust.alpha, cfg.adjust.beta);
  adj.refine = true;
  return adj;
}

struct EpochStats {
  double pair = 0.0, ce = 0.0, b_ce = 0.0, reg = 0.0, total = 0.0;
  double mask_rate = 0.0;  // fraction of unlabeled rows that passed the mask
  std::size_t batches = 0;
};

struct RunState {
  ModelState model;
  EpochAdjustment adjustment;
  std::size_t epoch = 0;  // completed epochs
  std::vector<eval::MetricsReport> history;
};

struct BatchTrace {
  std::size_t batch = 0;
  const Matrix& logits;
  const BatchTerms& terms;
};
using BatchObserver = std::function<void(const BatchTrace&)>;

inline RunState init_run(const ExperimentConfig& cfg) {
  RunState s;
  s.model = init_model(cfg.model_dims(), cfg.seed);
  return s;
}

/// One pass over the unlabeled pool. Labeled rows are cycled so every batch
/// holds labeled and unlabeled samples in proportion to the pool sizes.
inline EpochStats train_epoch(RunState& state, const RolsslSplits& splits, const ExperimentConfig& cfg,
                              const BatchObserver& observer = {}) {
  const LabeledSamples& labeled = splits.labeled();
  const Matrix& unlabeled = splits.unlabeled();
  if (labeled.size() == 0 || unlabeled.rows() == 0) throw std::invalid_argument("train_epoch: empty partition");

  state.adjustment = prepare_epoch(state.model, splits, cfg);
  const EpochAdjustment& adj = state.adjustment;

  const double labeled_share =
      static_cast<double>(labeled.size()) / static_cast<double>(labeled.size() + unlabeled.rows());
  const std::size_t per_labeled = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(labeled_share * static_cast<double>(cfg.batch_size))), 1,
      cfg.batch_size - 1);
  const std::size_t per_unlabeled = cfg.batch_size - per_labeled;

  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ULL + state.epoch + 1);
  std::vector<std::size_t> lab_order(labeled.size()), unl_order(unlabeled.rows());
  std::iota(lab_order.begin(), lab_order.end(), std::size_t{0});
  std::iota(unl_order.begin(), unl_order.end(), std::size_t{0});
  std::shuffle(lab_order.begin(), lab_order.end(), rng);
  std::shuffle(unl_order.begin(), unl_order.end(), rng);

  EpochStats stats;
  std::size_t lab_cursor = 0;
  std::size_t masked_in = 0;
  for (std::size_t start = 0; start < unl_order.size(); start += per_unlabeled) {
    const std::size_t stop = std::min(unl_order.size(), start + per_unlabeled);
    std::vector<std::size_t> lab_rows;
    for (std::size_t i = 0; i < per_labeled; ++i) {
      lab_rows.push_back(lab_order[lab_cursor]);
      lab_cursor = (lab_cursor + 1) % lab_order.size();
    }
    std::vector<std::size_t> labels;
    for (std::size_t r : lab_rows) labels.push_back(labeled.labels[r]);
    const std::span<const std::size_t> unl_rows(unl_order.data() + start, stop - start);
    const Matrix batch = stack_rows(gather_rows(labeled.features, lab_rows), gather_rows(unlabeled, unl_rows));

    const ForwardResult fwd = forward(state.model, batch);
    if (!all_finite(fwd.logits.data())) {
      throw std::runtime_error("train_epoch: non-finite logits at epoch " + std::to_string(state.epoch + 1) +
                               ", batch " + std::to_string(stats.batches) + " (learning rate too high?)");
    }
    const BatchTargets targets = derive_targets(fwd, labels, adj, cfg.adjust, cfg.pair_threshold);
    const BatchTerms terms = objective_terms(fwd.logits, targets, adj, cfg.adjust);
    const std::pair<const char*, double> named[] = {{"pair", terms.pair.value}, {"ce", terms.ce.value},
                                                    {"b_ce", terms.b_ce.value}, {"reg", terms.reg.value},
                                                    {"total", terms.total.value}};
    for (const auto& [name, value] : named) {
      if (!std::isfinite(value)) {
        throw std::runtime_error("train_epoch: non-finite " + std::string(name) + " loss at epoch " +
                                 std::to_string(state.epoch + 1) + ", batch " + std::to_string(stats.batches));
      }
    }
    if (observer) observer({stats.batches, fwd.logits, terms});

    step(state.model, backward(state.model, batch, terms.total.grad), cfg.optimizer);

    stats.pair += terms.pair.value;
    stats.ce += terms.ce.value;
    stats.b_ce += terms.b_ce.value;
    stats.reg += terms.reg.value;
    stats.total += terms.total.value;
    for (auto m : targets.mask) masked_in += m;
    ++stats.batches;
  }
  const double inv = 1.0 / static_cast<double>(stats.batches);
  stats.pair *= inv;
  stats.ce *= inv;
  stats.b_ce *= inv;
  stats.reg *= inv;
  stats.total *= inv;
  stats.mask_rate = static_cast<double>(masked_in) / static_cast<double>(unlabeled.rows());
  ++state.epoch;
  return stats;
}

inline eval::MetricsReport evaluate(const ModelState& model, const LabeledSamples& test, std::size_t known,
                                    std::size_t epoch) {
  const auto preds = predict(model, test.features);
  return eval::group_report(preds, test.labels, known, model.dims.num_classes, epoch);
}

/// Synthetic pool (or binary image file), held-out test set, then splits.
inline DatasetBundle make_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  const DatasetSpec& spec = cfg.data;
  SamplePool pool;
  if (cfg.cifar_path.empty()) {
    const SplitCounts counts = split_counts(spec);
    std::size_t need = 0;
    for (std::size_t c = 0; c < spec.known_classes; ++c) need = std::max(need, counts.labeled[c] + counts.unlabeled[c]);
    for (std::size_t m : counts.novel) need = std::max(need, m);
    pool = gen_synthetic_gaussian(spec.total_classes(), spec.input_dim, cfg.separation, spec.seed,
                                  need + cfg.test_per_class);
  } else {
    pool = load_cifar_binary(cfg.cifar_path);
    pool.classes.resize(std::min(pool.classes.size(), spec.total_classes()));
  }
  LabeledSamples test = split_off_test(pool, cfg.test_per_class);
  return {build_splits(spec, pool), std::move(test)};
}

struct ExperimentResult {
  std::vector<eval::MetricsReport> history;
  std::vector<EpochStats> epoch_stats;
  ModelState model;

  const eval::MetricsReport& final_report() const { return history.back(); }
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const DatasetBundle& data) {
  cfg.validate();
  if (data.splits.known_classes() != cfg.data.known_classes || data.splits.novel_classes() != cfg.data.novel_classes ||
      data.splits.input_dim() != cfg.data.input_dim) {
    throw std::invalid_argument("run_experiment: dataset does not match the configured class counts / input_dim");
  }
  RunState state = init_run(cfg);
  ExperimentResult result;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    result.epoch_stats.push_back(train_epoch(state, data.splits, cfg));
    state.history.push_back(evaluate(state.model, data.test, data.splits.known_classes(), state.epoch));
  }
  result.history = std::move(state.history);
  result.model = std::move(state.model);
  return result;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, make_dataset(cfg)); }

}  // namespace dpla

#endif  // DPLA_TRAINER_HPP
