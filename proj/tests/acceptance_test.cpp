// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dpla/adjust.hpp"
#include "dpla/config.hpp"
#include "dpla/datagen.hpp"
#include "dpla/eval.hpp"
#include "dpla/gradient_suite.hpp"
#include "dpla/losses.hpp"
#include "dpla/trainer.hpp"

namespace {

using Clock = std::chrono::steady_clock;
using dpla::Matrix;

struct Verdict {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const auto report = dpla::run_gradient_suite();
  const double secs = seconds_since(t0);
  std::string worst;
  for (const auto& [name, err] : report.errors) {
    if (err == report.max_error) worst = name;
  }
  return {report.errors.size() == 6 && report.max_error <= 1e-5 && secs < 10.0,
          fmt("max relative error %.2e", report.max_error) + " (" + worst + "), " + fmt("%.2f s", secs)};
}

Verdict omega_scale_cancels() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_real_distribution<double> u(0.1, 1000.0);
  std::uniform_int_distribution<std::size_t> width(2, 8);
  double worst = 0.0;
  std::size_t argmax_changes = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = width(rng);
    Matrix f(4, k);
    for (double& x : f.data()) x = g(rng);
    std::vector<double> omega(k);
    for (double& o : omega) o = u(rng);
    std::vector<std::size_t> y(4);
    for (auto& v : y) v = std::uniform_int_distribution<std::size_t>(0, k - 1)(rng);
    const double tau = 0.5 + static_cast<double>(t % 4);
    const double base = dpla::balanced_ce_labeled(f, y, omega, tau).value;
    const std::size_t pred = dpla::first_stage_predict(f.row(0), omega, tau);
    for (double scale : {0.1, 7.0, 1000.0}) {
      auto scaled = omega;
      for (double& o : scaled) o *= scale;
      worst = std::max(worst, std::abs(dpla::balanced_ce_labeled(f, y, scaled, tau).value - base));
      argmax_changes += dpla::first_stage_predict(f.row(0), scaled, tau) != pred;
    }
  }
  return {worst < 1e-9 && argmax_changes == 0,
          fmt("max |delta loss| %.2e, argmax changes %.0f over 1000 trials x 3 scales", worst,
              static_cast<double>(argmax_changes))};
}

Verdict flip_example() {
  const double e = std::exp(1.0);
  const std::vector<double> f{3.0, 0.0, 2.5, 0.0};
  const std::vector<double> omega{e * e, 1.0};
  const auto adjusted = dpla::shift_known_logits(std::span<const double>(f).first(2), omega, -1.0);
  const std::size_t plain = dpla::argmax(f);
  const std::size_t refined = dpla::refine_pseudo_label(f, omega, 1.0);
  const bool pass = plain == 0 && refined == 2 && std::abs(adjusted[0] - 1.0) < 1e-12 && adjusted[1] == 0.0;
  return {pass, "argmax " + std::to_string(plain) + " (known) -> refined " + std::to_string(refined) +
                    " (novel), adjusted known logits " + fmt("[%.6g, %.6g]", adjusted[0], adjusted[1])};
}

Verdict hungarian_optimal() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::size_t mismatches = 0;
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int t = 0; t < 100; ++t) {
      Matrix cost(n, n);
      for (double& x : cost.data()) x = u(rng);
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::vector<std::size_t> best_perm;
      double best = INFINITY;
      do {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += cost(i, perm[i]);
        if (c < best) {
          best = c;
          best_perm = perm;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      // Summed in the same row order, so the optimal permutation reproduces `best` exactly.
      const auto a = dpla::eval::hungarian(cost);
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += cost(i, a.column_of_row[i]);
      mismatches += (c != best || a.cost != best);
    }
  }
  return {mismatches == 0, fmt("%.0f of 500 matrices differ from exhaustive minimum", static_cast<double>(mismatches))};
}

double direct_nmi(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const double n = static_cast<double>(a.size());
  std::map<std::size_t, double> ca, cb;
  std::map<std::pair<std::size_t, std::size_t>, double> cab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    cab[{a[i], b[i]}] += 1;
  }
  double ha = 0, hb = 0, mi = 0;
  for (auto& [_, c] : ca) ha -= c / n * std::log(c / n);
  for (auto& [_, c] : cb) hb -= c / n * std::log(c / n);
  if (ha == 0 || hb == 0) return 0.0;
  for (auto& [k, c] : cab) mi += c / n * std::log(c * n / (ca[k.first] * cb[k.second]));
  return mi / ((ha + hb) / 2);
}

double brute_accuracy(const std::vector<std::size_t>& p, const std::vector<std::size_t>& t, std::size_t k) {
  std::vector<std::size_t> map(k);
  std::iota(map.begin(), map.end(), std::size_t{0});
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i) hits += map[p[i]] == t[i];
    best = std::max(best, hits);
  } while (std::next_permutation(map.begin(), map.end()));
  return static_cast<double>(best) / static_cast<double>(p.size());
}

Verdict metric_oracles() {
  using V = std::vector<std::size_t>;
  bool ok = true;
  double worst_nmi = 0.0;
  const std::pair<V, V> nmi_cases[] = {{{0, 0, 1, 1}, {0, 0, 1, 1}},
                                       {{2, 2, 2, 2}, {0, 0, 1, 1}},
                                       {{0, 0, 0, 1}, {0, 0, 1, 1}},
                                       {{0, 1, 2, 2, 1, 0, 3}, {0, 0, 1, 1, 2, 2, 3}}};
  for (const auto& [p, t] : nmi_cases) worst_nmi = std::max(worst_nmi, std::abs(dpla::eval::nmi(p, t) - direct_nmi(p, t)));
  const double example = dpla::eval::nmi(V{0, 0, 0, 1}, V{0, 0, 1, 1});
  ok = ok && worst_nmi <= 1e-9 && std::abs(example - 0.3437110184854508) <= 1e-9;

  const std::pair<V, V> acc_cases[] = {{{0, 0, 1, 1}, {0, 0, 1, 1}},
                                       {{1, 1, 0, 0}, {0, 0, 1, 1}},
                                       {{0, 1, 0, 1}, {0, 0, 1, 1}},
                                       {{2, 0, 1, 2, 0, 1, 1}, {0, 0, 1, 1, 2, 2, 2}}};
  std::size_t acc_mismatch = 0;
  for (const auto& [p, t] : acc_cases) acc_mismatch += dpla::eval::clustering_accuracy(p, t, 3) != brute_accuracy(p, t, 3);
  const double half = dpla::eval::clustering_accuracy(V{0, 1, 0, 1}, V{0, 0, 1, 1}, 2);
  ok = ok && acc_mismatch == 0 && half == 0.5;

  const auto rep = dpla::eval::group_report(V{0, 0, 1, 1, 2, 3, 2, 3}, V{0, 0, 1, 1, 2, 2, 3, 3}, 2, 4, 0);
  ok = ok && rep.known_acc == 1.0 && rep.novel_acc == 0.5;
  return {ok, fmt("nmi example %.10f, max |nmi - direct| %.1e, accuracy mismatches %.0f, half-misassigned novel %.2f",
                  example, worst_nmi, static_cast<double>(acc_mismatch), rep.novel_acc.value_or(-1))};
}

Verdict sampler_fidelity() {
  const auto desc = dpla::long_tail_counts(500, 100.0, 10, dpla::TailDirection::Descending);
  const auto asc = dpla::long_tail_counts(500, 100.0, 10, dpla::TailDirection::Ascending);
  const auto uni = dpla::long_tail_counts(1500, 100.0, 5, dpla::TailDirection::Uniform);
  const bool ends = desc.front() == 500 && std::llabs(static_cast<long long>(desc.back()) - 5) <= 1;
  const bool flat = std::all_of(uni.begin(), uni.end(), [](std::size_t m) { return m == 1500; });
  const bool mirror = std::equal(desc.rbegin(), desc.rend(), asc.begin());

  dpla::DatasetSpec spec;
  spec.known_classes = spec.novel_classes = 5;
  spec.novel_head = 4500;
  spec.gamma_novel = 100;
  spec.regime = dpla::Regime::Consistent;
  const auto consistent = dpla::split_counts(spec).novel;
  spec.regime = dpla::Regime::Reversed;
  const auto reversed = dpla::split_counts(spec).novel;
  const bool regime_mirror = std::equal(consistent.rbegin(), consistent.rend(), reversed.begin());

  return {ends && flat && mirror && regime_mirror,
          fmt("N_1 %.0f -> N_10 %.0f, uniform %.0f, ", static_cast<double>(desc.front()),
              static_cast<double>(desc.back()), static_cast<double>(uni.front())) +
              (mirror && regime_mirror ? "reversed is the exact mirror" : "reversed is NOT a mirror")};
}

Verdict degeneration() {
  dpla::ExperimentConfig cfg;
  cfg.adjust.rho = 0.0;
  cfg.adjust.lambda_1 = 1.0;
  cfg.adjust.lambda_2 = 0.0;
  cfg.epochs = 1;
  const auto data = dpla::make_dataset(cfg);
  const auto model = dpla::init_model(cfg.model_dims(), 3);
  const auto adj = dpla::neutral_adjustment(cfg.data.known_classes, cfg.data.total_classes());
  const auto& lab = data.splits.labeled();
  std::mt19937_64 rng(13);
  double worst = 0.0;
  for (int b = 0; b < 20; ++b) {
    std::vector<std::size_t> lab_rows(10), unl_rows(60);
    for (auto& r : lab_rows) r = std::uniform_int_distribution<std::size_t>(0, lab.size() - 1)(rng);
    for (auto& r : unl_rows) r = std::uniform_int_distribution<std::size_t>(0, data.splits.unlabeled().rows() - 1)(rng);
    std::vector<std::size_t> labels;
    for (std::size_t r : lab_rows) labels.push_back(lab.labels[r]);
    const Matrix batch = dpla::stack_rows(dpla::gather_rows(lab.features, lab_rows),
                                          dpla::gather_rows(data.splits.unlabeled(), unl_rows));
    const auto fwd = dpla::forward(model, batch);
    const auto targets = dpla::derive_targets(fwd, labels, adj, cfg.adjust, cfg.pair_threshold);
    const auto terms = dpla::objective_terms(fwd.logits, targets, adj, cfg.adjust);

    const Matrix probs = dpla::softmax_rows(fwd.logits);
    const double pair = dpla::pairwise_loss(probs, dpla::make_pair_targets(fwd.embeddings, labels, 0.95)).value;
    const double reg = dpla::entropy_reg(probs).value;
    std::vector<std::size_t> labeled_idx(10), unlabeled_idx(60), guesses;
    std::iota(labeled_idx.begin(), labeled_idx.end(), std::size_t{0});
    std::iota(unlabeled_idx.begin(), unlabeled_idx.end(), std::size_t{10});
    for (std::size_t r : unlabeled_idx) guesses.push_back(dpla::argmax(fwd.logits.row(r)));
    const double ce = dpla::ce_loss(dpla::gather_rows(fwd.logits, labeled_idx), labels).value +
                      dpla::ce_loss(dpla::gather_rows(fwd.logits, unlabeled_idx), guesses).value;
    worst = std::max(worst, std::abs(terms.total.value - (pair + ce + reg)));
  }

  // Same identity on the live training path.
  cfg.baseline_mode = true;
  auto state = dpla::init_run(cfg);
  dpla::train_epoch(state, data.splits, cfg, [&](const dpla::BatchTrace& t) {
    worst = std::max(worst, std::abs(t.terms.total.value - (t.terms.pair.value + t.terms.ce.value + t.terms.reg.value)));
  });
  return {worst <= 1e-12, fmt("max |total - (pair + ce + reg)| = %.2e", worst)};
}

Verdict hand_values() {
  dpla::FrequencyTable t;
  t.estimated_ratios = {0.25, 0.25, 0.25, 0.25};
  t.pi_max = 0.25;
  const double w = dpla::second_stage_weights(t, 1.2, 0.8)[0];
  const std::vector<std::size_t> y{0};
  const double b = dpla::balanced_ce_labeled(Matrix::from_rows({{0, 0}}), y, std::vector<double>{std::exp(1.0), 1.0},
                                             1.0)
                       .value;
  return {std::abs(w - 1.09242) <= 1e-5 && std::abs(b - 0.3133) <= 1e-4,
          fmt("uniform weight %.6f, balanced CE %.6f", w, b)};
}

Verdict directional() {
  const auto t0 = Clock::now();
  std::vector<double> novel_d, novel_b, nmi_d, nmi_b;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    dpla::ExperimentConfig cfg;  // 3 + 3 classes, 2-D, separation 6, gamma 10, consistent, 30 epochs
    cfg.seed = cfg.data.seed = seed;
    const auto data = dpla::make_dataset(cfg);
    const auto adjusted = dpla::run_experiment(cfg, data).final_report();
    cfg.baseline_mode = true;
    const auto baseline = dpla::run_experiment(cfg, data).final_report();
    novel_d.push_back(*adjusted.novel_acc);
    novel_b.push_back(*baseline.novel_acc);
    nmi_d.push_back(*adjusted.all_nmi);
    nmi_b.push_back(*baseline.all_nmi);
    std::printf("  seed %llu: adjusted novel %.4f nmi %.4f | baseline novel %.4f nmi %.4f\n",
                static_cast<unsigned long long>(seed), novel_d.back(), nmi_d.back(), novel_b.back(), nmi_b.back());
  }
  const double secs = seconds_since(t0);
  const double nd = median(novel_d), nb = median(novel_b), md = median(nmi_d), mb = median(nmi_b);
  return {nd >= nb && md >= mb && secs < 300.0,
          fmt("median novel_acc %.4f vs baseline %.4f, median all-NMI %.4f vs baseline %.4f", nd, nb, md, mb) +
              fmt(", %.1f s", secs)};
}

Verdict reproducible() {
  dpla::ExperimentConfig cfg;
  cfg.seed = cfg.data.seed = 21;
  const auto a = dpla::run_experiment(cfg);
  const auto b = dpla::run_experiment(cfg);
  bool same_stats = a.epoch_stats.size() == b.epoch_stats.size();
  for (std::size_t i = 0; same_stats && i < a.epoch_stats.size(); ++i) {
    same_stats = a.epoch_stats[i].total == b.epoch_stats[i].total && a.epoch_stats[i].mask_rate == b.epoch_stats[i].mask_rate;
  }
  const bool pass = a.history == b.history && a.model.params == b.model.params && same_stats;
  return {pass, std::to_string(a.history.size()) + " epochs, histories " + (a.history == b.history ? "identical" : "differ")};
}

Verdict leak_check() {
  dpla::ExperimentConfig cfg;
  cfg.seed = cfg.data.seed = 22;
  cfg.epochs = 10;
  const auto data = dpla::make_dataset(cfg);
  auto corrupted = data;
  const auto truth = dpla::eval::TruthGate::hidden_truth(data.splits);
  std::vector<std::size_t> garbage(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) garbage[i] = (truth[i] + 1 + i % 4) % cfg.data.total_classes();
  dpla::eval::TruthGate::overwrite(corrupted.splits, garbage);

  const auto a = dpla::run_experiment(cfg, data);
  const auto b = dpla::run_experiment(cfg, corrupted);
  bool same = a.model.params == b.model.params && a.history == b.history;
  for (std::size_t i = 0; same && i < a.epoch_stats.size(); ++i) {
    same = a.epoch_stats[i].total == b.epoch_stats[i].total && a.epoch_stats[i].mask_rate == b.epoch_stats[i].mask_rate;
  }
  const auto preds = dpla::predict(a.model, data.splits.unlabeled());
  const auto clean = dpla::eval::score_unlabeled(preds, data.splits, cfg.epochs);
  const auto dirty = dpla::eval::score_unlabeled(preds, corrupted.splits, cfg.epochs);
  return {same && clean != dirty, std::string("training outputs ") + (same ? "bit-identical" : "DIFFER") +
                                      fmt(", unlabeled all_acc %.4f (true) vs %.4f (corrupted)",
                                          clean.all_acc.value_or(-1), dirty.all_acc.value_or(-1))};
}

Verdict config_fidelity() {
  const auto direct = dpla::preset_config("cifar10-like");
  const auto parsed = dpla::parse_config_text("preset = cifar10-like\n");
  bool ok = true;
  for (const auto* c : {&direct, &parsed}) {
    const auto& a = c->adjust;
    ok = ok && a.tau_1 == 2.0 && a.tau_2 == 2.0 && a.alpha == 1.2 && a.beta == 0.8 && a.rho == 0.5 &&
         a.lambda_1 == 0.5 && a.lambda_2 == 0.5;
  }
  const auto& a = parsed.adjust;
  return {ok, fmt("tau_1 %g tau_2 %g alpha %g beta %g", a.tau_1, a.tau_2, a.alpha, a.beta) +
                  fmt(" rho %g lambda_1 %g lambda_2 %g", a.rho, a.lambda_1, a.lambda_2)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"gradient suite", gradient_suite},
      {"omega scale cancels within known classes", omega_scale_cancels},
      {"omega scale flips known to novel", flip_example},
      {"hungarian optimality", hungarian_optimal},
      {"nmi and clustering accuracy oracles", metric_oracles},
      {"long-tail sampler fidelity", sampler_fidelity},
      {"neutral adjustment degenerates to pair + ce + reg", degeneration},
      {"hand-evaluated weight and balanced CE", hand_values},
      {"adjusted vs baseline on the 3+3 toy problem", directional},
      {"reproducibility", reproducible},
      {"hidden truth leak check", leak_check},
      {"cifar10-like preset constants", config_fidelity},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::printf("%s criterion %d: %s: %s\n", v.pass ? "PASS" : "FAIL", index, name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", index - failed, index);
  return failed == 0 ? 0 : 1;
}
