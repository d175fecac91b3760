#ifndef DPLA_LOSSES_HPP
#define DPLA_LOSSES_HPP

// Loss terms of the open-world objective and the adjusted (balanced) branch.
// Every term returns its batch value together with the gradient with respect
// to the logits it was computed from. Terms defined on probabilities assume
// the probabilities are row-wise softmax outputs and pull their gradient back
// through that softmax.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpla/adjust.hpp"
#include "dpla/numerics.hpp"

namespace dpla {

inline constexpr double kProbClamp = 1e-7;

struct LossValue {
  double value = 0.0;
  Matrix grad;
};

namespace detail {

inline void require_targets(const Matrix& logits, std::span<const std::size_t> targets, const char* who) {
  if (targets.size() != logits.rows()) {
    throw std::invalid_argument(std::string(who) + ": one target per row required");
  }
  for (std::size_t t : targets) {
    if (t >= logits.cols()) {
      throw std::invalid_argument(std::string(who) + ": target " + std::to_string(t) + " out of range [0, " +
                                  std::to_string(logits.cols()) + ")");
    }
  }
}

// Mean CE over the selected rows; rows with selected[r] == 0 contribute nothing.
inline LossValue selected_ce(const Matrix& logits, std::span<const std::size_t> targets,
                             std::span<const std::uint8_t> selected) {
  LossValue out{0.0, Matrix(logits.rows(), logits.cols())};
  std::size_t active = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) active += selected[r] ? 1 : 0;
  if (active == 0) return out;
  const double inv = 1.0 / static_cast<double>(active);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!selected[r]) continue;
    const auto logp = log_softmax(logits.row(r));
    out.value -= logp[targets[r]] * inv;
    auto g = out.grad.row(r);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = std::exp(logp[k]) * inv;
    g[targets[r]] -= inv;
  }
  return out;
}

}  // namespace detail

/// Mean softmax cross-entropy. An empty batch has zero loss.
inline LossValue ce_loss(const Matrix& logits, std::span<const std::size_t> targets) {
  detail::require_targets(logits, targets, "ce_loss");
  const std::vector<std::uint8_t> all(logits.rows(), 1);
  return detail::selected_ce(logits, targets, all);
}

/// Cross-entropy over the known classes after adding tau_1 ln omega_c to each
/// known logit. `logits` may be wider than omega (the full head); the extra
/// columns are ignored and receive zero gradient.
inline LossValue balanced_ce_labeled(const Matrix& logits, std::span<const std::size_t> labels,
                                     std::span<const double> omega, double tau_1) {
  const std::size_t known = omega.size();
  if (known == 0 || logits.cols() < known) throw std::invalid_argument("balanced_ce_labeled: bad omega length");
  detail::require_positive_omega(omega, "balanced_ce_labeled");
  Matrix shifted(logits.rows(), known);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto adj = shift_known_logits(logits.row(r).first(known), omega, tau_1);
    std::copy(adj.begin(), adj.end(), shifted.row(r).begin());
  }
  detail::require_targets(shifted, labels, "balanced_ce_labeled");
  LossValue inner = ce_loss(shifted, labels);
  if (logits.cols() == known) return inner;
  LossValue out{inner.value, Matrix(logits.rows(), logits.cols())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::copy(inner.grad.row(r).begin(), inner.grad.row(r).end(), out.grad.row(r).begin());
  }
  return out;
}

/// Cross-entropy of scaled logits against refined pseudo-labels, averaged over
/// the masked-in rows only. Gradient is with respect to the scaled logits;
/// pseudo-labels and mask are constants.
inline LossValue masked_pseudo_ce(const Matrix& scaled_logits, std::span<const std::size_t> pseudo_labels,
                                  std::span<const std::uint8_t> mask) {
  detail::require_targets(scaled_logits, pseudo_labels, "masked_pseudo_ce");
  if (mask.size() != scaled_logits.rows()) throw std::invalid_argument("masked_pseudo_ce: one mask bit per row");
  return detail::selected_ce(scaled_logits, pseudo_labels, mask);
}

struct PairTarget {
  std::size_t i;
  std::size_t j;
  double similar;  // 1 = same class, 0 = different class
};

/// Binary cross-entropy on probability inner products, averaged over pairs.
/// The inner product is clamped to [1e-7, 1 - 1e-7]; a clamped pair has zero
/// gradient. No pairs means zero loss.
inline LossValue pairwise_loss(const Matrix& probs, std::span<const PairTarget> pairs) {
  LossValue out{0.0, Matrix(probs.rows(), probs.cols())};
  if (pairs.empty()) return out;
  Matrix grad_probs(probs.rows(), probs.cols());
  const double inv = 1.0 / static_cast<double>(pairs.size());
  for (const auto& pr : pairs) {
    if (pr.i >= probs.rows() || pr.j >= probs.rows()) throw std::invalid_argument("pairwise_loss: row out of range");
    const auto pi = probs.row(pr.i);
    const auto pj = probs.row(pr.j);
    double dot = 0.0;
    for (std::size_t k = 0; k < pi.size(); ++k) dot += pi[k] * pj[k];
    const double d = std::clamp(dot, kProbClamp, 1.0 - kProbClamp);
    out.value -= inv * (pr.similar * std::log(d) + (1.0 - pr.similar) * std::log(1.0 - d));
    if (dot <= kProbClamp || dot >= 1.0 - kProbClamp) continue;
    const double dl_dd = inv * (-pr.similar / d + (1.0 - pr.similar) / (1.0 - d));
    auto gi = grad_probs.row(pr.i);
    auto gj = grad_probs.row(pr.j);
    for (std::size_t k = 0; k < pi.size(); ++k) {
      gi[k] += dl_dd * pj[k];
      gj[k] += dl_dd * pi[k];
    }
  }
  out.grad = softmax_backward(probs, grad_probs);
  return out;
}

/// Pair targets for a batch whose first labels.size() rows are labeled.
/// Labeled-labeled pairs: similar iff labels agree. Any pair involving an
/// unlabeled row: similar iff embedding cosine similarity exceeds `threshold`,
/// otherwise the pair is skipped.
inline std::vector<PairTarget> make_pair_targets(const Matrix& embeddings, std::span<const std::size_t> labels,
                                                 double threshold = 0.95) {
  const std::size_t n = embeddings.rows();
  if (labels.size() > n) throw std::invalid_argument("make_pair_targets: more labels than rows");
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (double x : embeddings.row(r)) s += x * x;
    norms[r] = std::sqrt(s);
  }
  std::vector<PairTarget> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j < labels.size()) {
        pairs.push_back({i, j, labels[i] == labels[j] ? 1.0 : 0.0});
        continue;
      }
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      double dot = 0.0;
      const auto zi = embeddings.row(i);
      const auto zj = embeddings.row(j);
      for (std::size_t k = 0; k < zi.size(); ++k) dot += zi[k] * zj[k];
      if (dot / (norms[i] * norms[j]) > threshold) pairs.push_back({i, j, 1.0});
    }
  }
  return pairs;
}

/// ln K - H(mean probability row), i.e. KL(batch marginal || uniform).
inline LossValue entropy_reg(const Matrix& probs) {
  if (probs.rows() == 0) throw std::invalid_argument("entropy_reg: empty batch");
  const std::size_t k = probs.cols();
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  std::vector<double> mean(k, 0.0);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    for (std::size_t c = 0; c < k; ++c) mean[c] += probs(r, c) * inv_n;
  }
  double neg_entropy = 0.0;
  std::vector<double> d_mean(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double clamped = std::max(mean[c], kProbClamp);
    neg_entropy += mean[c] * std::log(clamped);
    d_mean[c] = std::log(clamped) + (mean[c] >= kProbClamp ? 1.0 : 0.0);
  }
  LossValue out;
  out.value = std::log(static_cast<double>(k)) + neg_entropy;
  Matrix grad_probs(probs.rows(), k);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    for (std::size_t c = 0; c < k; ++c) grad_probs(r, c) = d_mean[c] * inv_n;
  }
  out.grad = softmax_backward(probs, grad_probs);
  return out;
}

/// pair + lambda_1 * ce + lambda_2 * b_ce + reg. All gradients must share one shape.
inline LossValue total_loss(const LossValue& pair, const LossValue& ce, const LossValue& b_ce, const LossValue& reg,
                            double lambda_1, double lambda_2) {
  const Matrix& ref = pair.grad;
  for (const LossValue* lv : {&ce, &b_ce, &reg}) {
    if (lv->grad.rows() != ref.rows() || lv->grad.cols() != ref.cols()) {
      throw std::invalid_argument("total_loss: gradient shapes differ");
    }
  }
  LossValue out{pair.value + lambda_1 * ce.value + lambda_2 * b_ce.value + reg.value, Matrix(ref.rows(), ref.cols())};
  auto g = out.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = pair.grad.data()[i] + lambda_1 * ce.grad.data()[i] + lambda_2 * b_ce.grad.data()[i] + reg.grad.data()[i];
  }
  return out;
}

}  // namespace dpla

#endif  // DPLA_LOSSES_HPP
