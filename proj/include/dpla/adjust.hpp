#ifndef DPLA_ADJUST_HPP
#define DPLA_ADJUST_HPP

// Dual-stage post-hoc logit adjustment.
//
// Stage one shifts known-class logits by -tau * ln(omega_c), where omega_c
// grows with the labeled frequency of class c and with the size of the
// problem (class count, input resolution). Stage two rescales every logit of
// an unlabeled sample by a weight that is larger for classes the model
// currently predicts rarely.
//
// Class indices are zero-based; known classes come first.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpla/numerics.hpp"

namespace dpla {

struct AdjustConfig {
  double tau_1 = 2.0;
  double tau_2 = 2.0;
  double alpha = 1.2;
  double beta = 0.8;
  double rho = 0.5;  // confidence threshold for the pseudo-label mask
  double class_base = 10.0;
  double size_base = 1024.0;  // 32 x 32
  double lambda_1 = 0.5;
  double lambda_2 = 0.5;

  void validate() const {
    if (!(tau_1 > 0.0)) throw std::invalid_argument("tau_1 must be > 0");
    if (!(tau_2 > 0.0)) throw std::invalid_argument("tau_2 must be > 0");
    if (!(alpha >= beta)) throw std::invalid_argument("alpha must be >= beta");
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
    if (!(class_base > 0.0)) throw std::invalid_argument("class_base must be > 0");
    if (!(size_base > 0.0)) throw std::invalid_argument("size_base must be > 0");
    if (!std::isfinite(lambda_1) || !std::isfinite(lambda_2)) throw std::invalid_argument("lambdas must be finite");
  }
};

struct FrequencyTable {
  std::vector<double> labeled_counts;    // F, one per known class
  std::vector<double> estimated_ratios;  // pi^r over all classes, sums to 1
  double pi_max = 0.0;
};

/// omega_c = 10 * ceil(C / C_base) * sqrt(S / S_base) * F_c over the known classes.
inline std::vector<double> compute_omega(std::span<const double> labeled_counts, double total_classes,
                                         double input_size, const AdjustConfig& cfg) {
  if (!(total_classes >= 1.0) || !(input_size >= 1.0)) {
    throw std::invalid_argument("compute_omega: class count and input size must be >= 1");
  }
  const double scale =
      10.0 * std::ceil(total_classes / cfg.class_base) * std::sqrt(input_size / cfg.size_base);
  std::vector<double> omega(labeled_counts.size());
  for (std::size_t c = 0; c < labeled_counts.size(); ++c) {
    if (!(labeled_counts[c] > 0.0)) {
      throw std::invalid_argument("compute_omega: class " + std::to_string(c) + " has zero labeled frequency");
    }
    omega[c] = scale * labeled_counts[c];
  }
  return omega;
}

namespace detail {

inline void require_finite(std::span<const double> v, const char* who) {
  if (!all_finite(v)) throw std::invalid_argument(std::string(who) + ": non-finite input");
}

inline void require_positive_omega(std::span<const double> omega, const char* who) {
  for (double o : omega) {
    if (!(o > 0.0)) throw std::invalid_argument(std::string(who) + ": omega must be positive");
  }
}

}  // namespace detail

/// f_c + tau * ln(omega_c) on the first omega.size() slots; remaining slots
/// are copied unchanged. Pass a negative tau to subtract.
inline std::vector<double> shift_known_logits(std::span<const double> logits, std::span<const double> omega,
                                              double tau) {
  if (omega.size() > logits.size()) throw std::invalid_argument("shift_known_logits: omega longer than logits");
  std::vector<double> out(logits.begin(), logits.end());
  for (std::size_t c = 0; c < omega.size(); ++c) out[c] += tau * std::log(omega[c]);
  return out;
}

/// argmax_c (f_c - tau_1 ln omega_c) over the known classes.
inline std::size_t first_stage_predict(std::span<const double> known_logits, std::span<const double> omega,
                                       double tau_1) {
  if (known_logits.size() != omega.size() || omega.empty()) {
    throw std::invalid_argument("first_stage_predict: logits and omega must have equal nonzero length");
  }
  detail::require_finite(known_logits, "first_stage_predict");
  detail::require_positive_omega(omega, "first_stage_predict");
  return argmax(shift_known_logits(known_logits, omega, -tau_1));
}

inline std::vector<double> temperature_scaled_probs(std::span<const double> logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature_scaled_probs: tau must be > 0");
  std::vector<double> scaled(logits.begin(), logits.end());
  for (double& x : scaled) x /= tau;
  return softmax(scaled);
}

/// Add-one smoothed class ratios from hard predictions.
inline FrequencyTable estimate_frequencies(std::span<const std::size_t> predictions, std::size_t num_classes,
                                           double smoothing = 1.0) {
  if (predictions.empty()) throw std::invalid_argument("estimate_frequencies: no predictions");
  std::vector<double> counts(num_classes, smoothing);
  for (std::size_t p : predictions) {
    if (p >= num_classes) throw std::invalid_argument("estimate_frequencies: prediction out of range");
    counts[p] += 1.0;
  }
  const double total = static_cast<double>(predictions.size()) + static_cast<double>(num_classes) * smoothing;
  FrequencyTable t;
  t.estimated_ratios.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) t.estimated_ratios[c] = counts[c] / total;
  t.pi_max = *std::max_element(t.estimated_ratios.begin(), t.estimated_ratios.end());
  return t;
}

/// w_c = sigmoid(exp(-pi_c) / exp(-pi_max)) * (alpha - beta) + beta.
inline std::vector<double> second_stage_weights(const FrequencyTable& freq, double alpha, double beta) {
  if (!(alpha >= beta)) throw std::invalid_argument("second_stage_weights: alpha must be >= beta");
  std::vector<double> w(freq.estimated_ratios.size());
  for (std::size_t c = 0; c < w.size(); ++c) {
    const double ratio = std::exp(freq.pi_max - freq.estimated_ratios[c]);
    w[c] = sigmoid(ratio) * (alpha - beta) + beta;
  }
  return w;
}

inline std::vector<double> scale_logits(std::span<const double> weights, std::span<const double> logits) {
  if (weights.size() != logits.size()) throw std::invalid_argument("scale_logits: length mismatch");
  std::vector<double> out(logits.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = weights[c] * logits[c];
  return out;
}

/// Pseudo-label after pushing known-class logits down by tau_2 ln omega_c.
/// Novel slots are untouched and the argmax runs over every class, so a large
/// omega can move a sample from a known class to a novel one.
inline std::size_t refine_pseudo_label(std::span<const double> logits, std::span<const double> omega, double tau_2) {
  if (!(tau_2 > 0.0)) throw std::invalid_argument("refine_pseudo_label: tau_2 must be > 0");
  detail::require_finite(logits, "refine_pseudo_label");
  detail::require_positive_omega(omega, "refine_pseudo_label");
  return argmax(shift_known_logits(logits, omega, -tau_2));
}

/// True iff the largest softmax probability of the scaled logits reaches rho.
inline bool confidence_mask(std::span<const double> scaled_logits, double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("confidence_mask: rho must lie in [0, 1]");
  const auto p = softmax(scaled_logits);
  return *std::max_element(p.begin(), p.end()) >= rho;
}

}  // namespace dpla

#endif  // DPLA_ADJUST_HPP
