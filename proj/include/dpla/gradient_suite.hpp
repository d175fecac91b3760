#ifndef DPLA_GRADIENT_SUITE_HPP
#define DPLA_GRADIENT_SUITE_HPP

// Finite-difference check of every loss term composed with the model's
// forward pass, on a small random network and batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dpla/adjust.hpp"
#include "dpla/losses.hpp"
#include "dpla/model.hpp"
#include "dpla/numerics.hpp"
#include "dpla/trainer.hpp"

namespace dpla {

struct GradientReport {
  std::vector<std::pair<std::string, double>> errors;  // loss name, max relative error
  double max_error = 0.0;
};

/// Batch of 8 (3 labeled), input 4, hidden 10, embedding 6, head 5 (2 known).
inline GradientReport run_gradient_suite(std::uint64_t seed = 7, double step = 1e-5) {
  const ModelDims dims{4, 10, 6, 5};
  const std::size_t n = 8;
  const ModelState state = init_model(dims, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix batch(n, dims.input_dim);
  for (double& x : batch.data()) x = gauss(rng);

  const std::vector<std::size_t> labels{0, 1, 0};
  const std::vector<std::size_t> targets{0, 1, 0, 2, 4, 3, 1, 2};
  const std::vector<double> omega{std::exp(1.5), 2.0};
  const std::vector<double> weights{0.85, 1.1, 0.95, 1.15, 1.05};
  const std::vector<std::size_t> pseudo{2, 4, 0, 1, 3};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
  const std::vector<PairTarget> pairs{{0, 1, 0.0}, {0, 2, 1.0}, {1, 2, 0.0}, {2, 5, 1.0},
                                      {3, 6, 1.0}, {4, 7, 0.0}, {5, 6, 1.0}};

  EpochAdjustment adj;
  adj.freq = estimate_frequencies(std::vector<std::size_t>{0, 0, 0, 1, 2, 3, 3, 4}, dims.num_classes);
  adj.freq.labeled_counts = {2.0, 1.0};
  adj.omega = compute_omega(adj.freq.labeled_counts, static_cast<double>(dims.num_classes), 16.0, AdjustConfig{});
  adj.weights = second_stage_weights(adj.freq, 1.2, 0.8);
  adj.refine = true;
  AdjustConfig acfg;
  acfg.rho = 0.2;
  const BatchTargets fixed = derive_targets(forward(state, batch), labels, adj, acfg, 0.0);

  auto unlabeled_rows = [&](const Matrix& logits) {
    Matrix scaled(n - labels.size(), dims.num_classes);
    for (std::size_t r = labels.size(); r < n; ++r) {
      const auto s = scale_logits(weights, logits.row(r));
      std::copy(s.begin(), s.end(), scaled.row(r - labels.size()).begin());
    }
    return scaled;
  };

  using LossFn = std::function<LossValue(const Matrix&)>;
  const std::vector<std::pair<std::string, LossFn>> losses{
      {"ce", [&](const Matrix& f) { return ce_loss(f, targets); }},
      {"balanced_ce",
       [&](const Matrix& f) {
         std::vector<std::size_t> rows{0, 1, 2};
         LossValue part = balanced_ce_labeled(gather_rows(f, rows), labels, omega, 2.0);
         LossValue out{part.value, Matrix(n, dims.num_classes)};
         scatter_add_rows(out.grad, part.grad, rows);
         return out;
       }},
      {"masked_pseudo_ce",
       [&](const Matrix& f) {
         LossValue part = masked_pseudo_ce(unlabeled_rows(f), pseudo, mask);
         LossValue out{part.value, Matrix(n, dims.num_classes)};
         for (std::size_t r = 0; r < part.grad.rows(); ++r) {
           for (std::size_t k = 0; k < dims.num_classes; ++k) {
             out.grad(r + labels.size(), k) = part.grad(r, k) * weights[k];
           }
         }
         return out;
       }},
      {"pairwise", [&](const Matrix& f) { return pairwise_loss(softmax_rows(f), pairs); }},
      {"entropy_reg", [&](const Matrix& f) { return entropy_reg(softmax_rows(f)); }},
      {"total", [&](const Matrix& f) { return objective_terms(f, fixed, adj, acfg).total; }},
  };

  GradientReport report;
  for (const auto& [name, loss] : losses) {
    const LossValue at = loss(forward(state, batch).logits);
    const auto analytic = backward(state, batch, at.grad);
    const double err = grad_check(
        [&](std::span<const double> p) { return loss(forward(dims, p, batch).logits).value; }, state.params,
        analytic, step);
    report.errors.emplace_back(name, err);
    report.max_error = std::max(report.max_error, err);
  }
  return report;
}

}  // namespace dpla

#endif  // DPLA_GRADIENT_SUITE_HPP
