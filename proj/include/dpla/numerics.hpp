#ifndef DPLA_NUMERICS_HPP
#define DPLA_NUMERICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpla {

/// Thrown when a scalar function handed to grad_check produces NaN or Inf.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
///
/// Every activation, weight block and logit batch in the library is one of
/// these. Rows are samples wherever a matrix holds a batch.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != m.cols_) throw std::invalid_argument("Matrix::from_rows: ragged rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) noexcept {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

namespace detail {

inline void require_softmax_input(std::span<const double> v, const char* who) {
  if (v.empty()) throw std::invalid_argument(std::string(who) + ": empty input");
  if (!all_finite(v)) throw std::invalid_argument(std::string(who) + ": non-finite entry");
}

}  // namespace detail

/// Numerically stable softmax (max-subtraction).
inline std::vector<double> softmax(std::span<const double> v) {
  detail::require_softmax_input(v, "softmax");
  const double peak = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - peak);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

inline std::vector<double> log_softmax(std::span<const double> v) {
  detail::require_softmax_input(v, "log_softmax");
  const double peak = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += std::exp(x - peak);
  const double log_norm = peak + std::log(total);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - log_norm;
  return out;
}

/// Row-wise softmax of a logit batch.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

/// Pulls a gradient with respect to softmax outputs back to the logits:
/// dL/df_k = p_k (g_k - sum_j p_j g_j), row by row.
inline Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
  if (probs.rows() != grad_probs.rows() || probs.cols() != grad_probs.cols()) {
    throw std::invalid_argument("softmax_backward: shape mismatch");
  }
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) dot += probs(r, k) * grad_probs(r, k);
    for (std::size_t k = 0; k < probs.cols(); ++k) out(r, k) = probs(r, k) * (grad_probs(r, k) - dot);
  }
  return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// Adds `block` row i into `target` row rows[i].
inline void scatter_add_rows(Matrix& target, const Matrix& block, std::span<const std::size_t> rows) {
  if (block.rows() != rows.size() || block.cols() != target.cols()) {
    throw std::invalid_argument("scatter_add_rows: shape mismatch");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto dst = target.row(rows[i]);
    const auto src = block.row(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
}

/// Central-difference gradient check.
///
/// Returns max_i |fd_i - analytic_i| / max(1, |analytic_i|). `fn` is evaluated
/// at params +/- step along each coordinate; the input vector is restored
/// before returning.
inline double grad_check(const std::function<double(std::span<const double>)>& fn,
                         std::span<const double> params, std::span<const double> analytic,
                         double step = 1e-5) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: size mismatch");
  std::vector<double> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double up = fn(probe);
    probe[i] = saved - step;
    const double down = fn(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw EvaluationError("grad_check: non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(numeric - analytic[i]) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dpla

#endif  // DPLA_NUMERICS_HPP
