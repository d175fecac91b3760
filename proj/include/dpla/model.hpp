#ifndef DPLA_MODEL_HPP
#define DPLA_MODEL_HPP

// Encoder (input -> hidden ReLU -> embedding) plus a linear classifier head
// of width known + novel. The first `known` logits belong to known classes.
//
// All parameters live in one flat vector so the optimizer and the gradient
// checker can treat the model as a single point in R^n.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dpla/binary_io.hpp"
#include "dpla/numerics.hpp"

namespace dpla {

struct ModelDims {
  std::size_t input_dim = 2;
  std::size_t hidden_dim = 128;
  std::size_t embed_dim = 64;
  std::size_t num_classes = 6;

  bool operator==(const ModelDims&) const = default;
};

/// Offsets of each parameter block inside the flat vector. Weight blocks are
/// stored row-major as (out x in).
struct ParamLayout {
  explicit ParamLayout(const ModelDims& d)
      : w1(0),
        b1(w1 + d.hidden_dim * d.input_dim),
        w2(b1 + d.hidden_dim),
        b2(w2 + d.embed_dim * d.hidden_dim),
        wc(b2 + d.embed_dim),
        bc(wc + d.num_classes * d.embed_dim),
        total(bc + d.num_classes) {}

  std::size_t w1, b1, w2, b2, wc, bc, total;
};

struct ModelState {
  ModelDims dims;
  std::vector<double> params;
  // Optimizer buffers: SGD velocity lives in `first_moment`.
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t steps = 0;

  ParamLayout layout() const { return ParamLayout(dims); }
};

inline void validate_dims(const ModelDims& d) {
  if (d.input_dim < 1 || d.hidden_dim < 1 || d.embed_dim < 1 || d.num_classes < 1) {
    throw std::invalid_argument("model dims must all be >= 1");
  }
}

/// Weights ~ N(0, 1/fan_in), biases zero.
inline ModelState init_model(const ModelDims& dims, std::uint64_t seed) {
  validate_dims(dims);
  ModelState s;
  s.dims = dims;
  const ParamLayout L(dims);
  s.params.assign(L.total, 0.0);
  s.first_moment.assign(L.total, 0.0);
  s.second_moment.assign(L.total, 0.0);
  std::mt19937_64 rng(seed);
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < count; ++i) s.params[offset + i] = dist(rng);
  };
  fill(L.w1, dims.hidden_dim * dims.input_dim, dims.input_dim);
  fill(L.w2, dims.embed_dim * dims.hidden_dim, dims.hidden_dim);
  fill(L.wc, dims.num_classes * dims.embed_dim, dims.embed_dim);
  return s;
}

struct ForwardResult {
  Matrix hidden;      // post-ReLU
  Matrix embeddings;  // z
  Matrix logits;      // f(x)
};

namespace detail {

// out(n x out_dim) = in(n x in_dim) * W^T + b, W stored (out_dim x in_dim).
inline Matrix affine(const Matrix& in, std::span<const double> w, std::span<const double> b, std::size_t out_dim) {
  const std::size_t in_dim = in.cols();
  Matrix out(in.rows(), out_dim);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = w.data() + o * in_dim;
      double acc = b[o];
      for (std::size_t i = 0; i < in_dim; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

// Accumulates dW += g^T x, db += sum_rows g, and returns dx = g W.
inline Matrix affine_backward(const Matrix& in, const Matrix& grad_out, std::span<const double> w,
                              std::span<double> dw, std::span<double> db) {
  const std::size_t in_dim = in.cols();
  const std::size_t out_dim = grad_out.cols();
  Matrix grad_in(in.rows(), in_dim);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const auto x = in.row(r);
    const auto g = grad_out.row(r);
    auto gx = grad_in.row(r);
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      db[o] += go;
      double* dwr = dw.data() + o * in_dim;
      const double* wr = w.data() + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) {
        dwr[i] += go * x[i];
        gx[i] += go * wr[i];
      }
    }
  }
  return grad_in;
}

}  // namespace detail

/// Forward pass with an explicit parameter vector (used by gradient checks).
inline ForwardResult forward(const ModelDims& dims, std::span<const double> params, const Matrix& batch) {
  const ParamLayout L(dims);
  if (params.size() != L.total) throw std::invalid_argument("forward: parameter vector has wrong length");
  if (batch.cols() != dims.input_dim) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                                std::to_string(dims.input_dim));
  }
  ForwardResult out;
  out.hidden = detail::affine(batch, params.subspan(L.w1, L.b1 - L.w1), params.subspan(L.b1, dims.hidden_dim),
                              dims.hidden_dim);
  for (double& h : out.hidden.data()) h = h > 0.0 ? h : 0.0;
  out.embeddings = detail::affine(out.hidden, params.subspan(L.w2, L.b2 - L.w2), params.subspan(L.b2, dims.embed_dim),
                                  dims.embed_dim);
  out.logits = detail::affine(out.embeddings, params.subspan(L.wc, L.bc - L.wc),
                              params.subspan(L.bc, dims.num_classes), dims.num_classes);
  return out;
}

inline ForwardResult forward(const ModelState& state, const Matrix& batch) {
  return forward(state.dims, state.params, batch);
}

/// Gradient of sum_{r,k} grad_logits(r,k) * logits(r,k) with respect to every
/// parameter, laid out like ModelState::params.
inline std::vector<double> backward(const ModelDims& dims, std::span<const double> params, const Matrix& batch,
                                    const Matrix& grad_logits) {
  const ParamLayout L(dims);
  const ForwardResult fwd = forward(dims, params, batch);
  if (grad_logits.rows() != batch.rows() || grad_logits.cols() != dims.num_classes) {
    throw std::invalid_argument("backward: grad_logits shape does not match forward output");
  }
  std::vector<double> grad(L.total, 0.0);
  std::span<double> g(grad);
  Matrix d_embed = detail::affine_backward(fwd.embeddings, grad_logits, params.subspan(L.wc, L.bc - L.wc),
                                           g.subspan(L.wc, L.bc - L.wc), g.subspan(L.bc, dims.num_classes));
  Matrix d_hidden = detail::affine_backward(fwd.hidden, d_embed, params.subspan(L.w2, L.b2 - L.w2),
                                            g.subspan(L.w2, L.b2 - L.w2), g.subspan(L.b2, dims.embed_dim));
  for (std::size_t i = 0; i < d_hidden.data().size(); ++i) {
    if (fwd.hidden.data()[i] <= 0.0) d_hidden.data()[i] = 0.0;
  }
  detail::affine_backward(batch, d_hidden, params.subspan(L.w1, L.b1 - L.w1), g.subspan(L.w1, L.b1 - L.w1),
                          g.subspan(L.b1, dims.hidden_dim));
  return grad;
}

inline std::vector<double> backward(const ModelState& state, const Matrix& batch, const Matrix& grad_logits) {
  return backward(state.dims, state.params, batch, grad_logits);
}

struct Sgd {
  double lr = 0.05;
  double momentum = 0.9;
};

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using Optimizer = std::variant<Sgd, Adam>;

/// Applies one optimizer update. A non-finite gradient leaves the state untouched.
inline void step(ModelState& state, std::span<const double> grad, const Optimizer& opt) {
  if (grad.size() != state.params.size()) throw std::invalid_argument("step: gradient length mismatch");
  if (!all_finite(grad)) throw std::invalid_argument("step: non-finite gradient rejected");
  ++state.steps;
  if (const auto* sgd = std::get_if<Sgd>(&opt)) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      state.first_moment[i] = sgd->momentum * state.first_moment[i] + grad[i];
      state.params[i] -= sgd->lr * state.first_moment[i];
    }
    return;
  }
  const auto& adam = std::get<Adam>(opt);
  const double t = static_cast<double>(state.steps);
  const double correct1 = 1.0 - std::pow(adam.beta1, t);
  const double correct2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    state.first_moment[i] = adam.beta1 * state.first_moment[i] + (1.0 - adam.beta1) * grad[i];
    state.second_moment[i] = adam.beta2 * state.second_moment[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
    const double m_hat = state.first_moment[i] / correct1;
    const double v_hat = state.second_moment[i] / correct2;
    state.params[i] -= adam.lr * m_hat / (std::sqrt(v_hat) + adam.eps);
  }
}

// Checkpoint layout: "DPLAMDL1", u32 input, hidden, embed, classes, then every
// parameter as a little-endian f64 in layout order. Optimizer buffers are not saved.
inline constexpr std::string_view kCheckpointMagic = "DPLAMDL1";

inline std::vector<std::uint8_t> encode_checkpoint(const ModelState& state) {
  ByteWriter w;
  w.put_tag(kCheckpointMagic);
  w.put(static_cast<std::uint32_t>(state.dims.input_dim));
  w.put(static_cast<std::uint32_t>(state.dims.hidden_dim));
  w.put(static_cast<std::uint32_t>(state.dims.embed_dim));
  w.put(static_cast<std::uint32_t>(state.dims.num_classes));
  for (double p : state.params) w.put_f64(p);
  return w.bytes();
}

inline ModelState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_tag(kCheckpointMagic);
  ModelDims dims;
  dims.input_dim = r.get<std::uint32_t>();
  dims.hidden_dim = r.get<std::uint32_t>();
  dims.embed_dim = r.get<std::uint32_t>();
  dims.num_classes = r.get<std::uint32_t>();
  validate_dims(dims);
  ModelState s;
  s.dims = dims;
  const std::size_t n = ParamLayout(dims).total;
  if (bytes.size() - r.position() != n * 8) throw FormatError("checkpoint parameter block length mismatch", r.position());
  s.params.resize(n);
  for (double& p : s.params) p = r.get_f64();
  if (!all_finite(s.params)) throw FormatError("checkpoint contains non-finite parameters", 24);
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  return s;
}

}  // namespace dpla

#endif  // DPLA_MODEL_HPP
