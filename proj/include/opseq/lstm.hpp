#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "opseq/encoding.hpp"
#include "opseq/error.hpp"
#include "opseq/evm_disasm.hpp"

namespace opseq {

namespace activation {

/// Logistic function, evaluated on the branch that cannot overflow.
inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double tanh(double z) noexcept { return std::tanh(z); }

}  // namespace activation

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 150;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
  std::size_t max_len = 1600;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// One LSTM layer without peepholes. Gate rows are stacked in the order
/// input, forget, output, candidate.
struct LstmLayerParams {
  enum Gate : Eigen::Index { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

  Eigen::MatrixXd w_x;  // 4H x I
  Eigen::MatrixXd w_h;  // 4H x H
  Eigen::VectorXd b;    // 4H

  Eigen::Index hidden_size() const noexcept { return w_h.cols(); }
  Eigen::Index input_size() const noexcept { return w_x.cols(); }

  auto w_x_gate(Gate g) const { return w_x.middleRows(g * hidden_size(), hidden_size()); }
  auto w_h_gate(Gate g) const { return w_h.middleRows(g * hidden_size(), hidden_size()); }
  auto b_gate(Gate g) const { return b.segment(g * hidden_size(), hidden_size()); }
  auto b_gate(Gate g) { return b.segment(g * hidden_size(), hidden_size()); }

  static LstmLayerParams zeros(std::size_t input, std::size_t hidden) {
    const auto i = static_cast<Eigen::Index>(input);
    const auto h = static_cast<Eigen::Index>(hidden);
    return {Eigen::MatrixXd::Zero(4 * h, i), Eigen::MatrixXd::Zero(4 * h, h), Eigen::VectorXd::Zero(4 * h)};
  }

  /// Weights uniform in [-scale, scale], forget bias `forget_bias`, other biases 0.
  template <class Rng>
  static LstmLayerParams random(std::size_t input, std::size_t hidden, Rng& rng, double scale = 0.08,
                                double forget_bias = 1.0) {
    LstmLayerParams p = zeros(input, hidden);
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (Eigen::Index c = 0; c < p.w_x.cols(); ++c)
      for (Eigen::Index r = 0; r < p.w_x.rows(); ++r) p.w_x(r, c) = dist(rng);
    for (Eigen::Index c = 0; c < p.w_h.cols(); ++c)
      for (Eigen::Index r = 0; r < p.w_h.rows(); ++r) p.w_h(r, c) = dist(rng);
    p.b_gate(kForgetGate).setConstant(forget_bias);
    return p;
  }
};

struct CellState {
  Eigen::VectorXd h;
  Eigen::VectorXd c;
};

/// Every trainable tensor of the classifier. Gradients and Adam moments use
/// the same type.
struct ModelParams {
  ModelDims dims;
  EmbeddingMatrix embedding;
  LstmLayerParams layer1;
  LstmLayerParams layer2;
  Eigen::RowVectorXd w_out;  // 1 x hidden2
  double b_out = 0.0;
  // Bumped by every optimizer step; lets backward() reject stale caches.
  std::uint64_t revision = 0;

  static ModelParams zeros(const ModelDims& dims) {
    ModelParams p;
    p.dims = dims;
    p.embedding = EmbeddingMatrix::zeros(dims.embed_dim, dims.vocab_size);
    p.layer1 = LstmLayerParams::zeros(dims.embed_dim, dims.hidden1);
    p.layer2 = LstmLayerParams::zeros(dims.hidden1, dims.hidden2);
    p.w_out = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(dims.hidden2));
    return p;
  }

  static ModelParams initialize(const ModelDims& dims, std::uint64_t seed) {
    if (dims.vocab_size < 2 || dims.embed_dim == 0 || dims.hidden1 == 0 || dims.hidden2 == 0 || dims.max_len == 0) {
      throw Error(ErrorCode::kInvalidArgument, "model dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.dims = dims;
    p.embedding = EmbeddingMatrix::random(dims.embed_dim, dims.vocab_size, rng);
    p.layer1 = LstmLayerParams::random(dims.embed_dim, dims.hidden1, rng);
    p.layer2 = LstmLayerParams::random(dims.hidden1, dims.hidden2, rng);
    std::uniform_real_distribution<double> dist(-0.08, 0.08);
    p.w_out = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(dims.hidden2));
    for (Eigen::Index j = 0; j < p.w_out.size(); ++j) p.w_out(j) = dist(rng);
    return p;
  }

  /// Tensors in serialization order. Each map views Eigen's column-major
  /// storage with the tensor's logical shape.
  std::vector<std::pair<std::string_view, Eigen::Map<Eigen::MatrixXd>>> tensors() {
    using M = Eigen::Map<Eigen::MatrixXd>;
    return {
        {"embedding", M(embedding.values.data(), embedding.values.rows(), embedding.values.cols())},
        {"layer1.w_x", M(layer1.w_x.data(), layer1.w_x.rows(), layer1.w_x.cols())},
        {"layer1.w_h", M(layer1.w_h.data(), layer1.w_h.rows(), layer1.w_h.cols())},
        {"layer1.b", M(layer1.b.data(), layer1.b.size(), 1)},
        {"layer2.w_x", M(layer2.w_x.data(), layer2.w_x.rows(), layer2.w_x.cols())},
        {"layer2.w_h", M(layer2.w_h.data(), layer2.w_h.rows(), layer2.w_h.cols())},
        {"layer2.b", M(layer2.b.data(), layer2.b.size(), 1)},
        {"w_out", M(w_out.data(), 1, w_out.size())},
        {"b_out", M(&b_out, 1, 1)},
    };
  }

  std::vector<std::pair<std::string_view, Eigen::Map<const Eigen::MatrixXd>>> tensors() const {
    auto mutable_views = const_cast<ModelParams*>(this)->tensors();
    std::vector<std::pair<std::string_view, Eigen::Map<const Eigen::MatrixXd>>> out;
    out.reserve(mutable_views.size());
    for (auto& [name, m] : mutable_views) out.emplace_back(name, Eigen::Map<const Eigen::MatrixXd>(m.data(), m.rows(), m.cols()));
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m.size());
    return n;
  }
};

inline bool same_shape(const ModelParams& a, const ModelParams& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].second.rows() != tb[i].second.rows() || ta[i].second.cols() != tb[i].second.cols()) return false;
  }
  return true;
}

namespace detail {

/// One batched LSTM step. Columns whose mask entry is 0 carry the previous
/// state through unchanged.
inline void lstm_step(const LstmLayerParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
                      const Eigen::MatrixXd& c_prev, const std::uint8_t* mask, Eigen::MatrixXd& gates,
                      Eigen::MatrixXd& tanh_c, Eigen::MatrixXd& h, Eigen::MatrixXd& c) {
  const Eigen::Index hidden = p.hidden_size();
  gates.noalias() = p.w_x * x;
  gates.noalias() += p.w_h * h_prev;
  gates.colwise() += p.b;
  gates.topRows(3 * hidden) = gates.topRows(3 * hidden).unaryExpr([](double z) { return activation::sigmoid(z); });
  gates.bottomRows(hidden) = gates.bottomRows(hidden).array().tanh().matrix();

  const auto i = gates.middleRows(0, hidden).array();
  const auto f = gates.middleRows(hidden, hidden).array();
  const auto o = gates.middleRows(2 * hidden, hidden).array();
  const auto g = gates.middleRows(3 * hidden, hidden).array();
  Eigen::MatrixXd c_new = (f * c_prev.array() + i * g).matrix();
  tanh_c = c_new.array().tanh().matrix();
  Eigen::MatrixXd h_new = (o * tanh_c.array()).matrix();

  if (mask == nullptr) {
    h = std::move(h_new);
    c = std::move(c_new);
    return;
  }
  h.resize(h_prev.rows(), h_prev.cols());
  c.resize(c_prev.rows(), c_prev.cols());
  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    if (mask[col]) {
      h.col(col) = h_new.col(col);
      c.col(col) = c_new.col(col);
    } else {
      h.col(col) = h_prev.col(col);
      c.col(col) = c_prev.col(col);
    }
  }
}

}  // namespace detail

/// Single LSTM step on one input vector.
inline CellState lstm_cell(const Eigen::VectorXd& x, const CellState& prev, const LstmLayerParams& p,
                           Eigen::VectorXd* gates_out = nullptr) {
  if (x.size() != p.input_size() || prev.h.size() != p.hidden_size() || prev.c.size() != p.hidden_size() ||
      p.w_x.rows() != 4 * p.hidden_size() || p.b.size() != 4 * p.hidden_size()) {
    throw Error(ErrorCode::kDimensionMismatch, "lstm_cell operand shapes disagree");
  }
  Eigen::MatrixXd gates, tanh_c, h, c;
  detail::lstm_step(p, x, prev.h, prev.c, nullptr, gates, tanh_c, h, c);
  if (gates_out != nullptr) *gates_out = gates.col(0);
  return {h.col(0), c.col(0)};
}

/// A SMOTE synthetic kept as its two padded parents and u. Its code vector at
/// step t is x_t + u (y_t - x_t) with x_t, y_t read from the current
/// embedding, so it follows the embedding while that is being trained.
struct TokenBlend {
  std::vector<TokenId> base;
  std::vector<TokenId> neighbor;
  double u = 0.0;
};

/// Model input: padded token ids, fixed code vectors, or a token blend.
using ModelInput = std::variant<std::vector<TokenId>, CodeVectorSequence, TokenBlend>;

enum class Unroll {
  kFull,     // every one of max_len steps, fixed cost per contract
  kTrimmed,  // stop after the batch's last real step; same result, less work
};

struct LayerTrace {
  std::vector<Eigen::MatrixXd> h;  // steps + 1 entries, h[0] is the zero state
  std::vector<Eigen::MatrixXd> c;
  std::vector<Eigen::MatrixXd> gates;   // activated, 4H x B
  std::vector<Eigen::MatrixXd> tanh_c;  // tanh of the updated cell, H x B
};

struct ForwardCache {
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::vector<Eigen::MatrixXd> inputs;  // x_t, embed_dim x B
  std::vector<std::uint8_t> mask;       // [t * batch + b]
  std::vector<TokenId> tokens;          // [t * batch + b], -1 for code-vector inputs
  std::vector<TokenId> blend_tokens;    // [t * batch + b], neighbor token of a blend, else -1
  std::vector<double> blend_u;          // per batch column, 0 unless a blend
  LayerTrace layer1;
  LayerTrace layer2;
  Eigen::VectorXd probabilities;
  std::uint64_t revision = 0;
  bool valid = false;
};

namespace detail {

inline void run_layer(const LstmLayerParams& p, const std::vector<Eigen::MatrixXd>& inputs,
                      const std::vector<std::uint8_t>& mask, std::size_t batch, LayerTrace& trace) {
  const std::size_t steps = inputs.size();
  const auto b = static_cast<Eigen::Index>(batch);
  trace.h.assign(steps + 1, Eigen::MatrixXd());
  trace.c.assign(steps + 1, Eigen::MatrixXd());
  trace.gates.assign(steps, Eigen::MatrixXd());
  trace.tanh_c.assign(steps, Eigen::MatrixXd());
  trace.h[0] = Eigen::MatrixXd::Zero(p.hidden_size(), b);
  trace.c[0] = Eigen::MatrixXd::Zero(p.hidden_size(), b);
  for (std::size_t t = 0; t < steps; ++t) {
    lstm_step(p, inputs[t], trace.h[t], trace.c[t], mask.data() + t * batch, trace.gates[t], trace.tanh_c[t],
              trace.h[t + 1], trace.c[t + 1]);
  }
}

inline std::vector<std::uint8_t> input_mask(const ModelInput& input) {
  if (const auto* tokens = std::get_if<std::vector<TokenId>>(&input)) {
    std::vector<std::uint8_t> m(tokens->size());
    for (std::size_t t = 0; t < tokens->size(); ++t) m[t] = (*tokens)[t] != kPadToken;
    return m;
  }
  if (const auto* blend = std::get_if<TokenBlend>(&input)) {
    // Matches the mask unflatten() derives from the blended vectors.
    std::vector<std::uint8_t> m(blend->base.size());
    for (std::size_t t = 0; t < m.size(); ++t) {
      m[t] = (blend->base[t] != kPadToken && blend->u < 1.0) || (blend->neighbor[t] != kPadToken && blend->u > 0.0);
    }
    return m;
  }
  return std::get<CodeVectorSequence>(input).mask;
}

inline void check_tokens(std::span<const TokenId> tokens, const ModelDims& dims) {
  if (tokens.size() != dims.max_len) {
    throw Error(ErrorCode::kDimensionMismatch,
                "token input length " + std::to_string(tokens.size()) + " != max_len " + std::to_string(dims.max_len));
  }
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= dims.vocab_size) {
      throw Error(ErrorCode::kIndexOutOfRange, "token " + std::to_string(id) + " outside vocabulary");
    }
  }
}

}  // namespace detail

/// Batched forward pass. Layer 1 reads the code vectors, layer 2 reads layer
/// 1's hidden states, and the sigmoid head reads layer 2's state after the
/// last real step.
inline ForwardCache forward_batch(const ModelParams& params, std::span<const ModelInput* const> batch,
                                  Unroll unroll = Unroll::kTrimmed) {
  const ModelDims& dims = params.dims;
  const std::size_t n = batch.size();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");

  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(n);
  std::size_t steps = unroll == Unroll::kFull ? dims.max_len : 0;
  for (const ModelInput* input : batch) {
    if (const auto* tokens = std::get_if<std::vector<TokenId>>(input)) {
      detail::check_tokens(*tokens, dims);
    } else if (const auto* blend = std::get_if<TokenBlend>(input)) {
      detail::check_tokens(blend->base, dims);
      detail::check_tokens(blend->neighbor, dims);
      if (!(blend->u >= 0.0 && blend->u <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "blend u outside [0, 1]");
    } else {
      const auto& cv = std::get<CodeVectorSequence>(*input);
      if (cv.length() != dims.max_len || cv.embed_dim() != dims.embed_dim ||
          static_cast<std::size_t>(cv.steps.cols()) != dims.max_len) {
        throw Error(ErrorCode::kDimensionMismatch, "code-vector input shape disagrees with model dims");
      }
    }
    masks.push_back(detail::input_mask(*input));
    if (unroll == Unroll::kTrimmed) {
      const auto& m = masks.back();
      for (std::size_t t = m.size(); t > steps; --t) {
        if (m[t - 1]) {
          steps = t;
          break;
        }
      }
    }
  }

  ForwardCache cache;
  cache.steps = steps;
  cache.batch = n;
  cache.revision = params.revision;
  cache.mask.resize(steps * n);
  cache.tokens.resize(steps * n);
  cache.blend_tokens.assign(steps * n, -1);
  cache.blend_u.assign(n, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    if (const auto* blend = std::get_if<TokenBlend>(batch[b])) cache.blend_u[b] = blend->u;
  }
  cache.inputs.assign(steps, Eigen::MatrixXd());
  const auto embed_dim = static_cast<Eigen::Index>(dims.embed_dim);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(embed_dim);

  for (std::size_t t = 0; t < steps; ++t) {
    Eigen::MatrixXd& x = cache.inputs[t];
    x.resize(embed_dim, static_cast<Eigen::Index>(n));
    for (std::size_t b = 0; b < n; ++b) {
      const auto col = static_cast<Eigen::Index>(b);
      cache.mask[t * n + b] = masks[b][t];
      if (const auto* tokens = std::get_if<std::vector<TokenId>>(batch[b])) {
        const TokenId id = (*tokens)[t];
        cache.tokens[t * n + b] = id;
        if (id == kPadToken) {
          x.col(col).setZero();
        } else {
          x.col(col) = params.embedding.values.col(id);
        }
      } else if (const auto* blend = std::get_if<TokenBlend>(batch[b])) {
        const TokenId a = blend->base[t];
        const TokenId c = blend->neighbor[t];
        cache.tokens[t * n + b] = a;
        cache.blend_tokens[t * n + b] = c;
        const Eigen::VectorXd xa = a == kPadToken ? zero : Eigen::VectorXd(params.embedding.values.col(a));
        const Eigen::VectorXd xc = c == kPadToken ? zero : Eigen::VectorXd(params.embedding.values.col(c));
        x.col(col) = xa + blend->u * (xc - xa);
      } else {
        cache.tokens[t * n + b] = -1;
        x.col(col) = std::get<CodeVectorSequence>(*batch[b]).steps.col(static_cast<Eigen::Index>(t));
      }
    }
  }

  detail::run_layer(params.layer1, cache.inputs, cache.mask, n, cache.layer1);
  std::vector<Eigen::MatrixXd> layer2_inputs(cache.layer1.h.begin() + 1, cache.layer1.h.end());
  detail::run_layer(params.layer2, layer2_inputs, cache.mask, n, cache.layer2);

  const Eigen::RowVectorXd logits = (params.w_out * cache.layer2.h[steps]).array() + params.b_out;
  cache.probabilities.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index b = 0; b < logits.size(); ++b) cache.probabilities(b) = activation::sigmoid(logits(b));
  cache.valid = true;
  return cache;
}

/// Probability that one contract is vulnerable.
inline double forward(const ModelParams& params, const ModelInput& input, Unroll unroll = Unroll::kFull) {
  const ModelInput* ptr = &input;
  return forward_batch(params, std::span<const ModelInput* const>(&ptr, 1), unroll).probabilities(0);
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
inline double bce_loss(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.size() != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, "probabilities and labels differ in length");
  }
  if (probabilities.empty()) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double a = std::clamp(probabilities[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    total += labels[i] == 1 ? std::log(a) : std::log1p(-a);
  }
  return -total / static_cast<double>(probabilities.size());
}

namespace detail {

inline void layer_backward(const LstmLayerParams& p, const LayerTrace& trace, const std::vector<Eigen::MatrixXd>& inputs,
                           const std::vector<std::uint8_t>& mask, std::size_t batch, Eigen::MatrixXd dh,
                           const std::vector<Eigen::MatrixXd>* dh_external, LstmLayerParams& grad,
                           std::vector<Eigen::MatrixXd>* dx_out) {
  const Eigen::Index hidden = p.hidden_size();
  const std::size_t steps = inputs.size();
  Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(hidden, static_cast<Eigen::Index>(batch));
  Eigen::MatrixXd dz(4 * hidden, static_cast<Eigen::Index>(batch));
  if (dx_out != nullptr) dx_out->assign(steps, Eigen::MatrixXd());

  for (std::size_t t = steps; t-- > 0;) {
    if (dh_external != nullptr) dh += (*dh_external)[t];
    const Eigen::MatrixXd& gates = trace.gates[t];
    const auto i = gates.middleRows(0, hidden).array();
    const auto f = gates.middleRows(hidden, hidden).array();
    const auto o = gates.middleRows(2 * hidden, hidden).array();
    const auto g = gates.middleRows(3 * hidden, hidden).array();
    const auto tanh_c = trace.tanh_c[t].array();
    const auto c_prev = trace.c[t].array();

    const Eigen::ArrayXXd dc_new = dc.array() + dh.array() * o * (1.0 - tanh_c.square());
    dz.middleRows(0, hidden) = (dc_new * g * i * (1.0 - i)).matrix();
    dz.middleRows(hidden, hidden) = (dc_new * c_prev * f * (1.0 - f)).matrix();
    dz.middleRows(2 * hidden, hidden) = (dh.array() * tanh_c * o * (1.0 - o)).matrix();
    dz.middleRows(3 * hidden, hidden) = (dc_new * i * (1.0 - g.square())).matrix();
    const std::uint8_t* m = mask.data() + t * batch;
    for (std::size_t b = 0; b < batch; ++b) {
      if (!m[b]) dz.col(static_cast<Eigen::Index>(b)).setZero();
    }

    grad.w_x.noalias() += dz * inputs[t].transpose();
    grad.w_h.noalias() += dz * trace.h[t].transpose();
    grad.b += dz.rowwise().sum();
    if (dx_out != nullptr) (*dx_out)[t].noalias() = p.w_x.transpose() * dz;

    Eigen::MatrixXd dh_prev = p.w_h.transpose() * dz;
    Eigen::MatrixXd dc_prev = (dc_new * f).matrix();
    for (std::size_t b = 0; b < batch; ++b) {
      if (!m[b]) {
        const auto col = static_cast<Eigen::Index>(b);
        dh_prev.col(col) = dh.col(col);
        dc_prev.col(col) = dc.col(col);
      }
    }
    dh = std::move(dh_prev);
    dc = std::move(dc_prev);
  }
}

}  // namespace detail

/// Exact gradient of the mean BCE over the batch in `cache`. The PAD column
/// of the embedding always receives zero gradient.
inline ModelParams backward(const ModelParams& params, const ForwardCache& cache, std::span<const int> labels) {
  if (!cache.valid || cache.revision != params.revision) {
    throw Error(ErrorCode::kStaleCache, "forward cache does not belong to the current parameters");
  }
  if (labels.size() != cache.batch) {
    throw Error(ErrorCode::kLengthMismatch, "label count differs from batch size");
  }
  const std::size_t n = cache.batch;
  const std::size_t steps = cache.steps;
  ModelParams grad = ModelParams::zeros(params.dims);

  // d(mean BCE)/d(logit) = (a - y) / N for a sigmoid output.
  Eigen::RowVectorXd dlogit(static_cast<Eigen::Index>(n));
  for (std::size_t b = 0; b < n; ++b) {
    dlogit(static_cast<Eigen::Index>(b)) =
        (cache.probabilities(static_cast<Eigen::Index>(b)) - labels[b]) / static_cast<double>(n);
  }
  const Eigen::MatrixXd& h_top = cache.layer2.h[steps];
  grad.w_out = dlogit * h_top.transpose();
  grad.b_out = dlogit.sum();
  Eigen::MatrixXd dh2 = params.w_out.transpose() * dlogit;

  const std::vector<Eigen::MatrixXd> layer2_inputs(cache.layer1.h.begin() + 1, cache.layer1.h.end());
  std::vector<Eigen::MatrixXd> dh1_external;
  detail::layer_backward(params.layer2, cache.layer2, layer2_inputs, cache.mask, n, std::move(dh2), nullptr,
                         grad.layer2, &dh1_external);

  std::vector<Eigen::MatrixXd> dx;
  detail::layer_backward(params.layer1, cache.layer1, cache.inputs, cache.mask, n,
                         Eigen::MatrixXd::Zero(params.layer1.hidden_size(), static_cast<Eigen::Index>(n)),
                         &dh1_external, grad.layer1, &dx);

  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < n; ++b) {
      if (!cache.mask[t * n + b]) continue;
      const auto col = static_cast<Eigen::Index>(b);
      const TokenId id = cache.tokens[t * n + b];
      const TokenId other = cache.blend_tokens[t * n + b];
      if (other < 0) {
        if (id > kPadToken) grad.embedding.values.col(id) += dx[t].col(col);
        continue;
      }
      // x = (1 - u) e_id + u e_other
      const double u = cache.blend_u[b];
      if (id > kPadToken) grad.embedding.values.col(id) += (1.0 - u) * dx[t].col(col);
      if (other > kPadToken) grad.embedding.values.col(other) += u * dx[t].col(col);
    }
  }
  grad.embedding.values.col(kPadToken).setZero();
  return grad;
}

inline double global_norm(const ModelParams& grads) {
  double sq = 0.0;
  for (const auto& [name, m] : grads.tensors()) sq += m.squaredNorm();
  return std::sqrt(sq);
}

/// Rescales all gradients when their joint L2 norm exceeds `clip_norm`.
/// Returns the norm before clipping.
inline double clip_by_global_norm(ModelParams& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw Error(ErrorCode::kInvalidArgument, "clip_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (auto& [name, m] : grads.tensors()) m *= scale;
  }
  return norm;
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;

  static AdamState for_params(const ModelParams& params, double lr = 1e-3, double clip_norm = 5.0) {
    AdamState s;
    s.m = ModelParams::zeros(params.dims);
    s.v = ModelParams::zeros(params.dims);
    s.lr = lr;
    s.clip_norm = clip_norm;
    return s;
  }
};

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
template <class P, class G, class M, class V>
void adam_update(P&& param, const G& grad, M&& m, V&& v, std::uint64_t t, double lr, double beta1, double beta2,
                 double eps) {
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state) {
  if (!same_shape(params, grads) || !same_shape(params, state.m) || !same_shape(params, state.v)) {
    throw Error(ErrorCode::kShapeMismatch, "parameters, gradients and optimizer state differ in shape");
  }
  ++state.t;
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  for (std::size_t k = 0; k < p.size(); ++k) {
    adam_update(p[k].second, g[k].second, m[k].second, v[k].second, state.t, state.lr, state.beta1, state.beta2,
                state.eps);
  }
  ++params.revision;
}

struct TrainingExample {
  ModelInput input;
  int label = 0;
};

struct TrainConfig {
  std::size_t epochs = 256;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  std::size_t patience = 0;  // early stopping on validation loss; 0 disables
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

/// Probabilities for a list of examples, evaluated in batches.
inline std::vector<double> predict_probabilities(const ModelParams& params, std::span<const TrainingExample> examples,
                                                 std::size_t batch_size = 64) {
  std::vector<double> out;
  out.reserve(examples.size());
  std::vector<const ModelInput*> batch;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(&examples[i].input);
    const ForwardCache cache = forward_batch(params, batch, Unroll::kTrimmed);
    for (Eigen::Index b = 0; b < cache.probabilities.size(); ++b) out.push_back(cache.probabilities(b));
  }
  return out;
}

/// Mean BCE and accuracy at threshold 0.5.
inline std::pair<double, double> evaluate_loss_accuracy(const ModelParams& params,
                                                        std::span<const TrainingExample> examples,
                                                        std::size_t batch_size = 64) {
  const std::vector<double> probs = predict_probabilities(params, examples, batch_size);
  std::vector<int> labels;
  labels.reserve(examples.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    labels.push_back(examples[i].label);
    correct += static_cast<int>(probs[i] >= 0.5) == examples[i].label;
  }
  return {bce_loss(probs, labels), static_cast<double>(correct) / static_cast<double>(examples.size())};
}

/// Mini-batch Adam with global-norm clipping. Returns the parameters with the
/// lowest validation loss (the last ones when there is no validation set).
inline TrainResult train(ModelParams params, std::span<const TrainingExample> train_set,
                         std::span<const TrainingExample> validation_set, const TrainConfig& config,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (train_set.empty()) throw Error(ErrorCode::kEmptyCorpus, "empty training set");
  if (config.batch_size == 0 || config.epochs == 0) {
    throw Error(ErrorCode::kInvalidArgument, "epochs and batch_size must be positive");
  }
  AdamState adam = AdamState::for_params(params, config.lr, config.clip_norm);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  result.params = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<const ModelInput*> batch;
  std::vector<int> labels;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(&train_set[order[k]].input);
        labels.push_back(train_set[order[k]].label);
      }
      const ForwardCache cache = forward_batch(params, batch, Unroll::kTrimmed);
      const std::span<const double> probs(cache.probabilities.data(), static_cast<std::size_t>(cache.probabilities.size()));
      loss_sum += bce_loss(probs, labels) * static_cast<double>(labels.size());
      for (std::size_t b = 0; b < labels.size(); ++b) correct += static_cast<int>(probs[b] >= 0.5) == labels[b];
      ModelParams grads = backward(params, cache, labels);
      clip_by_global_norm(grads, config.clip_norm);
      adam_step(params, grads, adam);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!validation_set.empty()) {
      const auto [vl, va] = evaluate_loss_accuracy(params, validation_set);
      stats.val_loss = vl;
      stats.val_accuracy = va;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stats.val_loss) {
      if (*stats.val_loss < best_val) {
        best_val = *stats.val_loss;
        result.params = params;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (config.patience > 0 && ++since_best >= config.patience) {
        break;
      }
    } else {
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

struct Prediction {
  int label = 0;
  double probability = 0.0;
};

inline Prediction predict(const ModelParams& params, const ModelInput& input, double threshold = 0.5) {
  const double a = forward(params, input, Unroll::kFull);
  return {a >= threshold ? 1 : 0, a};
}

}  // namespace opseq
