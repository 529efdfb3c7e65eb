#pragma once

/**
 * @file neural.hpp
 * @brief MLP and LSTM building blocks evaluated on the autodiff tape.
 *
 * Networks are described by a spec (shapes and activations) and a flat
 * parameter vector. Forward passes are templates over the scalar type and
 * take the parameters as a span, so training code can bind them to tape
 * leaves while prediction code passes plain doubles.
 *
 * Flat layouts:
 *   MLP:  for each layer W (out x in, row-major) then b; swish beta last if
 *         any layer uses swish.
 *   LSTM: W_f, W_i, W_c, W_o (hidden x (hidden + input), row-major, columns
 *         ordered [h; x]), then b_f, b_i, b_c, b_o, then the head MLP.
 */

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agridiff/autodiff.hpp"
#include "agridiff/error.hpp"

namespace agridiff::nn {

enum class Activation { sigmoid, tanh, relu, swish, identity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::identity;
};

struct MlpSpec {
  std::vector<LayerSpec> layers;

  /// in -> hidden... -> out, `hidden_act` on hidden layers, `out_act` last.
  static MlpSpec make(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                      Activation hidden_act, Activation out_act = Activation::identity);

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_size() const { return layers.empty() ? 0 : layers.back().out; }
  bool uses_swish() const;
  std::size_t param_count() const;
  void validate() const;
};

struct MlpWeights {
  MlpSpec spec;
  std::uint64_t seed = 0;
  std::vector<double> params;
};

/// Row-major T x width matrix of scalars.
template <class Real>
struct Sequence {
  std::size_t steps = 0;
  std::size_t width = 0;
  std::vector<Real> data;

  Sequence() = default;
  Sequence(std::size_t t, std::size_t w) : steps(t), width(w), data(t * w, Real(0.0)) {}

  std::span<Real> row(std::size_t t) { return std::span<Real>(data).subspan(t * width, width); }
  std::span<const Real> row(std::size_t t) const {
    return std::span<const Real>(data).subspan(t * width, width);
  }
  Real& operator()(std::size_t t, std::size_t j) { return data[t * width + j]; }
  const Real& operator()(std::size_t t, std::size_t j) const { return data[t * width + j]; }
};

template <class Real>
Real swish(const Real& x, const Real& beta) {
  return x * ad::sigmoid(beta * x);
}

template <class Real>
Real activate(Activation a, const Real& x, const Real& swish_beta) {
  switch (a) {
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::relu: return ad::relu(x);
    case Activation::swish: return swish<Real>(x, swish_beta);
    case Activation::identity: return x;
  }
  return x;
}

template <class Real>
std::vector<Real> mlp_forward(const MlpSpec& spec, std::span<const Real> params,
                              std::span<const Real> input) {
  if (params.size() != spec.param_count()) {
    throw ValidationError("mlp_forward: expected " + std::to_string(spec.param_count()) +
                          " parameters, got " + std::to_string(params.size()));
  }
  if (input.size() != spec.input_size()) {
    throw ValidationError("mlp_forward: input has shape [" + std::to_string(input.size()) +
                          "] but the first layer expects [" + std::to_string(spec.input_size()) +
                          "]");
  }
  const Real beta = spec.uses_swish() ? params.back() : Real(1.0);
  std::vector<Real> x(input.begin(), input.end());
  std::size_t off = 0;
  for (const auto& layer : spec.layers) {
    const auto w = params.subspan(off, layer.out * layer.in);
    const auto b = params.subspan(off + layer.out * layer.in, layer.out);
    off += layer.out * (layer.in + 1);
    std::vector<Real> y;
    y.reserve(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const Real z = ad::dot(w.subspan(o * layer.in, layer.in), std::span<const Real>(x), b[o]);
      y.push_back(activate<Real>(layer.activation, z, beta));
    }
    x = std::move(y);
  }
  return x;
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

struct LstmSpec {
  std::size_t input = 0;
  std::size_t hidden = 0;
  MlpSpec head;  // hidden -> output

  /// Single linear head layer by default.
  static LstmSpec make(std::size_t input, std::size_t hidden, std::size_t output,
                       const std::vector<std::size_t>& head_hidden = {},
                       Activation head_act = Activation::tanh);

  std::size_t gate_cols() const { return hidden + input; }
  std::size_t gate_matrix_size() const { return hidden * gate_cols(); }
  std::size_t cell_param_count() const { return 4 * (gate_matrix_size() + hidden); }
  std::size_t param_count() const { return cell_param_count() + head.param_count(); }
  std::size_t output_size() const { return head.output_size(); }
  void validate() const;

  // Gate order inside the flat vector.
  enum Gate : std::size_t { forget = 0, in = 1, candidate = 2, out = 3 };
  std::size_t weight_offset(Gate g) const { return g * gate_matrix_size(); }
  std::size_t bias_offset(Gate g) const { return 4 * gate_matrix_size() + g * hidden; }
  std::size_t head_offset() const { return cell_param_count(); }
};

struct LstmWeights {
  LstmSpec spec;
  std::uint64_t seed = 0;
  std::vector<double> params;
};

template <class Real>
struct LstmState {
  std::vector<Real> h;
  std::vector<Real> c;

  static LstmState zero(std::size_t hidden) {
    return LstmState{std::vector<Real>(hidden, Real(0.0)), std::vector<Real>(hidden, Real(0.0))};
  }
};

template <class Real>
struct LstmGates {
  std::vector<Real> forget, input, candidate, output;
};

/// One cell update; fills `gates` when non-null.
template <class Real>
LstmState<Real> lstm_cell(const LstmSpec& spec, std::span<const Real> params,
                          const LstmState<Real>& state, std::span<const Real> x,
                          LstmGates<Real>* gates = nullptr) {
  if (x.size() != spec.input || state.h.size() != spec.hidden || state.c.size() != spec.hidden) {
    throw ValidationError("lstm_cell: input [" + std::to_string(x.size()) + "], state [" +
                          std::to_string(state.h.size()) + "] do not match spec input [" +
                          std::to_string(spec.input) + "], hidden [" +
                          std::to_string(spec.hidden) + "]");
  }
  if (params.size() < spec.cell_param_count()) {
    throw ValidationError("lstm_cell: parameter vector too short");
  }
  const std::size_t H = spec.hidden;
  const std::size_t cols = spec.gate_cols();
  std::vector<Real> hx;
  hx.reserve(cols);
  hx.insert(hx.end(), state.h.begin(), state.h.end());
  hx.insert(hx.end(), x.begin(), x.end());
  const std::span<const Real> hx_span(hx);

  auto pre = [&](LstmSpec::Gate g, std::size_t k) {
    const auto w = params.subspan(spec.weight_offset(g) + k * cols, cols);
    return ad::dot(w, hx_span, params[spec.bias_offset(g) + k]);
  };

  LstmState<Real> next;
  next.h.reserve(H);
  next.c.reserve(H);
  if (gates) {
    gates->forget.clear();
    gates->input.clear();
    gates->candidate.clear();
    gates->output.clear();
  }
  for (std::size_t k = 0; k < H; ++k) {
    const Real f = ad::sigmoid(pre(LstmSpec::forget, k));
    const Real i = ad::sigmoid(pre(LstmSpec::in, k));
    const Real c_tilde = ad::tanh(pre(LstmSpec::candidate, k));
    const Real c = f * state.c[k] + i * c_tilde;
    const Real o = ad::sigmoid(pre(LstmSpec::out, k));
    const Real h = o * ad::tanh(c);
    next.c.push_back(c);
    next.h.push_back(h);
    if (gates) {
      gates->forget.push_back(f);
      gates->input.push_back(i);
      gates->candidate.push_back(c_tilde);
      gates->output.push_back(o);
    }
  }
  return next;
}

enum class OutputMode { last, per_step };

/// Runs the cell from a zero state; returns a 1 x out (last) or T x out
/// (per_step) sequence of head outputs.
template <class Real>
Sequence<Real> lstm_forward(const LstmSpec& spec, std::span<const Real> params,
                            const Sequence<Real>& sequence, OutputMode mode) {
  if (sequence.steps == 0) throw ValidationError("lstm_forward: empty sequence");
  if (sequence.width != spec.input) {
    throw ValidationError("lstm_forward: sequence width " + std::to_string(sequence.width) +
                          " does not match input size " + std::to_string(spec.input));
  }
  if (params.size() != spec.param_count()) {
    throw ValidationError("lstm_forward: expected " + std::to_string(spec.param_count()) +
                          " parameters, got " + std::to_string(params.size()));
  }
  const auto head_params = params.subspan(spec.head_offset());
  const std::size_t out_n = spec.output_size();
  Sequence<Real> out(mode == OutputMode::last ? 1 : sequence.steps, out_n);
  auto state = LstmState<Real>::zero(spec.hidden);
  for (std::size_t t = 0; t < sequence.steps; ++t) {
    state = lstm_cell<Real>(spec, params, state, sequence.row(t));
    if (mode == OutputMode::per_step || t + 1 == sequence.steps) {
      const auto y = mlp_forward<Real>(spec.head, head_params, std::span<const Real>(state.h));
      const std::size_t r = mode == OutputMode::last ? 0 : t;
      for (std::size_t j = 0; j < out_n; ++j) out(r, j) = y[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initialization and checkpoints
// ---------------------------------------------------------------------------

/// Glorot-uniform weights, zero biases, swish beta 1.
MlpWeights init_weights(const MlpSpec& spec, std::uint64_t seed);
/// As above for the gates; forget-gate bias 1.
LstmWeights init_weights(const LstmSpec& spec, std::uint64_t seed);

double glorot_bound(std::size_t fan_in, std::size_t fan_out);

void to_json(nlohmann::json& j, const MlpSpec& s);
void from_json(const nlohmann::json& j, MlpSpec& s);
void to_json(nlohmann::json& j, const LstmSpec& s);
void from_json(const nlohmann::json& j, LstmSpec& s);
void to_json(nlohmann::json& j, const MlpWeights& w);
void from_json(const nlohmann::json& j, MlpWeights& w);
void to_json(nlohmann::json& j, const LstmWeights& w);
void from_json(const nlohmann::json& j, LstmWeights& w);

}  // namespace agridiff::nn
