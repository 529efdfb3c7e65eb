#include "agridiff/neural.hpp"

#include <cmath>
#include <random>

namespace agridiff::nn {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::swish: return "swish";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& name) {
  for (Activation a : {Activation::sigmoid, Activation::tanh, Activation::relu, Activation::swish,
                       Activation::identity}) {
    if (activation_name(a) == name) return a;
  }
  throw ValidationError("unknown activation '" + name + "'");
}

MlpSpec MlpSpec::make(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                      Activation hidden_act, Activation out_act) {
  MlpSpec spec;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    spec.layers.push_back({prev, h, hidden_act});
    prev = h;
  }
  spec.layers.push_back({prev, out, out_act});
  spec.validate();
  return spec;
}

bool MlpSpec::uses_swish() const {
  for (const auto& l : layers) {
    if (l.activation == Activation::swish) return true;
  }
  return false;
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.out * (l.in + 1);
  return n + (uses_swish() ? 1 : 0);
}

void MlpSpec::validate() const {
  if (layers.empty()) throw ValidationError("MLP spec has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].in == 0 || layers[i].out == 0) {
      throw ValidationError("MLP layer " + std::to_string(i) + " has a zero dimension");
    }
    if (i > 0 && layers[i].in != layers[i - 1].out) {
      throw ValidationError("MLP layer " + std::to_string(i) + " expects " +
                            std::to_string(layers[i].in) + " inputs but layer " +
                            std::to_string(i - 1) + " emits " + std::to_string(layers[i - 1].out));
    }
  }
}

LstmSpec LstmSpec::make(std::size_t input, std::size_t hidden, std::size_t output,
                        const std::vector<std::size_t>& head_hidden, Activation head_act) {
  LstmSpec spec;
  spec.input = input;
  spec.hidden = hidden;
  spec.head = MlpSpec::make(hidden, head_hidden, output, head_act);
  spec.validate();
  return spec;
}

void LstmSpec::validate() const {
  if (input == 0 || hidden == 0) throw ValidationError("LSTM spec needs input > 0 and hidden > 0");
  head.validate();
  if (head.input_size() != hidden) {
    throw ValidationError("LSTM head expects " + std::to_string(head.input_size()) +
                          " inputs but hidden size is " + std::to_string(hidden));
  }
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

void fill_mlp(const MlpSpec& spec, std::mt19937_64& rng, std::span<double> out) {
  std::size_t off = 0;
  for (const auto& l : spec.layers) {
    std::uniform_real_distribution<double> u(-glorot_bound(l.in, l.out), glorot_bound(l.in, l.out));
    for (std::size_t k = 0; k < l.out * l.in; ++k) out[off + k] = u(rng);
    for (std::size_t k = 0; k < l.out; ++k) out[off + l.out * l.in + k] = 0.0;
    off += l.out * (l.in + 1);
  }
  if (spec.uses_swish()) out[off] = 1.0;
}

}  // namespace

MlpWeights init_weights(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  MlpWeights w{spec, seed, std::vector<double>(spec.param_count(), 0.0)};
  std::mt19937_64 rng(seed);
  fill_mlp(spec, rng, w.params);
  return w;
}

LstmWeights init_weights(const LstmSpec& spec, std::uint64_t seed) {
  spec.validate();
  LstmWeights w{spec, seed, std::vector<double>(spec.param_count(), 0.0)};
  std::mt19937_64 rng(seed);
  const double bound = glorot_bound(spec.gate_cols(), spec.hidden);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (std::size_t k = 0; k < 4 * spec.gate_matrix_size(); ++k) w.params[k] = u(rng);
  for (std::size_t k = 0; k < spec.hidden; ++k) w.params[spec.bias_offset(LstmSpec::forget) + k] = 1.0;
  fill_mlp(spec.head, rng, std::span<double>(w.params).subspan(spec.head_offset()));
  return w;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const MlpSpec& s) {
  j = nlohmann::json::array();
  for (const auto& l : s.layers) {
    j.push_back({{"in", l.in}, {"out", l.out}, {"activation", activation_name(l.activation)}});
  }
}

void from_json(const nlohmann::json& j, MlpSpec& s) {
  s.layers.clear();
  for (const auto& l : j) {
    s.layers.push_back({l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                        activation_from_name(l.at("activation").get<std::string>())});
  }
  s.validate();
}

void to_json(nlohmann::json& j, const LstmSpec& s) {
  j = nlohmann::json{{"input", s.input}, {"hidden", s.hidden}, {"head", s.head}};
}

void from_json(const nlohmann::json& j, LstmSpec& s) {
  s.input = j.at("input").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::size_t>();
  s.head = j.at("head").get<MlpSpec>();
  s.validate();
}

namespace {

nlohmann::json mlp_arrays(const MlpSpec& spec, std::span<const double> p) {
  nlohmann::json out = nlohmann::json::object();
  std::size_t off = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto w = p.subspan(off, l.out * l.in);
    const auto b = p.subspan(off + l.out * l.in, l.out);
    out["layer" + std::to_string(i) + ".W"] = std::vector<double>(w.begin(), w.end());
    out["layer" + std::to_string(i) + ".b"] = std::vector<double>(b.begin(), b.end());
    off += l.out * (l.in + 1);
  }
  if (spec.uses_swish()) out["swish_beta"] = p[off];
  return out;
}

void read_array(const nlohmann::json& j, const std::string& key, std::size_t n,
                std::span<double> out) {
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != n) {
    throw ValidationError("checkpoint array '" + key + "' has " + std::to_string(v.size()) +
                          " entries, expected " + std::to_string(n));
  }
  std::copy(v.begin(), v.end(), out.begin());
}

void mlp_from_arrays(const MlpSpec& spec, const nlohmann::json& j, std::span<double> p) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    read_array(j, "layer" + std::to_string(i) + ".W", l.out * l.in, p.subspan(off, l.out * l.in));
    read_array(j, "layer" + std::to_string(i) + ".b", l.out, p.subspan(off + l.out * l.in, l.out));
    off += l.out * (l.in + 1);
  }
  if (spec.uses_swish()) p[off] = j.at("swish_beta").get<double>();
}

constexpr const char* kGateNames[4] = {"f", "i", "c", "o"};

}  // namespace

void to_json(nlohmann::json& j, const MlpWeights& w) {
  j = nlohmann::json{{"spec", w.spec}, {"seed", w.seed}, {"weights", mlp_arrays(w.spec, w.params)}};
}

void from_json(const nlohmann::json& j, MlpWeights& w) {
  w.spec = j.at("spec").get<MlpSpec>();
  w.seed = j.at("seed").get<std::uint64_t>();
  w.params.assign(w.spec.param_count(), 0.0);
  mlp_from_arrays(w.spec, j.at("weights"), w.params);
}

void to_json(nlohmann::json& j, const LstmWeights& w) {
  const auto& s = w.spec;
  const std::span<const double> p(w.params);
  nlohmann::json arrays = nlohmann::json::object();
  for (std::size_t g = 0; g < 4; ++g) {
    const auto gate = static_cast<LstmSpec::Gate>(g);
    const auto wm = p.subspan(s.weight_offset(gate), s.gate_matrix_size());
    const auto b = p.subspan(s.bias_offset(gate), s.hidden);
    arrays[std::string("W_") + kGateNames[g]] = std::vector<double>(wm.begin(), wm.end());
    arrays[std::string("b_") + kGateNames[g]] = std::vector<double>(b.begin(), b.end());
  }
  arrays["head"] = mlp_arrays(s.head, p.subspan(s.head_offset()));
  j = nlohmann::json{{"spec", s}, {"seed", w.seed}, {"weights", arrays}};
}

void from_json(const nlohmann::json& j, LstmWeights& w) {
  w.spec = j.at("spec").get<LstmSpec>();
  w.seed = j.at("seed").get<std::uint64_t>();
  const auto& s = w.spec;
  w.params.assign(s.param_count(), 0.0);
  std::span<double> p(w.params);
  const auto& arrays = j.at("weights");
  for (std::size_t g = 0; g < 4; ++g) {
    const auto gate = static_cast<LstmSpec::Gate>(g);
    read_array(arrays, std::string("W_") + kGateNames[g], s.gate_matrix_size(),
               p.subspan(s.weight_offset(gate), s.gate_matrix_size()));
    read_array(arrays, std::string("b_") + kGateNames[g], s.hidden,
               p.subspan(s.bias_offset(gate), s.hidden));
  }
  mlp_from_arrays(s.head, arrays.at("head"), p.subspan(s.head_offset()));
}

}  // namespace agridiff::nn
