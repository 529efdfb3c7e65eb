#include "agridiff/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

namespace agridiff::hybrid {

std::string kind_name(HybridKind k) {
  switch (k) {
    case HybridKind::EmbeddedNnPbm: return "EmbeddedNnPbm";
    case HybridKind::MassBalanceDl: return "MassBalanceDl";
    case HybridKind::SurrogateDpl: return "SurrogateDpl";
    case HybridKind::PhysicsResidualDl: return "PhysicsResidualDl";
  }
  return "?";
}

HybridKind kind_from_name(const std::string& name) {
  for (auto k : {HybridKind::EmbeddedNnPbm, HybridKind::MassBalanceDl, HybridKind::SurrogateDpl,
                 HybridKind::PhysicsResidualDl}) {
    if (kind_name(k) == name) return k;
  }
  throw ValidationError("unknown hybrid kind '" + name + "'");
}

std::string kind_family(HybridKind k) {
  switch (k) {
    case HybridKind::EmbeddedNnPbm:
    case HybridKind::MassBalanceDl: return "DL-informed PBM";
    case HybridKind::SurrogateDpl:
    case HybridKind::PhysicsResidualDl: return "PBM-informed DL";
  }
  return "?";
}

bool HybridModel::is_learnable(pbm::ParamId id) const {
  return std::any_of(learnable.begin(), learnable.end(),
                     [id](const training::ParamBound& b) { return b.id == id; });
}

void HybridModel::validate() const {
  pbm::validate(params);
  if (!(lambda_physics >= 0.0) || !std::isfinite(lambda_physics)) {
    throw ValidationError("lambda_physics must be a finite value >= 0");
  }
  std::set<pbm::ParamId> seen;
  for (const auto& b : learnable) {
    if (!seen.insert(b.id).second) {
      throw ValidationError(std::string("parameter ") + std::string(pbm::param_name(b.id)) +
                            " listed twice as learnable");
    }
    if (!(b.bound.low <= b.bound.high)) {
      throw ValidationError("invalid bound for " + std::string(pbm::param_name(b.id)));
    }
  }
}

void to_json(nlohmann::json& j, const HybridModel& m) {
  nlohmann::json fixed = nlohmann::json::object();
  nlohmann::json learn = nlohmann::json::object();
  for (std::size_t i = 0; i < pbm::kParamCount; ++i) {
    const auto id = static_cast<pbm::ParamId>(i);
    if (!m.is_learnable(id)) fixed[std::string(pbm::param_name(id))] = m.params[id];
  }
  for (const auto& b : m.learnable) {
    learn[std::string(pbm::param_name(b.id))] = {
        {"value", m.params[b.id]}, {"low", b.bound.low}, {"high", b.bound.high}};
  }
  j = nlohmann::json{{"kind", kind_name(m.kind)},
                     {"fixed_params", fixed},
                     {"learnable_params", learn},
                     {"lambda_physics", m.lambda_physics}};
  if (std::holds_alternative<nn::MlpWeights>(m.nn)) {
    j["nn"] = {{"type", "mlp"}, {"weights", std::get<nn::MlpWeights>(m.nn)}};
  } else {
    j["nn"] = {{"type", "lstm"}, {"weights", std::get<nn::LstmWeights>(m.nn)}};
  }
}

void from_json(const nlohmann::json& j, HybridModel& m) {
  m.kind = kind_from_name(j.at("kind").get<std::string>());
  m.learnable.clear();
  for (const auto& [name, v] : j.at("fixed_params").items()) {
    m.params[pbm::param_from_name(name)] = v.get<double>();
  }
  for (const auto& [name, v] : j.at("learnable_params").items()) {
    const auto id = pbm::param_from_name(name);
    m.params[id] = v.at("value").get<double>();
    m.learnable.push_back({id, {v.at("low").get<double>(), v.at("high").get<double>()}});
  }
  m.lambda_physics = j.at("lambda_physics").get<double>();
  const auto& nnj = j.at("nn");
  if (nnj.at("type") == "mlp") {
    m.nn = nnj.at("weights").get<nn::MlpWeights>();
  } else {
    m.nn = nnj.at("weights").get<nn::LstmWeights>();
  }
  if (j.at("fixed_params").size() + m.learnable.size() != pbm::kParamCount) {
    throw ValidationError("checkpoint parameters do not cover every crop parameter");
  }
  m.validate();
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

nn::Sequence<double> weather_steps(std::span<const pbm::DailyWeather> year,
                                   const SequenceWindow& window) {
  if (window.days_per_step == 0 || window.steps == 0) {
    throw ValidationError("sequence window must have at least one step of one day");
  }
  const auto first = static_cast<std::size_t>(window.sowing_doy - 1);
  if (window.sowing_doy < 1 || first + window.days() > year.size()) {
    throw ValidationError("sequence window exceeds the weather year");
  }
  nn::Sequence<double> s(window.steps, kWeatherFeatures);
  const double inv = 1.0 / static_cast<double>(window.days_per_step);
  for (std::size_t k = 0; k < window.steps; ++k) {
    for (std::size_t d = 0; d < window.days_per_step; ++d) {
      const auto& w = year[first + k * window.days_per_step + d];
      s(k, 0) += w.t_min * inv;
      s(k, 1) += w.t_max * inv;
      s(k, 2) += w.radiation * inv;
      s(k, 3) += w.precip * inv;
    }
  }
  return s;
}

FeatureScaler FeatureScaler::fit(std::span<const nn::Sequence<double>> sequences) {
  if (sequences.empty()) throw ValidationError("cannot fit a feature scaler on no data");
  const std::size_t width = sequences.front().width;
  FeatureScaler f;
  f.mean.assign(width, 0.0);
  f.sd.assign(width, 0.0);
  std::size_t n = 0;
  for (const auto& s : sequences) {
    if (s.width != width) throw ValidationError("feature scaler: inconsistent widths");
    for (std::size_t t = 0; t < s.steps; ++t) {
      for (std::size_t j = 0; j < width; ++j) f.mean[j] += s(t, j);
    }
    n += s.steps;
  }
  for (auto& m : f.mean) m /= static_cast<double>(n);
  for (const auto& s : sequences) {
    for (std::size_t t = 0; t < s.steps; ++t) {
      for (std::size_t j = 0; j < width; ++j) {
        const double d = s(t, j) - f.mean[j];
        f.sd[j] += d * d;
      }
    }
  }
  for (auto& v : f.sd) {
    v = std::sqrt(v / static_cast<double>(n));
    if (!(v > 1e-12)) v = 1.0;
  }
  return f;
}

nn::Sequence<double> FeatureScaler::apply(const nn::Sequence<double>& s) const {
  if (s.width != mean.size()) throw ValidationError("feature scaler width mismatch");
  nn::Sequence<double> out(s.steps, s.width);
  for (std::size_t t = 0; t < s.steps; ++t) {
    for (std::size_t j = 0; j < s.width; ++j) out(t, j) = (s(t, j) - mean[j]) / sd[j];
  }
  return out;
}

void to_json(nlohmann::json& j, const FeatureScaler& s) {
  j = nlohmann::json{{"mean", s.mean}, {"sd", s.sd}};
}

void from_json(const nlohmann::json& j, FeatureScaler& s) {
  j.at("mean").get_to(s.mean);
  j.at("sd").get_to(s.sd);
}

std::vector<double> normalize_attributes(const data::SiteAttributes& site) {
  return {(site.latitude - 51.0) / 3.0, (site.soil_capacity_proxy - 120.0) / 40.0,
          (site.mean_annual_temp - 9.0) / 1.5};
}

nn::MlpSpec embedded_stress_spec(std::size_t hidden) {
  return nn::MlpSpec::make(3, {hidden}, 1, nn::Activation::tanh);
}

nn::MlpSpec dpl_spec(std::size_t n_attributes, std::size_t n_params,
                     const std::vector<std::size_t>& hidden) {
  return nn::MlpSpec::make(n_attributes, hidden, n_params, nn::Activation::tanh);
}

// ---------------------------------------------------------------------------
// Surrogate
// ---------------------------------------------------------------------------

namespace {

struct SurrogateSample {
  nn::Sequence<double> weather;  // raw step features
  std::vector<double> theta;     // ordered like the bounds
  std::vector<double> target;    // g/m2 per step
};

double sequence_rmse(const SurrogateModel& model, std::span<const SurrogateSample> samples,
                     std::span<const std::size_t> idx) {
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i : idx) {
    const auto& s = samples[i];
    const auto pred = surrogate_predict<double>(model, s.theta, model.scaler.apply(s.weather));
    for (std::size_t t = 0; t < pred.size(); ++t) {
      const double d = pred[t] - s.target[t];
      sq += d * d;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(sq / static_cast<double>(n));
}

}  // namespace

SurrogateModel train_surrogate(const SurrogateSampler& sampler, const SurrogateConfig& config,
                               std::size_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("train_surrogate: n_samples must be >= 1");
  if (sampler.weather_pool.empty()) throw ValidationError("train_surrogate: empty weather pool");
  if (sampler.bounds.empty()) throw ValidationError("train_surrogate: no sampled parameters");
  for (const auto& b : sampler.bounds) {
    if (!(b.bound.low < b.bound.high)) {
      throw ValidationError(std::string("train_surrogate: degenerate sampling range for ") +
                            std::string(pbm::param_name(b.id)));
    }
  }
  if (config.batch_size < 1) throw ValidationError("train_surrogate: batch_size must be >= 1");

  SurrogateModel model;
  model.bounds = sampler.bounds;
  model.base = sampler.base;
  model.season = sampler.season;
  model.window = config.window;
  model.window.sowing_doy = sampler.season.sowing_doy;
  model.output_scale = config.output_scale;

  std::mt19937_64 rng(data::derive_seed(seed, "surrogate/sample"));
  std::vector<SurrogateSample> samples;
  samples.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    SurrogateSample s;
    pbm::CropParams p = sampler.base;
    for (const auto& b : sampler.bounds) {
      std::uniform_real_distribution<double> u(b.bound.low, b.bound.high);
      p[b.id] = u(rng);
      s.theta.push_back(p[b.id]);
    }
    std::uniform_int_distribution<std::size_t> pick(0, sampler.weather_pool.size() - 1);
    const auto year = sampler.weather_pool[pick(rng)];
    const auto season = pbm::simulate_season<double>(year, p, sampler.season);
    s.target = stepwise_biomass(season, model.window);
    s.weather = weather_steps(year, model.window);
    samples.push_back(std::move(s));
  }

  const std::size_t n_val =
      n_samples >= 5 ? static_cast<std::size_t>(std::floor(config.validation_fraction *
                                                           static_cast<double>(n_samples)))
                     : 0;
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> trn(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  std::vector<nn::Sequence<double>> train_weather;
  for (std::size_t i : trn) train_weather.push_back(samples[i].weather);
  model.scaler = FeatureScaler::fit(train_weather);
  std::vector<nn::Sequence<double>> scaled(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) scaled[i] = model.scaler.apply(samples[i].weather);

  const auto spec = nn::LstmSpec::make(kWeatherFeatures + sampler.bounds.size(), config.hidden, 1);
  model.weights = nn::init_weights(spec, data::derive_seed(seed, "surrogate/init"));
  std::vector<double>& params = model.weights.params;
  auto opt = training::OptimizerState::init(params.size(), config.adam);

  std::vector<double> best_params = params;
  double best_score = std::numeric_limits<double>::infinity();
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  std::vector<double> grad(params.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(trn.begin(), trn.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < trn.size(); start += config.batch_size) {
      const std::size_t stop = std::min(trn.size(), start + config.batch_size);
      tape.clear();
      leaves.clear();
      for (double p : params) leaves.push_back(tape.leaf(p));
      std::vector<ad::Var> sq;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& s = samples[trn[b]];
        std::vector<ad::Var> theta(s.theta.begin(), s.theta.end());
        const auto in = surrogate_inputs<ad::Var>(model, theta, scaled[trn[b]]);
        const auto y = nn::lstm_forward<ad::Var>(spec, leaves, in, nn::OutputMode::per_step);
        for (std::size_t t = 0; t < y.steps; ++t) {
          const ad::Var d = y(t, 0) - s.target[t] * model.output_scale;
          sq.push_back(d * d);
        }
      }
      const ad::Var loss = ad::sum(std::span<const ad::Var>(sq)) * (1.0 / static_cast<double>(sq.size()));
      const auto g = tape.backward(loss);
      for (std::size_t i = 0; i < leaves.size(); ++i) grad[i] = g[leaves[i]];
      training::adam_step(opt, params, grad);
      epoch_loss += loss.value() * static_cast<double>(stop - start);
    }
    epoch_loss /= static_cast<double>(trn.size());
    model.loss_curve.push_back(epoch_loss);
    const double score = val.empty() ? sequence_rmse(model, samples, trn)
                                     : sequence_rmse(model, samples, val);
    if (score < best_score) {
      best_score = score;
      best_params = params;
    }
  }
  params = best_params;
  model.train_rmse = sequence_rmse(model, samples, trn);
  model.validation_rmse = sequence_rmse(model, samples, val);
  std::vector<double> val_targets;
  for (std::size_t i : val) {
    val_targets.insert(val_targets.end(), samples[i].target.begin(), samples[i].target.end());
  }
  model.validation_sd = val_targets.size() > 1 ? data::sample_sd(val_targets) : 0.0;
  spdlog::debug("surrogate: train rmse {:.3f}, validation rmse {:.3f} (sd {:.3f})",
                model.train_rmse, model.validation_rmse, model.validation_sd);
  return model;
}

std::vector<double> surrogate_predict(const SurrogateModel& s, const pbm::CropParams& theta,
                                      std::span<const pbm::DailyWeather> year) {
  std::vector<double> t;
  for (const auto& b : s.bounds) t.push_back(theta[b.id]);
  return surrogate_predict<double>(s, t, s.scaler.apply(weather_steps(year, s.window)));
}

namespace {

class SurrogateObjective final : public training::Objective {
 public:
  SurrogateObjective(const SurrogateModel& s, std::vector<nn::Sequence<double>> inputs,
                     std::span<const std::vector<double>> obs, const pbm::CropParams& init,
                     std::span<const training::ParamBound> bounds)
      : s_(s), inputs_(std::move(inputs)), obs_(obs), init_(init), bounds_(bounds) {}

  ad::Var train_loss(ad::Tape&, std::span<const ad::Var> raw) override {
    return loss<ad::Var>(raw);
  }
  double test_loss(std::span<const double> raw) override { return loss<double>(raw); }
  std::vector<std::string> parameter_names(std::size_t) const override {
    std::vector<std::string> names;
    for (const auto& b : bounds_) names.emplace_back(std::string(pbm::param_name(b.id)));
    return names;
  }

  template <class Real>
  Real loss(std::span<const Real> raw) const {
    const auto p = training::apply_bounds<Real>(init_, bounds_, raw);
    std::vector<Real> theta;
    for (const auto& b : s_.bounds) theta.push_back(p[b.id]);
    std::vector<Real> sq;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      const auto pred = surrogate_predict<Real>(s_, theta, inputs_[i]);
      if (pred.size() != obs_[i].size()) {
        throw ValidationError("surrogate_calibrate: observation " + std::to_string(i) + " has " +
                              std::to_string(obs_[i].size()) + " steps, surrogate emits " +
                              std::to_string(pred.size()));
      }
      for (std::size_t t = 0; t < pred.size(); ++t) {
        const Real d = (pred[t] - obs_[i][t]) * s_.output_scale;
        sq.push_back(d * d);
      }
    }
    return ad::sum(std::span<const Real>(sq)) * (1.0 / static_cast<double>(sq.size()));
  }

 private:
  const SurrogateModel& s_;
  std::vector<nn::Sequence<double>> inputs_;
  std::span<const std::vector<double>> obs_;
  pbm::CropParams init_;
  std::span<const training::ParamBound> bounds_;
};

}  // namespace

SurrogateCalibration surrogate_calibrate(const SurrogateModel& surrogate,
                                         std::span<const std::span<const pbm::DailyWeather>> years,
                                         std::span<const std::vector<double>> observations,
                                         const pbm::CropParams& theta_init,
                                         std::span<const training::ParamBound> bounds,
                                         const training::AdamConfig& adam, std::size_t max_steps) {
  if (years.empty() || years.size() != observations.size()) {
    throw ValidationError("surrogate_calibrate: need one observation trajectory per season");
  }
  for (const auto& b : bounds) {
    const auto it = std::find_if(surrogate.bounds.begin(), surrogate.bounds.end(),
                                 [&](const training::ParamBound& s) { return s.id == b.id; });
    if (it == surrogate.bounds.end() || b.bound.low < it->bound.low ||
        b.bound.high > it->bound.high) {
      throw ValidationError(std::string("surrogate was not trained over the bounds of ") +
                            std::string(pbm::param_name(b.id)));
    }
  }
  std::vector<nn::Sequence<double>> inputs;
  for (const auto& y : years) inputs.push_back(surrogate.scaler.apply(weather_steps(y, surrogate.window)));
  SurrogateObjective objective(surrogate, std::move(inputs), observations, theta_init, bounds);

  const auto raw0 = training::raw_from_params(theta_init, bounds);
  SurrogateCalibration out;
  const double initial = objective.test_loss(raw0);
  if (!std::isfinite(initial)) throw NonFiniteError("surrogate_calibrate: initial loss is not finite");

  const auto report = training::train(objective, raw0, adam, {max_steps, 0.0, max_steps});
  out.loss_trace = report.train_loss_curve;
  if (report.best_epoch > 0 && report.best_test_loss() <= initial) {
    out.params = pbm::values_of(training::apply_bounds<double>(theta_init, bounds,
                                                               std::span<const double>(report.best_weights)));
    out.best_loss = report.best_test_loss();
  } else {
    out.params = pbm::values_of(training::apply_bounds<double>(theta_init, bounds,
                                                               std::span<const double>(raw0)));
    out.best_loss = initial;
  }
  if (report.aborted) spdlog::warn("surrogate calibration aborted: {}", report.message);
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable parameter learning
// ---------------------------------------------------------------------------

namespace {

class DplObjective final : public training::Objective {
 public:
  DplObjective(const nn::MlpSpec& spec, std::span<const DplSite> train,
               std::span<const DplSite> test, std::span<const training::ParamBound> bounds,
               const DplConfig& config)
      : spec_(spec), train_(train), test_(test.empty() ? train : test), bounds_(bounds),
        config_(config) {}

  ad::Var train_loss(ad::Tape&, std::span<const ad::Var> params) override {
    return loss<ad::Var>(params, train_);
  }
  double test_loss(std::span<const double> params) override { return loss<double>(params, test_); }

  template <class Real>
  Real loss(std::span<const Real> params, std::span<const DplSite> sites) const {
    std::vector<Real> sq;
    for (const auto& site : sites) {
      const auto p = dpl_parameterize<Real>(spec_, params, site.attributes, site.base, bounds_);
      for (std::size_t i = 0; i < site.years.size(); ++i) {
        const Real y = pbm::simulate_season<Real>(site.years[i], p, config_.season).yield;
        const Real d = (y - site.observed[i]) * config_.obs_scale;
        sq.push_back(d * d);
      }
    }
    return ad::sum(std::span<const Real>(sq)) * (1.0 / static_cast<double>(sq.size()));
  }

 private:
  const nn::MlpSpec& spec_;
  std::span<const DplSite> train_;
  std::span<const DplSite> test_;
  std::span<const training::ParamBound> bounds_;
  const DplConfig& config_;
};

void check_sites(std::span<const DplSite> sites, std::size_t n_attr, const char* what) {
  for (const auto& s : sites) {
    if (s.attributes.size() != n_attr) {
      throw ValidationError(std::string("train_dpl: ") + what +
                            " sites disagree on the number of attributes");
    }
    if (s.years.empty() || s.years.size() != s.observed.size()) {
      throw ValidationError(std::string("train_dpl: every ") + what +
                            " site needs one observation per season");
    }
  }
}

}  // namespace

pbm::CropParams DplModel::parameterize(std::span<const double> attributes,
                                       const pbm::CropParams& base) const {
  return pbm::values_of(dpl_parameterize<double>(weights.spec, weights.params, attributes, base,
                                                 bounds));
}

DplModel train_dpl(std::span<const DplSite> train, std::span<const DplSite> test,
                   std::span<const training::ParamBound> bounds, const DplConfig& config,
                   std::uint64_t seed) {
  if (train.empty()) throw ValidationError("train_dpl: no training sites");
  if (bounds.empty()) throw ValidationError("train_dpl: no learnable parameters");
  const std::size_t n_attr = train.front().attributes.size();
  check_sites(train, n_attr, "training");
  check_sites(test, n_attr, "test");

  DplModel model;
  model.bounds.assign(bounds.begin(), bounds.end());
  model.weights = nn::init_weights(dpl_spec(n_attr, bounds.size(), config.hidden), seed);
  DplObjective objective(model.weights.spec, train, test, model.bounds, config);
  model.report = training::train(objective, model.weights.params, config.adam, config.stop);
  if (model.report.best_epoch == 0) {
    throw NonFiniteError("train_dpl: training aborted before the first epoch: " +
                         model.report.message);
  }
  model.weights.params = model.report.best_weights;
  return model;
}

// ---------------------------------------------------------------------------
// Physics residual
// ---------------------------------------------------------------------------

std::vector<double> companion_growth(std::span<const pbm::DailyWeather> weather,
                                     const pbm::CropParams& params,
                                     const pbm::StepOptions& options) {
  pbm::validate(params);
  std::vector<double> growth;
  growth.reserve(weather.size());
  auto s = pbm::initial_state(params);
  for (const auto& w : weather) {
    const auto r = pbm::step_detailed<double>(s, w, params, options);
    growth.push_back(r.fluxes.growth);
    s = r.state;
  }
  return growth;
}

std::vector<double> companion_season_growth(std::span<const pbm::DailyWeather> year,
                                            const pbm::CropParams& params,
                                            const SequenceWindow& window,
                                            const pbm::SeasonOptions& options) {
  const auto season = pbm::simulate_season<double>(year, params, options);
  std::vector<double> g(window.days(), 0.0);
  for (std::size_t d = 0; d < g.size() && d < season.growth.size(); ++d) g[d] = season.growth[d];
  return g;
}

}  // namespace agridiff::hybrid
