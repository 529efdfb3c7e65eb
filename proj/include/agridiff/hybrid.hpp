#pragma once

/**
 * @file hybrid.hpp
 * @brief Hybrid process-based / neural architectures sharing one tape.
 *
 *  - EmbeddedNnPbm: the crop model with its water-stress subprocess replaced
 *    by sigmoid(MLP(soil_water/s_max, t_mean/30, dvs)).
 *  - MassBalanceDl: an LSTM emitting per-step growth and biomass, penalized
 *    when biomass departs from the running sum of growth.
 *  - SurrogateDpl: a network mapping static site attributes to bounded crop
 *    parameters, trained through the simulator; plus an LSTM surrogate of the
 *    simulator for fast gradient-based calibration.
 *  - PhysicsResidualDl: a sequence model whose loss adds the residual of the
 *    crop growth equation evaluated along a companion simulator pass.
 */

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "agridiff/data.hpp"
#include "agridiff/neural.hpp"
#include "agridiff/pbm.hpp"
#include "agridiff/training.hpp"

namespace agridiff::hybrid {

enum class HybridKind { EmbeddedNnPbm, MassBalanceDl, SurrogateDpl, PhysicsResidualDl };

std::string kind_name(HybridKind k);
HybridKind kind_from_name(const std::string& name);
/// "DL-informed PBM" or "PBM-informed DL".
std::string kind_family(HybridKind k);

struct HybridModel {
  HybridKind kind = HybridKind::EmbeddedNnPbm;
  pbm::CropParams params;                         // current values of every parameter
  std::vector<training::ParamBound> learnable;    // trainable subset; the rest is fixed
  std::variant<nn::MlpWeights, nn::LstmWeights> nn;
  double lambda_physics = 0.1;

  /// Throws ValidationError when the parameter partition or lambda is invalid.
  void validate() const;
  bool is_learnable(pbm::ParamId id) const;
};

void to_json(nlohmann::json& j, const HybridModel& m);
void from_json(const nlohmann::json& j, HybridModel& m);

// ---------------------------------------------------------------------------
// Seasonal feature sequences shared by the sequence models
// ---------------------------------------------------------------------------

inline constexpr std::size_t kWeatherFeatures = 4;

struct SequenceWindow {
  int sowing_doy = 90;
  std::size_t days_per_step = 7;
  std::size_t steps = 39;

  std::size_t days() const { return days_per_step * steps; }
};

/// Per-step means of t_min, t_max, radiation and precip over the window.
nn::Sequence<double> weather_steps(std::span<const pbm::DailyWeather> year,
                                   const SequenceWindow& window);

/// Standardization of feature columns by training-set statistics.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> sd;

  static FeatureScaler fit(std::span<const nn::Sequence<double>> sequences);
  nn::Sequence<double> apply(const nn::Sequence<double>& s) const;
};

void to_json(nlohmann::json& j, const FeatureScaler& s);
void from_json(const nlohmann::json& j, FeatureScaler& s);

/// Site attributes mapped to roughly unit scale around the German range.
std::vector<double> normalize_attributes(const data::SiteAttributes& site);

/// Biomass at the end of each step: w_total before harvest, yield afterwards.
template <class Real>
std::vector<Real> stepwise_biomass(const pbm::SeasonResult<Real>& season,
                                   const SequenceWindow& window) {
  std::vector<Real> out;
  out.reserve(window.steps);
  for (std::size_t k = 0; k < window.steps; ++k) {
    const std::size_t day = (k + 1) * window.days_per_step - 1;  // days after sowing
    if (season.matured && static_cast<double>(day) + 1.0 >= season.harvest_day) {
      out.push_back(season.yield);
    } else if (day < season.trajectory.size()) {
      out.push_back(season.trajectory[day].w_total);
    } else {
      out.push_back(season.yield);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// EmbeddedNnPbm
// ---------------------------------------------------------------------------

/// 3 features -> hidden (tanh) -> 1 logit.
nn::MlpSpec embedded_stress_spec(std::size_t hidden = 8);

template <class Real>
struct NeuralStress {
  const nn::MlpSpec* spec;
  std::span<const Real> weights;

  Real operator()(const pbm::StressInputs<Real>& in) const {
    const Real features[3] = {in.soil_water / in.params.s_max, in.t_mean * (1.0 / 30.0), in.dvs};
    const auto logit =
        nn::mlp_forward<Real>(*spec, weights, std::span<const Real>(features, 3));
    return ad::sigmoid(logit[0]);
  }
};

template <class Real>
std::vector<pbm::BasicCropState<Real>> embedded_forward(
    const nn::MlpSpec& spec, std::span<const Real> weights, const pbm::BasicCropState<Real>& init,
    std::span<const pbm::DailyWeather> weather, const pbm::BasicCropParams<Real>& params,
    const pbm::StepOptions& options = {}) {
  if (spec.input_size() != 3 || spec.output_size() != 1) {
    throw ValidationError("embedded stress network must map 3 features to 1 logit");
  }
  const NeuralStress<Real> stress{&spec, weights};
  return pbm::simulate<Real, NeuralStress<Real>>(init, weather, params, options, stress);
}

template <class Real>
pbm::SeasonResult<Real> embedded_season(const nn::MlpSpec& spec, std::span<const Real> weights,
                                        std::span<const pbm::DailyWeather> year,
                                        const pbm::BasicCropParams<Real>& params,
                                        const pbm::SeasonOptions& options = {}) {
  const NeuralStress<Real> stress{&spec, weights};
  return pbm::simulate_season<Real, NeuralStress<Real>>(year, params, options, stress);
}

// ---------------------------------------------------------------------------
// MassBalanceDl
// ---------------------------------------------------------------------------

template <class Real>
struct MassBalanceOutput {
  std::vector<Real> growth;   // >= 0 via softplus
  std::vector<Real> biomass;
  Real penalty = 0.0;
};

/// mean_t (biomass_t - sum_{tau <= t} growth_tau)^2
template <class Real>
Real mass_balance_penalty(std::span<const Real> growth, std::span<const Real> biomass) {
  if (growth.size() != biomass.size() || growth.empty()) {
    throw ValidationError("mass_balance_penalty: growth and biomass must be equal, non-empty");
  }
  std::vector<Real> sq;
  sq.reserve(growth.size());
  Real cumulative = 0.0;
  for (std::size_t t = 0; t < growth.size(); ++t) {
    cumulative = cumulative + growth[t];
    const Real d = biomass[t] - cumulative;
    sq.push_back(d * d);
  }
  return ad::sum(std::span<const Real>(sq)) * (1.0 / static_cast<double>(growth.size()));
}

/// LSTM in per-step mode with a 2-output head: (growth logit, biomass).
template <class Real>
MassBalanceOutput<Real> mass_balance_forward(const nn::LstmSpec& spec,
                                             std::span<const Real> weights,
                                             const nn::Sequence<Real>& sequence) {
  if (spec.output_size() != 2) {
    throw ValidationError("mass-balance network head must emit (growth, biomass)");
  }
  const auto y = nn::lstm_forward<Real>(spec, weights, sequence, nn::OutputMode::per_step);
  MassBalanceOutput<Real> out;
  out.growth.reserve(y.steps);
  out.biomass.reserve(y.steps);
  for (std::size_t t = 0; t < y.steps; ++t) {
    out.growth.push_back(ad::softplus(y(t, 0)));
    out.biomass.push_back(y(t, 1));
  }
  out.penalty = mass_balance_penalty<Real>(out.growth, out.biomass);
  return out;
}

template <class Real>
Real mass_balance_loss(const Real& data_mse, const Real& penalty, double lambda_physics) {
  if (lambda_physics == 0.0) return data_mse;
  return data_mse + lambda_physics * penalty;
}

// ---------------------------------------------------------------------------
// Differentiable parameter learning
// ---------------------------------------------------------------------------

/// attributes -> hidden (tanh) -> one raw output per bounded parameter.
nn::MlpSpec dpl_spec(std::size_t n_attributes, std::size_t n_params,
                     const std::vector<std::size_t>& hidden = {8});

/// theta = g(A): every bounded parameter squashed into its range, the rest
/// taken from `base`.
template <class Real>
pbm::BasicCropParams<Real> dpl_parameterize(const nn::MlpSpec& spec, std::span<const Real> weights,
                                            std::span<const double> attributes,
                                            const pbm::CropParams& base,
                                            std::span<const training::ParamBound> bounds) {
  for (double a : attributes) {
    if (!std::isfinite(a)) throw ValidationError("dpl_parameterize: attribute is not finite");
  }
  if (spec.output_size() != bounds.size()) {
    throw ValidationError("dpl_parameterize: network emits " + std::to_string(spec.output_size()) +
                          " values for " + std::to_string(bounds.size()) + " parameters");
  }
  std::vector<Real> in(attributes.begin(), attributes.end());
  const auto raw = nn::mlp_forward<Real>(spec, weights, std::span<const Real>(in));
  return training::apply_bounds<Real>(base, bounds, std::span<const Real>(raw));
}

/// Seasons of one site for end-to-end dPL training.
struct DplSite {
  std::vector<double> attributes;  // normalized static attributes
  pbm::CropParams base;            // values of the parameters the network does not emit
  std::vector<std::span<const pbm::DailyWeather>> years;
  std::vector<double> observed;    // harvest biomass, g/m2
};

struct DplConfig {
  std::vector<std::size_t> hidden{8};
  training::AdamConfig adam{1e-2};
  training::EarlyStopConfig stop{30, 0.0, 400};
  double obs_scale = 1e-3;
  pbm::SeasonOptions season;
};

struct DplModel {
  nn::MlpWeights weights;
  std::vector<training::ParamBound> bounds;
  training::TrainReport report;

  pbm::CropParams parameterize(std::span<const double> attributes,
                               const pbm::CropParams& base) const;
};

/// Trains the attribute-to-parameter network through the simulator on the
/// pooled seasons of `train`; `test` (may be empty) drives early stopping,
/// otherwise the training loss does.
DplModel train_dpl(std::span<const DplSite> train, std::span<const DplSite> test,
                   std::span<const training::ParamBound> bounds, const DplConfig& config,
                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Surrogate
// ---------------------------------------------------------------------------

struct SurrogateSampler {
  std::vector<std::span<const pbm::DailyWeather>> weather_pool;  // 365-day years
  std::vector<training::ParamBound> bounds;
  pbm::CropParams base;
  pbm::SeasonOptions season;
};

struct SurrogateConfig {
  std::size_t hidden = 16;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  training::AdamConfig adam{1e-2};
  double validation_fraction = 0.2;
  double output_scale = 1e-3;  // network emits biomass * output_scale
  SequenceWindow window;
};

struct SurrogateModel {
  nn::LstmWeights weights;
  std::vector<training::ParamBound> bounds;
  pbm::CropParams base;
  pbm::SeasonOptions season;
  SequenceWindow window;
  FeatureScaler scaler;
  double output_scale = 1e-3;
  double train_rmse = 0.0;       // g/m2 over all step outputs
  double validation_rmse = 0.0;  // g/m2; NaN without a validation split
  double validation_sd = 0.0;    // sd of validation targets, g/m2
  std::vector<double> loss_curve;
};

/// Samples (theta, season) pairs uniformly, labels them with the simulator
/// and fits an LSTM mapping per-step weather plus normalized theta to
/// per-step biomass.
SurrogateModel train_surrogate(const SurrogateSampler& sampler, const SurrogateConfig& config,
                               std::size_t n_samples, std::uint64_t seed);

/// Network input sequence for one season at parameter values `theta`
/// (ordered like the surrogate's bounds).
template <class Real>
nn::Sequence<Real> surrogate_inputs(const SurrogateModel& s, std::span<const Real> theta,
                                    const nn::Sequence<double>& scaled_weather) {
  const std::size_t nw = scaled_weather.width;
  nn::Sequence<Real> seq(scaled_weather.steps, nw + theta.size());
  std::vector<Real> unit;
  unit.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const auto& b = s.bounds[i].bound;
    unit.push_back(b.pinned() ? Real(0.5) : Real((theta[i] - b.low) * (1.0 / (b.high - b.low))));
  }
  for (std::size_t t = 0; t < seq.steps; ++t) {
    for (std::size_t j = 0; j < nw; ++j) seq(t, j) = scaled_weather(t, j);
    for (std::size_t j = 0; j < theta.size(); ++j) seq(t, nw + j) = unit[j];
  }
  return seq;
}

/// Per-step biomass (g/m2) predicted by the surrogate.
template <class Real>
std::vector<Real> surrogate_predict(const SurrogateModel& s, std::span<const Real> theta,
                                    const nn::Sequence<double>& scaled_weather) {
  const auto& w = s.weights;
  std::vector<Real> params(w.params.begin(), w.params.end());
  const auto y = nn::lstm_forward<Real>(w.spec, std::span<const Real>(params),
                                        surrogate_inputs<Real>(s, theta, scaled_weather),
                                        nn::OutputMode::per_step);
  std::vector<Real> out;
  out.reserve(y.steps);
  for (std::size_t t = 0; t < y.steps; ++t) out.push_back(y(t, 0) * (1.0 / s.output_scale));
  return out;
}

std::vector<double> surrogate_predict(const SurrogateModel& s, const pbm::CropParams& theta,
                                      std::span<const pbm::DailyWeather> year);

struct SurrogateCalibration {
  pbm::CropParams params;
  std::vector<double> loss_trace;
  double best_loss = 0.0;
};

/**
 * Gradient descent on bound-squashed theta through the frozen surrogate,
 * minimizing the MSE between predicted and observed per-step biomass over the
 * given seasons. `bounds` must lie within the surrogate's training ranges.
 */
SurrogateCalibration surrogate_calibrate(const SurrogateModel& surrogate,
                                         std::span<const std::span<const pbm::DailyWeather>> years,
                                         std::span<const std::vector<double>> observations,
                                         const pbm::CropParams& theta_init,
                                         std::span<const training::ParamBound> bounds,
                                         const training::AdamConfig& adam = {0.05},
                                         std::size_t max_steps = 300);

// ---------------------------------------------------------------------------
// PhysicsResidualDl
// ---------------------------------------------------------------------------

/// Daily growth rue * fInt(LAI_{t-1}) * PAR_t * fW_{t-1} along a simulator
/// pass at fixed `params`.
std::vector<double> companion_growth(std::span<const pbm::DailyWeather> weather,
                                     const pbm::CropParams& params,
                                     const pbm::StepOptions& options = {});

/// Companion growth over a season window; zero after harvest, partial on the
/// harvest day.
std::vector<double> companion_season_growth(std::span<const pbm::DailyWeather> year,
                                            const pbm::CropParams& params,
                                            const SequenceWindow& window,
                                            const pbm::SeasonOptions& options = {});

/**
 * mean_k r_k^2 with r_k = (P_{k+1} - P_k) - sum of companion growth over the
 * days of step k+1. With days_per_step = 1 this is the daily growth-equation
 * residual.
 */
template <class Real>
Real physics_residual(std::span<const Real> predicted, std::span<const double> growth,
                      std::size_t days_per_step = 1) {
  if (predicted.size() < 2) throw ValidationError("physics residual needs at least 2 steps");
  if (growth.size() < predicted.size() * days_per_step) {
    throw ValidationError("physics residual: companion growth shorter than the prediction");
  }
  std::vector<Real> sq;
  sq.reserve(predicted.size() - 1);
  for (std::size_t k = 0; k + 1 < predicted.size(); ++k) {
    double g = 0.0;
    for (std::size_t d = 0; d < days_per_step; ++d) g += growth[(k + 1) * days_per_step + d];
    const Real r = (predicted[k + 1] - predicted[k]) - g;
    sq.push_back(r * r);
  }
  return ad::sum(std::span<const Real>(sq)) * (1.0 / static_cast<double>(sq.size()));
}

template <class Real>
struct PhysicsLoss {
  Real data;
  Real residual;
  Real total;
};

/// Data MSE plus lambda * residual along a daily companion pass at `params`.
template <class Real>
PhysicsLoss<Real> physics_residual_loss(const HybridModel& model, std::span<const Real> predicted,
                                        std::span<const double> observed,
                                        std::span<const pbm::DailyWeather> weather,
                                        const pbm::CropParams& params) {
  if (model.kind != HybridKind::PhysicsResidualDl) {
    throw ValidationError("physics_residual_loss requires a PhysicsResidualDl model");
  }
  if (predicted.size() < 2) throw ValidationError("physics_residual_loss: need T >= 2");
  const auto growth = companion_growth(weather, params);
  PhysicsLoss<Real> out;
  out.data = training::mse_loss<Real, double>(predicted, observed);
  out.residual = physics_residual<Real>(predicted, growth, 1);
  out.total = model.lambda_physics == 0.0 ? out.data
                                          : out.data + model.lambda_physics * out.residual;
  return out;
}

}  // namespace agridiff::hybrid
