#pragma once

/**
 * @file training.hpp
 * @brief Losses, Adam, early stopping and the PBM calibration loop.
 */

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agridiff/autodiff.hpp"
#include "agridiff/pbm.hpp"

namespace agridiff::training {

template <class Real, class Obs>
Real mse_loss(std::span<const Real> predicted, std::span<const Obs> observed) {
  if (predicted.size() != observed.size()) {
    throw ValidationError("mse_loss: length mismatch " + std::to_string(predicted.size()) +
                          " vs " + std::to_string(observed.size()));
  }
  if (predicted.empty()) throw ValidationError("mse_loss: empty input");
  std::vector<Real> sq;
  sq.reserve(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const Real d = predicted[i] - observed[i];
    sq.push_back(d * d);
  }
  return ad::sum(std::span<const Real>(sq)) * (1.0 / static_cast<double>(predicted.size()));
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::size_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  AdamConfig config;

  static OptimizerState init(std::size_t n, const AdamConfig& config);
};

/// Bias-corrected Adam update in place. Throws NonFiniteError naming the
/// offending parameter when a gradient is not finite.
void adam_step(OptimizerState& state, std::span<double> params, std::span<const double> gradients,
               std::span<const std::string> names = {});

struct EarlyStopConfig {
  std::size_t patience = 20;
  double min_delta = 1e-4;
  std::size_t max_epochs = 500;

  void validate() const;
};

struct TrainReport {
  std::vector<double> train_loss_curve;  // loss at the parameters entering each epoch
  std::vector<double> test_loss_curve;   // loss after each epoch's update
  std::size_t stopped_epoch = 0;         // epochs run
  std::size_t best_epoch = 0;            // 1-based argmin of test loss
  std::vector<double> best_weights;
  bool aborted = false;
  std::string message;

  double best_test_loss() const;
};

void to_json(nlohmann::json& j, const TrainReport& r);
/// epoch,train_loss,test_loss
void write_loss_csv(std::ostream& os, const TrainReport& r);

/// A training problem over a flat parameter vector.
class Objective {
 public:
  virtual ~Objective() = default;
  /// Training loss recorded on `tape` (includes any physics penalty).
  virtual ad::Var train_loss(ad::Tape& tape, std::span<const ad::Var> params) = 0;
  /// Held-out loss used for early stopping, evaluated off-tape.
  virtual double test_loss(std::span<const double> params) = 0;
  virtual std::vector<std::string> parameter_names(std::size_t n) const;
};

/**
 * Full-batch training: each epoch rebuilds the tape, records the training
 * loss, back-propagates, takes one Adam step and evaluates the test loss.
 * Stops when the test loss has not improved by min_delta for `patience`
 * epochs or at max_epochs; best_weights holds the argmin-test-loss
 * parameters. Non-finite losses abort the run with the report so far.
 */
TrainReport train(Objective& objective, std::vector<double> initial, const AdamConfig& adam,
                  const EarlyStopConfig& stop);

// ---------------------------------------------------------------------------
// Bounded parameters
// ---------------------------------------------------------------------------

struct Bound {
  double low = 0.0;
  double high = 1.0;

  bool pinned() const { return low == high; }
  template <class Real>
  Real squash(const Real& raw) const {
    if (pinned()) return Real(low);
    return low + (high - low) * ad::sigmoid(raw);
  }
  /// Inverse of squash, with the value pulled slightly inside the bounds.
  double unsquash(double value) const;
};

struct ParamBound {
  pbm::ParamId id;
  Bound bound;
};

/// Bounds used for calibration and differentiable parameter learning.
std::vector<ParamBound> default_param_bounds();

/// `base` with every bounded parameter replaced by its squashed raw value.
template <class Real>
pbm::BasicCropParams<Real> apply_bounds(const pbm::CropParams& base,
                                        std::span<const ParamBound> bounds,
                                        std::span<const Real> raw) {
  auto p = pbm::lift<Real>(base);
  for (std::size_t i = 0; i < bounds.size(); ++i) p[bounds[i].id] = bounds[i].bound.squash(raw[i]);
  return p;
}

std::vector<double> raw_from_params(const pbm::CropParams& params,
                                    std::span<const ParamBound> bounds);

// ---------------------------------------------------------------------------
// PBM calibration
// ---------------------------------------------------------------------------

/// Seasons (365-day years) with one observed harvest biomass each.
struct SeasonData {
  std::vector<std::span<const pbm::DailyWeather>> years;
  std::vector<double> observed;  // g/m2

  void validate() const;
  std::size_t size() const { return years.size(); }
};

struct CalibrationConfig {
  AdamConfig adam{0.05};
  EarlyStopConfig stop{30, 0.0, 300};
  pbm::SeasonOptions season;
  double obs_scale = 1e-3;  // losses are computed on biomass * obs_scale
};

struct CalibrationResult {
  pbm::CropParams params;
  std::vector<double> loss_trace;
  TrainReport report;
};

/**
 * Gradient descent on bound-squashed parameters through the season
 * simulator, minimizing the MSE of harvest biomass. `test` drives early
 * stopping; when null the training loss is used.
 */
CalibrationResult calibrate_pbm(const pbm::CropParams& init, std::span<const ParamBound> bounds,
                                const SeasonData& train, const SeasonData* test,
                                const CalibrationConfig& config = {});

}  // namespace agridiff::training
