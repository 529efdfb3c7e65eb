#include "agridiff/training.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace agridiff::training {

OptimizerState OptimizerState::init(std::size_t n, const AdamConfig& config) {
  OptimizerState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  s.config = config;
  return s;
}

void adam_step(OptimizerState& state, std::span<double> params, std::span<const double> gradients,
               std::span<const std::string> names) {
  if (params.size() != gradients.size() || params.size() != state.first_moment.size()) {
    throw ValidationError("adam_step: parameters, gradients and moments are not aligned");
  }
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    if (!std::isfinite(gradients[i])) {
      const std::string name = i < names.size() ? names[i] : "param[" + std::to_string(i) + "]";
      throw NonFiniteError("non-finite gradient for " + name);
    }
  }
  const auto& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gradients[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    params[i] -= c.learning_rate * (m / correction1) / (std::sqrt(v / correction2) + c.epsilon);
  }
}

void EarlyStopConfig::validate() const {
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (!(min_delta >= 0.0)) throw ValidationError("min_delta must be >= 0");
}

double TrainReport::best_test_loss() const {
  if (best_epoch == 0 || best_epoch > test_loss_curve.size()) {
    return std::numeric_limits<double>::infinity();
  }
  return test_loss_curve[best_epoch - 1];
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = nlohmann::json{{"train_loss_curve", r.train_loss_curve},
                     {"test_loss_curve", r.test_loss_curve},
                     {"stopped_epoch", r.stopped_epoch},
                     {"best_epoch", r.best_epoch},
                     {"best_weights", r.best_weights},
                     {"aborted", r.aborted},
                     {"message", r.message}};
}

void write_loss_csv(std::ostream& os, const TrainReport& r) {
  os << "epoch,train_loss,test_loss\n";
  char buf[128];
  for (std::size_t e = 0; e < r.train_loss_curve.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g\n", e + 1, r.train_loss_curve[e],
                  e < r.test_loss_curve.size() ? r.test_loss_curve[e] : NAN);
    os << buf;
  }
}

std::vector<std::string> Objective::parameter_names(std::size_t n) const {
  std::vector<std::string> names;
  names.reserve(n);
  for (std::size_t i = 0; i < n; ++i) names.push_back("param[" + std::to_string(i) + "]");
  return names;
}

TrainReport train(Objective& objective, std::vector<double> initial, const AdamConfig& adam,
                  const EarlyStopConfig& stop) {
  stop.validate();
  TrainReport report;
  std::vector<double> params = std::move(initial);
  report.best_weights = params;
  OptimizerState opt = OptimizerState::init(params.size(), adam);
  const auto names = objective.parameter_names(params.size());

  ad::Tape tape;
  std::vector<ad::Var> leaves;
  std::vector<double> grad(params.size());
  double best = std::numeric_limits<double>::infinity();
  double reference = std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;

  for (std::size_t epoch = 1; epoch <= stop.max_epochs; ++epoch) {
    double train_value = 0.0;
    try {
      tape.clear();
      leaves.clear();
      for (double p : params) leaves.push_back(tape.leaf(p));
      const ad::Var loss = objective.train_loss(tape, leaves);
      train_value = loss.value();
      if (!std::isfinite(train_value)) throw NonFiniteError("training loss is not finite");
      if (loss.is_active()) {
        const ad::Gradient g = tape.backward(loss);
        for (std::size_t i = 0; i < leaves.size(); ++i) grad[i] = g[leaves[i]];
      } else {
        std::fill(grad.begin(), grad.end(), 0.0);
      }
      adam_step(opt, params, grad, names);
    } catch (const std::exception& e) {
      report.aborted = true;
      report.message = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }

    double test_value = 0.0;
    try {
      test_value = objective.test_loss(params);
    } catch (const std::exception& e) {
      test_value = std::numeric_limits<double>::quiet_NaN();
      report.message = e.what();
    }
    report.train_loss_curve.push_back(train_value);
    report.test_loss_curve.push_back(test_value);
    report.stopped_epoch = epoch;
    if (!std::isfinite(test_value)) {
      report.aborted = true;
      if (report.message.empty()) report.message = "test loss is not finite";
      report.message = "epoch " + std::to_string(epoch) + ": " + report.message;
      break;
    }
    if (test_value < best) {
      best = test_value;
      report.best_epoch = epoch;
      report.best_weights = params;
    }
    if (test_value < reference - stop.min_delta) {
      reference = test_value;
      since_improvement = 0;
    } else if (++since_improvement > stop.patience) {
      break;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

double Bound::unsquash(double value) const {
  if (pinned()) return 0.0;
  double u = (value - low) / (high - low);
  u = std::clamp(u, 1e-6, 1.0 - 1e-6);
  return std::log(u / (1.0 - u));
}

std::vector<ParamBound> default_param_bounds() {
  using pbm::ParamId;
  return {{ParamId::rue, {1.0, 5.0}},
          {ParamId::k_ext, {0.3, 0.9}},
          {ParamId::t_base, {0.0, 10.0}},
          {ParamId::s_max, {50.0, 200.0}}};
}

std::vector<double> raw_from_params(const pbm::CropParams& params,
                                    std::span<const ParamBound> bounds) {
  std::vector<double> raw;
  raw.reserve(bounds.size());
  for (const auto& b : bounds) raw.push_back(b.bound.unsquash(params[b.id]));
  return raw;
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

void SeasonData::validate() const {
  if (years.empty()) throw ValidationError("season data is empty");
  if (years.size() != observed.size()) {
    throw ValidationError("observations (" + std::to_string(observed.size()) +
                          ") are not aligned with simulated years (" +
                          std::to_string(years.size()) + ")");
  }
}

namespace {

class CalibrationObjective final : public Objective {
 public:
  CalibrationObjective(const pbm::CropParams& base, std::span<const ParamBound> bounds,
                       const SeasonData& train, const SeasonData& test,
                       const CalibrationConfig& config)
      : base_(base), bounds_(bounds), train_(train), test_(test), config_(config) {}

  ad::Var train_loss(ad::Tape&, std::span<const ad::Var> raw) override {
    return loss<ad::Var>(train_, raw);
  }
  double test_loss(std::span<const double> raw) override { return loss<double>(test_, raw); }
  std::vector<std::string> parameter_names(std::size_t) const override {
    std::vector<std::string> names;
    for (const auto& b : bounds_) names.emplace_back(pbm::param_name(b.id));
    return names;
  }

 private:
  template <class Real>
  Real loss(const SeasonData& data, std::span<const Real> raw) const {
    const auto p = apply_bounds<Real>(base_, bounds_, raw);
    std::vector<Real> pred;
    std::vector<double> obs;
    pred.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
      pred.push_back(pbm::simulate_season<Real>(data.years[i], p, config_.season).yield *
                     config_.obs_scale);
      obs.push_back(data.observed[i] * config_.obs_scale);
    }
    return mse_loss<Real, double>(pred, obs);
  }

  pbm::CropParams base_;
  std::span<const ParamBound> bounds_;
  const SeasonData& train_;
  const SeasonData& test_;
  const CalibrationConfig& config_;
};

}  // namespace

CalibrationResult calibrate_pbm(const pbm::CropParams& init, std::span<const ParamBound> bounds,
                                const SeasonData& train, const SeasonData* test,
                                const CalibrationConfig& config) {
  pbm::validate(init);
  train.validate();
  if (test) test->validate();
  for (const auto& b : bounds) {
    if (!(b.bound.low <= b.bound.high) || !std::isfinite(b.bound.low) ||
        !std::isfinite(b.bound.high)) {
      throw ValidationError("invalid bound for " + std::string(pbm::param_name(b.id)));
    }
  }
  CalibrationObjective objective(init, bounds, train, test ? *test : train, config);
  CalibrationResult result;
  result.report = training::train(objective, raw_from_params(init, bounds), config.adam, config.stop);
  result.params = pbm::values_of(apply_bounds<double>(init, bounds, result.report.best_weights));
  result.loss_trace = result.report.train_loss_curve;
  return result;
}

}  // namespace agridiff::training
