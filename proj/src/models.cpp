// Model runners for the experiment harness. Every model sees the same
// training-time forcing and targets; validation always uses clean weather.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "agridiff/experiment.hpp"

namespace agridiff::eval {

namespace {

constexpr double kScale = 1e-3;  // losses are computed on biomass in kg/m2

using ad::Var;
using hybrid::HybridKind;

std::span<const pbm::DailyWeather> year_of(const data::WeatherSeries& s, std::size_t y) {
  return s.year(y);
}

template <class Real>
nn::Sequence<Real> lift_sequence(const nn::Sequence<double>& s) {
  nn::Sequence<Real> out(s.steps, s.width);
  std::copy(s.data.begin(), s.data.end(), out.data.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Simulator-based models: calibrated PBM, embedded stress network, dPL
// ---------------------------------------------------------------------------

enum class PbmVariant { calibrated, embedded, dpl };

class PbmFamily final : public training::Objective {
 public:
  PbmFamily(const ModelData& d, const ModelSettings& s, PbmVariant v, std::uint64_t seed)
      : d_(d), s_(s), v_(v), base_(pbm::CropParams{}) {
    sites_ = d.training_sites();
    const std::size_t nb = s.bounds.size();
    if (v == PbmVariant::calibrated || v == PbmVariant::embedded) {
      const auto raw = training::raw_from_params(base_, s.bounds);
      for (std::size_t i = 0; i < sites_.size(); ++i) init_.insert(init_.end(), raw.begin(), raw.end());
    }
    nn_offset_ = init_.size();
    if (v == PbmVariant::embedded) {
      spec_ = hybrid::embedded_stress_spec(s.stress_hidden);
      auto w = nn::init_weights(spec_, data::derive_seed(seed, "embedded/init"));
      // start near an unstressed crop: sigmoid(2.5) ~ 0.92
      w.params.back() = 2.5;
      init_.insert(init_.end(), w.params.begin(), w.params.end());
    } else if (v == PbmVariant::dpl) {
      spec_ = hybrid::dpl_spec(3, nb, {s.dpl_hidden});
      auto w = nn::init_weights(spec_, data::derive_seed(seed, "dpl/init"));
      init_.insert(init_.end(), w.params.begin(), w.params.end());
    }
  }

  const std::vector<double>& initial() const { return init_; }

  Var train_loss(ad::Tape&, std::span<const Var> params) override {
    return loss<Var>(params, d_.train);
  }
  double test_loss(std::span<const double> params) override { return loss<double>(params, d_.test); }

  std::vector<std::string> parameter_names(std::size_t n) const override {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) {
      if (i < nn_offset_) {
        const auto site = sites_[i / s_.bounds.size()];
        names.push_back(d_.twin->sites[site].site_id + "." +
                        std::string(pbm::param_name(s_.bounds[i % s_.bounds.size()].id)));
      } else {
        names.push_back("nn[" + std::to_string(i - nn_offset_) + "]");
      }
    }
    return names;
  }

  template <class Real>
  pbm::BasicCropParams<Real> theta(std::span<const Real> params, std::size_t site) const {
    const std::size_t nb = s_.bounds.size();
    if (v_ == PbmVariant::dpl) {
      const auto attrs = hybrid::normalize_attributes(d_.twin->sites[site]);
      return hybrid::dpl_parameterize<Real>(spec_, params.subspan(nn_offset_), attrs, base_,
                                            s_.bounds);
    }
    const auto it = std::find(sites_.begin(), sites_.end(), site);
    if (it != sites_.end()) {
      const auto block = static_cast<std::size_t>(it - sites_.begin());
      return training::apply_bounds<Real>(base_, s_.bounds, params.subspan(block * nb, nb));
    }
    // unseen site: average raw value over the calibrated sites
    std::vector<Real> mean;
    for (std::size_t j = 0; j < nb; ++j) {
      std::vector<Real> column;
      for (std::size_t b = 0; b < sites_.size(); ++b) column.push_back(params[b * nb + j]);
      mean.push_back(ad::sum(std::span<const Real>(column)) *
                     (1.0 / static_cast<double>(sites_.size())));
    }
    return training::apply_bounds<Real>(base_, s_.bounds, std::span<const Real>(mean));
  }

  template <class Real>
  Real yield(std::span<const Real> params, std::size_t site,
             std::span<const pbm::DailyWeather> weather) const {
    const auto p = theta<Real>(params, site);
    if (v_ == PbmVariant::embedded) {
      const hybrid::NeuralStress<Real> stress{&spec_, params.subspan(nn_offset_)};
      return pbm::simulate_season<Real, hybrid::NeuralStress<Real>>(weather, p, {}, stress).yield;
    }
    return pbm::simulate_season<Real>(weather, p).yield;
  }

  template <class Real>
  Real loss(std::span<const Real> params, const std::vector<SiteYear>& years) const {
    std::vector<Real> sq;
    sq.reserve(years.size());
    for (const auto& sy : years) {
      const Real y = yield<Real>(params, sy.site, d_.train_weather(sy));
      const Real r = (y - d_.observed[sy.site][sy.year]) * kScale;
      sq.push_back(r * r);
    }
    return ad::sum(std::span<const Real>(sq)) * (1.0 / static_cast<double>(sq.size()));
  }

  Predictions predict(std::span<const double> params) const {
    Predictions p;
    for (const auto& sy : d_.train) p.train.push_back(yield<double>(params, sy.site, d_.train_weather(sy)));
    for (const auto& sy : d_.test) p.test.push_back(yield<double>(params, sy.site, d_.train_weather(sy)));
    for (const auto& sy : d_.validation) {
      p.validation.push_back(yield<double>(params, sy.site, d_.clean_weather(sy)));
    }
    return p;
  }

 private:
  const ModelData& d_;
  const ModelSettings& s_;
  PbmVariant v_;
  pbm::CropParams base_;
  std::vector<std::size_t> sites_;
  nn::MlpSpec spec_;
  std::vector<double> init_;
  std::size_t nn_offset_ = 0;
};

training::TrainReport fit(training::Objective& objective, const std::vector<double>& init,
                          const training::AdamConfig& adam, const training::EarlyStopConfig& stop) {
  auto report = training::train(objective, init, adam, stop);
  if (report.aborted && report.best_epoch == 0) {
    throw std::runtime_error("training aborted: " + report.message);
  }
  if (report.aborted) spdlog::warn("training stopped early: {}", report.message);
  return report;
}

// ---------------------------------------------------------------------------
// Sequence models: pure LSTM, mass-balance LSTM, physics-residual LSTM
// ---------------------------------------------------------------------------

enum class DlVariant { pure, mass_balance, physics };

class DlFamily final : public training::Objective {
 public:
  DlFamily(const ModelData& d, const ModelSettings& s, DlVariant v, std::uint64_t seed,
           const std::vector<pbm::CropParams>* companion)
      : d_(d), s_(s), v_(v) {
    std::vector<nn::Sequence<double>> raw;
    for (const auto& sy : d.train) raw.push_back(hybrid::weather_steps(d.train_weather(sy), s.window));
    scaler_ = hybrid::FeatureScaler::fit(raw);
    train_ = build(d.train, false);
    test_ = build(d.test, false);
    validation_ = build(d.validation, true);

    double mean = 0.0;
    for (const auto& sy : d.train) mean += d.observed[sy.site][sy.year];
    center_ = v == DlVariant::pure ? mean / static_cast<double>(d.train.size()) : 0.0;

    const std::size_t outputs = v == DlVariant::mass_balance ? 2 : 1;
    spec_ = nn::LstmSpec::make(hybrid::kWeatherFeatures + 3, s.lstm_hidden, outputs);
    init_ = nn::init_weights(spec_, data::derive_seed(seed, "lstm/init/" + variant_tag())).params;

    if (v == DlVariant::physics) {
      for (const auto& sy : d.train) {
        auto g = hybrid::companion_season_growth(d.train_weather(sy), (*companion)[sy.site], s.window);
        for (auto& x : g) x *= kScale;
        growth_.push_back(std::move(g));
      }
    }
  }

  const std::vector<double>& initial() const { return init_; }

  Var train_loss(ad::Tape&, std::span<const Var> params) override {
    std::vector<Var> sq;
    std::vector<Var> physics;
    for (std::size_t i = 0; i < train_.size(); ++i) {
      const auto& sy = d_.train[i];
      const auto out = forward<Var>(params, train_[i], &physics, i);
      const Var r = out - target(sy);
      sq.push_back(r * r);
    }
    const double n = static_cast<double>(sq.size());
    Var loss = ad::sum(std::span<const Var>(sq)) * (1.0 / n);
    if (v_ != DlVariant::pure && s_.lambda_physics != 0.0) {
      loss = loss + s_.lambda_physics * (ad::sum(std::span<const Var>(physics)) * (1.0 / n));
    }
    return loss;
  }

  double test_loss(std::span<const double> params) override {
    double ss = 0.0;
    for (std::size_t i = 0; i < test_.size(); ++i) {
      const double r = forward<double>(params, test_[i], nullptr, 0) - target(d_.test[i]);
      ss += r * r;
    }
    return ss / static_cast<double>(test_.size());
  }

  Predictions predict(std::span<const double> params) const {
    Predictions p;
    auto run = [&](const std::vector<nn::Sequence<double>>& seqs, std::vector<double>& out) {
      for (const auto& s : seqs) out.push_back(center_ + forward<double>(params, s, nullptr, 0) / kScale);
    };
    run(train_, p.train);
    run(test_, p.test);
    run(validation_, p.validation);
    return p;
  }

 private:
  std::string variant_tag() const {
    switch (v_) {
      case DlVariant::pure: return "pure";
      case DlVariant::mass_balance: return "mass_balance";
      case DlVariant::physics: return "physics";
    }
    return "?";
  }

  double target(const SiteYear& sy) const { return (d_.observed[sy.site][sy.year] - center_) * kScale; }

  std::vector<nn::Sequence<double>> build(const std::vector<SiteYear>& years, bool clean) const {
    std::vector<nn::Sequence<double>> out;
    for (const auto& sy : years) {
      const auto w = clean ? d_.clean_weather(sy) : d_.train_weather(sy);
      const auto scaled = scaler_.apply(hybrid::weather_steps(w, s_.window));
      const auto attrs = hybrid::normalize_attributes(d_.twin->sites[sy.site]);
      nn::Sequence<double> seq(scaled.steps, scaled.width + attrs.size());
      for (std::size_t t = 0; t < seq.steps; ++t) {
        for (std::size_t j = 0; j < scaled.width; ++j) seq(t, j) = scaled(t, j);
        for (std::size_t j = 0; j < attrs.size(); ++j) seq(t, scaled.width + j) = attrs[j];
      }
      out.push_back(std::move(seq));
    }
    return out;
  }

  /// Scaled harvest prediction; appends the per-season physics term when
  /// `physics` is given.
  template <class Real>
  Real forward(std::span<const Real> params, const nn::Sequence<double>& seq,
               std::vector<Real>* physics, std::size_t index) const {
    const auto in = lift_sequence<Real>(seq);
    switch (v_) {
      case DlVariant::pure:
        return nn::lstm_forward<Real>(spec_, params, in, nn::OutputMode::last)(0, 0);
      case DlVariant::mass_balance: {
        const auto out = hybrid::mass_balance_forward<Real>(spec_, params, in);
        if (physics) physics->push_back(out.penalty);
        return out.biomass.back();
      }
      case DlVariant::physics: {
        const auto y = nn::lstm_forward<Real>(spec_, params, in, nn::OutputMode::per_step);
        if (physics) {
          std::vector<Real> traj(y.data.begin(), y.data.end());
          physics->push_back(hybrid::physics_residual<Real>(traj, growth_[index],
                                                            s_.window.days_per_step));
        }
        return y(y.steps - 1, 0);
      }
    }
    return Real(0.0);
  }

  const ModelData& d_;
  const ModelSettings& s_;
  DlVariant v_;
  hybrid::FeatureScaler scaler_;
  std::vector<nn::Sequence<double>> train_, test_, validation_;
  std::vector<std::vector<double>> growth_;
  double center_ = 0.0;
  nn::LstmSpec spec_;
  std::vector<double> init_;
};

Predictions predict_fixed(const ModelData& d, const std::vector<pbm::CropParams>& per_site) {
  Predictions p;
  auto y = [&](const SiteYear& sy, std::span<const pbm::DailyWeather> w) {
    return pbm::simulate_season<double>(w, per_site[sy.site]).yield;
  };
  for (const auto& sy : d.train) p.train.push_back(y(sy, d.train_weather(sy)));
  for (const auto& sy : d.test) p.test.push_back(y(sy, d.train_weather(sy)));
  for (const auto& sy : d.validation) p.validation.push_back(y(sy, d.clean_weather(sy)));
  return p;
}

}  // namespace

std::span<const pbm::DailyWeather> ModelData::train_weather(const SiteYear& sy) const {
  return year_of(forcing.at(sy.site), sy.year);
}

std::span<const pbm::DailyWeather> ModelData::clean_weather(const SiteYear& sy) const {
  return year_of(twin->weather.at(sy.site), sy.year);
}

std::vector<std::size_t> ModelData::training_sites() const {
  std::set<std::size_t> s;
  for (const auto& sy : train) s.insert(sy.site);
  return {s.begin(), s.end()};
}

std::vector<pbm::CropParams> calibrate_sites(const ModelData& data, const ModelSettings& settings) {
  PbmFamily model(data, settings, PbmVariant::calibrated, 0);
  const auto report = fit(model, model.initial(), settings.pbm_adam, settings.pbm_stop);
  std::vector<pbm::CropParams> out;
  for (std::size_t s = 0; s < data.twin->sites.size(); ++s) {
    out.push_back(pbm::values_of(model.theta<double>(report.best_weights, s)));
  }
  return out;
}

Predictions run_model(ModelKind kind, const ModelData& data, const ModelSettings& settings,
                      std::uint64_t seed, CellCache& cache) {
  if (data.train.empty() || data.test.empty() || data.validation.empty()) {
    throw ValidationError("model data needs non-empty train, test and validation sets");
  }
  const auto ensure_calibrated = [&]() -> const std::vector<pbm::CropParams>& {
    if (!cache.calibrated) cache.calibrated = calibrate_sites(data, settings);
    return *cache.calibrated;
  };
  const std::uint64_t model_seed = data::derive_seed(seed, model_name(kind));

  switch (kind) {
    case ModelKind::UncalibratedPBM:
      return predict_fixed(data, std::vector<pbm::CropParams>(data.twin->sites.size()));
    case ModelKind::PurePBM:
      return predict_fixed(data, ensure_calibrated());
    case ModelKind::EmbeddedNnPbm:
    case ModelKind::SurrogateDpl: {
      PbmFamily model(data, settings,
                      kind == ModelKind::EmbeddedNnPbm ? PbmVariant::embedded : PbmVariant::dpl,
                      model_seed);
      const auto report = fit(model, model.initial(), settings.pbm_adam, settings.pbm_stop);
      auto p = model.predict(report.best_weights);
      p.epochs = report.stopped_epoch;
      return p;
    }
    case ModelKind::PureDL:
    case ModelKind::MassBalanceDl:
    case ModelKind::PhysicsResidualDl: {
      const std::vector<pbm::CropParams>* companion = nullptr;
      if (kind == ModelKind::PhysicsResidualDl) companion = &ensure_calibrated();
      const DlVariant v = kind == ModelKind::PureDL         ? DlVariant::pure
                          : kind == ModelKind::MassBalanceDl ? DlVariant::mass_balance
                                                             : DlVariant::physics;
      DlFamily model(data, settings, v, model_seed, companion);
      const auto report = fit(model, model.initial(), settings.nn_adam, settings.nn_stop);
      auto p = model.predict(report.best_weights);
      p.epochs = report.stopped_epoch;
      return p;
    }
  }
  throw ValidationError("unknown model");
}

}  // namespace agridiff::eval
