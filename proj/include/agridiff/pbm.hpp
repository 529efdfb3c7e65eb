#pragma once

/**
 * @file pbm.hpp
 * @brief Daily-step process-based crop model (LINTUL-class).
 *
 * Process chain per day: thermal time -> development stage -> Lambert-Beer
 * light interception -> RUE growth limited by a water-stress factor -> leaf
 * partitioning and senescence -> leaf area -> single-bucket soil water.
 *
 * All process functions are templates over the scalar type so the same code
 * runs on plain doubles and on the autodiff tape.
 */

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "agridiff/autodiff.hpp"
#include "agridiff/error.hpp"

namespace agridiff::pbm {

enum class ParamId : std::size_t {
  t_base,
  tt_mature,
  tt_sen,
  k_ext,
  rue,
  sla,
  lai_init,
  s_max,
  p_crit,
  k_et,
  r_sen,
};
inline constexpr std::size_t kParamCount = 11;
inline constexpr std::array<std::string_view, kParamCount> kParamNames = {
    "t_base", "tt_mature", "tt_sen", "k_ext", "rue",  "sla",
    "lai_init", "s_max", "p_crit", "k_et", "r_sen"};

std::string_view param_name(ParamId id);
ParamId param_from_name(std::string_view name);

template <class Real>
struct BasicCropParams {
  Real t_base = 4.0;       // degC
  Real tt_mature = 1400.0; // degC day
  Real tt_sen = 900.0;     // degC day
  Real k_ext = 0.6;
  Real rue = 3.0;          // g/MJ PAR
  Real sla = 0.02;         // m2/g
  Real lai_init = 0.1;     // m2/m2
  Real s_max = 120.0;      // mm
  Real p_crit = 0.5;
  Real k_et = 0.8;
  Real r_sen = 0.002;      // per degC day

  Real& operator[](ParamId id) { return field(*this, id); }
  const Real& operator[](ParamId id) const { return field(*this, id); }

 private:
  template <class Self>
  static auto& field(Self& self, ParamId id) {
    switch (id) {
      case ParamId::t_base: return self.t_base;
      case ParamId::tt_mature: return self.tt_mature;
      case ParamId::tt_sen: return self.tt_sen;
      case ParamId::k_ext: return self.k_ext;
      case ParamId::rue: return self.rue;
      case ParamId::sla: return self.sla;
      case ParamId::lai_init: return self.lai_init;
      case ParamId::s_max: return self.s_max;
      case ParamId::p_crit: return self.p_crit;
      case ParamId::k_et: return self.k_et;
      case ParamId::r_sen: return self.r_sen;
    }
    throw ValidationError("unknown crop parameter id");
  }
};
using CropParams = BasicCropParams<double>;

template <class Real>
BasicCropParams<Real> lift(const CropParams& p) {
  BasicCropParams<Real> out;
  for (std::size_t i = 0; i < kParamCount; ++i) out[ParamId(i)] = Real(p[ParamId(i)]);
  return out;
}

template <class Real>
CropParams values_of(const BasicCropParams<Real>& p) {
  CropParams out;
  for (std::size_t i = 0; i < kParamCount; ++i) out[ParamId(i)] = ad::value_of(p[ParamId(i)]);
  return out;
}

/// Throws ValidationError naming the first violated parameter invariant.
void validate(const CropParams& params);

template <class Real>
struct BasicCropState {
  Real tt_cum = 0.0;
  Real dvs = 0.0;
  Real w_total = 0.0;
  Real w_leaf = 0.0;
  Real lai = 0.0;
  Real soil_water = 0.0;
};
using CropState = BasicCropState<double>;

template <class Real>
struct BasicDailyWeather {
  Real t_min = 0.0;
  Real t_max = 0.0;
  Real radiation = 0.0;  // MJ/m2/day
  Real precip = 0.0;     // mm/day
};
using DailyWeather = BasicDailyWeather<double>;

void validate(const DailyWeather& w);

/// Sowing-day state: no thermal time or biomass, canopy at lai_init, full bucket.
template <class Real>
BasicCropState<Real> initial_state(const BasicCropParams<Real>& p) {
  BasicCropState<Real> s;
  s.lai = p.lai_init;
  s.soil_water = p.s_max;
  return s;
}

struct StepOptions {
  // Replace max(0, .) kinks by softplus with sharpness `smooth_beta`.
  bool smooth = false;
  double smooth_beta = 50.0;
};

namespace detail {
template <class Real>
Real floor0(const Real& x, const StepOptions& o) {
  return o.smooth ? Real(ad::softplus(x, o.smooth_beta)) : Real(ad::max_const(x, 0.0));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Process functions
// ---------------------------------------------------------------------------

template <class Real>
Real thermal_time_increment(const Real& t_min, const Real& t_max, const Real& t_base,
                            const StepOptions& o = {}) {
  return detail::floor0<Real>((t_min + t_max) * 0.5 - t_base, o);
}

template <class Real>
Real light_interception(const Real& lai, const Real& k_ext) {
  return 1.0 - ad::exp(-(k_ext * lai));
}

template <class Real>
Real par_from_radiation(const Real& radiation) {
  return radiation * 0.5;
}

template <class Real>
Real water_stress(const Real& soil_water, const BasicCropParams<Real>& p,
                  const StepOptions& o = {}) {
  const Real ratio = soil_water / (p.p_crit * p.s_max);
  if (o.smooth) {
    // min(x, 1) = x - softplus(x - 1); the lower bound holds already.
    return ratio - Real(ad::softplus(ratio - 1.0, o.smooth_beta));
  }
  return ad::clamp_const(ratio, 0.0, 1.0);
}

/// Hargreaves-style reference evapotranspiration (mm/day), floored at 0.
template <class Real>
Real reference_et(const Real& t_mean, const Real& radiation, const StepOptions& o = {}) {
  return detail::floor0<Real>(0.0135 * (t_mean + 17.78) * (radiation / 2.45), o);
}

/// Values the growth-limiting factor may depend on.
template <class Real>
struct StressInputs {
  const Real& soil_water;
  const Real& t_mean;
  const Real& dvs;
  const BasicCropParams<Real>& params;
};

/// Default growth-limiting subprocess: the bucket water-stress factor.
struct BucketStress {
  StepOptions options;
  template <class Real>
  Real operator()(const StressInputs<Real>& in) const {
    return water_stress(in.soil_water, in.params, options);
  }
};

template <class Real>
struct StepFluxes {
  Real thermal_time = 0.0;
  Real interception = 0.0;
  Real stress = 0.0;
  Real par = 0.0;
  Real growth = 0.0;
  Real et0 = 0.0;
  Real transpiration = 0.0;
  Real evaporation = 0.0;
  Real drainage = 0.0;
};

template <class Real>
struct StepResult {
  BasicCropState<Real> state;
  StepFluxes<Real> fluxes;
};

/**
 * One explicit-Euler day. `stress` supplies the growth/transpiration limiting
 * factor (the water-stress subprocess by default).
 *
 * Actual transpiration plus evaporation is capped at the available water
 * (soil water + precipitation), so the bucket closes exactly.
 */
template <class Real, class Stress = BucketStress, class WReal = double>
StepResult<Real> step_detailed(const BasicCropState<Real>& s, const BasicDailyWeather<WReal>& w,
                               const BasicCropParams<Real>& p, const StepOptions& o = {},
                               const Stress& stress = Stress{}) {
  StepResult<Real> r;
  auto& f = r.fluxes;
  auto& n = r.state;

  const Real t_min = w.t_min;
  const Real t_max = w.t_max;
  const Real radiation = w.radiation;
  const Real precip = w.precip;
  const Real t_mean = (t_min + t_max) * 0.5;

  // (1) phenology
  f.thermal_time = thermal_time_increment<Real>(t_min, t_max, p.t_base, o);
  n.tt_cum = s.tt_cum + f.thermal_time;
  n.dvs = n.tt_cum / p.tt_mature;

  // (2)-(4) interception, stress, growth
  f.interception = light_interception<Real>(s.lai, p.k_ext);
  f.stress = stress(StressInputs<Real>{s.soil_water, t_mean, n.dvs, p});
  f.par = par_from_radiation<Real>(radiation);
  f.growth = p.rue * f.interception * f.par * f.stress;
  n.w_total = s.w_total + f.growth;

  // (5) leaf partitioning, fL(dvs) = max(0, 1 - dvs / dvs_L)
  const Real dvs_leaf = p.tt_sen / p.tt_mature;
  const Real leaf_fraction = detail::floor0<Real>(1.0 - n.dvs / dvs_leaf, o);
  Real w_leaf = s.w_leaf + leaf_fraction * f.growth;

  // (6) senescence after tt_sen
  if (ad::value_of(n.tt_cum) > ad::value_of(p.tt_sen)) {
    w_leaf = detail::floor0<Real>(w_leaf - p.r_sen * f.thermal_time * w_leaf, o);
  }
  n.w_leaf = w_leaf;

  // (7) leaf area, never below the initial canopy
  n.lai = ad::maximum<Real>(p.lai_init, p.sla * n.w_leaf);

  // (8) water bucket
  f.et0 = reference_et<Real>(t_mean, radiation, o);
  Real transpiration = p.k_et * f.interception * f.stress * f.et0;
  Real evaporation = p.k_et * (1.0 - f.interception) * f.et0;
  const Real supply = s.soil_water + precip;
  const Real demand = transpiration + evaporation;
  if (ad::value_of(demand) > ad::value_of(supply)) {
    const Real scale = supply / demand;
    transpiration = transpiration * scale;
    evaporation = evaporation * scale;
  }
  f.transpiration = transpiration;
  f.evaporation = evaporation;
  const Real filled = supply - transpiration - evaporation;
  f.drainage = detail::floor0<Real>(filled - p.s_max, o);
  n.soil_water = filled - f.drainage;
  return r;
}

template <class Real, class Stress = BucketStress, class WReal = double>
BasicCropState<Real> step(const BasicCropState<Real>& s, const BasicDailyWeather<WReal>& w,
                          const BasicCropParams<Real>& p, const StepOptions& o = {},
                          const Stress& stress = Stress{}) {
  return step_detailed<Real, Stress, WReal>(s, w, p, o, stress).state;
}

/// Post-step states, one per weather day. Weather may itself be recorded on the
/// tape (WReal = ad::Var) to differentiate with respect to forcings.
template <class Real, class Stress = BucketStress, class WReal = double>
std::vector<BasicCropState<Real>> simulate(const BasicCropState<Real>& init,
                                           std::span<const BasicDailyWeather<WReal>> weather,
                                           const BasicCropParams<Real>& p,
                                           const StepOptions& o = {},
                                           const Stress& stress = Stress{}) {
  if (weather.empty()) throw ValidationError("simulate: empty weather sequence");
  validate(values_of(p));
  std::vector<BasicCropState<Real>> traj;
  traj.reserve(weather.size());
  BasicCropState<Real> s = init;
  for (const auto& w : weather) {
    s = step<Real, Stress, WReal>(s, w, p, o, stress);
    traj.push_back(s);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Seasons
// ---------------------------------------------------------------------------

struct SeasonOptions {
  int sowing_doy = 90;  // first simulated day of year (1-based)
  int last_doy = 365;
  StepOptions step;
};

template <class Real>
struct SeasonResult {
  std::vector<BasicCropState<Real>> trajectory;  // post-step states from sowing
  std::vector<Real> growth;                      // daily growth, scaled on the harvest day
  Real yield = 0.0;                              // w_total at dvs = 1 (or last_doy)
  double harvest_day = 0.0;                      // fractional days after sowing
  bool matured = false;
};

/**
 * One season from sowing to harvest. Harvest happens when dvs reaches 1,
 * interpolated linearly within the crossing day so that the yield is
 * continuous in the parameters, or on `last_doy` if the crop never matures.
 */
template <class Real, class Stress = BucketStress>
SeasonResult<Real> simulate_season(std::span<const DailyWeather> year,
                                   const BasicCropParams<Real>& p,
                                   const SeasonOptions& opt = {}, const Stress& stress = Stress{}) {
  if (year.size() < static_cast<std::size_t>(opt.last_doy) || opt.sowing_doy < 1 ||
      opt.sowing_doy > opt.last_doy) {
    throw ValidationError("simulate_season: year must cover sowing_doy..last_doy");
  }
  validate(values_of(p));
  SeasonResult<Real> out;
  BasicCropState<Real> s = initial_state(p);
  const auto first = static_cast<std::size_t>(opt.sowing_doy - 1);
  const auto last = static_cast<std::size_t>(opt.last_doy - 1);
  out.trajectory.reserve(last - first + 1);
  out.growth.reserve(last - first + 1);
  for (std::size_t d = first; d <= last; ++d) {
    const StepResult<Real> r = step_detailed<Real, Stress>(s, year[d], p, opt.step, stress);
    const double dvs_prev = ad::value_of(s.dvs);
    const double dvs_next = ad::value_of(r.state.dvs);
    if (dvs_next >= 1.0) {
      const Real frac = (1.0 - s.dvs) / (r.state.dvs - s.dvs);
      out.yield = s.w_total + frac * (r.state.w_total - s.w_total);
      out.growth.push_back(frac * r.fluxes.growth);
      out.trajectory.push_back(r.state);
      out.harvest_day = static_cast<double>(d - first) + (1.0 - dvs_prev) / (dvs_next - dvs_prev);
      out.matured = true;
      return out;
    }
    out.growth.push_back(r.fluxes.growth);
    out.trajectory.push_back(r.state);
    s = r.state;
  }
  out.yield = s.w_total;
  out.harvest_day = static_cast<double>(last - first + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// Columns date_index,tt_cum,dvs,lai,w_total,w_leaf,soil_water with 6 decimals.
void write_trajectory_csv(std::ostream& os, std::span<const CropState> trajectory,
                          std::size_t first_index = 0);

}  // namespace agridiff::pbm
