#include "agridiff/pbm.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

namespace agridiff::pbm {

std::string_view param_name(ParamId id) { return kParamNames.at(static_cast<std::size_t>(id)); }

ParamId param_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (kParamNames[i] == name) return ParamId(i);
  }
  throw ValidationError("unknown crop parameter '" + std::string(name) + "'");
}

void validate(const CropParams& p) {
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (!std::isfinite(p[ParamId(i)])) {
      throw ValidationError("crop parameter " + std::string(kParamNames[i]) + " is not finite");
    }
  }
  auto positive = [&](ParamId id) {
    if (!(p[id] > 0.0)) {
      throw ValidationError("crop parameter " + std::string(param_name(id)) +
                            " must be > 0, got " + std::to_string(p[id]));
    }
  };
  for (ParamId id : {ParamId::k_ext, ParamId::rue, ParamId::sla, ParamId::s_max, ParamId::k_et,
                     ParamId::r_sen, ParamId::tt_mature, ParamId::tt_sen}) {
    positive(id);
  }
  if (!(p.p_crit > 0.0 && p.p_crit <= 1.0)) {
    throw ValidationError("crop parameter p_crit must lie in (0, 1], got " +
                          std::to_string(p.p_crit));
  }
  if (!(p.tt_sen < p.tt_mature)) {
    throw ValidationError("crop parameter tt_sen must be below tt_mature");
  }
  if (p.lai_init < 0.0) throw ValidationError("crop parameter lai_init must be >= 0");
}

void validate(const DailyWeather& w) {
  if (!std::isfinite(w.t_min) || !std::isfinite(w.t_max) || !std::isfinite(w.radiation) ||
      !std::isfinite(w.precip)) {
    throw ValidationError("weather record is not finite");
  }
  if (w.t_min > w.t_max) throw ValidationError("weather record has t_min > t_max");
  if (w.radiation < 0.0) throw ValidationError("weather record has negative radiation");
  if (w.precip < 0.0) throw ValidationError("weather record has negative precipitation");
}

void write_trajectory_csv(std::ostream& os, std::span<const CropState> trajectory,
                          std::size_t first_index) {
  os << "date_index,tt_cum,dvs,lai,w_total,w_leaf,soil_water\n";
  char buf[256];
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const CropState& s = trajectory[i];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", first_index + i, s.tt_cum,
                  s.dvs, s.lai, s.w_total, s.w_leaf, s.soil_water);
    os << buf;
  }
}

}  // namespace agridiff::pbm
