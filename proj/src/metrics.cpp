#include "agridiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "agridiff/error.hpp"

namespace agridiff::eval {

namespace {

void check_lengths(std::span<const double> p, std::span<const double> o, const char* what) {
  if (p.size() != o.size()) {
    throw ValidationError(std::string(what) + ": length mismatch " + std::to_string(p.size()) +
                          " vs " + std::to_string(o.size()));
  }
}

}  // namespace

double r_squared(std::span<const double> predicted, std::span<const double> observed) {
  check_lengths(predicted, observed, "r_squared");
  if (observed.size() < 2) throw ValidationError("r_squared needs at least 2 observations");
  double mean = 0.0;
  for (double o : observed) mean += o;
  mean /= static_cast<double>(observed.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double r = observed[i] - predicted[i];
    const double d = observed[i] - mean;
    ss_res += r * r;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) {
    spdlog::warn("r_squared undefined: all {} observations equal {}", observed.size(), mean);
    return std::numeric_limits<double>::quiet_NaN();
  }
  return 1.0 - ss_res / ss_tot;
}

double rmse(std::span<const double> predicted, std::span<const double> observed) {
  check_lengths(predicted, observed, "rmse");
  if (observed.empty()) throw ValidationError("rmse needs at least 1 value");
  double ss = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double r = predicted[i] - observed[i];
    ss += r * r;
  }
  return std::sqrt(ss / static_cast<double>(observed.size()));
}

Metrics compute_metrics(std::span<const double> predicted, std::span<const double> observed) {
  Metrics m;
  m.n = observed.size();
  m.rmse = rmse(predicted, observed);
  m.r_squared = observed.size() >= 2 ? r_squared(predicted, observed)
                                     : std::numeric_limits<double>::quiet_NaN();
  return m;
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level must lie in [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

BoxSummary boxplot_summary(std::span<const double> values) {
  std::vector<double> finite;
  for (double v : values) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  BoxSummary s;
  s.n = finite.size();
  if (finite.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.min = s.q1 = s.median = s.q3 = s.max = nan;
    return s;
  }
  std::sort(finite.begin(), finite.end());
  s.min = finite.front();
  s.max = finite.back();
  s.q1 = quantile(finite, 0.25);
  s.median = quantile(finite, 0.5);
  s.q3 = quantile(finite, 0.75);
  return s;
}

}  // namespace agridiff::eval
