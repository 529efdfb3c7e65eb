#pragma once

/**
 * @file metrics.hpp
 * @brief R-squared, RMSE and box-plot quartiles.
 */

#include <cstddef>
#include <span>

namespace agridiff::eval {

/// 1 - SS_res / SS_tot. Returns NaN (with a logged warning) when the
/// observations are constant.
double r_squared(std::span<const double> predicted, std::span<const double> observed);

double rmse(std::span<const double> predicted, std::span<const double> observed);

struct Metrics {
  double r_squared = 0.0;
  double rmse = 0.0;
  std::size_t n = 0;
};

Metrics compute_metrics(std::span<const double> predicted, std::span<const double> observed);

/// Quantile by linear interpolation between order statistics at q * (n - 1).
double quantile(std::span<const double> values, double q);

struct BoxSummary {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  std::size_t n = 0;  // finite values summarized
};

/// Five-number summary over the finite entries; all NaN when none are finite.
BoxSummary boxplot_summary(std::span<const double> values);

}  // namespace agridiff::eval
