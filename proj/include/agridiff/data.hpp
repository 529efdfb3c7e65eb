#pragma once

/**
 * @file data.hpp
 * @brief Weather series, synthetic-twin generation, contamination and splits.
 */

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "agridiff/pbm.hpp"

namespace agridiff::data {

inline constexpr std::size_t kDaysPerYear = 365;

struct SiteAttributes {
  std::string site_id;
  double latitude = 0.0;             // degrees
  double soil_capacity_proxy = 0.0;  // mm
  double mean_annual_temp = 0.0;     // degC
};

struct WeatherSeries {
  std::string site_id;
  int start_year = 0;
  std::vector<pbm::DailyWeather> days;

  std::size_t years() const { return days.size() / kDaysPerYear; }
  std::span<const pbm::DailyWeather> year(std::size_t index) const;
  /// Checks length and every record; throws ValidationError.
  void validate() const;
};

/// Three sites spanning latitude 48-54, soil 80-160 mm, mean temp 7.5-10.5 degC.
std::vector<SiteAttributes> default_sites();

WeatherSeries generate_weather(const SiteAttributes& site, int years, std::uint64_t seed,
                               int start_year = 1951);

void write_csv(std::ostream& os, const WeatherSeries& series);
void write_csv(const std::filesystem::path& path, const WeatherSeries& series);
/// Parses the weather CSV format. `source` names the input in diagnostics.
WeatherSeries read_csv(std::istream& is, const std::string& source = "<stream>");
WeatherSeries ingest_csv(const std::filesystem::path& path);

enum class NoiseTarget { weather, biomass, both };
std::string noise_target_name(NoiseTarget t);
NoiseTarget noise_target_from_name(const std::string& name);

struct NoiseSpec {
  int level = 0;  // 0..3
  double base_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// Additive Gaussian contamination of every weather variable with standard
/// deviation level * base_fraction * sd(variable).
WeatherSeries inject_noise(const WeatherSeries& series, const NoiseSpec& spec);
/// Same rule for a vector of observations (floored at 0).
std::vector<double> inject_noise(std::span<const double> values, const NoiseSpec& spec);

double sample_sd(std::span<const double> v);

/// Year indices are 0-based offsets into a series.
struct SplitPlan {
  std::vector<std::size_t> calibration_years;
  std::vector<std::size_t> validation_years;
  std::vector<std::size_t> train_years;
  std::vector<std::size_t> test_years;

  /// Throws ValidationError on any leak or partition violation.
  void validate() const;
};

SplitPlan split_years(std::size_t total_years, std::size_t calibration_count,
                      double train_fraction, std::uint64_t seed);
SplitPlan fewshot_subset(const SplitPlan& plan, std::size_t k_years, std::uint64_t seed);

struct SpatialFold {
  std::vector<SiteAttributes> train_sites;  // two sites
  SiteAttributes validation_site;
};

std::vector<SpatialFold> spatial_folds(std::span<const SiteAttributes> sites);

/// Stable 64-bit FNV-1a hash used to derive per-entity seeds.
std::uint64_t stable_hash(std::string_view text, std::uint64_t basis = 14695981039346656037ull);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

}  // namespace agridiff::data
