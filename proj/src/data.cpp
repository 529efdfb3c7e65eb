#include "agridiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace agridiff::data {

std::span<const pbm::DailyWeather> WeatherSeries::year(std::size_t index) const {
  if (index >= years()) {
    throw ValidationError("year index " + std::to_string(index) + " out of range for series " +
                          site_id);
  }
  return std::span<const pbm::DailyWeather>(days).subspan(index * kDaysPerYear, kDaysPerYear);
}

void WeatherSeries::validate() const {
  if (days.empty() || days.size() % kDaysPerYear != 0) {
    throw ValidationError("weather series " + site_id + " has " + std::to_string(days.size()) +
                          " days, not a positive multiple of 365");
  }
  for (std::size_t i = 0; i < days.size(); ++i) {
    try {
      pbm::validate(days[i]);
    } catch (const ValidationError& e) {
      throw ValidationError("series " + site_id + " year " +
                            std::to_string(start_year + static_cast<int>(i / kDaysPerYear)) +
                            " doy " + std::to_string(i % kDaysPerYear + 1) + ": " + e.what());
    }
  }
}

std::vector<SiteAttributes> default_sites() {
  return {
      {"site_a", 48.0, 160.0, 10.5},
      {"site_b", 51.0, 120.0, 9.0},
      {"site_c", 54.0, 80.0, 7.5},
  };
}

std::uint64_t stable_hash(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = stable_hash(tag);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  // splitmix64 finalizer
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

WeatherSeries generate_weather(const SiteAttributes& site, int years, std::uint64_t seed,
                               int start_year) {
  if (years < 1) throw ValidationError("generate_weather: years must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, "weather/" + site.site_id));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::exponential_distribution<double> rain(1.0 / 5.0);

  constexpr double two_pi = 2.0 * std::numbers::pi;
  WeatherSeries s;
  s.site_id = site.site_id;
  s.start_year = start_year;
  s.days.reserve(static_cast<std::size_t>(years) * kDaysPerYear);
  double anomaly = 0.0;
  for (int y = 0; y < years; ++y) {
    for (int d = 1; d <= static_cast<int>(kDaysPerYear); ++d) {
      anomaly = 0.7 * anomaly + 2.0 * normal(rng);
      const double t_mean =
          site.mean_annual_temp + 10.0 * std::sin(two_pi * (d - 120) / 365.0) + anomaly;
      const double half_range = 3.0 + std::abs(normal(rng));
      const double rad =
          std::max(0.0, 8.0 + 12.0 * std::sin(two_pi * (d - 100) / 365.0) + 2.0 * normal(rng));
      const bool wet = unit(rng) < 0.3;
      const double amount = rain(rng);
      s.days.push_back({t_mean - half_range, t_mean + half_range, rad, wet ? amount : 0.0});
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void write_csv(std::ostream& os, const WeatherSeries& series) {
  os << "site_id,year,doy,t_min,t_max,radiation,precip\n";
  char buf[256];
  for (std::size_t i = 0; i < series.days.size(); ++i) {
    const auto& w = series.days[i];
    const int year = series.start_year + static_cast<int>(i / kDaysPerYear);
    const int doy = static_cast<int>(i % kDaysPerYear) + 1;
    std::snprintf(buf, sizeof buf, ",%d,%d,%.6f,%.6f,%.6f,%.6f\n", year, doy, w.t_min, w.t_max,
                  w.radiation, w.precip);
    os << series.site_id << buf;
  }
}

void write_csv(const std::filesystem::path& path, const WeatherSeries& series) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_csv(os, series);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValidationError(where + ": cannot parse number '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) {
    throw ValidationError(where + ": cannot parse number '" + s + "'");
  }
  return v;
}

int parse_int(const std::string& s, const std::string& where) {
  const double v = parse_double(s, where);
  if (v != std::floor(v)) throw ValidationError(where + ": expected an integer, got '" + s + "'");
  return static_cast<int>(v);
}

}  // namespace

WeatherSeries read_csv(std::istream& is, const std::string& source) {
  static const std::string kHeader = "site_id,year,doy,t_min,t_max,radiation,precip";
  std::string line;
  if (!std::getline(is, line)) throw ValidationError(source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw ValidationError(source + ":1: expected header '" + kHeader + "'");

  WeatherSeries s;
  std::size_t line_no = 1;
  int expect_year = 0;
  int expect_doy = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto f = split_fields(line);
    if (f.size() != 7) {
      throw ValidationError(where + ": expected 7 fields, got " + std::to_string(f.size()));
    }
    const int year = parse_int(f[1], where);
    const int doy = parse_int(f[2], where);
    if (doy == 366) continue;  // leap day dropped
    if (doy < 1 || doy > 366) throw ValidationError(where + ": doy out of range");
    pbm::DailyWeather w{parse_double(f[3], where), parse_double(f[4], where),
                        parse_double(f[5], where), parse_double(f[6], where)};
    if (s.days.empty()) {
      s.site_id = f[0];
      s.start_year = year;
      expect_year = year;
    } else if (f[0] != s.site_id) {
      throw ValidationError(where + ": mixed site ids ('" + s.site_id + "' and '" + f[0] + "')");
    }
    if (year != expect_year || doy != expect_doy) {
      throw ValidationError(where + ": expected year " + std::to_string(expect_year) + " doy " +
                            std::to_string(expect_doy));
    }
    if (w.t_min > w.t_max) {
      throw ValidationError(where + ": t_min > t_max on " + std::to_string(year) + " doy " +
                            std::to_string(doy));
    }
    if (w.radiation < 0.0) throw ValidationError(where + ": negative radiation");
    if (w.precip < 0.0) throw ValidationError(where + ": negative precip");
    s.days.push_back(w);
    if (++expect_doy > static_cast<int>(kDaysPerYear)) {
      expect_doy = 1;
      ++expect_year;
    }
  }
  if (s.days.empty()) throw ValidationError(source + ": no data rows");
  if (s.days.size() % kDaysPerYear != 0) {
    throw ValidationError(source + ": incomplete final year (" +
                          std::to_string(s.days.size() % kDaysPerYear) + " days)");
  }
  return s;
}

WeatherSeries ingest_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open weather file " + path.string());
  return read_csv(is, path.string());
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

std::string noise_target_name(NoiseTarget t) {
  switch (t) {
    case NoiseTarget::weather: return "weather";
    case NoiseTarget::biomass: return "biomass";
    case NoiseTarget::both: return "both";
  }
  return "weather";
}

NoiseTarget noise_target_from_name(const std::string& name) {
  if (name == "weather") return NoiseTarget::weather;
  if (name == "biomass") return NoiseTarget::biomass;
  if (name == "both") return NoiseTarget::both;
  throw ValidationError("unknown noise target '" + name + "' (weather|biomass|both)");
}

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

namespace {

void check_noise_spec(const NoiseSpec& spec) {
  if (spec.level < 0 || spec.level > 3) throw ValidationError("noise level must be in 0..3");
  if (!(spec.base_fraction >= 0.0)) throw ValidationError("noise base_fraction must be >= 0");
}

}  // namespace

WeatherSeries inject_noise(const WeatherSeries& series, const NoiseSpec& spec) {
  check_noise_spec(spec);
  if (spec.level == 0) return series;
  const std::size_t n = series.days.size();
  std::array<std::vector<double>, 4> cols;
  for (auto& c : cols) c.reserve(n);
  for (const auto& w : series.days) {
    cols[0].push_back(w.t_min);
    cols[1].push_back(w.t_max);
    cols[2].push_back(w.radiation);
    cols[3].push_back(w.precip);
  }
  std::array<double, 4> sigma{};
  for (std::size_t k = 0; k < 4; ++k) {
    sigma[k] = spec.level * spec.base_fraction * sample_sd(cols[k]);
  }
  std::mt19937_64 rng(derive_seed(spec.seed, "noise/weather/" + series.site_id));
  std::normal_distribution<double> normal(0.0, 1.0);
  WeatherSeries out = series;
  for (auto& w : out.days) {
    w.t_min += sigma[0] * normal(rng);
    w.t_max += sigma[1] * normal(rng);
    w.radiation += sigma[2] * normal(rng);
    w.precip += sigma[3] * normal(rng);
    if (w.t_min > w.t_max) std::swap(w.t_min, w.t_max);
    w.radiation = std::max(0.0, w.radiation);
    w.precip = std::max(0.0, w.precip);
  }
  return out;
}

std::vector<double> inject_noise(std::span<const double> values, const NoiseSpec& spec) {
  check_noise_spec(spec);
  std::vector<double> out(values.begin(), values.end());
  if (spec.level == 0) return out;
  const double sigma = spec.level * spec.base_fraction * sample_sd(values);
  std::mt19937_64 rng(derive_seed(spec.seed, "noise/values"));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out) v = std::max(0.0, v + sigma * normal(rng));
  return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

void SplitPlan::validate() const {
  auto as_set = [](const std::vector<std::size_t>& v, const char* name) {
    std::set<std::size_t> s(v.begin(), v.end());
    if (s.size() != v.size()) throw ValidationError(std::string(name) + " has duplicate years");
    return s;
  };
  const auto cal = as_set(calibration_years, "calibration_years");
  const auto val = as_set(validation_years, "validation_years");
  const auto train = as_set(train_years, "train_years");
  const auto test = as_set(test_years, "test_years");
  for (auto y : val) {
    if (cal.count(y)) throw ValidationError("split leak: year in calibration and validation");
  }
  for (auto y : train) {
    if (test.count(y)) throw ValidationError("split leak: year in train and test");
    if (!cal.count(y)) throw ValidationError("train year outside calibration window");
  }
  for (auto y : test) {
    if (!cal.count(y)) throw ValidationError("test year outside calibration window");
  }
}

SplitPlan split_years(std::size_t total_years, std::size_t calibration_count,
                      double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0, 1)");
  }
  if (calibration_count == 0 || calibration_count > total_years) {
    throw ValidationError("series has " + std::to_string(total_years) +
                          " years; cannot take a calibration window of " +
                          std::to_string(calibration_count));
  }
  SplitPlan plan;
  for (std::size_t y = 0; y < total_years; ++y) {
    (y < calibration_count ? plan.calibration_years : plan.validation_years).push_back(y);
  }
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(calibration_count) * train_fraction));
  if (n_train == 0 || n_train == calibration_count) {
    throw ValidationError("train_fraction leaves an empty train or test set");
  }
  std::vector<std::size_t> shuffled = plan.calibration_years;
  std::mt19937_64 rng(derive_seed(seed, "split"));
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  plan.train_years.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  plan.test_years.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
  std::sort(plan.train_years.begin(), plan.train_years.end());
  std::sort(plan.test_years.begin(), plan.test_years.end());
  plan.validate();
  return plan;
}

SplitPlan fewshot_subset(const SplitPlan& plan, std::size_t k_years, std::uint64_t seed) {
  if (k_years < 1) throw ValidationError("fewshot_subset: k_years must be >= 1");
  if (k_years > plan.train_years.size()) {
    throw ValidationError("fewshot_subset: k_years exceeds the " +
                          std::to_string(plan.train_years.size()) + " training years");
  }
  SplitPlan out = plan;
  if (k_years == plan.train_years.size()) return out;
  std::vector<std::size_t> shuffled = plan.train_years;
  std::mt19937_64 rng(derive_seed(seed, "fewshot"));
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  out.train_years.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(k_years));
  std::sort(out.train_years.begin(), out.train_years.end());
  out.validate();
  return out;
}

std::vector<SpatialFold> spatial_folds(std::span<const SiteAttributes> sites) {
  if (sites.size() != 3) {
    throw ValidationError("spatial_folds needs exactly 3 sites, got " +
                          std::to_string(sites.size()));
  }
  std::set<std::string> ids;
  for (const auto& s : sites) {
    if (!ids.insert(s.site_id).second) {
      throw ValidationError("spatial_folds: duplicate site id '" + s.site_id + "'");
    }
  }
  std::vector<SpatialFold> folds;
  for (std::size_t held = 3; held-- > 0;) {
    SpatialFold f;
    for (std::size_t i = 0; i < 3; ++i) {
      if (i != held) f.train_sites.push_back(sites[i]);
    }
    f.validation_site = sites[held];
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace agridiff::data
