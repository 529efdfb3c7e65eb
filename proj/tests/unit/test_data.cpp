#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include "agridiff/data.hpp"

using namespace agridiff;
using data::NoiseSpec;
using data::WeatherSeries;

namespace {

const WeatherSeries& long_series() {
  static const auto s = data::generate_weather(data::default_sites()[0], 68, 1);
  return s;
}

std::string csv_of(const WeatherSeries& s) {
  std::ostringstream os;
  data::write_csv(os, s);
  return os.str();
}

WeatherSeries parse(const std::string& text) {
  std::istringstream is(text);
  return data::read_csv(is, "mem.csv");
}

std::string header() { return "site_id,year,doy,t_min,t_max,radiation,precip\n"; }

}  // namespace

TEST_CASE("generated weather") {
  const auto& s = long_series();
  CHECK(s.days.size() == 24820);
  CHECK(s.years() == 68);
  CHECK(s.start_year == 1951);
  CHECK(s.site_id == "site_a");
  s.validate();
  for (const auto& w : s.days) {
    CHECK(w.t_min <= w.t_max);
    CHECK(w.radiation >= 0.0);
    CHECK(w.precip >= 0.0);
  }
  const auto again = data::generate_weather(data::default_sites()[0], 68, 1);
  CHECK(std::memcmp(again.days.data(), s.days.data(), s.days.size() * sizeof(pbm::DailyWeather)) == 0);
  const auto other = data::generate_weather(data::default_sites()[0], 68, 2);
  CHECK(other.days[100].t_max != s.days[100].t_max);
  CHECK(s.year(67).size() == 365);
  CHECK_THROWS(s.year(68));
}

TEST_CASE("warmer sites generate warmer weather") {
  const auto sites = data::default_sites();
  const auto warm = data::generate_weather(sites[0], 20, 3);
  const auto cold = data::generate_weather(sites[2], 20, 3);
  auto mean_t = [](const WeatherSeries& s) {
    double t = 0.0;
    for (const auto& w : s.days) t += 0.5 * (w.t_min + w.t_max);
    return t / static_cast<double>(s.days.size());
  };
  CHECK(mean_t(warm) == doctest::Approx(sites[0].mean_annual_temp).epsilon(0.1));
  CHECK(mean_t(cold) == doctest::Approx(sites[2].mean_annual_temp).epsilon(0.1));
  CHECK(mean_t(warm) > mean_t(cold));
}

TEST_CASE("CSV round trip") {
  const auto s = data::generate_weather(data::default_sites()[1], 2, 4);
  const auto back = parse(csv_of(s));
  CHECK(back.site_id == s.site_id);
  CHECK(back.start_year == s.start_year);
  REQUIRE(back.days.size() == s.days.size());
  for (std::size_t i = 0; i < s.days.size(); ++i) {
    CHECK(back.days[i].t_min == doctest::Approx(s.days[i].t_min).epsilon(1e-6));
    CHECK(back.days[i].precip == doctest::Approx(s.days[i].precip).epsilon(1e-6));
  }
  // written values carry at most 6 decimals, so a second pass is exact
  CHECK(csv_of(back) == csv_of(parse(csv_of(back))));

  const auto path = std::filesystem::temp_directory_path() / "agridiff_test_weather.csv";
  data::write_csv(path, s);
  CHECK(data::ingest_csv(path).days.size() == s.days.size());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(data::ingest_csv("/nonexistent/weather.csv"), ValidationError);
}

TEST_CASE("CSV errors name the line") {
  CHECK_THROWS_WITH_AS(parse(header()), "mem.csv: no data rows", ValidationError);
  CHECK_THROWS_AS(parse(""), ValidationError);
  CHECK_THROWS_AS(parse("a,b,c\n"), ValidationError);

  auto text = csv_of(data::generate_weather(data::default_sites()[1], 1, 4));
  auto lines = std::vector<std::string>();
  {
    std::istringstream is(text);
    std::string l;
    while (std::getline(is, l)) lines.push_back(l);
  }
  auto with_row = [&](std::size_t row, const std::string& replacement) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) out += (i == row ? replacement : lines[i]) + "\n";
    return out;
  };
  try {
    parse(with_row(5, "site_b,1951,5,1.0,8.0,10.0,-1"));
    FAIL("negative precip accepted");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("mem.csv:6") != std::string::npos);
  }
  try {
    parse(with_row(7, "site_b,1951,7,9.0,3.0,10.0,0"));
    FAIL("t_min > t_max accepted");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("mem.csv:8") != std::string::npos);
    CHECK(msg.find("1951 doy 7") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(with_row(3, "site_b,1951,3,1.0,x,10.0,0")), ValidationError);
  CHECK_THROWS_AS(parse(with_row(3, "site_b,1951,3,1.0")), ValidationError);
  CHECK_THROWS_AS(parse(with_row(3, "other,1951,3,1.0,2.0,10.0,0")), ValidationError);
  CHECK_THROWS_AS(parse(with_row(3, "site_b,1951,4,1.0,2.0,10.0,0")), ValidationError);
  // an incomplete year
  std::string partial = header();
  for (std::size_t i = 1; i < 100; ++i) partial += lines[i] + "\n";
  CHECK_THROWS_AS(parse(partial), ValidationError);
}

TEST_CASE("leap days are dropped on ingestion") {
  auto text = csv_of(data::generate_weather(data::default_sites()[1], 1, 4));
  text += "site_b,1951,366,1.0,2.0,3.0,0.0\n";
  CHECK(parse(text).days.size() == 365);
}

TEST_CASE("noise: level 0 is the identity") {
  const auto s = data::generate_weather(data::default_sites()[2], 3, 8);
  const auto out = data::inject_noise(s, NoiseSpec{0, 0.1, 5});
  CHECK(std::memcmp(out.days.data(), s.days.data(), s.days.size() * sizeof(pbm::DailyWeather)) == 0);
  const std::vector<double> v{1.0, 2.0, 3.0};
  CHECK(data::inject_noise(std::span<const double>(v), NoiseSpec{0, 0.1, 5}) == v);
  CHECK_THROWS_AS(data::inject_noise(s, NoiseSpec{4, 0.1, 5}), ValidationError);
  CHECK_THROWS_AS(data::inject_noise(s, NoiseSpec{-1, 0.1, 5}), ValidationError);
}

TEST_CASE("property: contamination sd follows the level") {
  const auto& s = long_series();
  std::array<std::vector<double>, 4> cols;
  for (const auto& w : s.days) {
    cols[0].push_back(w.t_min);
    cols[1].push_back(w.t_max);
    cols[2].push_back(w.radiation);
    cols[3].push_back(w.precip);
  }
  for (int level = 1; level <= 3; ++level) {
    const auto out = data::inject_noise(s, NoiseSpec{level, 0.1, 77});
    for (const auto& w : out.days) {
      CHECK(w.radiation >= 0.0);
      CHECK(w.precip >= 0.0);
      CHECK(w.t_min <= w.t_max);
    }
    // a t_min/t_max swap leaves their sum unchanged, so the summed temperature
    // noise is exact; radiation is measured on records whose clean value sits
    // far above the floor, which leaves the noise distribution untouched
    const double sigma_r = level * 0.1 * data::sample_sd(cols[2]);
    std::vector<double> dsum;
    std::vector<double> drad;
    for (std::size_t i = 0; i < s.days.size(); ++i) {
      const auto& a = s.days[i];
      const auto& b = out.days[i];
      dsum.push_back((b.t_min + b.t_max) - (a.t_min + a.t_max));
      if (a.radiation >= 4.0 * sigma_r) drad.push_back(b.radiation - a.radiation);
    }
    const double expected_t =
        level * 0.1 * std::hypot(data::sample_sd(cols[0]), data::sample_sd(cols[1]));
    CHECK(data::sample_sd(dsum) == doctest::Approx(expected_t).epsilon(0.05));
    CHECK(drad.size() > 1000);
    CHECK(data::sample_sd(drad) == doctest::Approx(sigma_r).epsilon(0.05));
  }
}

TEST_CASE("noise on observations") {
  std::vector<double> v;
  for (int i = 0; i < 2000; ++i) v.push_back(1000.0 + (i % 50) * 10.0);
  const auto out = data::inject_noise(std::span<const double>(v), NoiseSpec{2, 0.1, 3});
  std::vector<double> diff;
  for (std::size_t i = 0; i < v.size(); ++i) diff.push_back(out[i] - v[i]);
  CHECK(data::sample_sd(diff) == doctest::Approx(0.2 * data::sample_sd(v)).epsilon(0.05));
  CHECK(out == data::inject_noise(std::span<const double>(v), NoiseSpec{2, 0.1, 3}));
}

TEST_CASE("noise names") {
  for (auto t : {data::NoiseTarget::weather, data::NoiseTarget::biomass, data::NoiseTarget::both}) {
    CHECK(data::noise_target_from_name(data::noise_target_name(t)) == t);
  }
  CHECK_THROWS_AS(data::noise_target_from_name("rain"), ValidationError);
}

TEST_CASE("year splits") {
  const auto plan = data::split_years(68, 48, 0.8, 9);
  CHECK(plan.calibration_years.size() == 48);
  CHECK(plan.validation_years.size() == 20);
  CHECK(plan.validation_years.front() == 48);
  CHECK(plan.validation_years.back() == 67);
  CHECK(plan.train_years.size() == 38);
  CHECK(plan.test_years.size() == 10);
  std::set<std::size_t> seen(plan.train_years.begin(), plan.train_years.end());
  for (auto y : plan.test_years) CHECK(seen.insert(y).second);
  CHECK(seen.size() == 48);

  const auto again = data::split_years(68, 48, 0.8, 9);
  CHECK(again.train_years == plan.train_years);
  CHECK(data::split_years(68, 48, 0.8, 10).train_years != plan.train_years);

  CHECK_THROWS_AS(data::split_years(68, 48, 1.0, 9), ValidationError);
  CHECK_THROWS_AS(data::split_years(68, 48, 0.0, 9), ValidationError);
  CHECK_THROWS_AS(data::split_years(30, 48, 0.8, 9), ValidationError);

  auto leaky = plan;
  leaky.test_years.push_back(leaky.train_years.front());
  CHECK_THROWS_AS(leaky.validate(), ValidationError);
  leaky = plan;
  leaky.validation_years.push_back(0);
  CHECK_THROWS_AS(leaky.validate(), ValidationError);
}

TEST_CASE("few-shot subsets") {
  const auto plan = data::split_years(68, 48, 0.8, 9);
  for (std::size_t k : {7u, 3u, 1u}) {
    const auto sub = data::fewshot_subset(plan, k, 4);
    CHECK(sub.train_years.size() == k);
    CHECK(sub.test_years == plan.test_years);
    CHECK(sub.validation_years == plan.validation_years);
    for (auto y : sub.train_years) {
      CHECK(std::find(plan.train_years.begin(), plan.train_years.end(), y) != plan.train_years.end());
    }
  }
  CHECK(data::fewshot_subset(plan, 38, 4).train_years == plan.train_years);
  CHECK(data::fewshot_subset(plan, 3, 4).train_years == data::fewshot_subset(plan, 3, 4).train_years);
  CHECK_THROWS_AS(data::fewshot_subset(plan, 0, 4), ValidationError);
  CHECK_THROWS_AS(data::fewshot_subset(plan, 39, 4), ValidationError);
}

TEST_CASE("spatial folds") {
  const auto sites = data::default_sites();
  const auto folds = data::spatial_folds(sites);
  REQUIRE(folds.size() == 3);
  CHECK(folds[0].validation_site.site_id == "site_c");
  CHECK(folds[0].train_sites[0].site_id == "site_a");
  CHECK(folds[0].train_sites[1].site_id == "site_b");
  CHECK(folds[1].validation_site.site_id == "site_b");
  CHECK(folds[2].validation_site.site_id == "site_a");
  std::set<std::string> held;
  for (const auto& f : folds) {
    CHECK(f.train_sites.size() == 2);
    held.insert(f.validation_site.site_id);
  }
  CHECK(held.size() == 3);
  CHECK_THROWS_AS(data::spatial_folds(std::span(sites).first(2)), ValidationError);
  auto dup = sites;
  dup[2].site_id = "site_a";
  CHECK_THROWS_AS(data::spatial_folds(dup), ValidationError);
}

TEST_CASE("derived seeds are stable") {
  CHECK(data::stable_hash("") == 14695981039346656037ull);
  CHECK(data::stable_hash("a") == 0xaf63dc4c8601ec8cull);
  CHECK(data::derive_seed(1, "x") == data::derive_seed(1, "x"));
  CHECK(data::derive_seed(1, "x") != data::derive_seed(2, "x"));
  CHECK(data::derive_seed(1, "x") != data::derive_seed(1, "y"));
}
