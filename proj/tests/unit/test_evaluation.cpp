#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "agridiff/experiment.hpp"

using namespace agridiff;
using namespace agridiff::eval;

namespace {

double brute_r2(const std::vector<double>& p, const std::vector<double>& o) {
  long double mean = 0.0L;
  for (double v : o) mean += v;
  mean /= static_cast<long double>(o.size());
  long double res = 0.0L;
  long double tot = 0.0L;
  for (std::size_t i = 0; i < o.size(); ++i) {
    res += (static_cast<long double>(o[i]) - p[i]) * (static_cast<long double>(o[i]) - p[i]);
    tot += (o[i] - mean) * (o[i] - mean);
  }
  return static_cast<double>(1.0L - res / tot);
}

double brute_rmse(const std::vector<double>& p, const std::vector<double>& o) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < o.size(); ++i) {
    s += (static_cast<long double>(p[i]) - o[i]) * (static_cast<long double>(p[i]) - o[i]);
  }
  return static_cast<double>(std::sqrt(s / static_cast<long double>(o.size())));
}

// Order statistic definition of the interpolated quantile.
double brute_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (pos - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

ExperimentConfig tiny_config(Protocol protocol) {
  ExperimentConfig c;
  c.twin.years = 12;
  c.twin.calibration_years = 8;
  c.twin.train_fraction = 0.75;
  c.models.nn_stop = {2, 0.0, 4};
  c.models.pbm_stop = {2, 0.0, 4};
  c.models.lstm_hidden = 4;
  c.spec.protocol = protocol;
  c.spec.models = {ModelKind::PurePBM, ModelKind::UncalibratedPBM, ModelKind::PureDL};
  c.spec.noise_levels = {0, 3};
  c.spec.fewshot_k = {3, 1};
  c.spec.seeds = {1, 2};
  return c;
}

}  // namespace

TEST_CASE("metric worked examples") {
  const std::vector<double> p{1, 2, 3};
  const std::vector<double> o{1, 2, 4};
  CHECK(r_squared(p, o) == doctest::Approx(0.7857142857142857).epsilon(1e-15));
  CHECK(r_squared(o, o) == 1.0);
  const std::vector<double> mean(3, 7.0 / 3.0);
  CHECK(r_squared(mean, o) == doctest::Approx(0.0).scale(1.0));
  const std::vector<double> a{1, 2};
  const std::vector<double> z{0, 0};
  CHECK(rmse(a, z) == doctest::Approx(1.5811388300841898).epsilon(1e-15));
  CHECK(rmse(a, a) == 0.0);
}

TEST_CASE("metric errors") {
  const std::vector<double> c{2, 2, 2};
  CHECK(std::isnan(r_squared(std::vector<double>{1, 2, 3}, c)));
  CHECK_THROWS_AS(rmse(std::vector<double>{1, 2}, std::vector<double>{1}), ValidationError);
  CHECK_THROWS_AS(r_squared(std::vector<double>{1, 2}, std::vector<double>{1}), ValidationError);
  CHECK_THROWS_AS(r_squared(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
  const auto m = compute_metrics(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 4});
  CHECK(m.n == 3);
  CHECK(m.rmse == doctest::Approx(std::sqrt(1.0 / 3.0)));
}

TEST_CASE("property: metrics match brute-force recomputation") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(2, 200);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = len(rng);
    std::vector<double> o(n);
    std::vector<double> p(n);
    const double scale = std::exp(3.0 * normal(rng));
    for (std::size_t i = 0; i < n; ++i) {
      o[i] = scale * normal(rng);
      p[i] = o[i] + 0.5 * scale * normal(rng);
    }
    CHECK(std::abs(r_squared(p, o) - brute_r2(p, o)) <= 1e-12 * std::max(1.0, std::abs(brute_r2(p, o))));
    CHECK(std::abs(rmse(p, o) - brute_rmse(p, o)) <= 1e-12 * std::max(1.0, brute_rmse(p, o)));
  }
}

TEST_CASE("quartiles") {
  const std::vector<double> v{4, 1, 3, 2};
  CHECK(quantile(v, 0.25) == 1.75);
  CHECK(quantile(v, 0.5) == 2.5);
  CHECK(quantile(v, 0.75) == 3.25);
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  CHECK(quantile(std::vector<double>{5.0}, 0.3) == 5.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int c = 0; c < 200; ++c) {
    std::vector<double> x(1 + rng() % 30);
    for (auto& e : x) e = u(rng);
    for (double q : {0.0, 0.25, 0.5, 0.75, 1.0}) CHECK(quantile(x, q) == brute_quantile(x, q));
  }

  const auto b = boxplot_summary(std::vector<double>{4, NAN, 1, 3, 2});
  CHECK(b.n == 4);
  CHECK(b.min == 1.0);
  CHECK(b.q1 == 1.75);
  CHECK(b.median == 2.5);
  CHECK(b.q3 == 3.25);
  CHECK(b.max == 4.0);
  const auto none = boxplot_summary(std::vector<double>{NAN});
  CHECK(none.n == 0);
  CHECK(std::isnan(none.median));
}

TEST_CASE("model names and families") {
  for (auto m : all_models()) CHECK(model_from_name(model_name(m)) == m);
  CHECK(all_models().size() == 7);
  CHECK(hybrid_models().size() == 4);
  CHECK(model_family(ModelKind::PureDL) == "baseline");
  CHECK(model_family(ModelKind::MassBalanceDl) == "DL-informed PBM");
  CHECK(model_family(ModelKind::SurrogateDpl) == "PBM-informed DL");
  CHECK_THROWS_AS(model_from_name("GPT"), ValidationError);
  CHECK(protocol_from_name("spatial") == Protocol::spatial);
  CHECK_THROWS_AS(protocol_from_name("temporal"), ValidationError);
}

TEST_CASE("synthetic twin") {
  TwinSettings s;
  const auto twin = make_twin(s, 1);
  REQUIRE(twin.sites.size() == 3);
  CHECK(twin.plan.train_years.size() == 38);
  CHECK(twin.plan.test_years.size() == 10);
  CHECK(twin.plan.validation_years.size() == 20);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(twin.weather[i].years() == 68);
    CHECK(twin.yields[i].size() == 68);
    const auto truth = twin_truth(twin.sites[i]);
    CHECK(twin.truth[i].rue == truth.rue);
    for (std::size_t y : {0u, 40u, 67u}) {
      CHECK(twin.yields[i][y] == pbm::simulate_season<double>(twin.weather[i].year(y), truth).yield);
    }
  }
  CHECK(twin_truth(twin.sites[0]).rue == doctest::Approx(3.4));
  CHECK(twin_truth(twin.sites[2]).rue == doctest::Approx(2.8));
  CHECK(twin_truth(twin.sites[1]).s_max == 120.0);
}

TEST_CASE("clean twin: calibrated PBM explains validation yields") {
  ExperimentConfig c;
  c.spec.protocol = Protocol::noise;
  c.spec.models = {ModelKind::PurePBM};
  c.spec.noise_levels = {0};
  c.spec.seeds = {1};
  const auto report = run_experiment(c);
  CHECK(report.median("PurePBM", "level=0", "r2") >= 0.99);
}

TEST_CASE("report cardinalities") {
  for (auto protocol : {Protocol::noise, Protocol::fewshot, Protocol::spatial}) {
    const auto c = tiny_config(protocol);
    const auto r = run_experiment(c);
    const std::size_t conditions = protocol == Protocol::spatial ? 3 : 2;
    CHECK(r.cells.size() == 3 * conditions * 2 * 3);
    CHECK(r.summaries.size() == 3 * conditions * 3 * 2);
    for (const auto& cell : r.cells) {
      CHECK(cell.status == "ok");
      CHECK(cell.metrics.n > 0);
    }
    const auto j = report_json(r);
    CHECK(j.at("cells").size() == r.cells.size());
    CHECK(j.at("provenance").at("spec").at("protocol") == protocol_name(protocol));
  }
}

TEST_CASE("validation cells use the clean truth") {
  auto c = tiny_config(Protocol::spatial);
  c.spec.models = {ModelKind::UncalibratedPBM};
  c.spec.seeds = {1};
  const auto r = run_experiment(c);
  const auto twin = make_twin(c.twin, 1);
  // uncalibrated predictions are the default-parameter PBM, computable here
  for (const auto& cell : r.cells) {
    if (cell.split != "validation") continue;
    std::size_t held = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      if (cell.condition == "fold=" + twin.sites[s].site_id) held = s;
    }
    std::vector<double> pred;
    std::vector<double> obs;
    for (auto y : twin.plan.validation_years) {
      pred.push_back(pbm::simulate_season<double>(twin.weather[held].year(y), pbm::CropParams{}).yield);
      obs.push_back(twin.yields[held][y]);
    }
    CHECK(cell.metrics.rmse == doctest::Approx(rmse(pred, obs)).epsilon(1e-12));
  }
}

TEST_CASE("reports are deterministic and independent of the worker count") {
  auto c = tiny_config(Protocol::noise);
  const auto a = report_text(run_experiment(c));
  c.jobs = 3;
  const auto b = report_text(run_experiment(c));
  CHECK(a == b);

  const auto r = run_experiment(c);
  const auto again = run_experiment(config_from_provenance(r.provenance));
  CHECK(report_text(again) == report_text(r));
  CHECK(r.provenance.dump().find("jobs") == std::string::npos);
}

TEST_CASE("report files") {
  const auto c = tiny_config(Protocol::fewshot);
  const auto r = run_experiment(c);
  const auto dir = std::filesystem::temp_directory_path() / "agridiff_report_test";
  std::filesystem::remove_all(dir);
  write_report(r, dir);
  for (const char* f : {"report.json", "fig7_scatter.csv", "fig9_box.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  std::ifstream fig7(dir / "fig7_scatter.csv");
  std::string line;
  std::getline(fig7, line);
  CHECK(line == "year,observed,predicted,model,level");
  std::size_t rows = 0;
  while (std::getline(fig7, line)) ++rows;
  CHECK(rows == r.scatter.size());
  std::ifstream fig9(dir / "fig9_box.csv");
  std::getline(fig9, line);
  CHECK(line == "model,fold,split,rmse");
  std::ifstream js(dir / "report.json");
  const auto j = nlohmann::json::parse(js);
  CHECK(j.dump(2) + "\n" == report_text(r));
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid experiment settings are rejected") {
  auto c = tiny_config(Protocol::noise);
  c.spec.noise_levels = {4};
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
  c = tiny_config(Protocol::noise);
  c.spec.seeds = {1, 1};
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
  c = tiny_config(Protocol::noise);
  c.twin.calibration_years = 12;
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
  c = tiny_config(Protocol::fewshot);
  c.spec.fewshot_k = {50};
  const auto r = run_experiment(c);
  for (const auto& cell : r.cells) CHECK(cell.status == "failed");
}
