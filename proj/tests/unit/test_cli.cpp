#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "agridiff/cli.hpp"

using namespace agridiff;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "agridiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::current_path() / ("cli_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("config file parsing") {
  std::istringstream is(
      "# comment\n"
      "[twin]\n"
      "years = 20   # trailing comment\n"
      "[experiment]\n"
      "models = [\"PurePBM\", \"PureDL\"]\n"
      "noise_target = \"biomass\"\n");
  const auto f = cli::ConfigFile::parse(is);
  CHECK(f.values.at("twin.years") == "20");
  CHECK(f.values.at("experiment.models") == "PurePBM,PureDL");
  CHECK(f.values.at("experiment.noise_target") == "biomass");

  auto fails = [](const std::string& text, const std::string& fragment) {
    std::istringstream s(text);
    try {
      cli::ConfigFile::parse(s, "x.toml");
      FAIL("expected a parse error for: " << text);
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };
  fails("[twin]\nyears = 2\nyears = 3\n", "duplicate key 'twin.years'");
  fails("[twin\n", "malformed section header");
  fails("years\n", "expected key = value");
  fails("a = \n", "missing value");
  fails("a = [1, 2\n", "unterminated array");
  fails("a = \"x\n", "unterminated string");
  fails("\n\nbad key = 1\n", "x.toml:3");
  CHECK_THROWS_AS(cli::ConfigFile::load("definitely/missing.toml"), ValidationError);
}

TEST_CASE("applying configuration keys") {
  cli::RunConfig c;
  cli::ConfigFile f;
  f.values = {{"twin.years", "20"},        {"twin.calibration_years", "12"},
              {"experiment.levels", "1,3"}, {"crop.rue", "3.1"},
              {"model.bounds.rue", "2,4"},  {"run.seed", "9"}};
  c.apply(f);
  CHECK(c.experiment.twin.years == 20);
  CHECK(c.experiment.spec.noise_levels == std::vector<int>{1, 3});
  CHECK(c.crop.rue == 3.1);
  CHECK(c.experiment.models.bounds[0].bound.low == 2.0);
  CHECK(c.seed == 9);
  c.validate();

  cli::ConfigFile unknown;
  unknown.values = {{"twin.yeers", "3"}};
  CHECK_THROWS_WITH_AS(c.apply(unknown), doctest::Contains("twin.yeers"), ValidationError);
  cli::ConfigFile bad;
  bad.values = {{"twin.years", "many"}};
  CHECK_THROWS_AS(c.apply(bad), ValidationError);
}

TEST_CASE("seed lists") {
  CHECK(cli::parse_seeds("3") == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(cli::parse_seeds("4,9") == std::vector<std::uint64_t>{4, 9});
  CHECK_THROWS_AS(cli::parse_seeds("0"), ValidationError);
  CHECK_THROWS_AS(cli::parse_seeds("1,x"), ValidationError);
  CHECK(cli::parse_double_list("0.01, 0.1,1", "lambda") == std::vector<double>{0.01, 0.1, 1.0});
  CHECK_THROWS_AS(cli::parse_double_list("", "lambda"), ValidationError);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"simulate", "--no-such-flag"}).code == 1);
  CHECK(run({"experiment", "temporal"}).code == 1);
  const auto missing = run({"simulate", "--config", "nope.toml", "--out", "x"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("nope.toml") != std::string::npos);
  CHECK(run({"experiment", "noise", "--levels", "5", "--out", "x"}).code == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("flags override the config file, which overrides defaults") {
  const auto dir = scratch("precedence");
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "run.toml");
    os << "[twin]\nyears = 5\ncalibration_years = 3\n[run]\nseed = 7\n"
          "[experiment]\nseeds = [4, 5]\n";
  }
  const auto r = run({"simulate", "--config", (dir / "run.toml").string(), "--seed", "11",
                      "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("yield") != std::string::npos);
  const auto p = read_json(dir / "out" / "provenance.json");
  const auto& cfg = p.at("config");
  CHECK(cfg.at("seed") == 11);                                  // flag
  CHECK(cfg.at("twin").at("years") == 5);                      // file
  CHECK(cfg.at("spec").at("seeds") == nlohmann::json{4, 5});    // file
  CHECK(cfg.at("twin").at("start_year") == 1951);              // default
  CHECK(p.at("command") == "simulate");
  CHECK(fs::exists(dir / "out" / "trajectory.csv"));
  const auto season = read_json(dir / "out" / "season.json");
  CHECK(season.at("yield").get<double>() > 0.0);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck subcommand passes") {
  const auto dir = scratch("grad");
  const auto r = run({"gradcheck", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("all gradient checks passed") != std::string::npos);
  CHECK(fs::exists(dir / "gradcheck.json"));
  fs::remove_all(dir);
}

TEST_CASE("experiment and report round trip") {
  const auto dir = scratch("exp");
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "small.toml");
    os << "[twin]\nyears = 10\ncalibration_years = 6\n"
          "[training]\nnn_max_epochs = 3\npbm_max_epochs = 3\n"
          "[model]\nlstm_hidden = 4\n";
  }
  const auto r = run({"experiment", "fewshot", "--config", (dir / "small.toml").string(),
                      "--fewshot", "2", "--seeds", "1", "--models", "PurePBM,PureDL", "--jobs",
                      "1", "--out", (dir / "a").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "a" / "report.json"));
  CHECK(fs::exists(dir / "a" / "fig9_box.csv"));
  const auto again = run({"report", "--from", (dir / "a" / "report.json").string(), "--jobs", "1",
                          "--out", (dir / "b").string()});
  CHECK(again.code == 0);
  CHECK(again.out.find("reproduces") != std::string::npos);
  CHECK(run({"report", "--from", (dir / "none.json").string(), "--out", (dir / "c").string()})
            .code == 1);
  fs::remove_all(dir);
}
