#include "agridiff/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "agridiff/gradsuite.hpp"

namespace agridiff::cli {

namespace {

void configure_logging() {
  auto logger = spdlog::get("agridiff");
  if (!logger) {
    logger = spdlog::stderr_logger_mt("agridiff");
    spdlog::set_default_logger(logger);
  }
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("AGRIDIFF_LOG")) {
    const std::string v = env;
    if (v == "error") level = spdlog::level::err;
    else if (v == "warn") level = spdlog::level::warn;
    else if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
    else throw ValidationError("AGRIDIFF_LOG must be one of error, warn, info, debug");
  }
  spdlog::set_level(level);
}

struct Flags {
  std::string config, out, seed, seeds, levels, fewshot, jobs, noise_target, lambda, models;
  std::string model = "PureDL";
  std::string weather;
  std::string from;
  std::string protocol;
  int year = 0;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "TOML-style configuration file");
  sub->add_option("--out", f.out, "output directory (only files below it are written)");
  sub->add_option("--seed", f.seed, "seed for single runs");
}

void add_experiment_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--seeds", f.seeds, "seed count N (1..N) or comma list");
  sub->add_option("--levels", f.levels, "comma list of noise levels (0..3)");
  sub->add_option("--fewshot", f.fewshot, "comma list of few-shot training years");
  sub->add_option("--jobs", f.jobs, "worker threads (default: logical processors)");
  sub->add_option("--noise-target", f.noise_target, "weather | biomass | both")
      ->check(CLI::IsMember({"weather", "biomass", "both"}));
  sub->add_option("--lambda", f.lambda, "physics/penalty weight or comma list to sweep");
  sub->add_option("--models", f.models, "comma list of models");
}

RunConfig resolve(const Flags& f) {
  RunConfig c;
  c.experiment.jobs = std::max(1u, std::thread::hardware_concurrency());
  if (!f.config.empty()) c.apply(ConfigFile::load(f.config));
  ConfigFile flags;
  auto set = [&](const std::string& key, const std::string& v) {
    if (!v.empty()) flags.values[key] = v;
  };
  set("run.seed", f.seed);
  set("run.out", f.out);
  set("run.jobs", f.jobs);
  set("experiment.seeds", f.seeds);
  set("experiment.levels", f.levels);
  set("experiment.fewshot", f.fewshot);
  set("experiment.noise_target", f.noise_target);
  set("experiment.models", f.models);
  set("model.lambda", f.lambda);
  c.apply(flags);
  c.validate();
  return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void write_provenance(const std::filesystem::path& dir, const std::string& command,
                      nlohmann::json config) {
  std::filesystem::create_directories(dir);
  nlohmann::json p{{"tool", "agridiff"},
                   {"version", eval::kVersion},
                   {"command", command},
                   {"config", std::move(config)}};
  write_text(dir / "provenance.json", p.dump(2) + "\n");
}

nlohmann::json params_json(const pbm::CropParams& p) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < pbm::kParamCount; ++i) {
    const auto id = static_cast<pbm::ParamId>(i);
    j[std::string(pbm::param_name(id))] = p[id];
  }
  return j;
}

eval::ModelData clean_data(const eval::Twin& twin) {
  eval::ModelData d;
  d.twin = &twin;
  d.forcing = twin.weather;
  d.observed = twin.yields;
  for (std::size_t s = 0; s < twin.sites.size(); ++s) {
    for (auto y : twin.plan.train_years) d.train.push_back({s, y});
    for (auto y : twin.plan.test_years) d.test.push_back({s, y});
    for (auto y : twin.plan.validation_years) d.validation.push_back({s, y});
  }
  return d;
}

nlohmann::json metrics_json(const eval::Metrics& m) {
  auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"r2", num(m.r_squared)}, {"rmse", num(m.rmse)}, {"n", m.n}};
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& c, std::ostream& out) {
  write_provenance(c.out, "gen-data", to_json(c));
  const auto twin = eval::make_twin(c.experiment.twin, c.seed);
  std::ofstream yields(c.out / "yields.csv", std::ios::binary);
  yields << "site_id,year,yield\n";
  nlohmann::json truth = nlohmann::json::object();
  for (std::size_t s = 0; s < twin.sites.size(); ++s) {
    const auto& id = twin.sites[s].site_id;
    data::write_csv(c.out / ("weather_" + id + ".csv"), twin.weather[s]);
    for (std::size_t y = 0; y < twin.yields[s].size(); ++y) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", twin.yields[s][y]);
      yields << id << ',' << c.experiment.twin.start_year + static_cast<int>(y) << ',' << buf << '\n';
    }
    truth[id] = params_json(twin.truth[s]);
  }
  write_text(c.out / "truth.json", truth.dump(2) + "\n");
  out << "wrote " << twin.sites.size() << " sites x " << c.experiment.twin.years << " years to "
      << c.out.string() << "\n";
  return 0;
}

int cmd_simulate(const RunConfig& c, const Flags& f, std::ostream& out) {
  write_provenance(c.out, "simulate", to_json(c));
  data::WeatherSeries series;
  if (!f.weather.empty()) {
    series = data::ingest_csv(f.weather);
  } else {
    series = data::generate_weather(c.experiment.twin.sites.front(), c.experiment.twin.years,
                                    c.seed, c.experiment.twin.start_year);
  }
  if (f.year < 0 || static_cast<std::size_t>(f.year) >= series.years()) {
    throw ValidationError("--year " + std::to_string(f.year) + " outside the " +
                          std::to_string(series.years()) + " available years");
  }
  pbm::SeasonOptions opt;
  const auto season = pbm::simulate_season<double>(series.year(static_cast<std::size_t>(f.year)), c.crop, opt);
  {
    std::ofstream os(c.out / "trajectory.csv", std::ios::binary);
    pbm::write_trajectory_csv(os, season.trajectory, static_cast<std::size_t>(opt.sowing_doy - 1));
  }
  nlohmann::json j{{"site_id", series.site_id},
                   {"year", series.start_year + f.year},
                   {"yield", season.yield},
                   {"harvest_day_after_sowing", season.harvest_day},
                   {"matured", season.matured},
                   {"params", params_json(c.crop)}};
  write_text(c.out / "season.json", j.dump(2) + "\n");
  out << "yield " << std::fixed << std::setprecision(2) << season.yield << " g/m2 ("
      << (season.matured ? "matured" : "not matured") << ")\n";
  return 0;
}

int cmd_calibrate(const RunConfig& c, std::ostream& out) {
  write_provenance(c.out, "calibrate", to_json(c));
  const auto twin = eval::make_twin(c.experiment.twin, c.seed);
  const auto d = clean_data(twin);
  const auto fitted = eval::calibrate_sites(d, c.experiment.models);
  nlohmann::json sites = nlohmann::json::array();
  for (std::size_t s = 0; s < twin.sites.size(); ++s) {
    std::vector<double> pred, obs;
    for (const auto& sy : d.validation) {
      if (sy.site != s) continue;
      pred.push_back(pbm::simulate_season<double>(d.clean_weather(sy), fitted[s]).yield);
      obs.push_back(twin.yields[s][sy.year]);
    }
    const auto m = eval::compute_metrics(pred, obs);
    sites.push_back({{"site_id", twin.sites[s].site_id},
                     {"truth", params_json(twin.truth[s])},
                     {"calibrated", params_json(fitted[s])},
                     {"validation", metrics_json(m)}});
    out << twin.sites[s].site_id << ": rue " << std::setprecision(4) << fitted[s].rue << " (true "
        << twin.truth[s].rue << "), validation R2 " << m.r_squared << "\n";
  }
  write_text(c.out / "calibration.json", nlohmann::json{{"sites", sites}}.dump(2) + "\n");
  return 0;
}

int cmd_train(const RunConfig& c, const Flags& f, std::ostream& out) {
  write_provenance(c.out, "train", to_json(c));
  const auto kind = eval::model_from_name(f.model);
  auto models = c.experiment.models;
  models.lambda_physics = c.lambda_sweep.front();
  const auto twin = eval::make_twin(c.experiment.twin, c.seed);
  const auto d = clean_data(twin);
  eval::CellCache cache;
  const auto p = eval::run_model(kind, d, models, c.seed, cache);
  auto metrics = [&](const std::vector<eval::SiteYear>& set, const std::vector<double>& pred,
                     bool truth) {
    std::vector<double> obs;
    for (const auto& sy : set) obs.push_back(truth ? twin.yields[sy.site][sy.year] : d.observed[sy.site][sy.year]);
    return eval::compute_metrics(pred, obs);
  };
  const auto mv = metrics(d.validation, p.validation, true);
  nlohmann::json j{{"model", f.model},
                   {"family", eval::model_family(kind)},
                   {"seed", c.seed},
                   {"epochs", p.epochs},
                   {"train", metrics_json(metrics(d.train, p.train, false))},
                   {"test", metrics_json(metrics(d.test, p.test, false))},
                   {"validation", metrics_json(mv)}};
  write_text(c.out / "train.json", j.dump(2) + "\n");
  out << f.model << ": validation R2 " << std::setprecision(4) << mv.r_squared << ", RMSE "
      << mv.rmse << "\n";
  return 0;
}

std::string lambda_label(double l) {
  std::ostringstream os;
  os << l;
  return "lambda=" + os.str();
}

int cmd_experiment(RunConfig c, const Flags& f, std::ostream& out) {
  c.experiment.spec.protocol = eval::protocol_from_name(f.protocol);
  c.validate();
  for (double l : c.lambda_sweep) {
    auto cfg = c.experiment;
    cfg.models.lambda_physics = l;
    const auto dir = c.lambda_sweep.size() == 1 ? c.out : c.out / lambda_label(l);
    std::filesystem::create_directories(dir);
    write_text(dir / "provenance.json", eval::provenance_of(cfg).dump(2) + "\n");
    const auto report = eval::run_experiment(cfg);
    eval::write_report(report, dir);
    std::size_t failed = 0;
    for (const auto& cell : report.cells) failed += cell.status != "ok";
    out << f.protocol << " experiment: " << report.cells.size() << " cells (" << failed
        << " failed) written to " << dir.string() << "\n";
    for (const auto& s : report.summaries) {
      if (s.split == "validation" && s.metric == "r2") {
        out << "  " << std::left << std::setw(18) << s.model << std::setw(16) << s.condition
            << " median R2 " << std::setprecision(4) << s.box.median << "\n";
      }
    }
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& c, const Flags& f, std::ostream& out) {
  const auto cases = gradsuite::run_gradient_suite(c.seed);
  bool all = true;
  nlohmann::json j = nlohmann::json::array();
  out << std::left << std::setw(28) << "case" << std::setw(8) << "inputs" << std::setw(16)
      << "max_rel_error" << "result\n";
  for (const auto& cs : cases) {
    all = all && cs.report.pass;
    out << std::left << std::setw(28) << cs.name << std::setw(8) << cs.report.entries.size()
        << std::setw(16) << std::scientific << std::setprecision(3) << cs.report.max_error()
        << std::defaultfloat << (cs.report.pass ? "PASS" : "FAIL") << "\n";
    j.push_back({{"case", cs.name}, {"report", cs.report}});
  }
  out << (all ? "all gradient checks passed\n" : "gradient check failures\n");
  if (!f.out.empty()) {
    write_provenance(c.out, "gradcheck", to_json(c));
    write_text(c.out / "gradcheck.json", j.dump(2) + "\n");
  }
  return all ? 0 : 2;
}

int cmd_report(const RunConfig& c, const Flags& f, std::ostream& out) {
  if (f.from.empty()) throw ValidationError("report needs --from <report.json|provenance.json>");
  std::ifstream is(f.from, std::ios::binary);
  if (!is) throw ValidationError("file not found: " + f.from);
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string original = buf.str();
  nlohmann::json source;
  try {
    source = nlohmann::json::parse(original);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(f.from + ": " + e.what());
  }
  const auto& prov = source.contains("provenance") ? source.at("provenance") : source;
  auto cfg = eval::config_from_provenance(prov);
  cfg.jobs = c.experiment.jobs;
  const auto report = eval::run_experiment(cfg);
  const std::string text = eval::report_text(report);
  std::filesystem::create_directories(c.out);
  write_text(c.out / "provenance.json", eval::provenance_of(cfg).dump(2) + "\n");
  eval::write_report(report, c.out);
  if (source.contains("cells")) {
    const bool same = text == original;
    out << "rerun " << (same ? "reproduces" : "DIFFERS FROM") << " " << f.from << "\n";
    return same ? 0 : 2;
  }
  out << "report written to " << c.out.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"agridiff: differentiable hybrid crop modelling toolkit"};
  app.require_subcommand(1);
  app.footer("\n" + config_keys_help() +
             "\nEnvironment: AGRIDIFF_LOG=error|warn|info|debug (default warn)\n"
             "Exit status: 0 success, 1 invalid input or usage, 2 runtime abort\n");
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic twin (weather CSVs, yields)");
  add_common(gen, f);
  auto* sim = app.add_subcommand("simulate", "run the crop model for one season");
  add_common(sim, f);
  sim->add_option("--weather", f.weather, "weather CSV (default: generated first site)");
  sim->add_option("--year", f.year, "0-based year index within the series");
  auto* cal = app.add_subcommand("calibrate", "calibrate the crop model per twin site");
  add_common(cal, f);
  auto* trn = app.add_subcommand("train", "train one model on the clean twin");
  add_common(trn, f);
  trn->add_option("--model", f.model, "model name (PurePBM, PureDL, EmbeddedNnPbm, ...)");
  trn->add_option("--lambda", f.lambda, "physics/penalty weight");
  auto* exp = app.add_subcommand("experiment", "run a noise, fewshot or spatial experiment");
  add_common(exp, f);
  add_experiment_flags(exp, f);
  exp->add_option("protocol", f.protocol, "noise | fewshot | spatial")
      ->required()
      ->check(CLI::IsMember({"noise", "fewshot", "spatial"}));
  auto* grad = app.add_subcommand("gradcheck", "reverse mode vs finite differences");
  add_common(grad, f);
  auto* rep = app.add_subcommand("report", "rerun an experiment from its provenance header");
  add_common(rep, f);
  rep->add_option("--from", f.from, "report.json or provenance.json to reproduce");
  rep->add_option("--jobs", f.jobs, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    configure_logging();
    RunConfig c = resolve(f);
    if (*gen) return cmd_gen_data(c, out);
    if (*sim) return cmd_simulate(c, f, out);
    if (*cal) return cmd_calibrate(c, out);
    if (*trn) return cmd_train(c, f, out);
    if (*exp) return cmd_experiment(c, f, out);
    if (*grad) return cmd_gradcheck(c, f, out);
    if (*rep) return cmd_report(c, f, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "aborted: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace agridiff::cli
