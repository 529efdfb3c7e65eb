#include "agridiff/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

namespace agridiff::eval {

std::string model_name(ModelKind m) {
  switch (m) {
    case ModelKind::PurePBM: return "PurePBM";
    case ModelKind::UncalibratedPBM: return "UncalibratedPBM";
    case ModelKind::PureDL: return "PureDL";
    case ModelKind::EmbeddedNnPbm: return "EmbeddedNnPbm";
    case ModelKind::MassBalanceDl: return "MassBalanceDl";
    case ModelKind::SurrogateDpl: return "SurrogateDpl";
    case ModelKind::PhysicsResidualDl: return "PhysicsResidualDl";
  }
  return "?";
}

std::vector<ModelKind> all_models() {
  return {ModelKind::PurePBM,       ModelKind::UncalibratedPBM, ModelKind::PureDL,
          ModelKind::EmbeddedNnPbm, ModelKind::MassBalanceDl,   ModelKind::SurrogateDpl,
          ModelKind::PhysicsResidualDl};
}

std::vector<ModelKind> hybrid_models() {
  return {ModelKind::EmbeddedNnPbm, ModelKind::MassBalanceDl, ModelKind::SurrogateDpl,
          ModelKind::PhysicsResidualDl};
}

ModelKind model_from_name(const std::string& name) {
  for (auto m : all_models()) {
    if (model_name(m) == name) return m;
  }
  throw ValidationError("unknown model '" + name + "'");
}

bool is_hybrid(ModelKind m) {
  const auto h = hybrid_models();
  return std::find(h.begin(), h.end(), m) != h.end();
}

std::string model_family(ModelKind m) {
  switch (m) {
    case ModelKind::EmbeddedNnPbm: return hybrid::kind_family(hybrid::HybridKind::EmbeddedNnPbm);
    case ModelKind::MassBalanceDl: return hybrid::kind_family(hybrid::HybridKind::MassBalanceDl);
    case ModelKind::SurrogateDpl: return hybrid::kind_family(hybrid::HybridKind::SurrogateDpl);
    case ModelKind::PhysicsResidualDl:
      return hybrid::kind_family(hybrid::HybridKind::PhysicsResidualDl);
    default: return "baseline";
  }
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::noise: return "noise";
    case Protocol::fewshot: return "fewshot";
    case Protocol::spatial: return "spatial";
  }
  return "?";
}

Protocol protocol_from_name(const std::string& name) {
  for (auto p : {Protocol::noise, Protocol::fewshot, Protocol::spatial}) {
    if (protocol_name(p) == name) return p;
  }
  throw ValidationError("unknown protocol '" + name + "' (expected noise, fewshot or spatial)");
}

// ---------------------------------------------------------------------------
// Validation and JSON
// ---------------------------------------------------------------------------

void TwinSettings::validate() const {
  if (years < 2) throw ValidationError("twin.years must be >= 2");
  if (calibration_years < 2 || calibration_years >= static_cast<std::size_t>(years)) {
    throw ValidationError("twin.calibration_years must lie in [2, years)");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("twin.train_fraction must lie in (0, 1)");
  }
  if (sites.empty()) throw ValidationError("twin needs at least one site");
  std::set<std::string> ids;
  for (const auto& s : sites) {
    if (!ids.insert(s.site_id).second) throw ValidationError("duplicate site id " + s.site_id);
  }
}

void ModelSettings::validate() const {
  if (lstm_hidden < 1 || stress_hidden < 1 || dpl_hidden < 1) {
    throw ValidationError("hidden sizes must be >= 1");
  }
  if (!(lambda_physics >= 0.0)) throw ValidationError("lambda must be >= 0");
  nn_stop.validate();
  pbm_stop.validate();
  if (bounds.empty()) throw ValidationError("at least one bounded parameter is required");
}

void ExperimentSpec::validate() const {
  if (models.empty()) throw ValidationError("experiment needs at least one model");
  if (seeds.empty()) throw ValidationError("experiment needs at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValidationError("experiment seeds must be distinct");
  }
  if (protocol == Protocol::noise) {
    if (noise_levels.empty()) throw ValidationError("noise experiment needs at least one level");
    for (int l : noise_levels) {
      if (l < 0 || l > 3) throw ValidationError("noise levels must lie in 0..3");
    }
  }
  if (protocol == Protocol::fewshot) {
    if (fewshot_k.empty()) throw ValidationError("few-shot experiment needs at least one k");
    for (auto k : fewshot_k) {
      if (k < 1) throw ValidationError("few-shot k must be >= 1");
    }
  }
}

void to_json(nlohmann::json& j, const TwinSettings& s) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& site : s.sites) {
    sites.push_back({{"site_id", site.site_id},
                     {"latitude", site.latitude},
                     {"soil_capacity_proxy", site.soil_capacity_proxy},
                     {"mean_annual_temp", site.mean_annual_temp}});
  }
  j = nlohmann::json{{"years", s.years},
                     {"start_year", s.start_year},
                     {"calibration_years", s.calibration_years},
                     {"train_fraction", s.train_fraction},
                     {"sites", sites}};
}

void from_json(const nlohmann::json& j, TwinSettings& s) {
  j.at("years").get_to(s.years);
  j.at("start_year").get_to(s.start_year);
  j.at("calibration_years").get_to(s.calibration_years);
  j.at("train_fraction").get_to(s.train_fraction);
  s.sites.clear();
  for (const auto& site : j.at("sites")) {
    s.sites.push_back({site.at("site_id").get<std::string>(), site.at("latitude").get<double>(),
                       site.at("soil_capacity_proxy").get<double>(),
                       site.at("mean_annual_temp").get<double>()});
  }
}

namespace {

nlohmann::json adam_json(const training::AdamConfig& a) {
  return {{"learning_rate", a.learning_rate},
          {"beta1", a.beta1},
          {"beta2", a.beta2},
          {"epsilon", a.epsilon}};
}

training::AdamConfig adam_from(const nlohmann::json& j) {
  return {j.at("learning_rate").get<double>(), j.at("beta1").get<double>(),
          j.at("beta2").get<double>(), j.at("epsilon").get<double>()};
}

nlohmann::json stop_json(const training::EarlyStopConfig& s) {
  return {{"patience", s.patience}, {"min_delta", s.min_delta}, {"max_epochs", s.max_epochs}};
}

training::EarlyStopConfig stop_from(const nlohmann::json& j) {
  return {j.at("patience").get<std::size_t>(), j.at("min_delta").get<double>(),
          j.at("max_epochs").get<std::size_t>()};
}

}  // namespace

void to_json(nlohmann::json& j, const ModelSettings& s) {
  nlohmann::json bounds = nlohmann::json::array();
  for (const auto& b : s.bounds) {
    bounds.push_back(
        {{"param", std::string(pbm::param_name(b.id))}, {"low", b.bound.low}, {"high", b.bound.high}});
  }
  j = nlohmann::json{{"lstm_hidden", s.lstm_hidden},
                     {"stress_hidden", s.stress_hidden},
                     {"dpl_hidden", s.dpl_hidden},
                     {"nn_adam", adam_json(s.nn_adam)},
                     {"nn_stop", stop_json(s.nn_stop)},
                     {"pbm_adam", adam_json(s.pbm_adam)},
                     {"pbm_stop", stop_json(s.pbm_stop)},
                     {"lambda_physics", s.lambda_physics},
                     {"window",
                      {{"sowing_doy", s.window.sowing_doy},
                       {"days_per_step", s.window.days_per_step},
                       {"steps", s.window.steps}}},
                     {"bounds", bounds}};
}

void from_json(const nlohmann::json& j, ModelSettings& s) {
  j.at("lstm_hidden").get_to(s.lstm_hidden);
  j.at("stress_hidden").get_to(s.stress_hidden);
  j.at("dpl_hidden").get_to(s.dpl_hidden);
  s.nn_adam = adam_from(j.at("nn_adam"));
  s.nn_stop = stop_from(j.at("nn_stop"));
  s.pbm_adam = adam_from(j.at("pbm_adam"));
  s.pbm_stop = stop_from(j.at("pbm_stop"));
  j.at("lambda_physics").get_to(s.lambda_physics);
  const auto& w = j.at("window");
  w.at("sowing_doy").get_to(s.window.sowing_doy);
  w.at("days_per_step").get_to(s.window.days_per_step);
  w.at("steps").get_to(s.window.steps);
  s.bounds.clear();
  for (const auto& b : j.at("bounds")) {
    s.bounds.push_back({pbm::param_from_name(b.at("param").get<std::string>()),
                        {b.at("low").get<double>(), b.at("high").get<double>()}});
  }
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  std::vector<std::string> models;
  for (auto m : s.models) models.push_back(model_name(m));
  j = nlohmann::json{{"protocol", protocol_name(s.protocol)},
                     {"models", models},
                     {"noise_levels", s.noise_levels},
                     {"fewshot_k", s.fewshot_k},
                     {"seeds", s.seeds},
                     {"noise_target", data::noise_target_name(s.noise_target)},
                     {"noise_base_fraction", s.noise_base_fraction}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  s.protocol = protocol_from_name(j.at("protocol").get<std::string>());
  s.models.clear();
  for (const auto& m : j.at("models")) s.models.push_back(model_from_name(m.get<std::string>()));
  j.at("noise_levels").get_to(s.noise_levels);
  j.at("fewshot_k").get_to(s.fewshot_k);
  j.at("seeds").get_to(s.seeds);
  s.noise_target = data::noise_target_from_name(j.at("noise_target").get<std::string>());
  j.at("noise_base_fraction").get_to(s.noise_base_fraction);
}

nlohmann::json provenance_of(const ExperimentConfig& config) {
  nlohmann::json families = nlohmann::json::object();
  for (auto m : config.spec.models) families[model_name(m)] = model_family(m);
  return {{"tool", "agridiff"},
          {"version", kVersion},
          {"twin", config.twin},
          {"models", config.models},
          {"spec", config.spec},
          {"seeds", config.spec.seeds},
          {"model_families", families},
          {"note",
           "training defaults, network sizes and the hybrid family labels are choices of this "
           "tool, not published values"}};
}

ExperimentConfig config_from_provenance(const nlohmann::json& provenance) {
  ExperimentConfig c;
  try {
    c.twin = provenance.at("twin").get<TwinSettings>();
    c.models = provenance.at("models").get<ModelSettings>();
    c.spec = provenance.at("spec").get<ExperimentSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed provenance header: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Twin
// ---------------------------------------------------------------------------

pbm::CropParams twin_truth(const data::SiteAttributes& site) {
  pbm::CropParams p;
  p.rue = std::clamp(3.4 - 0.1 * (site.latitude - 48.0), 1.0, 5.0);
  p.k_ext = std::clamp(0.5 + 0.02 * (site.latitude - 48.0), 0.3, 0.9);
  p.t_base = std::clamp(2.0 + 0.5 * (site.mean_annual_temp - 7.5), 0.0, 10.0);
  p.s_max = std::clamp(site.soil_capacity_proxy, 50.0, 200.0);
  return p;
}

Twin make_twin(const TwinSettings& settings, std::uint64_t seed) {
  settings.validate();
  Twin t;
  t.sites = settings.sites;
  for (const auto& site : t.sites) {
    t.truth.push_back(twin_truth(site));
    t.weather.push_back(data::generate_weather(site, settings.years, seed, settings.start_year));
    std::vector<double> y;
    for (std::size_t k = 0; k < t.weather.back().years(); ++k) {
      y.push_back(pbm::simulate_season<double>(t.weather.back().year(k), t.truth.back()).yield);
    }
    t.yields.push_back(std::move(y));
  }
  t.plan = data::split_years(static_cast<std::size_t>(settings.years), settings.calibration_years,
                             settings.train_fraction, seed);
  return t;
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

namespace {

struct Condition {
  std::string name;
  int noise_level = 0;
  std::size_t k = 0;                   // few-shot years; 0 = all
  std::optional<std::size_t> holdout;  // spatial validation site
};

struct JobResult {
  std::vector<Cell> cells;
  std::vector<ScatterRow> scatter;
};

std::vector<SiteYear> site_years(const std::vector<std::size_t>& sites,
                                 const std::vector<std::size_t>& years) {
  std::vector<SiteYear> out;
  for (auto s : sites) {
    for (auto y : years) out.push_back({s, y});
  }
  return out;
}

void add_cells(JobResult& r, const std::string& model, const Condition& c, std::uint64_t seed,
               const Predictions* p, const ModelData& d, const std::string& error) {
  const char* splits[] = {"train", "test", "validation"};
  const std::vector<SiteYear>* sets[] = {&d.train, &d.test, &d.validation};
  for (int i = 0; i < 3; ++i) {
    Cell cell{model, c.name, seed, splits[i], {}, "ok", ""};
    if (!p) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      cell.metrics = {nan, nan, sets[i]->size()};
      cell.status = "failed";
      cell.message = error;
    } else {
      const std::vector<double>& pred = i == 0 ? p->train : i == 1 ? p->test : p->validation;
      std::vector<double> obs;
      for (const auto& sy : *sets[i]) {
        // train/test metrics against what the model was fitted to; validation
        // against the clean truth
        obs.push_back(i == 2 ? d.twin->yields[sy.site][sy.year] : d.observed[sy.site][sy.year]);
      }
      cell.metrics = compute_metrics(pred, obs);
    }
    r.cells.push_back(std::move(cell));
  }
}

JobResult run_job(const ExperimentConfig& cfg, const Condition& c, std::uint64_t seed) {
  JobResult r;
  const auto& spec = cfg.spec;
  Twin twin;
  ModelData d;
  try {
    twin = make_twin(cfg.twin, seed);
    d.twin = &twin;
    const std::size_t n_sites = twin.sites.size();
    d.forcing = twin.weather;
    d.observed = twin.yields;
    data::SplitPlan plan = twin.plan;
    if (c.k > 0) plan = data::fewshot_subset(plan, c.k, seed);

    std::vector<std::size_t> train_sites;
    std::vector<std::size_t> validation_sites;
    for (std::size_t s = 0; s < n_sites; ++s) {
      if (c.holdout && *c.holdout == s) continue;
      train_sites.push_back(s);
    }
    if (c.holdout) {
      validation_sites = {*c.holdout};
    } else {
      validation_sites = train_sites;
    }
    d.train = site_years(train_sites, plan.train_years);
    d.test = site_years(train_sites, plan.test_years);
    d.validation = site_years(validation_sites, plan.validation_years);

    if (c.noise_level > 0) {
      const auto target = spec.noise_target;
      for (std::size_t s = 0; s < n_sites; ++s) {
        const std::string tag = twin.sites[s].site_id + "/" + std::to_string(c.noise_level);
        if (target != data::NoiseTarget::biomass) {
          d.forcing[s] = data::inject_noise(
              twin.weather[s], {c.noise_level, spec.noise_base_fraction,
                                data::derive_seed(seed, "noise/weather/" + tag)});
        }
        if (target != data::NoiseTarget::weather) {
          d.observed[s] = data::inject_noise(
              twin.yields[s], {c.noise_level, spec.noise_base_fraction,
                               data::derive_seed(seed, "noise/biomass/" + tag)});
        }
      }
    }
  } catch (const std::exception& e) {
    for (auto m : spec.models) add_cells(r, model_name(m), c, seed, nullptr, d, e.what());
    return r;
  }

  CellCache cache;
  for (auto m : spec.models) {
    const std::string name = model_name(m);
    try {
      const Predictions p = run_model(m, d, cfg.models, seed, cache);
      add_cells(r, name, c, seed, &p, d, "");
      for (std::size_t i = 0; i < d.validation.size(); ++i) {
        const auto& sy = d.validation[i];
        r.scatter.push_back({cfg.twin.start_year + static_cast<int>(sy.year),
                             twin.yields[sy.site][sy.year], p.validation[i], name, c.name});
      }
      spdlog::info("{} {} seed {}: done in {} epochs", name, c.name, seed, p.epochs);
    } catch (const std::exception& e) {
      spdlog::warn("{} {} seed {} failed: {}", name, c.name, seed, e.what());
      add_cells(r, name, c, seed, nullptr, d, e.what());
    }
  }
  return r;
}

ExperimentReport run_conditions(const ExperimentConfig& cfg, const std::vector<Condition>& conds) {
  cfg.twin.validate();
  cfg.models.validate();
  cfg.spec.validate();
  const auto& seeds = cfg.spec.seeds;
  const std::size_t n_jobs = conds.size() * seeds.size();
  std::vector<JobResult> results(n_jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < n_jobs; i = next++) {
      results[i] = run_job(cfg, conds[i / seeds.size()], seeds[i % seeds.size()]);
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.jobs, n_jobs));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentReport report;
  report.provenance = provenance_of(cfg);
  // order cells by model, then condition, then seed
  for (auto m : cfg.spec.models) {
    const std::string name = model_name(m);
    for (const auto& r : results) {
      for (const auto& cell : r.cells) {
        if (cell.model == name) report.cells.push_back(cell);
      }
      for (const auto& row : r.scatter) {
        if (row.model == name) report.scatter.push_back(row);
      }
    }
  }
  report.summaries = summarize(report.cells);
  return report;
}

}  // namespace

std::vector<Summary> summarize(const std::vector<Cell>& cells) {
  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& c : cells) {
    const auto key = std::make_tuple(c.model, c.condition, c.split);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<Summary> out;
  for (const auto& [model, condition, split] : keys) {
    std::vector<double> r2;
    std::vector<double> rmse;
    for (const auto& c : cells) {
      if (c.model == model && c.condition == condition && c.split == split && c.status == "ok") {
        r2.push_back(c.metrics.r_squared);
        rmse.push_back(c.metrics.rmse);
      }
    }
    out.push_back({model, condition, split, "r2", boxplot_summary(r2)});
    out.push_back({model, condition, split, "rmse", boxplot_summary(rmse)});
  }
  return out;
}

double ExperimentReport::median(const std::string& model, const std::string& condition,
                                const std::string& metric) const {
  for (const auto& s : summaries) {
    if (s.model == model && s.condition == condition && s.split == "validation" &&
        s.metric == metric) {
      return s.box.median;
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

ExperimentReport run_noise_experiment(const ExperimentConfig& config) {
  if (config.spec.protocol != Protocol::noise) throw ValidationError("spec protocol is not noise");
  std::vector<Condition> conds;
  for (int l : config.spec.noise_levels) conds.push_back({"level=" + std::to_string(l), l, 0, {}});
  return run_conditions(config, conds);
}

ExperimentReport run_fewshot_experiment(const ExperimentConfig& config) {
  if (config.spec.protocol != Protocol::fewshot) {
    throw ValidationError("spec protocol is not fewshot");
  }
  std::vector<Condition> conds;
  for (auto k : config.spec.fewshot_k) conds.push_back({"k=" + std::to_string(k), 0, k, {}});
  return run_conditions(config, conds);
}

ExperimentReport run_spatial_experiment(const ExperimentConfig& config) {
  if (config.spec.protocol != Protocol::spatial) {
    throw ValidationError("spec protocol is not spatial");
  }
  const auto folds = data::spatial_folds(config.twin.sites);
  std::vector<Condition> conds;
  for (const auto& f : folds) {
    const auto it = std::find_if(config.twin.sites.begin(), config.twin.sites.end(),
                                 [&](const data::SiteAttributes& s) {
                                   return s.site_id == f.validation_site.site_id;
                                 });
    conds.push_back({"fold=" + f.validation_site.site_id, 0, 0,
                     static_cast<std::size_t>(it - config.twin.sites.begin())});
  }
  return run_conditions(config, conds);
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  switch (config.spec.protocol) {
    case Protocol::noise: return run_noise_experiment(config);
    case Protocol::fewshot: return run_fewshot_experiment(config);
    case Protocol::spatial: return run_spatial_experiment(config);
  }
  throw ValidationError("unknown protocol");
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

namespace {

nlohmann::json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

std::string fmt_double(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

nlohmann::json report_json(const ExperimentReport& report) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    nlohmann::json j{{"model", c.model},
                     {"condition", c.condition},
                     {"seed", c.seed},
                     {"split", c.split},
                     {"r2", number(c.metrics.r_squared)},
                     {"rmse", number(c.metrics.rmse)},
                     {"n", c.metrics.n},
                     {"status", c.status}};
    if (!c.message.empty()) j["message"] = c.message;
    cells.push_back(std::move(j));
  }
  nlohmann::json summaries = nlohmann::json::array();
  for (const auto& s : report.summaries) {
    summaries.push_back({{"model", s.model},
                         {"condition", s.condition},
                         {"split", s.split},
                         {"metric", s.metric},
                         {"n", s.box.n},
                         {"min", number(s.box.min)},
                         {"q1", number(s.box.q1)},
                         {"median", number(s.box.median)},
                         {"q3", number(s.box.q3)},
                         {"max", number(s.box.max)}});
  }
  return {{"spec", report.provenance.at("spec")},
          {"provenance", report.provenance},
          {"cells", cells},
          {"summaries", summaries}};
}

std::string report_text(const ExperimentReport& report) { return report_json(report).dump(2) + "\n"; }

void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    return os;
  };
  {
    auto os = open("report.json");
    os << report_text(report);
  }
  {
    auto os = open("fig7_scatter.csv");
    os << "year,observed,predicted,model,level\n";
    for (const auto& r : report.scatter) {
      os << r.year << ',' << fmt_double(r.observed) << ',' << fmt_double(r.predicted) << ','
         << r.model << ',' << r.level << '\n';
    }
  }
  {
    auto os = open("fig9_box.csv");
    os << "model,fold,split,rmse\n";
    for (const auto& c : report.cells) {
      os << c.model << ',' << c.condition << ',' << c.split << ',' << fmt_double(c.metrics.rmse)
         << '\n';
    }
  }
}

}  // namespace agridiff::eval
