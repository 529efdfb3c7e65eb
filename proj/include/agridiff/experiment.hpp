#pragma once

/**
 * @file experiment.hpp
 * @brief Synthetic twin, model runners and the noise / few-shot / spatial
 * experiment protocols.
 */

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agridiff/data.hpp"
#include "agridiff/hybrid.hpp"
#include "agridiff/metrics.hpp"
#include "agridiff/pbm.hpp"
#include "agridiff/training.hpp"

namespace agridiff::eval {

inline constexpr const char* kVersion = "0.3.0";

enum class ModelKind {
  PurePBM,
  UncalibratedPBM,
  PureDL,
  EmbeddedNnPbm,
  MassBalanceDl,
  SurrogateDpl,
  PhysicsResidualDl
};

std::string model_name(ModelKind m);
ModelKind model_from_name(const std::string& name);
bool is_hybrid(ModelKind m);
/// "baseline", "DL-informed PBM" or "PBM-informed DL".
std::string model_family(ModelKind m);
std::vector<ModelKind> all_models();
std::vector<ModelKind> hybrid_models();

enum class Protocol { noise, fewshot, spatial };
std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TwinSettings {
  int years = 68;
  int start_year = 1951;
  std::size_t calibration_years = 48;
  double train_fraction = 0.8;
  std::vector<data::SiteAttributes> sites = data::default_sites();

  void validate() const;
};

struct ModelSettings {
  std::size_t lstm_hidden = 16;
  std::size_t stress_hidden = 8;
  std::size_t dpl_hidden = 8;
  training::AdamConfig nn_adam{3e-3};
  training::EarlyStopConfig nn_stop{20, 1e-4, 300};
  training::AdamConfig pbm_adam{0.05};
  training::EarlyStopConfig pbm_stop{20, 1e-5, 150};
  double lambda_physics = 0.1;
  hybrid::SequenceWindow window;
  std::vector<training::ParamBound> bounds = training::default_param_bounds();

  void validate() const;
};

struct ExperimentSpec {
  Protocol protocol = Protocol::noise;
  std::vector<ModelKind> models = all_models();
  std::vector<int> noise_levels{1, 2, 3};
  std::vector<std::size_t> fewshot_k{7, 3, 1};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  data::NoiseTarget noise_target = data::NoiseTarget::weather;
  double noise_base_fraction = 0.1;

  void validate() const;
};

struct ExperimentConfig {
  TwinSettings twin;
  ModelSettings models;
  ExperimentSpec spec;
  std::size_t jobs = 1;  // not part of the provenance: results do not depend on it
};

void to_json(nlohmann::json& j, const TwinSettings& s);
void from_json(const nlohmann::json& j, TwinSettings& s);
void to_json(nlohmann::json& j, const ModelSettings& s);
void from_json(const nlohmann::json& j, ModelSettings& s);
void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

// ---------------------------------------------------------------------------
// Synthetic twin
// ---------------------------------------------------------------------------

/// Site-specific true parameters from static attributes:
///   rue = 3.4 - 0.1 (lat - 48), k_ext = 0.5 + 0.02 (lat - 48),
///   t_base = 2 + 0.5 (temp - 7.5), s_max = soil capacity.
pbm::CropParams twin_truth(const data::SiteAttributes& site);

struct Twin {
  std::vector<data::SiteAttributes> sites;
  std::vector<pbm::CropParams> truth;
  std::vector<data::WeatherSeries> weather;
  std::vector<std::vector<double>> yields;  // [site][year], g/m2
  data::SplitPlan plan;
};

Twin make_twin(const TwinSettings& settings, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Model runners
// ---------------------------------------------------------------------------

struct SiteYear {
  std::size_t site = 0;
  std::size_t year = 0;
};

/// What a model sees during one experiment cell.
struct ModelData {
  const Twin* twin = nullptr;
  std::vector<data::WeatherSeries> forcing;    // training-time weather per site
  std::vector<std::vector<double>> observed;   // training-time targets [site][year]
  std::vector<SiteYear> train;
  std::vector<SiteYear> test;        // early stopping
  std::vector<SiteYear> validation;  // clean weather, true yields

  std::span<const pbm::DailyWeather> train_weather(const SiteYear& sy) const;
  std::span<const pbm::DailyWeather> clean_weather(const SiteYear& sy) const;
  std::vector<std::size_t> training_sites() const;
};

struct Predictions {
  std::vector<double> train;
  std::vector<double> test;
  std::vector<double> validation;
  std::size_t epochs = 0;
};

/// Per-cell memo shared by the models of one (condition, seed) job.
struct CellCache {
  std::optional<std::vector<pbm::CropParams>> calibrated;  // per site
};

Predictions run_model(ModelKind kind, const ModelData& data, const ModelSettings& settings,
                      std::uint64_t seed, CellCache& cache);

/// Per-site calibrated parameters; sites without training years receive the
/// average of the calibrated sites in raw (unbounded) space.
std::vector<pbm::CropParams> calibrate_sites(const ModelData& data, const ModelSettings& settings);

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct Cell {
  std::string model;
  std::string condition;
  std::uint64_t seed = 0;
  std::string split;  // train, test or validation
  Metrics metrics;
  std::string status = "ok";
  std::string message;
};

struct Summary {
  std::string model;
  std::string condition;
  std::string split;
  std::string metric;  // r2 or rmse
  BoxSummary box;
};

struct ScatterRow {
  int year = 0;
  double observed = 0.0;
  double predicted = 0.0;
  std::string model;
  std::string level;
};

struct ExperimentReport {
  nlohmann::json provenance;
  std::vector<Cell> cells;
  std::vector<Summary> summaries;
  std::vector<ScatterRow> scatter;

  /// Median of a validation metric across seeds, NaN when absent.
  double median(const std::string& model, const std::string& condition,
                const std::string& metric) const;
};

nlohmann::json provenance_of(const ExperimentConfig& config);
ExperimentConfig config_from_provenance(const nlohmann::json& provenance);

ExperimentReport run_experiment(const ExperimentConfig& config);
ExperimentReport run_noise_experiment(const ExperimentConfig& config);
ExperimentReport run_fewshot_experiment(const ExperimentConfig& config);
ExperimentReport run_spatial_experiment(const ExperimentConfig& config);

/// Quartile summaries per (model, condition, split, metric) over seeds.
std::vector<Summary> summarize(const std::vector<Cell>& cells);

nlohmann::json report_json(const ExperimentReport& report);
/// Serialized report: 2-space indented JSON followed by a newline.
std::string report_text(const ExperimentReport& report);
/// Writes report.json, fig7_scatter.csv and fig9_box.csv into `dir`.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir);

}  // namespace agridiff::eval
