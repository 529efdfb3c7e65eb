#pragma once

/**
 * @file cli.hpp
 * @brief Run configuration (defaults < config file < flags) and the
 * command-line entry point.
 */

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agridiff/experiment.hpp"

namespace agridiff::cli {

/// Flat view of a TOML-style file: `[a.b]` sections prefix their keys, so
/// `x = 1` under `[a.b]` is stored as "a.b.x". Values keep their literal text
/// with quotes removed; arrays are stored as comma-joined items.
struct ConfigFile {
  std::map<std::string, std::string> values;

  static ConfigFile parse(std::istream& is, const std::string& source = "<config>");
  /// Throws ValidationError when the file is missing or malformed.
  static ConfigFile load(const std::filesystem::path& path);
};

struct RunConfig {
  eval::ExperimentConfig experiment;
  std::vector<double> lambda_sweep{0.1};
  std::uint64_t seed = 42;
  std::filesystem::path out = "runs/latest";
  pbm::CropParams crop;  // parameters for `simulate`

  RunConfig();
  /// Applies every key of `file`; unknown keys are rejected.
  void apply(const ConfigFile& file);
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);

/// Documentation of every configuration key, shown in --help.
std::string config_keys_help();

/// Parses a comma list ("1,2,3") into values; throws ValidationError naming
/// `what` on malformed items.
std::vector<double> parse_double_list(const std::string& text, const std::string& what);
std::vector<std::int64_t> parse_int_list(const std::string& text, const std::string& what);

/// Seeds from "--seeds": a single integer N means 1..N, a comma list is taken
/// literally.
std::vector<std::uint64_t> parse_seeds(const std::string& text);

/// Full command-line entry point. Exit 0 on success, 1 on validation failure
/// or bad usage, 2 on runtime abort.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace agridiff::cli
