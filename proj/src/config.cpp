#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "agridiff/cli.hpp"

namespace agridiff::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  return std::all_of(k.begin(), k.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
  });
}

std::string unquote(const std::string& v, const std::string& where) {
  if (v.size() >= 2 && v.front() == '"') {
    if (v.back() != '"') throw ValidationError(where + ": unterminated string");
    return v.substr(1, v.size() - 2);
  }
  return v;
}

/// Removes a trailing "# comment" outside of quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double to_double(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ValidationError(what + ": '" + t + "' is not a number");
  }
  return v;
}

std::int64_t to_int(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  std::int64_t v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ValidationError(what + ": '" + t + "' is not an integer");
  }
  return v;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::size_t to_count(const std::string& s, const std::string& what, std::int64_t min = 0) {
  const auto v = to_int(s, what);
  if (v < min) throw ValidationError(what + " must be >= " + std::to_string(min));
  return static_cast<std::size_t>(v);
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& is, const std::string& source) {
  ConfigFile f;
  std::string section;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    const std::string where = source + ":" + std::to_string(n);
    const std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ValidationError(where + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (!valid_key(section)) throw ValidationError(where + ": invalid section name");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (!valid_key(key)) throw ValidationError(where + ": invalid key '" + key + "'");
    if (value.empty()) throw ValidationError(where + ": missing value for '" + key + "'");
    if (value.front() == '[') {
      if (value.back() != ']') throw ValidationError(where + ": unterminated array");
      std::string joined;
      for (const auto& item : split_list(value.substr(1, value.size() - 2))) {
        if (item.empty()) continue;
        if (!joined.empty()) joined += ',';
        joined += unquote(item, where);
      }
      value = joined;
    } else {
      value = unquote(value, where);
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (!f.values.emplace(full, value).second) {
      throw ValidationError(where + ": duplicate key '" + full + "'");
    }
  }
  return f;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("config file not found: " + path.string());
  return parse(is, path.string());
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(to_double(item, what));
  if (out.empty()) throw ValidationError(what + ": empty list");
  return out;
}

std::vector<std::int64_t> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<std::int64_t> out;
  for (const auto& item : split_list(text)) out.push_back(to_int(item, what));
  if (out.empty()) throw ValidationError(what + ": empty list");
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  const auto items = parse_int_list(text, "seeds");
  for (auto v : items) {
    if (v < 0) throw ValidationError("seeds must be non-negative");
  }
  std::vector<std::uint64_t> out;
  if (items.size() == 1 && text.find(',') == std::string::npos) {
    if (items[0] < 1) throw ValidationError("--seeds N needs N >= 1");
    for (std::int64_t s = 1; s <= items[0]; ++s) out.push_back(static_cast<std::uint64_t>(s));
  } else {
    for (auto v : items) out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

RunConfig::RunConfig() = default;

namespace {

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::vector<std::tuple<std::string, std::string, Setter>>& setters() {
  static const std::vector<std::tuple<std::string, std::string, Setter>> table = {
      {"twin.years", "years of synthetic weather per site (68)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.twin.years = static_cast<int>(to_count(v, k, 2));
       }},
      {"twin.start_year", "calendar year of the first simulated year (1951)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.twin.start_year = static_cast<int>(to_int(v, k));
       }},
      {"twin.calibration_years", "leading years used for training/testing (48)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.twin.calibration_years = to_count(v, k, 2);
       }},
      {"twin.train_fraction", "share of calibration years used for training (0.8)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.twin.train_fraction = to_double(v, k);
       }},
      {"model.lstm_hidden", "LSTM hidden size (16)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.lstm_hidden = to_count(v, k, 1);
       }},
      {"model.stress_hidden", "hidden width of the embedded stress network (8)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.stress_hidden = to_count(v, k, 1);
       }},
      {"model.dpl_hidden", "hidden width of the attribute-to-parameter network (8)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.dpl_hidden = to_count(v, k, 1);
       }},
      {"model.lambda", "physics/penalty weight, or a list to sweep ([0.1])",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.lambda_sweep = parse_double_list(v, k);
       }},
      {"model.days_per_step", "days aggregated into one sequence step (7)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.window.days_per_step = to_count(v, k, 1);
       }},
      {"model.steps", "sequence steps per season (39)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.window.steps = to_count(v, k, 1);
       }},
      {"training.nn_learning_rate", "Adam step for network models (0.003)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.nn_adam.learning_rate = to_double(v, k);
       }},
      {"training.nn_patience", "early-stopping patience for network models (20)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.nn_stop.patience = to_count(v, k);
       }},
      {"training.nn_min_delta", "minimum test-loss improvement for network models (1e-4)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.nn_stop.min_delta = to_double(v, k);
       }},
      {"training.nn_max_epochs", "epoch cap for network models (300)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.nn_stop.max_epochs = to_count(v, k, 1);
       }},
      {"training.pbm_learning_rate", "Adam step for simulator-based models (0.05)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.pbm_adam.learning_rate = to_double(v, k);
       }},
      {"training.pbm_patience", "early-stopping patience for simulator-based models (20)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.pbm_stop.patience = to_count(v, k);
       }},
      {"training.pbm_min_delta", "minimum improvement for simulator-based models (1e-5)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.pbm_stop.min_delta = to_double(v, k);
       }},
      {"training.pbm_max_epochs", "epoch cap for simulator-based models (150)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.models.pbm_stop.max_epochs = to_count(v, k, 1);
       }},
      {"experiment.models", "comma list of models (all seven)",
       [](RunConfig& c, const std::string& v, const std::string&) {
         c.experiment.spec.models.clear();
         for (const auto& m : split_list(v)) c.experiment.spec.models.push_back(eval::model_from_name(m));
       }},
      {"experiment.levels", "noise levels ([1, 2, 3])",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.spec.noise_levels.clear();
         for (auto l : parse_int_list(v, k)) c.experiment.spec.noise_levels.push_back(static_cast<int>(l));
       }},
      {"experiment.fewshot", "few-shot training years ([7, 3, 1])",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.spec.fewshot_k.clear();
         for (auto l : parse_int_list(v, k)) {
           if (l < 1) throw ValidationError(k + ": k must be >= 1");
           c.experiment.spec.fewshot_k.push_back(static_cast<std::size_t>(l));
         }
       }},
      {"experiment.seeds", "seed count N (1..N) or explicit list (5)",
       [](RunConfig& c, const std::string& v, const std::string&) {
         c.experiment.spec.seeds = parse_seeds(v);
       }},
      {"experiment.noise_target", "weather, biomass or both (weather)",
       [](RunConfig& c, const std::string& v, const std::string&) {
         c.experiment.spec.noise_target = data::noise_target_from_name(v);
       }},
      {"experiment.noise_fraction", "noise sd per level as a share of the variable sd (0.1)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.spec.noise_base_fraction = to_double(v, k);
       }},
      {"run.seed", "seed for single runs (42)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         const auto s = to_int(v, k);
         if (s < 0) throw ValidationError(k + " must be non-negative");
         c.seed = static_cast<std::uint64_t>(s);
       }},
      {"run.out", "output directory (runs/latest)",
       [](RunConfig& c, const std::string& v, const std::string&) { c.out = v; }},
      {"run.jobs", "worker threads for experiment cells (logical processors)",
       [](RunConfig& c, const std::string& v, const std::string& k) {
         c.experiment.jobs = to_count(v, k, 1);
       }},
  };
  return table;
}

}  // namespace

void RunConfig::apply(const ConfigFile& file) {
  for (const auto& [key, value] : file.values) {
    if (key.rfind("crop.", 0) == 0) {
      crop[pbm::param_from_name(key.substr(5))] = to_double(value, key);
      continue;
    }
    if (key.rfind("model.bounds.", 0) == 0) {
      const auto id = pbm::param_from_name(key.substr(13));
      const auto lh = parse_double_list(value, key);
      if (lh.size() != 2) throw ValidationError(key + ": expected [low, high]");
      auto& bounds = experiment.models.bounds;
      const auto it = std::find_if(bounds.begin(), bounds.end(),
                                   [id](const training::ParamBound& b) { return b.id == id; });
      if (it == bounds.end()) {
        bounds.push_back({id, {lh[0], lh[1]}});
      } else {
        it->bound = {lh[0], lh[1]};
      }
      continue;
    }
    const auto& table = setters();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const auto& e) { return std::get<0>(e) == key; });
    if (it == table.end()) throw ValidationError("unknown configuration key '" + key + "'");
    std::get<2>(*it)(*this, value, key);
  }
}

void RunConfig::validate() const {
  experiment.twin.validate();
  experiment.models.validate();
  experiment.spec.validate();
  pbm::validate(crop);
  for (double l : lambda_sweep) {
    if (!(l >= 0.0)) throw ValidationError("lambda values must be >= 0");
  }
  for (const auto& b : experiment.models.bounds) {
    if (!(b.bound.low <= b.bound.high)) {
      throw ValidationError("bound for " + std::string(pbm::param_name(b.id)) + " has low > high");
    }
  }
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json crop = nlohmann::json::object();
  for (std::size_t i = 0; i < pbm::kParamCount; ++i) {
    const auto id = static_cast<pbm::ParamId>(i);
    crop[std::string(pbm::param_name(id))] = c.crop[id];
  }
  return {{"twin", c.experiment.twin},
          {"models", c.experiment.models},
          {"spec", c.experiment.spec},
          {"lambda_sweep", c.lambda_sweep},
          {"seed", c.seed},
          {"crop", crop}};
}

std::string config_keys_help() {
  std::string s =
      "Configuration file keys (TOML-style; [section] headers prefix keys):\n";
  for (const auto& [key, doc, setter] : setters()) {
    s += "  " + key;
    s += std::string(key.size() < 28 ? 28 - key.size() : 1, ' ');
    s += doc + "\n";
  }
  s += "  crop.<param>                parameter value for simulate (t_base, rue, ...)\n";
  s += "  model.bounds.<param>        [low, high] trainable range (rue, k_ext, t_base, s_max)\n";
  return s;
}

}  // namespace agridiff::cli
