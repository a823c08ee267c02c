#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acrec/evaluation.hpp"
#include "acrec/simulation.hpp"
#include "acrec/training.hpp"

namespace acrec {

// TOML-style key/value file: [section] headers, key = value lines, where a
// value is a quoted string, bool, number, or a flat [a, b, c] list. Unknown
// keys are rejected at binding time. Environment variables of the form
// ACREC_<SECTION>_<KEY> override file values (for CI sweeps).
struct ConfigValue {
  enum class Type { Int, Float, Bool, String, List };
  Type type = Type::String;
  long long i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;
  std::vector<ConfigValue> list;
};

using ConfigSection = std::map<std::string, ConfigValue>;

struct ParsedConfig {
  std::map<std::string, ConfigSection> sections;  // "" holds top-level keys
};

ParsedConfig parse_config_text(const std::string& text, const std::string& origin);
ParsedConfig parse_config_file(const std::string& path);

struct DataSection {
  std::string path;
  std::string separator = "::";
  int min_n = 20;
  int max_n = 1000;
};

struct SimSection {
  SimConfig cfg;
  std::string input_dir;  // prepared split dir with the explicit data
  int min_n = 3;          // click filtering before the click split
  int max_n = 1000000;
  int sweep = 1;          // independent oracle datasets (seed sweep)
};

struct TrainSection {
  TrainConfig cfg;
  std::string mode = "acl";  // erm | ps | acl
  ModelKind f_kind = ModelKind::MF;
  ModelKind g_kind = ModelKind::MF;
  std::string data_dir;  // split directory to train on
  std::vector<int> layer_spec;
  bool alpha_explicit = false;
  bool optimizer_explicit = false;
};

struct EvalSection {
  EvalProtocol protocol;
  std::vector<Weighting> weightings = {Weighting::Standard};
  std::string checkpoint_dir;
  std::string split_dir;
  std::string oracle_table;  // exposure table; defaults to split_dir/exposure_split.tsv
  std::string label;         // row label for report aggregation
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  DataSection data;
  SimSection sim;
  TrainSection train;
  EvalSection eval;
  bool has_data = false;
  bool has_sim = false;
  bool has_train = false;
  bool has_eval = false;
};

// Parse + env overrides + typed binding.
RunConfig load_run_config(const std::string& path);

// Deterministic snapshot of every resolved value; written into each run
// directory so the run can be reproduced from the directory alone.
std::string resolved_config_json(const RunConfig& rc);

}  // namespace acrec
