#include "acrec/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace acrec {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

ConfigValue parse_scalar(const std::string& raw, const std::string& where) {
  ConfigValue v;
  const std::string t = trim(raw);
  if (t.empty()) throw ConfigError(where + ": empty value");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') throw ConfigError(where + ": unterminated string");
    v.type = ConfigValue::Type::String;
    v.s = t.substr(1, t.size() - 2);
    return v;
  }
  if (t == "true" || t == "false") {
    v.type = ConfigValue::Type::Bool;
    v.b = t == "true";
    return v;
  }
  try {
    std::size_t used = 0;
    long long i = std::stoll(t, &used);
    if (used == t.size()) {
      v.type = ConfigValue::Type::Int;
      v.i = i;
      return v;
    }
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    double f = std::stod(t, &used);
    if (used == t.size()) {
      v.type = ConfigValue::Type::Float;
      v.f = f;
      return v;
    }
  } catch (const std::exception&) {
  }
  // Bare words read as strings so separators like :: need no quoting.
  v.type = ConfigValue::Type::String;
  v.s = t;
  return v;
}

ConfigValue parse_value(const std::string& raw, const std::string& where) {
  const std::string t = trim(raw);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') throw ConfigError(where + ": unterminated list");
    ConfigValue v;
    v.type = ConfigValue::Type::List;
    std::string body = t.substr(1, t.size() - 2);
    std::string cur;
    bool quoted = false;
    for (char c : body) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        if (!trim(cur).empty()) v.list.push_back(parse_scalar(cur, where));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) v.list.push_back(parse_scalar(cur, where));
    return v;
  }
  return parse_scalar(raw, where);
}

}  // namespace

ParsedConfig parse_config_text(const std::string& text, const std::string& origin) {
  ParsedConfig out;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      out.sections[section];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (out.sections[section].count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    out.sections[section][key] = parse_value(line.substr(eq + 1), where);
  }
  return out;
}

ParsedConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

namespace {

long long as_int(const ConfigValue& v, const std::string& where) {
  if (v.type != ConfigValue::Type::Int) throw ConfigError(where + ": expected an integer");
  return v.i;
}

double as_double(const ConfigValue& v, const std::string& where) {
  if (v.type == ConfigValue::Type::Int) return static_cast<double>(v.i);
  if (v.type == ConfigValue::Type::Float) return v.f;
  throw ConfigError(where + ": expected a number");
}

bool as_bool(const ConfigValue& v, const std::string& where) {
  if (v.type != ConfigValue::Type::Bool) throw ConfigError(where + ": expected true or false");
  return v.b;
}

std::string as_string(const ConfigValue& v, const std::string& where) {
  if (v.type != ConfigValue::Type::String) throw ConfigError(where + ": expected a string");
  return v.s;
}

std::vector<int> as_int_list(const ConfigValue& v, const std::string& where) {
  if (v.type != ConfigValue::Type::List) throw ConfigError(where + ": expected a list");
  std::vector<int> out;
  for (const ConfigValue& e : v.list) out.push_back(static_cast<int>(as_int(e, where)));
  return out;
}

std::vector<std::string> as_string_list(const ConfigValue& v, const std::string& where) {
  if (v.type != ConfigValue::Type::List) throw ConfigError(where + ": expected a list");
  std::vector<std::string> out;
  for (const ConfigValue& e : v.list) out.push_back(as_string(e, where));
  return out;
}

struct Binder {
  std::string section;
  std::map<std::string, std::function<void(const ConfigValue&, const std::string&)>> setters;

  explicit Binder(std::string name) : section(std::move(name)) {}

  void bind(const std::string& key,
            std::function<void(const ConfigValue&, const std::string&)> fn) {
    setters[key] = std::move(fn);
  }

  // File values first, then environment overrides (ACREC_<SECTION>_<KEY>).
  void apply(const ParsedConfig& pc) {
    auto it = pc.sections.find(section);
    if (it != pc.sections.end()) {
      for (const auto& [key, value] : it->second) {
        auto s = setters.find(key);
        if (s == setters.end()) {
          throw ConfigError("unknown key '" + key + "' in [" + section + "]");
        }
        s->second(value, "[" + section + "] " + key);
      }
    }
    for (auto& [key, setter] : setters) {
      std::string env_name = "ACREC_" + section + "_" + key;
      std::transform(env_name.begin(), env_name.end(), env_name.begin(),
                     [](unsigned char c) { return std::toupper(c); });
      if (const char* env = std::getenv(env_name.c_str())) {
        setter(parse_value(env, env_name), env_name);
      }
    }
  }
};

}  // namespace

RunConfig load_run_config(const std::string& path) {
  ParsedConfig pc = parse_config_file(path);
  RunConfig rc;

  for (const auto& [name, _] : pc.sections) {
    if (name != "" && name != "data" && name != "sim" && name != "train" &&
        name != "eval" && name != "output") {
      throw ConfigError("unknown section [" + name + "]");
    }
  }
  rc.has_data = pc.sections.count("data") > 0;
  rc.has_sim = pc.sections.count("sim") > 0;
  rc.has_train = pc.sections.count("train") > 0;
  rc.has_eval = pc.sections.count("eval") > 0;

  Binder top("");
  top.bind("seed", [&](const ConfigValue& v, const std::string& w) {
    rc.seed = static_cast<std::uint64_t>(as_int(v, w));
  });
  top.apply(pc);

  Binder output("output");
  output.bind("dir", [&](const ConfigValue& v, const std::string& w) { rc.out_dir = as_string(v, w); });
  output.apply(pc);

  Binder data("data");
  data.bind("path", [&](const ConfigValue& v, const std::string& w) { rc.data.path = as_string(v, w); });
  data.bind("separator", [&](const ConfigValue& v, const std::string& w) {
    std::string s = as_string(v, w);
    if (s == "tab" || s == "\\t") s = "\t";
    rc.data.separator = s;
  });
  data.bind("min_n", [&](const ConfigValue& v, const std::string& w) { rc.data.min_n = static_cast<int>(as_int(v, w)); });
  data.bind("max_n", [&](const ConfigValue& v, const std::string& w) { rc.data.max_n = static_cast<int>(as_int(v, w)); });
  data.apply(pc);

  Binder sim("sim");
  sim.bind("d_sim", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.d_sim = static_cast<int>(as_int(v, w)); });
  sim.bind("sigma1", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.sigma1 = as_double(v, w); });
  sim.bind("sigma2", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.sigma2 = as_double(v, w); });
  sim.bind("kappa", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.kappa = as_double(v, w); });
  sim.bind("fit_epochs", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.fit_epochs = static_cast<int>(as_int(v, w)); });
  sim.bind("fit_lr", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.fit_lr = as_double(v, w); });
  sim.bind("fit_negs", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.fit_negs = static_cast<int>(as_int(v, w)); });
  sim.bind("occurrence_fit_epochs", [&](const ConfigValue& v, const std::string& w) {
    rc.sim.cfg.occurrence_fit_epochs = static_cast<int>(as_int(v, w));
  });
  sim.bind("fit_l2", [&](const ConfigValue& v, const std::string& w) { rc.sim.cfg.fit_l2 = as_double(v, w); });
  sim.bind("input_dir", [&](const ConfigValue& v, const std::string& w) { rc.sim.input_dir = as_string(v, w); });
  sim.bind("min_n", [&](const ConfigValue& v, const std::string& w) { rc.sim.min_n = static_cast<int>(as_int(v, w)); });
  sim.bind("max_n", [&](const ConfigValue& v, const std::string& w) { rc.sim.max_n = static_cast<int>(as_int(v, w)); });
  sim.bind("sweep", [&](const ConfigValue& v, const std::string& w) { rc.sim.sweep = static_cast<int>(as_int(v, w)); });
  sim.apply(pc);

  Binder train("train");
  train.bind("mode", [&](const ConfigValue& v, const std::string& w) {
    const std::string m = as_string(v, w);
    if (m != "erm" && m != "ps" && m != "acl") throw ConfigError(w + ": mode must be erm|ps|acl");
    rc.train.mode = m;
  });
  train.bind("f_kind", [&](const ConfigValue& v, const std::string& w) { rc.train.f_kind = model_kind_from_string(as_string(v, w)); });
  train.bind("g_kind", [&](const ConfigValue& v, const std::string& w) { rc.train.g_kind = model_kind_from_string(as_string(v, w)); });
  train.bind("data_dir", [&](const ConfigValue& v, const std::string& w) { rc.train.data_dir = as_string(v, w); });
  train.bind("layer_spec", [&](const ConfigValue& v, const std::string& w) { rc.train.layer_spec = as_int_list(v, w); });
  train.bind("hidden_dim", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.hidden_dim = static_cast<int>(as_int(v, w)); });
  train.bind("r_theta", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.r_theta = as_double(v, w); });
  train.bind("r_psi", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.r_psi = as_double(v, w); });
  train.bind("d_theta", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.d_theta = as_double(v, w); });
  train.bind("d_psi", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.d_psi = as_double(v, w); });
  train.bind("alpha", [&](const ConfigValue& v, const std::string& w) {
    rc.train.cfg.alpha = as_double(v, w);
    rc.train.alpha_explicit = true;
  });
  train.bind("reg", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.reg_kind = regularizer_from_string(as_string(v, w)); });
  train.bind("mu", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.mu = as_double(v, w); });
  train.bind("batch_size", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.batch_size = static_cast<int>(as_int(v, w)); });
  train.bind("negs_per_pos", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.negs_per_pos = static_cast<int>(as_int(v, w)); });
  train.bind("max_epochs", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.max_epochs = static_cast<int>(as_int(v, w)); });
  train.bind("patience", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.patience = static_cast<int>(as_int(v, w)); });
  train.bind("objective_tol", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.objective_tol = as_double(v, w); });
  train.bind("l2", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.l2 = as_double(v, w); });
  train.bind("optimizer", [&](const ConfigValue& v, const std::string& w) {
    rc.train.cfg.optimizer = optimizer_from_string(as_string(v, w));
    rc.train.optimizer_explicit = true;
  });
  train.bind("train_beta", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.train_beta = as_bool(v, w); });
  train.bind("eval_negatives", [&](const ConfigValue& v, const std::string& w) { rc.train.cfg.eval_negatives = static_cast<int>(as_int(v, w)); });
  train.apply(pc);

  Binder eval("eval");
  eval.bind("n_eval_negatives", [&](const ConfigValue& v, const std::string& w) { rc.eval.protocol.n_eval_negatives = static_cast<int>(as_int(v, w)); });
  eval.bind("cutoffs", [&](const ConfigValue& v, const std::string& w) { rc.eval.protocol.cutoffs = as_int_list(v, w); });
  eval.bind("self_normalize", [&](const ConfigValue& v, const std::string& w) { rc.eval.protocol.self_normalize = as_bool(v, w); });
  eval.bind("mu", [&](const ConfigValue& v, const std::string& w) { rc.eval.protocol.mu = as_double(v, w); });
  eval.bind("repetitions", [&](const ConfigValue& v, const std::string& w) { rc.eval.protocol.repetitions = static_cast<int>(as_int(v, w)); });
  eval.bind("full_catalog", [&](const ConfigValue& v, const std::string& w) { rc.eval.protocol.full_catalog = as_bool(v, w); });
  eval.bind("weighting", [&](const ConfigValue& v, const std::string& w) {
    rc.eval.weightings.clear();
    for (const std::string& s : as_string_list(v, w)) rc.eval.weightings.push_back(weighting_from_string(s));
    if (rc.eval.weightings.empty()) throw ConfigError(w + ": empty weighting list");
  });
  eval.bind("checkpoint_dir", [&](const ConfigValue& v, const std::string& w) { rc.eval.checkpoint_dir = as_string(v, w); });
  eval.bind("split_dir", [&](const ConfigValue& v, const std::string& w) { rc.eval.split_dir = as_string(v, w); });
  eval.bind("oracle_table", [&](const ConfigValue& v, const std::string& w) { rc.eval.oracle_table = as_string(v, w); });
  eval.bind("label", [&](const ConfigValue& v, const std::string& w) { rc.eval.label = as_string(v, w); });
  eval.apply(pc);

  return rc;
}

std::string resolved_config_json(const RunConfig& rc) {
  nlohmann::json j;
  j["seed"] = rc.seed;
  j["output"] = {{"dir", rc.out_dir}};
  if (rc.has_data) {
    j["data"] = {{"path", rc.data.path},
                 {"separator", rc.data.separator},
                 {"min_n", rc.data.min_n},
                 {"max_n", rc.data.max_n}};
  }
  if (rc.has_sim) {
    j["sim"] = {{"d_sim", rc.sim.cfg.d_sim},
                {"sigma1", rc.sim.cfg.sigma1},
                {"sigma2", rc.sim.cfg.sigma2},
                {"kappa", rc.sim.cfg.kappa},
                {"seed", rc.sim.cfg.seed},
                {"fit_epochs", rc.sim.cfg.fit_epochs},
                {"fit_lr", rc.sim.cfg.fit_lr},
                {"fit_negs", rc.sim.cfg.fit_negs},
                {"occurrence_fit_epochs", rc.sim.cfg.occurrence_fit_epochs},
                {"fit_l2", rc.sim.cfg.fit_l2},
                {"input_dir", rc.sim.input_dir},
                {"min_n", rc.sim.min_n},
                {"max_n", rc.sim.max_n},
                {"sweep", rc.sim.sweep}};
  }
  if (rc.has_train) {
    j["train"] = {{"mode", rc.train.mode},
                  {"f_kind", to_string(rc.train.f_kind)},
                  {"g_kind", to_string(rc.train.g_kind)},
                  {"data_dir", rc.train.data_dir},
                  {"layer_spec", rc.train.layer_spec},
                  {"hidden_dim", rc.train.cfg.hidden_dim},
                  {"r_theta", rc.train.cfg.r_theta},
                  {"r_psi", rc.train.cfg.r_psi},
                  {"d_theta", rc.train.cfg.d_theta},
                  {"d_psi", rc.train.cfg.d_psi},
                  {"alpha", rc.train.cfg.alpha},
                  {"reg", to_string(rc.train.cfg.reg_kind)},
                  {"mu", rc.train.cfg.mu},
                  {"batch_size", rc.train.cfg.batch_size},
                  {"negs_per_pos", rc.train.cfg.negs_per_pos},
                  {"max_epochs", rc.train.cfg.max_epochs},
                  {"patience", rc.train.cfg.patience},
                  {"objective_tol", rc.train.cfg.objective_tol},
                  {"l2", rc.train.cfg.l2},
                  {"optimizer", to_string(rc.train.cfg.optimizer)},
                  {"train_beta", rc.train.cfg.train_beta},
                  {"eval_negatives", rc.train.cfg.eval_negatives},
                  {"seed", rc.train.cfg.seed}};
  }
  if (rc.has_eval) {
    std::vector<std::string> ws;
    for (Weighting w : rc.eval.weightings) ws.push_back(to_string(w));
    j["eval"] = {{"n_eval_negatives", rc.eval.protocol.n_eval_negatives},
                 {"cutoffs", rc.eval.protocol.cutoffs},
                 {"self_normalize", rc.eval.protocol.self_normalize},
                 {"mu", rc.eval.protocol.mu},
                 {"repetitions", rc.eval.protocol.repetitions},
                 {"full_catalog", rc.eval.protocol.full_catalog},
                 {"weighting", ws},
                 {"checkpoint_dir", rc.eval.checkpoint_dir},
                 {"split_dir", rc.eval.split_dir},
                 {"oracle_table", rc.eval.oracle_table},
                 {"label", rc.eval.label}};
  }
  return j.dump(2) + "\n";
}

}  // namespace acrec
