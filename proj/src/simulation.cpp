#include "acrec/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace acrec {

void validate(const SimConfig& cfg) {
  if (cfg.d_sim < 1) throw ConfigError("sim: d_sim must be >= 1");
  if (cfg.sigma1 < 0.0 || cfg.sigma2 < 0.0) throw ConfigError("sim: noise stds must be >= 0");
  if (!std::isfinite(cfg.kappa)) throw ConfigError("sim: kappa must be finite");
  if (cfg.fit_epochs < 0) throw ConfigError("sim: fit_epochs must be >= 0");
  if (cfg.fit_lr <= 0.0) throw ConfigError("sim: fit_lr must be positive");
  if (cfg.fit_negs < 0) throw ConfigError("sim: fit_negs must be >= 0");
  if (cfg.fit_l2 < 0.0) throw ConfigError("sim: fit_l2 must be >= 0");
}

namespace {

constexpr double kProbFloor = 1e-6;

double clamp_prob(double p) { return std::min(std::max(p, kProbFloor), 1.0); }

void check_dims(const InteractionLog& log) {
  if (log.n_users() < 1 || log.n_items() < 1 || log.interactions.empty()) {
    throw DataError("simulation: empty explicit dataset");
  }
}

// Per-sample SGD on 0.5 * (score - rating)^2 wastes nothing at this scale and
// converges quickly for factor models with biases.
void sgd_mse_epoch(RecModel& m, const std::vector<Interaction>& data,
                   const std::vector<std::size_t>& order, double lr, double l2) {
  for (std::size_t idx : order) {
    const Interaction& it = data[idx];
    const double err = score(m, it.user, it.item) - it.value;
    double* p = m.user_emb.row(it.user);
    double* q = m.item_emb.row(it.item);
    for (int k = 0; k < m.d; ++k) {
      const double pk = p[k];
      p[k] -= lr * (err * q[k] + l2 * pk);
      q[k] -= lr * (err * pk + l2 * q[k]);
    }
    m.user_bias.at(it.user, 0) -= lr * err;
    m.item_bias.at(it.item, 0) -= lr * err;
  }
}

void sgd_logistic_update(RecModel& m, int u, int i, int y, double lr, double l2) {
  const double g = logistic_loss_dscore(y, score(m, u, i));
  double* p = m.user_emb.row(u);
  double* q = m.item_emb.row(i);
  for (int k = 0; k < m.d; ++k) {
    const double pk = p[k];
    p[k] -= lr * (g * q[k] + l2 * pk);
    q[k] -= lr * (g * pk + l2 * q[k]);
  }
  m.user_bias.at(u, 0) -= lr * g;
  m.item_bias.at(i, 0) -= lr * g;
}

RecModel fit_implicit_mf(const InteractionLog& log, const SimConfig& cfg, int epochs,
                         std::uint64_t seed) {
  RecModel m = init_model(ModelKind::MF, log.n_users(), log.n_items(), cfg.d_sim, {}, seed);
  std::vector<std::unordered_set<int>> seen(log.n_users());
  for (const Interaction& it : log.interactions) seen[it.user].insert(it.item);

  Rng rng(derive_seed(seed, "implicit-fit"));
  std::vector<std::size_t> order(log.interactions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t idx : order) {
      const Interaction& it = log.interactions[idx];
      sgd_logistic_update(m, it.user, it.item, +1, cfg.fit_lr, cfg.fit_l2);
      const int room = log.n_items() - static_cast<int>(seen[it.user].size());
      int negs = std::min(cfg.fit_negs, room);
      while (negs > 0) {
        const int cand = static_cast<int>(rng.below(static_cast<std::uint64_t>(log.n_items())));
        if (seen[it.user].count(cand)) continue;
        sgd_logistic_update(m, it.user, cand, -1, cfg.fit_lr, cfg.fit_l2);
        --negs;
      }
    }
    if (!m.user_emb.all_finite() || !m.item_emb.all_finite()) {
      throw NumericError("simulation: implicit factor fit diverged; lower fit_lr");
    }
  }
  return m;
}

}  // namespace

RecModel fit_relevance_model(const InteractionLog& log, const SimConfig& cfg) {
  validate(cfg);
  check_dims(log);
  for (const Interaction& it : log.interactions) {
    if (it.value < 1.0 || it.value > 5.0) {
      throw DataError("relevance fit expects explicit ratings in [1,5]");
    }
  }
  RecModel m = init_model(ModelKind::MF, log.n_users(), log.n_items(), cfg.d_sim, {},
                          derive_seed(cfg.seed, "relevance-init"));
  Rng rng(derive_seed(cfg.seed, "relevance-fit"));
  std::vector<std::size_t> order(log.interactions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.fit_epochs; ++epoch) {
    rng.shuffle(order);
    sgd_mse_epoch(m, log.interactions, order, cfg.fit_lr, cfg.fit_l2);
    if (!m.user_emb.all_finite() || !m.item_emb.all_finite()) {
      throw NumericError("simulation: relevance fit diverged; lower fit_lr");
    }
  }
  return m;
}

RecModel fit_occurrence_model(const InteractionLog& log, const SimConfig& cfg) {
  validate(cfg);
  check_dims(log);
  const int epochs = cfg.occurrence_fit_epochs >= 0 ? cfg.occurrence_fit_epochs : cfg.fit_epochs;
  return fit_implicit_mf(log, cfg, epochs, derive_seed(cfg.seed, "occurrence-init"));
}

Stage1Output stage1_generate(const RecModel& relevance, const RecModel& occurrence,
                             const SimConfig& cfg, Rng& rng) {
  if (relevance.n_users != occurrence.n_users || relevance.n_items != occurrence.n_items) {
    throw ConfigError("stage1_generate: relevance and occurrence models disagree on the id space");
  }
  Stage1Output out;
  out.n_users = relevance.n_users;
  out.n_items = relevance.n_items;
  out.p_relevance = PairProbTable(out.n_users, out.n_items);
  out.p_exposure = PairProbTable(out.n_users, out.n_items);

  std::vector<std::int64_t> next_order(out.n_users, 0);
  for (int u = 0; u < out.n_users; ++u) {
    for (int i = 0; i < out.n_items; ++i) {
      const double e1 = rng.normal(0.0, cfg.sigma1);
      const double p_rel = clamp_prob(sigmoid(score(relevance, u, i) + e1));
      const double e2 = rng.normal(0.0, cfg.sigma2);
      const double p_exp = clamp_prob(sigmoid(score(occurrence, u, i)) * std::exp(e2));
      out.p_relevance.set(u, i, p_rel);
      out.p_exposure.set(u, i, p_exp);
      if (rng.bernoulli(p_rel * p_exp)) {
        out.clicks.push_back({u, i, 1.0, next_order[u]++});
      }
    }
  }
  return out;
}

OracleDataset stage2_generate(const Stage1Output& stage1, const SimConfig& cfg, Rng& rng) {
  if (stage1.clicks.empty()) throw DataError("stage2_generate: stage one produced no clicks");

  // Fresh factors fitted on the stage-one clicks drive the exposure tilt.
  InteractionLog click_log;
  for (int u = 0; u < stage1.n_users; ++u) click_log.user_names.push_back(std::to_string(u));
  for (int i = 0; i < stage1.n_items; ++i) click_log.item_names.push_back(std::to_string(i));
  click_log.interactions = stage1.clicks;
  const int epochs = cfg.occurrence_fit_epochs >= 0 ? cfg.occurrence_fit_epochs : cfg.fit_epochs;
  RecModel factors = fit_implicit_mf(click_log, cfg, epochs, derive_seed(cfg.seed, "stage2-factors"));

  OracleDataset out;
  out.n_users = stage1.n_users;
  out.n_items = stage1.n_items;
  out.p_relevance = stage1.p_relevance;
  out.stage1_exposure = stage1.p_exposure;
  out.p_exposure = PairProbTable(out.n_users, out.n_items);

  std::vector<std::int64_t> next_order(out.n_users, 0);
  for (int u = 0; u < out.n_users; ++u) {
    const double* x = factors.user_emb.row(u);
    double xn = 0.0;
    for (int k = 0; k < factors.d; ++k) xn += x[k] * x[k];
    xn = std::sqrt(xn);
    for (int i = 0; i < out.n_items; ++i) {
      const double* z = factors.item_emb.row(i);
      double zn = 0.0, dot = 0.0;
      for (int k = 0; k < factors.d; ++k) {
        zn += z[k] * z[k];
        dot += x[k] * z[k];
      }
      zn = std::sqrt(zn);
      const double cosine = (xn > 0.0 && zn > 0.0) ? dot / (xn * zn) : 0.0;
      const double shift = cfg.kappa * cosine;
      const double p1 = stage1.p_exposure.at(u, i);
      const double p2 = shift == 0.0 ? p1 : clamp_prob(p1 * std::exp(shift));
      out.p_exposure.set(u, i, p2);
      if (rng.bernoulli(out.p_relevance.at(u, i) * p2)) {
        out.clicks.push_back({u, i, 1.0, next_order[u]++});
      }
    }
  }
  return out;
}

OracleDataset generate_semi_synthetic(const InteractionLog& explicit_log, const SimConfig& cfg) {
  validate(cfg);
  RecModel relevance = fit_relevance_model(explicit_log, cfg);
  RecModel occurrence = fit_occurrence_model(explicit_log, cfg);
  Rng rng1(derive_seed(cfg.seed, "stage1-draws"));
  Stage1Output s1 = stage1_generate(relevance, occurrence, cfg, rng1);
  Rng rng2(derive_seed(cfg.seed, "stage2-draws"));
  return stage2_generate(s1, cfg, rng2);
}

PairProbTable remap_oracle_table(const PairProbTable& table,
                                 const std::vector<std::string>& user_names,
                                 const std::vector<std::string>& item_names) {
  PairProbTable out(static_cast<int>(user_names.size()), static_cast<int>(item_names.size()));
  for (int u = 0; u < out.n_users; ++u) {
    const int ou = std::stoi(user_names[u]);
    for (int i = 0; i < out.n_items; ++i) {
      const int oi = std::stoi(item_names[i]);
      if (table.has(ou, oi)) out.set(u, i, table.at(ou, oi));
    }
  }
  return out;
}

void save_oracle(const OracleDataset& oracle, const SimConfig& cfg, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::FILE* f = std::fopen((fs::path(dir) / "clicks.tsv").c_str(), "w");
  if (!f) throw DataError("cannot write clicks under " + dir);
  for (const Interaction& it : oracle.clicks) {
    std::fprintf(f, "%d\t%d\t1\t%lld\n", it.user, it.item, static_cast<long long>(it.order));
  }
  std::fclose(f);
  save_pair_table(oracle.p_relevance, (fs::path(dir) / "p_relevance.tsv").string());
  save_pair_table(oracle.p_exposure, (fs::path(dir) / "p_exposure.tsv").string());
  save_pair_table(oracle.stage1_exposure, (fs::path(dir) / "stage1_exposure.tsv").string());

  bool stage2_equals_stage1 = true;
  for (std::size_t k = 0; k < oracle.p_exposure.p.size() && stage2_equals_stage1; ++k) {
    if (oracle.p_exposure.p[k] != oracle.stage1_exposure.p[k]) stage2_equals_stage1 = false;
  }
  nlohmann::json manifest;
  manifest["n_users"] = oracle.n_users;
  manifest["n_items"] = oracle.n_items;
  manifest["n_clicks"] = oracle.clicks.size();
  manifest["stage2_equals_stage1"] = stage2_equals_stage1;
  manifest["config"] = {{"d_sim", cfg.d_sim},       {"sigma1", cfg.sigma1},
                        {"sigma2", cfg.sigma2},     {"kappa", cfg.kappa},
                        {"seed", cfg.seed},         {"fit_epochs", cfg.fit_epochs},
                        {"fit_lr", cfg.fit_lr},     {"fit_negs", cfg.fit_negs},
                        {"occurrence_fit_epochs", cfg.occurrence_fit_epochs},
                        {"fit_l2", cfg.fit_l2}};
  std::ofstream mout(fs::path(dir) / "manifest.json");
  mout << manifest.dump(2) << "\n";
}

OracleDataset load_oracle(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream min(fs::path(dir) / "manifest.json");
  if (!min) throw DataError("cannot open oracle manifest under " + dir);
  nlohmann::json manifest = nlohmann::json::parse(min);

  OracleDataset out;
  out.n_users = manifest.at("n_users").get<int>();
  out.n_items = manifest.at("n_items").get<int>();
  out.p_relevance = load_pair_table((fs::path(dir) / "p_relevance.tsv").string());
  out.p_exposure = load_pair_table((fs::path(dir) / "p_exposure.tsv").string());
  out.stage1_exposure = load_pair_table((fs::path(dir) / "stage1_exposure.tsv").string());

  std::ifstream cin((fs::path(dir) / "clicks.tsv").string());
  if (!cin) throw DataError("cannot open clicks under " + dir);
  std::string line;
  while (std::getline(cin, line)) {
    if (line.empty()) continue;
    int u, i;
    double v;
    long long order;
    if (std::sscanf(line.c_str(), "%d\t%d\t%lf\t%lld", &u, &i, &v, &order) != 4) {
      throw DataError("bad click line in " + dir);
    }
    out.clicks.push_back({u, i, v, order});
  }
  return out;
}

}  // namespace acrec
