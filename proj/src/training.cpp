#include "acrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "acrec/evaluation.hpp"

namespace acrec {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

void validate(const TrainConfig& cfg) {
  if (cfg.r_theta < 0.0 || cfg.r_psi < 0.0) throw ConfigError("train: learning rates must be >= 0");
  if (cfg.d_theta < 1.0 || cfg.d_psi < 1.0) throw ConfigError("train: lr discounts must be >= 1");
  if (cfg.alpha < 0.0) throw ConfigError("train: alpha must be >= 0");
  if (cfg.mu <= 0.0 || cfg.mu >= 0.5) throw ConfigError("train: mu must lie in (0, 0.5)");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.negs_per_pos < 0) throw ConfigError("train: negs_per_pos must be >= 0");
  if (cfg.max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (cfg.patience < 1) throw ConfigError("train: patience must be >= 1");
  if (cfg.l2 < 0.0) throw ConfigError("train: l2 must be >= 0");
  if (cfg.hidden_dim < 1) throw ConfigError("train: hidden_dim must be >= 1");
}

bool early_stop_check(const std::vector<double>& history, int patience, double tol,
                      StopMode mode) {
  if (history.empty()) throw ConfigError("early_stop_check: empty history");
  if (patience < 1) throw ConfigError("early_stop_check: patience must be >= 1");
  const int n = static_cast<int>(history.size());
  int last_event = 0;
  if (mode == StopMode::MetricImprovement) {
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (history[i] > best + tol) {
        best = history[i];
        last_event = i;
      }
    }
  } else {
    for (int i = 1; i < n; ++i) {
      if (std::fabs(history[i] - history[i - 1]) > tol) last_event = i;
    }
  }
  return (n - 1 - last_event) >= patience;
}

ValMetrics validation_metrics(const RecModel& model, const SplitDataset& split,
                              int n_negatives, std::uint64_t seed) {
  Rng rng(seed);
  ValMetrics out;
  for (int u = 0; u < split.n_users; ++u) {
    const int avail = split.n_items - static_cast<int>(split.positives(u).size());
    const int k = std::min(n_negatives, avail);
    std::vector<int> negatives = k > 0 ? sample_negatives(u, k, split, rng) : std::vector<int>{};
    const int rank = rank_position(model, u, split.val[u], negatives, rng);
    out.hit10 += hit_at_k(rank, 10);
    out.ndcg10 += ndcg_at_k(rank, 10);
  }
  out.hit10 /= static_cast<double>(split.n_users);
  out.ndcg10 /= static_cast<double>(split.n_users);
  return out;
}

void apply_gradients_sgd(RecModel& m, const ModelGradients& g, double step) {
  for (const auto& [r, vec] : g.user_rows) {
    double* p = m.user_emb.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] += step * vec[k];
  }
  for (const auto& [r, vec] : g.item_rows) {
    double* p = m.item_emb.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] += step * vec[k];
  }
  for (const auto& [r, vec] : g.user_mlp_rows) {
    double* p = m.user_emb_mlp.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] += step * vec[k];
  }
  for (const auto& [r, vec] : g.item_mlp_rows) {
    double* p = m.item_emb_mlp.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] += step * vec[k];
  }
  for (const auto& [r, v] : g.user_bias_rows) m.user_bias.at(r, 0) += step * v;
  for (const auto& [r, v] : g.item_bias_rows) m.item_bias.at(r, 0) += step * v;
  if (!g.gmf_out.data.empty()) {
    for (std::size_t k = 0; k < g.gmf_out.data.size(); ++k) m.gmf_out.data[k] += step * g.gmf_out.data[k];
  }
  for (std::size_t l = 0; l < g.mlp_w.size(); ++l) {
    for (std::size_t k = 0; k < g.mlp_w[l].data.size(); ++k) m.mlp_w[l].data[k] += step * g.mlp_w[l].data[k];
    for (std::size_t k = 0; k < g.mlp_b[l].size(); ++k) m.mlp_b[l][k] += step * g.mlp_b[l][k];
  }
  if (!g.fusion_w.data.empty()) {
    for (std::size_t k = 0; k < g.fusion_w.data.size(); ++k) m.fusion_w.data[k] += step * g.fusion_w.data[k];
    m.fusion_b += step * g.fusion_b;
  }
}

void decay_touched(RecModel& m, const ModelGradients& g, double factor) {
  for (const auto& [r, vec] : g.user_rows) {
    double* p = m.user_emb.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] *= factor;
  }
  for (const auto& [r, vec] : g.item_rows) {
    double* p = m.item_emb.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] *= factor;
  }
  for (const auto& [r, vec] : g.user_mlp_rows) {
    double* p = m.user_emb_mlp.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] *= factor;
  }
  for (const auto& [r, vec] : g.item_mlp_rows) {
    double* p = m.item_emb_mlp.row(r);
    for (std::size_t k = 0; k < vec.size(); ++k) p[k] *= factor;
  }
  // bias terms and dense head blocks
  for (const auto& [r, v] : g.user_bias_rows) m.user_bias.at(r, 0) *= factor;
  for (const auto& [r, v] : g.item_bias_rows) m.item_bias.at(r, 0) *= factor;
  if (!g.gmf_out.data.empty()) {
    for (double& x : m.gmf_out.data) x *= factor;
  }
  for (std::size_t l = 0; l < g.mlp_w.size(); ++l) {
    for (double& x : m.mlp_w[l].data) x *= factor;
    for (double& x : m.mlp_b[l]) x *= factor;
  }
  if (!g.fusion_w.data.empty()) {
    for (double& x : m.fusion_w.data) x *= factor;
    m.fusion_b *= factor;
  }
}

namespace {

// Per-item train feedback rate (count / n_users) for the popularity
// regularizer.
std::vector<double> feedback_rates(const SplitDataset& split) {
  std::vector<double> rates(split.n_items, 0.0);
  for (const auto& items : split.train) {
    for (int i : items) rates[i] += 1.0;
  }
  for (double& r : rates) r /= static_cast<double>(split.n_users);
  return rates;
}

// Per-batch regularizer inputs. Popularity correlation aggregates over the
// batch's distinct users and items; the exposure sample defaults to the
// batch's positives (observed interactions are known-exposed pairs, while
// sampled negatives have unknown exposure status).
struct RegScratch {
  std::vector<int> users, items;
  std::vector<double> rates;
  std::vector<ExposurePair> exposed;
  const Batch* batch = nullptr;
  const std::vector<ExposurePair>* external_exposure = nullptr;
  bool skip = false;  // degenerate batch: regularizer contributes 0

  RegInputs inputs() const {
    RegInputs in;
    in.batch = batch;
    in.exposure = external_exposure ? external_exposure : (exposed.empty() ? nullptr : &exposed);
    if (!items.empty()) {
      in.users = &users;
      in.items = &items;
      in.item_feedback_rate = &rates;
    }
    return in;
  }
};

RegScratch make_reg_inputs(RegularizerKind kind, const Batch& batch,
                           const BatchRegContext& ctx) {
  RegScratch s;
  switch (kind) {
    case RegularizerKind::FeedbackLoss:
      s.batch = &batch;
      break;
    case RegularizerKind::ExposureLoss:
      if (ctx.exposure && !ctx.exposure->empty()) {
        s.external_exposure = ctx.exposure;
        break;
      }
      for (std::size_t j = 0; j < batch.size(); ++j) {
        if (batch.labels[j] == +1) s.exposed.push_back({batch.users[j], batch.items[j], +1});
      }
      if (s.exposed.empty()) s.skip = true;
      break;
    case RegularizerKind::PopularityCorrelation: {
      if (!ctx.item_feedback_rate) {
        throw ConfigError("PopularityCorrelation training requires item feedback rates");
      }
      s.users = batch.users;
      s.items = batch.items;
      std::sort(s.users.begin(), s.users.end());
      s.users.erase(std::unique(s.users.begin(), s.users.end()), s.users.end());
      std::sort(s.items.begin(), s.items.end());
      s.items.erase(std::unique(s.items.begin(), s.items.end()), s.items.end());
      if (s.items.size() < 2) {
        s.skip = true;
        break;
      }
      s.rates.reserve(s.items.size());
      for (int i : s.items) s.rates.push_back((*ctx.item_feedback_rate)[i]);
      break;
    }
  }
  return s;
}

void check_weight_bound(double w, double mu) {
  if (!(w > 1.0 && w <= 1.0 / mu + 1e-9)) {
    throw NumericError("importance weight " + std::to_string(w) + " outside (1, 1/mu]");
  }
}

}  // namespace

AclParts acl_loss(const RecModel& f, const RecModel& g, const PropensityHead& head,
                  const Batch& batch, double alpha, RegularizerKind reg_kind,
                  const BatchRegContext& ctx) {
  if (batch.size() == 0) throw ConfigError("acl_loss: empty batch");
  AclParts parts;
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const double phi = logistic_loss(batch.labels[j], score(f, batch.users[j], batch.items[j]));
    const double G = g_beta(score(g, batch.users[j], batch.items[j]), batch.labels[j], head);
    check_weight_bound(1.0 / G, head.mu);
    parts.weighted_f_loss += phi / G * inv_m;
  }
  if (alpha != 0.0) {
    RegScratch s = make_reg_inputs(reg_kind, batch, ctx);
    if (s.skip) {
      parts.reg_degenerate = true;
    } else {
      bool degen = false;
      parts.reg_term = regularizer_loss(reg_kind, g, s.inputs(), &degen);
      parts.reg_degenerate = degen;
    }
  }
  parts.objective = parts.weighted_f_loss - alpha * parts.reg_term;
  return parts;
}

AclGrads acl_grads(const RecModel& f, const RecModel& g, const PropensityHead& head,
                   const Batch& batch, double alpha, RegularizerKind reg_kind,
                   const BatchRegContext& ctx) {
  if (batch.size() == 0) throw ConfigError("acl_grads: empty batch");
  AclGrads out;
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  std::vector<double> upstream_f(batch.size(), 0.0);
  std::vector<double> upstream_g(batch.size(), 0.0);
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const int y = batch.labels[j];
    const double s_f = score(f, batch.users[j], batch.items[j]);
    const double s_g = score(g, batch.users[j], batch.items[j]);
    const double G = g_beta(s_g, y, head);
    const double phi = logistic_loss(y, s_f);
    upstream_f[j] = inv_m * logistic_loss_dscore(y, s_f) / G;
    const double up_G = -inv_m * phi / (G * G);
    const GBetaGrads gb = g_beta_grads(s_g, y, head, up_G);
    out.d_beta0 += gb.d_beta0;
    out.d_beta1 += gb.d_beta1;
    out.d_beta2 += gb.d_beta2;
    upstream_g[j] = gb.d_gscore;
  }
  out.f_grads = score_grad(f, batch, upstream_f);
  out.g_grads = score_grad(g, batch, upstream_g);
  if (alpha != 0.0) {
    RegScratch s = make_reg_inputs(reg_kind, batch, ctx);
    if (!s.skip) {
      ModelGradients reg = regularizer_grad(reg_kind, g, s.inputs());
      accumulate_gradients(out.g_grads, reg, -alpha);
    }
  }
  return out;
}

namespace {

// Adam states for every tensor of one model plus the head betas.
struct ModelAdam {
  AdamState user_emb, item_emb, user_mlp, item_mlp, user_bias, item_bias;
  AdamState gmf_out, fusion_w, fusion_b;
  std::vector<AdamState> mlp_w, mlp_b;
  AdamState beta;
  bool ready = false;

  void init(const RecModel& m, const TrainConfig& cfg) {
    auto mk = [&](const DenseMatrix& p) {
      return AdamState::for_param(p, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    };
    auto mk_flat = [&](std::size_t len) {
      return AdamState::for_param(DenseMatrix(1, static_cast<int>(len)), cfg.adam_beta1,
                                  cfg.adam_beta2, cfg.adam_eps);
    };
    if (!m.user_emb.data.empty()) user_emb = mk(m.user_emb);
    if (!m.item_emb.data.empty()) item_emb = mk(m.item_emb);
    if (!m.user_emb_mlp.data.empty()) user_mlp = mk(m.user_emb_mlp);
    if (!m.item_emb_mlp.data.empty()) item_mlp = mk(m.item_emb_mlp);
    if (!m.user_bias.data.empty()) user_bias = mk(m.user_bias);
    if (!m.item_bias.data.empty()) item_bias = mk(m.item_bias);
    if (!m.gmf_out.data.empty()) gmf_out = mk(m.gmf_out);
    if (!m.fusion_w.data.empty()) {
      fusion_w = mk(m.fusion_w);
      fusion_b = mk_flat(1);
    }
    mlp_w.clear();
    mlp_b.clear();
    for (std::size_t l = 0; l < m.mlp_w.size(); ++l) {
      mlp_w.push_back(mk(m.mlp_w[l]));
      mlp_b.push_back(mk_flat(m.mlp_b[l].size()));
    }
    beta = mk_flat(3);
    ready = true;
  }

  void step(RecModel& m, const ModelGradients& g, double lr) {
    if (!g.user_rows.empty()) sparse_adam_step(m.user_emb, g.user_rows, user_emb, lr);
    if (!g.item_rows.empty()) sparse_adam_step(m.item_emb, g.item_rows, item_emb, lr);
    if (!g.user_mlp_rows.empty()) sparse_adam_step(m.user_emb_mlp, g.user_mlp_rows, user_mlp, lr);
    if (!g.item_mlp_rows.empty()) sparse_adam_step(m.item_emb_mlp, g.item_mlp_rows, item_mlp, lr);
    if (!g.user_bias_rows.empty()) {
      std::map<int, std::vector<double>> rows;
      for (const auto& [r, v] : g.user_bias_rows) rows[r] = {v};
      sparse_adam_step(m.user_bias, rows, user_bias, lr);
    }
    if (!g.item_bias_rows.empty()) {
      std::map<int, std::vector<double>> rows;
      for (const auto& [r, v] : g.item_bias_rows) rows[r] = {v};
      sparse_adam_step(m.item_bias, rows, item_bias, lr);
    }
    if (!g.gmf_out.data.empty()) adam_step(m.gmf_out, g.gmf_out, gmf_out, lr);
    for (std::size_t l = 0; l < g.mlp_w.size(); ++l) {
      adam_step(m.mlp_w[l], g.mlp_w[l], mlp_w[l], lr);
      adam_step_flat(m.mlp_b[l].data(), g.mlp_b[l].data(), g.mlp_b[l].size(), mlp_b[l], lr);
    }
    if (!g.fusion_w.data.empty()) {
      adam_step(m.fusion_w, g.fusion_w, fusion_w, lr);
      adam_step_flat(&m.fusion_b, &g.fusion_b, 1, fusion_b, lr);
    }
  }

  void step_beta(PropensityHead& h, double d0, double d1, double d2, double lr) {
    double p[3] = {h.beta0, h.beta1, h.beta2};
    double g[3] = {d0, d1, d2};
    adam_step_flat(p, g, 3, beta, lr);
    h.beta0 = p[0];
    h.beta1 = p[1];
    h.beta2 = p[2];
  }
};

// Shared loop for plain ERM and the propensity-weighted stage; the two only
// differ in the per-pair upstream factor (1 vs 1/G) and in training the
// betas. Keeping one code path keeps the constant-weight scaling identity
// exact down to the bit level.
RecModel train_single(RecModel model, const RecModel* g_frozen, PropensityHead* head,
                      const SplitDataset& split, const TrainConfig& cfg,
                      TrainState* state, const EpochCallback& on_epoch) {
  validate(cfg);
  const bool weighted = g_frozen != nullptr;
  TrainState local;
  TrainState& st = state ? *state : local;
  ModelAdam adam;
  if (cfg.optimizer == OptimizerKind::Adam) adam.init(model, cfg);

  RecModel best = model;
  double best_metric = -1.0;
  double lr = cfg.r_theta;
  const std::uint64_t val_seed = derive_seed(cfg.seed, "val-candidates");

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto batches = make_batches(split, cfg.batch_size, cfg.negs_per_pos,
                                derive_seed(cfg.seed, "batches", static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::size_t pair_count = 0;
    for (const Batch& batch : batches) {
      const double inv_m = 1.0 / static_cast<double>(batch.size());
      std::vector<double> upstream(batch.size());
      double d_beta0 = 0.0, d_beta1 = 0.0, d_beta2 = 0.0;
      for (std::size_t j = 0; j < batch.size(); ++j) {
        const int y = batch.labels[j];
        const double s = score(model, batch.users[j], batch.items[j]);
        const double phi = logistic_loss(y, s);
        if (weighted) {
          const double G = g_beta(score(*g_frozen, batch.users[j], batch.items[j]), y, *head);
          check_weight_bound(1.0 / G, head->mu);
          upstream[j] = inv_m * logistic_loss_dscore(y, s) / G;
          loss_sum += phi / G;
          if (cfg.train_beta) {
            const double s_g = score(*g_frozen, batch.users[j], batch.items[j]);
            const GBetaGrads gb = g_beta_grads(s_g, y, *head, -inv_m * phi / (G * G));
            d_beta0 += gb.d_beta0;
            d_beta1 += gb.d_beta1;
            d_beta2 += gb.d_beta2;
          }
        } else {
          upstream[j] = inv_m * logistic_loss_dscore(y, s);
          loss_sum += phi;
        }
      }
      pair_count += batch.size();
      if (!std::isfinite(loss_sum)) {
        throw NumericError("training diverged to a non-finite loss; lower the learning rate");
      }
      ModelGradients grads = score_grad(model, batch, upstream);
      if (cfg.optimizer == OptimizerKind::Sgd) {
        apply_gradients_sgd(model, grads, -lr);
        if (weighted && cfg.train_beta) {
          head->beta0 -= lr * d_beta0;
          head->beta1 -= lr * d_beta1;
          head->beta2 -= lr * d_beta2;
        }
      } else {
        adam.step(model, grads, lr);
        if (weighted && cfg.train_beta) adam.step_beta(*head, d_beta0, d_beta1, d_beta2, lr);
      }
      if (cfg.l2 > 0.0) decay_touched(model, grads, 1.0 - lr * cfg.l2);
    }

    const double epoch_loss = pair_count > 0 ? loss_sum / static_cast<double>(pair_count) : 0.0;
    const ValMetrics val = validation_metrics(model, split, cfg.eval_negatives, val_seed);

    EpochRow row;
    row.epoch = epoch;
    row.objective = epoch_loss;
    row.weighted_f_loss = epoch_loss;
    row.lr_theta = lr;
    row.f_val_hit10 = val.hit10;
    row.f_val_ndcg10 = val.ndcg10;
    st.epochs.push_back(row);
    st.objective_history.push_back(epoch_loss);
    st.val_metric_history.push_back(val.hit10);

    if (val.hit10 > best_metric) {
      best_metric = val.hit10;
      best = model;
      st.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(epoch, model, g_frozen, head);
    lr /= cfg.d_theta;

    if (early_stop_check(st.val_metric_history, cfg.patience, 1e-12, StopMode::MetricImprovement)) {
      st.stopped_early = true;
      break;
    }
  }
  return best;
}

}  // namespace

RecModel erm_train(RecModel model, const SplitDataset& split, const TrainConfig& cfg,
                   TrainState* state, const EpochCallback& on_epoch) {
  return train_single(std::move(model), nullptr, nullptr, split, cfg, state, on_epoch);
}

RecModel ps_stage2_train(RecModel f, const RecModel& g_frozen, PropensityHead& head,
                         const SplitDataset& split, const TrainConfig& cfg,
                         TrainState* state, const EpochCallback& on_epoch) {
  return train_single(std::move(f), &g_frozen, &head, split, cfg, state, on_epoch);
}

PsResult ps_train(ModelKind f_kind, ModelKind g_kind, const SplitDataset& split,
                  const TrainConfig& cfg, const std::vector<int>& layer_spec) {
  validate(cfg);
  PsResult out;

  // Stage one: fit the exposure model alone on the plain feedback objective.
  if (g_kind == ModelKind::Pop) {
    out.g = init_model(ModelKind::Pop, split.n_users, split.n_items, cfg.hidden_dim,
                       layer_spec, derive_seed(cfg.seed, "ps-g-init"));
    pop_fit(out.g, split);
  } else {
    RecModel g0 = init_model(g_kind, split.n_users, split.n_items, cfg.hidden_dim,
                             layer_spec, derive_seed(cfg.seed, "ps-g-init"));
    TrainConfig gcfg = cfg;
    gcfg.r_theta = cfg.r_psi;
    gcfg.d_theta = cfg.d_psi;
    gcfg.seed = derive_seed(cfg.seed, "ps-g-train");
    out.g = erm_train(std::move(g0), split, gcfg, &out.stage1);
  }

  // Stage two: psi frozen; theta and the betas minimize the weighted risk.
  out.head = PropensityHead{0.0, 0.0, 0.0, cfg.mu};
  RecModel f0 = init_model(f_kind, split.n_users, split.n_items, cfg.hidden_dim,
                           layer_spec, derive_seed(cfg.seed, "ps-f-init"));
  out.f = ps_stage2_train(std::move(f0), out.g, out.head, split, cfg, &out.stage2);
  return out;
}

namespace {

void negate_gradients(ModelGradients& g) {
  auto flip_rows = [](std::map<int, std::vector<double>>& rows) {
    for (auto& [r, vec] : rows) {
      for (double& x : vec) x = -x;
    }
  };
  flip_rows(g.user_rows);
  flip_rows(g.item_rows);
  flip_rows(g.user_mlp_rows);
  flip_rows(g.item_mlp_rows);
  for (auto& [r, v] : g.user_bias_rows) v = -v;
  for (auto& [r, v] : g.item_bias_rows) v = -v;
  for (double& x : g.gmf_out.data) x = -x;
  for (std::size_t l = 0; l < g.mlp_w.size(); ++l) {
    for (double& x : g.mlp_w[l].data) x = -x;
    for (double& x : g.mlp_b[l]) x = -x;
  }
  for (double& x : g.fusion_w.data) x = -x;
  g.fusion_b = -g.fusion_b;
}

}  // namespace

AclResult acl_train(RecModel f, RecModel g, PropensityHead head, const SplitDataset& split,
                    const TrainConfig& cfg, const BatchRegContext& ctx,
                    const EpochCallback& on_epoch) {
  validate(cfg);
  AclResult out;
  TrainState& st = out.state;

  BatchRegContext reg_ctx = ctx;
  std::vector<double> rates;
  if (cfg.reg_kind == RegularizerKind::PopularityCorrelation && !reg_ctx.item_feedback_rate) {
    rates = feedback_rates(split);
    reg_ctx.item_feedback_rate = &rates;
  }

  // Sgd runs the plain descent/ascent recursion; Adam preconditions the same
  // two-timescale updates (the ascent feeds negated gradients).
  ModelAdam f_adam, g_adam;
  if (cfg.optimizer == OptimizerKind::Adam) {
    f_adam.init(f, cfg);
    g_adam.init(g, cfg);
  }

  double lr_theta = cfg.r_theta;
  double lr_psi = cfg.r_psi;
  const std::uint64_t val_seed = derive_seed(cfg.seed, "val-candidates");

  RecModel f_good = f, g_good = g;
  PropensityHead head_good = head;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto batches = make_batches(split, cfg.batch_size, cfg.negs_per_pos,
                                derive_seed(cfg.seed, "batches", static_cast<std::uint64_t>(epoch)));
    double obj_sum = 0.0, wloss_sum = 0.0, reg_sum = 0.0;
    std::size_t pair_count = 0;

    for (const Batch& batch : batches) {
      // Objective bookkeeping uses the pre-update value.
      AclParts parts = acl_loss(f, g, head, batch, cfg.alpha, cfg.reg_kind, reg_ctx);
      const double m = static_cast<double>(batch.size());
      obj_sum += parts.objective * m;
      wloss_sum += parts.weighted_f_loss * m;
      reg_sum += parts.reg_term * m;
      pair_count += batch.size();

      // Descent on theta and the betas.
      AclGrads grads = acl_grads(f, g, head, batch, cfg.alpha, cfg.reg_kind, reg_ctx);
      if (cfg.optimizer == OptimizerKind::Sgd) {
        apply_gradients_sgd(f, grads.f_grads, -lr_theta);
        if (cfg.train_beta) {
          head.beta0 -= lr_theta * grads.d_beta0;
          head.beta1 -= lr_theta * grads.d_beta1;
          head.beta2 -= lr_theta * grads.d_beta2;
        }
      } else {
        f_adam.step(f, grads.f_grads, lr_theta);
        if (cfg.train_beta) f_adam.step_beta(head, grads.d_beta0, grads.d_beta1, grads.d_beta2, lr_theta);
      }
      if (cfg.l2 > 0.0) decay_touched(f, grads.f_grads, 1.0 - lr_theta * cfg.l2);

      // Ascent on psi against the just-updated opponent.
      AclGrads grads2 = acl_grads(f, g, head, batch, cfg.alpha, cfg.reg_kind, reg_ctx);
      if (cfg.optimizer == OptimizerKind::Sgd) {
        apply_gradients_sgd(g, grads2.g_grads, +lr_psi);
      } else {
        negate_gradients(grads2.g_grads);
        g_adam.step(g, grads2.g_grads, lr_psi);
      }
      if (cfg.l2 > 0.0) decay_touched(g, grads2.g_grads, 1.0 - lr_psi * cfg.l2);
    }

    const double n = static_cast<double>(pair_count);
    EpochRow row;
    row.epoch = epoch;
    row.objective = obj_sum / n;
    row.weighted_f_loss = wloss_sum / n;
    row.reg_term = reg_sum / n;
    row.lr_theta = lr_theta;
    row.lr_psi = lr_psi;
    const ValMetrics fval = validation_metrics(f, split, cfg.eval_negatives, val_seed);
    const ValMetrics gval = validation_metrics(g, split, cfg.eval_negatives, val_seed);
    row.f_val_hit10 = fval.hit10;
    row.f_val_ndcg10 = fval.ndcg10;
    row.g_val_hit10 = gval.hit10;
    row.g_val_ndcg10 = gval.ndcg10;
    st.epochs.push_back(row);
    st.objective_history.push_back(row.objective);
    st.val_metric_history.push_back(fval.hit10);

    if (!std::isfinite(row.objective) || std::fabs(row.objective) > 1e6 ||
        !model_all_finite(f) || !model_all_finite(g)) {
      st.diverged = true;
      f = f_good;
      g = g_good;
      head = head_good;
      break;
    }
    f_good = f;
    g_good = g;
    head_good = head;
    st.best_epoch = epoch;  // stationarity rule: the last stable epoch wins

    if (on_epoch) on_epoch(epoch, f, &g, &head);
    lr_theta /= cfg.d_theta;
    lr_psi /= cfg.d_psi;

    if (early_stop_check(st.objective_history, cfg.patience, cfg.objective_tol,
                         StopMode::ObjectiveStability)) {
      st.stopped_early = true;
      break;
    }
  }

  out.f = std::move(f);
  out.g = std::move(g);
  out.head = head;
  return out;
}

}  // namespace acrec
