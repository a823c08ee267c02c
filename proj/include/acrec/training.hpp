#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "acrec/data.hpp"
#include "acrec/models.hpp"
#include "acrec/propensity.hpp"

namespace acrec {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  double r_theta = 0.05;   // lr for the candidate model (and the head betas)
  double r_psi = 0.25;     // lr for the exposure model; faster by default
  double d_theta = 1.0;    // per-epoch lr divisor
  double d_psi = 1.0;
  double alpha = 1.0;      // regularizer weight on the exposure model
  RegularizerKind reg_kind = RegularizerKind::FeedbackLoss;
  double mu = 0.05;        // propensity floor; caps weights at 1/mu
  int batch_size = 256;
  int negs_per_pos = 4;
  int max_epochs = 100;
  int patience = 10;
  double objective_tol = 0.001;  // stationarity tolerance for minimax runs
  double l2 = 0.0;               // decoupled weight decay on touched rows
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;  // single-model trainers only
  bool train_beta = true;
  int eval_negatives = 100;  // validation candidates per user
  int hidden_dim = 32;       // embedding width for models built by ps_train / the CLI
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

void validate(const TrainConfig& cfg);

struct EpochRow {
  int epoch = 0;
  double objective = 0.0;
  double weighted_f_loss = 0.0;
  double reg_term = 0.0;
  double lr_theta = 0.0;
  double lr_psi = 0.0;
  double f_val_hit10 = 0.0;
  double f_val_ndcg10 = 0.0;
  double g_val_hit10 = 0.0;
  double g_val_ndcg10 = 0.0;
};

struct TrainState {
  std::vector<double> objective_history;  // per-epoch objective means
  std::vector<double> val_metric_history; // per-epoch f validation Hit@10
  std::vector<EpochRow> epochs;
  int best_epoch = -1;                    // argmax validation Hit@10 (0-based)
  bool stopped_early = false;
  bool diverged = false;
};

enum class StopMode { MetricImprovement, ObjectiveStability };

// MetricImprovement: true once the trailing `patience` entries show no
// improvement > tol over the running best. ObjectiveStability: true once the
// trailing `patience` successive changes are all <= tol.
bool early_stop_check(const std::vector<double>& history, int patience, double tol,
                      StopMode mode);

// Validation ranking quality of the held-out second-to-last items.
struct ValMetrics {
  double hit10 = 0.0;
  double ndcg10 = 0.0;
};
ValMetrics validation_metrics(const RecModel& model, const SplitDataset& split,
                              int n_negatives, std::uint64_t seed);

// param += step * grad for every entry present in grads.
void apply_gradients_sgd(RecModel& model, const ModelGradients& grads, double step);
// Multiplies touched embedding rows and the dense head blocks by factor.
void decay_touched(RecModel& model, const ModelGradients& grads, double factor);

// Auxiliary data some regularizers need during training. feedback-loss needs
// nothing; exposure-loss wants labeled pairs; popularity-correlation wants
// per-item train feedback rates (built automatically when absent).
struct BatchRegContext {
  const std::vector<ExposurePair>* exposure = nullptr;
  const std::vector<double>* item_feedback_rate = nullptr;
};

struct AclParts {
  double objective = 0.0;
  double weighted_f_loss = 0.0;
  double reg_term = 0.0;
  bool reg_degenerate = false;
};

// Batch objective of the two-model game:
//   mean_j loss(y_j, f(u_j,i_j)) / G_beta(g(u_j,i_j), y_j)  -  alpha * reg(g)
AclParts acl_loss(const RecModel& f, const RecModel& g, const PropensityHead& head,
                  const Batch& batch, double alpha, RegularizerKind reg_kind,
                  const BatchRegContext& ctx = {});

// Exact batch gradients of the objective above.
struct AclGrads {
  ModelGradients f_grads;  // d objective / d theta
  ModelGradients g_grads;  // d objective / d psi (weighted term and reg term)
  double d_beta0 = 0.0;
  double d_beta1 = 0.0;
  double d_beta2 = 0.0;
};
AclGrads acl_grads(const RecModel& f, const RecModel& g, const PropensityHead& head,
                   const Batch& batch, double alpha, RegularizerKind reg_kind,
                   const BatchRegContext& ctx = {});

using EpochCallback =
    std::function<void(int epoch, const RecModel& f, const RecModel* g, const PropensityHead* head)>;

// Plain empirical risk minimization of the logistic loss with negative
// sampling; early-stops on validation Hit@10 and returns the best-validation
// checkpoint.
RecModel erm_train(RecModel model, const SplitDataset& split, const TrainConfig& cfg,
                   TrainState* state = nullptr, const EpochCallback& on_epoch = {});

// Stage two of the two-stage propensity baseline: propensity-weighted risk
// minimization over theta (and the betas unless cfg.train_beta is false)
// against a frozen exposure model.
RecModel ps_stage2_train(RecModel f, const RecModel& g_frozen, PropensityHead& head,
                         const SplitDataset& split, const TrainConfig& cfg,
                         TrainState* state = nullptr, const EpochCallback& on_epoch = {});

struct PsResult {
  RecModel f;
  RecModel g;
  PropensityHead head;
  TrainState stage1;
  TrainState stage2;
};
PsResult ps_train(ModelKind f_kind, ModelKind g_kind, const SplitDataset& split,
                  const TrainConfig& cfg, const std::vector<int>& layer_spec = {});

// Two-timescale gradient descent/ascent on the minimax objective: per batch a
// descent step on theta and the betas at r_theta, then an ascent step on psi
// at r_psi; learning rates are divided by their discounts each epoch. Stops
// when the epoch objective is stationary for `patience` epochs.
struct AclResult {
  RecModel f;
  RecModel g;
  PropensityHead head;
  TrainState state;
};
AclResult acl_train(RecModel f, RecModel g, PropensityHead head, const SplitDataset& split,
                    const TrainConfig& cfg, const BatchRegContext& ctx = {},
                    const EpochCallback& on_epoch = {});

}  // namespace acrec
