#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acrec/data.hpp"
#include "acrec/models.hpp"

namespace acrec {

// Two-stage semi-synthetic generator. Stage one fits a relevance model
// (ratings, squared error) and an occurrence model (binarized, logistic) on
// real explicit feedback and draws clicks from
//   p(click) = sigmoid(rating_hat + e1) * clamp(occ_hat * exp(e2)).
// Stage two refits factors on the stage-one clicks and tilts the exposure by
// kappa * cosine(x_u, z_i) before drawing the final clicks, so the exposure
// skew is controlled while relevance stays anchored to the data.
struct SimConfig {
  int d_sim = 8;
  double sigma1 = 0.5;  // std of the relevance noise
  double sigma2 = 0.5;  // std of the log-exposure noise
  double kappa = 1.0;   // exposure tilt scale
  std::uint64_t seed = 0;
  int fit_epochs = 30;
  double fit_lr = 0.05;
  int fit_negs = 4;                // negatives per positive in implicit fits
  int occurrence_fit_epochs = -1;  // -1: same as fit_epochs
  double fit_l2 = 1e-4;            // ridge on the internal factor fits
};

void validate(const SimConfig& cfg);

struct OracleDataset {
  int n_users = 0;
  int n_items = 0;
  std::vector<Interaction> clicks;  // final implicit feedback, value 1
  PairProbTable p_relevance;        // p(Y=1 | O=1)
  PairProbTable p_exposure;         // stage-two p(O=1)
  PairProbTable stage1_exposure;    // stage-one p(O=1)
};

// Rating predictor fit by per-sample SGD on squared error (values in [1,5]).
RecModel fit_relevance_model(const InteractionLog& explicit_log, const SimConfig& cfg);

// Occurrence predictor: logistic matrix factorization over the binarized
// matrix with uniform negative sampling; p(O=1) = sigmoid(score).
RecModel fit_occurrence_model(const InteractionLog& explicit_log, const SimConfig& cfg);

struct Stage1Output {
  int n_users = 0;
  int n_items = 0;
  std::vector<Interaction> clicks;
  PairProbTable p_relevance;
  PairProbTable p_exposure;
};

Stage1Output stage1_generate(const RecModel& relevance, const RecModel& occurrence,
                             const SimConfig& cfg, Rng& rng);
OracleDataset stage2_generate(const Stage1Output& stage1, const SimConfig& cfg, Rng& rng);

// fit relevance -> fit occurrence -> stage one -> stage two.
OracleDataset generate_semi_synthetic(const InteractionLog& explicit_log, const SimConfig& cfg);

// Re-index an oracle table into a filtered id space whose remap names are the
// original numeric ids (the situation after filter_users on generated clicks).
PairProbTable remap_oracle_table(const PairProbTable& table,
                                 const std::vector<std::string>& user_names,
                                 const std::vector<std::string>& item_names);

void save_oracle(const OracleDataset& oracle, const SimConfig& cfg, const std::string& dir);
OracleDataset load_oracle(const std::string& dir);

}  // namespace acrec
