#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acrec/data.hpp"
#include "acrec/models.hpp"
#include "acrec/propensity.hpp"

namespace acrec {

// Weighting regimes for ranking metrics:
//   Standard            unweighted mean over test users
//   OracleUnbiased      weights 1/p from a ground-truth exposure table
//   PopularityDebiased  weights 1/p from normalized train popularity
//   Robust              weights 1/G_beta from a learned adversarial head
enum class Weighting { Standard, OracleUnbiased, PopularityDebiased, Robust };

std::string to_string(Weighting w);
Weighting weighting_from_string(const std::string& s);

struct EvalProtocol {
  int n_eval_negatives = 100;       // candidates = 1 positive + this many
  std::vector<int> cutoffs = {5, 10};
  Weighting weighting = Weighting::Standard;
  bool self_normalize = true;       // which weighted estimate is primary
  double mu = 0.05;                 // propensity floor for the weights
  int repetitions = 1;              // independent candidate draws
  bool full_catalog = false;        // rank against every non-positive item
  std::uint64_t seed = 0;
};

struct WeightsSource {
  const RecModel* g = nullptr;            // Robust
  const PropensityHead* head = nullptr;   // Robust
  const PairProbTable* exposure = nullptr;          // OracleUnbiased
  const std::vector<double>* item_propensity = nullptr;  // PopularityDebiased
};

struct MetricCell {
  double mean = 0.0;
  double stddev = 0.0;
};

struct EvalReport {
  Weighting weighting = Weighting::Standard;
  int n_users = 0;
  int repetitions = 1;
  std::uint64_t seed = 0;
  int n_eval_negatives = 0;
  bool self_normalize = true;
  std::vector<int> cutoffs;
  std::vector<MetricCell> hit_raw, ndcg_raw;    // plain mean (Standard) or raw IPS
  std::vector<MetricCell> hit_self, ndcg_self;  // self-normalized variant
  double ess = 0.0;                             // (sum w)^2 / sum w^2, mean over reps
  bool raw_exceeds_unit = false;                // raw IPS cells can leave [0,1]
};

// 1 + number of candidates scoring strictly above the positive; score ties
// are broken by the candidate order left by a seeded shuffle.
int rank_position(const RecModel& model, int user, int positive,
                  const std::vector<int>& negatives, Rng& rng);

double hit_at_k(int rank, int k);
double ndcg_at_k(int rank, int k);

EvalReport evaluate(const RecModel& model, const SplitDataset& split,
                    const EvalProtocol& protocol, const WeightsSource* weights = nullptr);

// Train popularity normalized to (0,1] by the most frequent item.
std::vector<double> popularity_propensities(const SplitDataset& split);

// |self-normalized OracleUnbiased NDCG@10 - Standard NDCG@10| under one
// candidate draw; quantifies how exposure-biased the standard metric is.
double unbiased_gap(const RecModel& model, const PairProbTable& exposure,
                    const SplitDataset& split, EvalProtocol protocol);

std::string report_to_json(const EvalReport& report, const std::string& label);
std::string report_to_text(const EvalReport& report, const std::string& label);

}  // namespace acrec
