#pragma once

#include <string>
#include <vector>

#include "acrec/models.hpp"

namespace acrec {

// Logistic exposure head: clamp(sigmoid(beta0 + beta1*g_score + beta2*y),
// mu, 1 - 1e-6). The floor mu keeps every importance weight 1/G within
// (1, 1/mu].
struct PropensityHead {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double mu = 0.05;
};

inline constexpr double kPropensityCeil = 1.0 - 1e-6;

double g_beta(double g_score, int y, const PropensityHead& head);

// Chain-rule gradients scaled by `upstream`; all four are zero while the
// clamp is active.
struct GBetaGrads {
  double d_beta0 = 0.0;
  double d_beta1 = 0.0;
  double d_beta2 = 0.0;
  double d_gscore = 0.0;
};
GBetaGrads g_beta_grads(double g_score, int y, const PropensityHead& head, double upstream);

// Surrogate regularizers standing in for the exposure-distance term. All
// three return "larger = g matches the exposure prior better is penalized
// less", so the trainer can always subtract alpha * reg.
enum class RegularizerKind { ExposureLoss, PopularityCorrelation, FeedbackLoss };

std::string to_string(RegularizerKind kind);
RegularizerKind regularizer_from_string(const std::string& s);

struct ExposurePair {
  int user = 0;
  int item = 0;
  int label = 1;  // +1 exposed, -1 known unexposed
};

// Inputs a regularizer may need; only the fields for the selected kind are
// consulted.
struct RegInputs {
  const Batch* batch = nullptr;                          // FeedbackLoss
  const std::vector<ExposurePair>* exposure = nullptr;   // ExposureLoss
  const std::vector<int>* users = nullptr;               // PopularityCorrelation
  const std::vector<int>* items = nullptr;
  const std::vector<double>* item_feedback_rate = nullptr;
};

// FeedbackLoss          mean logistic loss of g on the batch labels
// ExposureLoss          mean logistic loss of g against exposure labels
// PopularityCorrelation negative Pearson correlation across items between the
//                       mean sigmoid(g(u,i)) over the user sample and the
//                       per-item feedback rate; 0 with *degenerate set when
//                       either vector has zero variance
double regularizer_loss(RegularizerKind kind, const RecModel& g, const RegInputs& in,
                        bool* degenerate = nullptr);

// Exact gradients of regularizer_loss with respect to g's parameters.
ModelGradients regularizer_grad(RegularizerKind kind, const RecModel& g, const RegInputs& in);

}  // namespace acrec
