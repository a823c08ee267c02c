#include "acrec/propensity.hpp"

#include <cmath>

namespace acrec {

double g_beta(double g_score, int y, const PropensityHead& head) {
  const double z = head.beta0 + head.beta1 * g_score + head.beta2 * static_cast<double>(y);
  double p = sigmoid(z);
  if (p < head.mu) p = head.mu;
  if (p > kPropensityCeil) p = kPropensityCeil;
  return p;
}

GBetaGrads g_beta_grads(double g_score, int y, const PropensityHead& head, double upstream) {
  GBetaGrads out;
  const double z = head.beta0 + head.beta1 * g_score + head.beta2 * static_cast<double>(y);
  const double p = sigmoid(z);
  if (p < head.mu || p > kPropensityCeil) return out;  // clamped: flat
  const double dz = upstream * p * (1.0 - p);
  out.d_beta0 = dz;
  out.d_beta1 = dz * g_score;
  out.d_beta2 = dz * static_cast<double>(y);
  out.d_gscore = dz * head.beta1;
  return out;
}

std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::ExposureLoss: return "exposure_loss";
    case RegularizerKind::PopularityCorrelation: return "popularity_correlation";
    case RegularizerKind::FeedbackLoss: return "feedback_loss";
  }
  return "?";
}

RegularizerKind regularizer_from_string(const std::string& s) {
  if (s == "exposure_loss") return RegularizerKind::ExposureLoss;
  if (s == "popularity_correlation") return RegularizerKind::PopularityCorrelation;
  if (s == "feedback_loss") return RegularizerKind::FeedbackLoss;
  throw ConfigError("unknown regularizer '" + s +
                    "' (expected exposure_loss|popularity_correlation|feedback_loss)");
}

namespace {

double mean_logistic(const RecModel& g, const std::vector<int>& users,
                     const std::vector<int>& items, const std::vector<int>& labels) {
  if (users.empty()) throw ConfigError("regularizer: empty pair list");
  double sum = 0.0;
  for (std::size_t j = 0; j < users.size(); ++j) {
    sum += logistic_loss(labels[j], score(g, users[j], items[j]));
  }
  return sum / static_cast<double>(users.size());
}

ModelGradients mean_logistic_grad(const RecModel& g, const std::vector<int>& users,
                                  const std::vector<int>& items, const std::vector<int>& labels) {
  Batch b;
  b.users = users;
  b.items = items;
  b.labels = labels;
  const double inv_m = 1.0 / static_cast<double>(users.size());
  std::vector<double> upstream(users.size());
  for (std::size_t j = 0; j < users.size(); ++j) {
    upstream[j] = inv_m * logistic_loss_dscore(labels[j], score(g, users[j], items[j]));
  }
  return score_grad(g, b, upstream);
}

struct CorrForward {
  std::vector<double> a;       // per-item mean sigmoid score
  std::vector<double> sig;     // sigma(score) per (user, item) pair, row-major
  double r = 0.0;
  bool degenerate = false;
};

CorrForward corr_forward(const RecModel& g, const std::vector<int>& users,
                         const std::vector<int>& items, const std::vector<double>& rate) {
  if (items.size() < 2) throw ConfigError("popularity regularizer needs >= 2 items");
  if (users.empty()) throw ConfigError("popularity regularizer needs >= 1 user");
  if (rate.size() != items.size()) {
    throw ConfigError("popularity regularizer: feedback-rate vector length mismatch");
  }
  CorrForward f;
  f.a.assign(items.size(), 0.0);
  f.sig.assign(users.size() * items.size(), 0.0);
  const double inv_u = 1.0 / static_cast<double>(users.size());
  for (std::size_t ui = 0; ui < users.size(); ++ui) {
    for (std::size_t ii = 0; ii < items.size(); ++ii) {
      const double s = sigmoid(score(g, users[ui], items[ii]));
      f.sig[ui * items.size() + ii] = s;
      f.a[ii] += s * inv_u;
    }
  }
  f.r = pearson(f.a, rate, &f.degenerate);
  return f;
}

}  // namespace

double regularizer_loss(RegularizerKind kind, const RecModel& g, const RegInputs& in,
                        bool* degenerate) {
  if (degenerate) *degenerate = false;
  switch (kind) {
    case RegularizerKind::FeedbackLoss: {
      if (!in.batch) throw ConfigError("FeedbackLoss regularizer needs a batch");
      return mean_logistic(g, in.batch->users, in.batch->items, in.batch->labels);
    }
    case RegularizerKind::ExposureLoss: {
      if (!in.exposure || in.exposure->empty()) {
        throw ConfigError("ExposureLoss regularizer needs observed exposure labels");
      }
      std::vector<int> users, items, labels;
      users.reserve(in.exposure->size());
      for (const ExposurePair& p : *in.exposure) {
        users.push_back(p.user);
        items.push_back(p.item);
        labels.push_back(p.label);
      }
      return mean_logistic(g, users, items, labels);
    }
    case RegularizerKind::PopularityCorrelation: {
      if (!in.users || !in.items || !in.item_feedback_rate) {
        throw ConfigError("PopularityCorrelation regularizer needs users, items and feedback rates");
      }
      CorrForward f = corr_forward(g, *in.users, *in.items, *in.item_feedback_rate);
      if (f.degenerate) {
        if (degenerate) *degenerate = true;
        return 0.0;
      }
      // Negated so that subtracting alpha * reg rewards g for tracking the
      // popularity profile, matching the sign contract of the other kinds.
      return -f.r;
    }
  }
  return 0.0;
}

ModelGradients regularizer_grad(RegularizerKind kind, const RecModel& g, const RegInputs& in) {
  switch (kind) {
    case RegularizerKind::FeedbackLoss: {
      if (!in.batch) throw ConfigError("FeedbackLoss regularizer needs a batch");
      return mean_logistic_grad(g, in.batch->users, in.batch->items, in.batch->labels);
    }
    case RegularizerKind::ExposureLoss: {
      if (!in.exposure || in.exposure->empty()) {
        throw ConfigError("ExposureLoss regularizer needs observed exposure labels");
      }
      std::vector<int> users, items, labels;
      for (const ExposurePair& p : *in.exposure) {
        users.push_back(p.user);
        items.push_back(p.item);
        labels.push_back(p.label);
      }
      return mean_logistic_grad(g, users, items, labels);
    }
    case RegularizerKind::PopularityCorrelation: {
      if (!in.users || !in.items || !in.item_feedback_rate) {
        throw ConfigError("PopularityCorrelation regularizer needs users, items and feedback rates");
      }
      const auto& users = *in.users;
      const auto& items = *in.items;
      const auto& rate = *in.item_feedback_rate;
      CorrForward f = corr_forward(g, users, items, rate);
      if (f.degenerate) return ModelGradients{};

      const std::size_t n = items.size();
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        ma += f.a[i];
        mb += rate[i];
      }
      ma /= static_cast<double>(n);
      mb /= static_cast<double>(n);
      double suu = 0.0, svv = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        suu += (f.a[i] - ma) * (f.a[i] - ma);
        svv += (rate[i] - mb) * (rate[i] - mb);
      }
      const double denom = std::sqrt(suu * svv);
      // d(-r)/da_i  with r = Suv / sqrt(Suu*Svv)
      std::vector<double> da(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        da[i] = -((rate[i] - mb) - f.r * std::sqrt(svv / suu) * (f.a[i] - ma)) / denom;
      }

      Batch b;
      std::vector<double> upstream;
      const double inv_u = 1.0 / static_cast<double>(users.size());
      for (std::size_t ui = 0; ui < users.size(); ++ui) {
        for (std::size_t ii = 0; ii < n; ++ii) {
          const double s = f.sig[ui * n + ii];
          b.users.push_back(users[ui]);
          b.items.push_back(items[ii]);
          b.labels.push_back(1);
          upstream.push_back(da[ii] * s * (1.0 - s) * inv_u);
        }
      }
      return score_grad(g, b, upstream);
    }
  }
  return ModelGradients{};
}

}  // namespace acrec
