#include "acrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace acrec {

std::string to_string(Weighting w) {
  switch (w) {
    case Weighting::Standard: return "standard";
    case Weighting::OracleUnbiased: return "oracle_unbiased";
    case Weighting::PopularityDebiased: return "popularity_debiased";
    case Weighting::Robust: return "robust";
  }
  return "?";
}

Weighting weighting_from_string(const std::string& s) {
  if (s == "standard") return Weighting::Standard;
  if (s == "oracle_unbiased") return Weighting::OracleUnbiased;
  if (s == "popularity_debiased") return Weighting::PopularityDebiased;
  if (s == "robust") return Weighting::Robust;
  throw ConfigError("unknown weighting '" + s +
                    "' (expected standard|oracle_unbiased|popularity_debiased|robust)");
}

int rank_position(const RecModel& model, int user, int positive,
                  const std::vector<int>& negatives, Rng& rng) {
  std::vector<int> cand = negatives;
  cand.push_back(positive);
  rng.shuffle(cand);
  std::size_t pos_at = 0;
  for (std::size_t j = 0; j < cand.size(); ++j) {
    if (cand[j] == positive) {
      pos_at = j;
      break;
    }
  }
  const double s_pos = score(model, user, positive);
  int above = 0;
  for (std::size_t j = 0; j < cand.size(); ++j) {
    if (j == pos_at) continue;
    const double s = score(model, user, cand[j]);
    if (s > s_pos || (s == s_pos && j < pos_at)) ++above;
  }
  return 1 + above;
}

double hit_at_k(int rank, int k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(int rank, int k) {
  if (rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

std::vector<double> popularity_propensities(const SplitDataset& split) {
  std::vector<double> counts(split.n_items, 0.0);
  for (const auto& items : split.train) {
    for (int i : items) counts[i] += 1.0;
  }
  double max_count = 0.0;
  for (double c : counts) max_count = std::max(max_count, c);
  if (max_count <= 0.0) throw DataError("popularity_propensities: empty train set");
  for (double& c : counts) c /= max_count;
  return counts;
}

namespace {

void validate_protocol(const EvalProtocol& p) {
  if (p.cutoffs.empty()) throw ConfigError("evaluation: no cutoffs");
  for (std::size_t i = 1; i < p.cutoffs.size(); ++i) {
    if (p.cutoffs[i] <= p.cutoffs[i - 1]) {
      throw ConfigError("evaluation: cutoffs must be sorted ascending");
    }
  }
  if (p.cutoffs.front() < 1) throw ConfigError("evaluation: cutoffs must be >= 1");
  if (!p.full_catalog && p.n_eval_negatives < p.cutoffs.back() - 1) {
    throw ConfigError("evaluation: n_eval_negatives must be >= max cutoff - 1");
  }
  if (p.repetitions < 1) throw ConfigError("evaluation: repetitions must be >= 1");
  if (p.mu <= 0.0 || p.mu >= 1.0) throw ConfigError("evaluation: mu must lie in (0,1)");
}

double pair_weight(const EvalProtocol& p, const WeightsSource* src, int user, int item) {
  double prop = 1.0;
  switch (p.weighting) {
    case Weighting::Standard:
      return 1.0;
    case Weighting::Robust: {
      if (!src || !src->g || !src->head) {
        throw ConfigError("robust evaluation needs a propensity model (g + head)");
      }
      prop = g_beta(score(*src->g, user, item), +1, *src->head);
      break;
    }
    case Weighting::OracleUnbiased: {
      if (!src || !src->exposure) {
        throw ConfigError("oracle_unbiased evaluation needs an exposure table");
      }
      if (!src->exposure->has(user, item)) {
        throw DataError("oracle exposure table is missing test pair (" +
                        std::to_string(user) + ", " + std::to_string(item) + ")");
      }
      prop = src->exposure->at(user, item);
      break;
    }
    case Weighting::PopularityDebiased: {
      if (!src || !src->item_propensity) {
        throw ConfigError("popularity_debiased evaluation needs item propensities");
      }
      prop = (*src->item_propensity)[item];
      break;
    }
  }
  prop = std::max(prop, p.mu);
  return 1.0 / prop;
}

MetricCell cell_from_reps(const std::vector<double>& xs) {
  MetricCell c;
  const double n = static_cast<double>(xs.size());
  for (double x : xs) c.mean += x;
  c.mean /= n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - c.mean) * (x - c.mean);
    c.stddev = std::sqrt(ss / (n - 1.0));
  }
  return c;
}

}  // namespace

EvalReport evaluate(const RecModel& model, const SplitDataset& split,
                    const EvalProtocol& protocol, const WeightsSource* weights) {
  validate_protocol(protocol);

  const std::size_t n_cut = protocol.cutoffs.size();
  std::vector<std::vector<double>> rep_hit_raw(n_cut), rep_ndcg_raw(n_cut);
  std::vector<std::vector<double>> rep_hit_self(n_cut), rep_ndcg_self(n_cut);
  std::vector<double> rep_ess;

  EvalReport report;
  report.weighting = protocol.weighting;
  report.n_users = split.n_users;
  report.repetitions = protocol.repetitions;
  report.seed = protocol.seed;
  report.n_eval_negatives = protocol.full_catalog ? -1 : protocol.n_eval_negatives;
  report.self_normalize = protocol.self_normalize;
  report.cutoffs = protocol.cutoffs;

  std::vector<std::string> missing;
  for (int rep = 0; rep < protocol.repetitions; ++rep) {
    Rng rng(derive_seed(protocol.seed, "eval-rep", static_cast<std::uint64_t>(rep)));
    std::vector<double> sum_mw_hit(n_cut, 0.0), sum_mw_ndcg(n_cut, 0.0);
    double sum_w = 0.0, sum_w2 = 0.0;

    for (int u = 0; u < split.n_users; ++u) {
      const int positive = split.test[u];
      std::vector<int> negatives;
      if (protocol.full_catalog) {
        auto pos = split.positives(u);
        for (int i = 0; i < split.n_items; ++i) {
          if (!pos.count(i)) negatives.push_back(i);
        }
      } else {
        negatives = sample_negatives(u, protocol.n_eval_negatives, split, rng);
      }
      const int rank = rank_position(model, u, positive, negatives, rng);
      const double w = pair_weight(protocol, weights, u, positive);
      sum_w += w;
      sum_w2 += w * w;
      for (std::size_t c = 0; c < n_cut; ++c) {
        sum_mw_hit[c] += w * hit_at_k(rank, protocol.cutoffs[c]);
        sum_mw_ndcg[c] += w * ndcg_at_k(rank, protocol.cutoffs[c]);
      }
    }

    const double n = static_cast<double>(split.n_users);
    for (std::size_t c = 0; c < n_cut; ++c) {
      rep_hit_raw[c].push_back(sum_mw_hit[c] / n);
      rep_ndcg_raw[c].push_back(sum_mw_ndcg[c] / n);
      rep_hit_self[c].push_back(sum_w > 0.0 ? sum_mw_hit[c] / sum_w : 0.0);
      rep_ndcg_self[c].push_back(sum_w > 0.0 ? sum_mw_ndcg[c] / sum_w : 0.0);
    }
    rep_ess.push_back(sum_w2 > 0.0 ? sum_w * sum_w / sum_w2 : 0.0);
  }

  for (std::size_t c = 0; c < n_cut; ++c) {
    report.hit_raw.push_back(cell_from_reps(rep_hit_raw[c]));
    report.ndcg_raw.push_back(cell_from_reps(rep_ndcg_raw[c]));
    report.hit_self.push_back(cell_from_reps(rep_hit_self[c]));
    report.ndcg_self.push_back(cell_from_reps(rep_ndcg_self[c]));
    if (report.hit_raw[c].mean > 1.0 || report.ndcg_raw[c].mean > 1.0) {
      report.raw_exceeds_unit = true;
    }
  }
  double ess = 0.0;
  for (double e : rep_ess) ess += e;
  report.ess = ess / static_cast<double>(rep_ess.size());
  return report;
}

double unbiased_gap(const RecModel& model, const PairProbTable& exposure,
                    const SplitDataset& split, EvalProtocol protocol) {
  protocol.cutoffs = {10};
  protocol.repetitions = 1;

  protocol.weighting = Weighting::Standard;
  EvalReport std_report = evaluate(model, split, protocol, nullptr);

  protocol.weighting = Weighting::OracleUnbiased;
  WeightsSource src;
  src.exposure = &exposure;
  EvalReport oracle_report = evaluate(model, split, protocol, &src);

  return std::fabs(oracle_report.ndcg_self[0].mean - std_report.ndcg_raw[0].mean);
}

namespace {

nlohmann::json report_json_object(const EvalReport& r, const std::string& label) {
  nlohmann::json j;
  j["label"] = label;
  j["weighting"] = to_string(r.weighting);
  j["n_users"] = r.n_users;
  j["repetitions"] = r.repetitions;
  j["seed"] = r.seed;
  j["n_eval_negatives"] = r.n_eval_negatives;
  j["self_normalize"] = r.self_normalize;
  j["ess"] = r.ess;
  j["raw_exceeds_unit"] = r.raw_exceeds_unit;
  j["cutoffs"] = r.cutoffs;
  auto cells = [](const std::vector<MetricCell>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const MetricCell& c : v) arr.push_back({{"mean", c.mean}, {"std", c.stddev}});
    return arr;
  };
  j["hit"] = cells(r.hit_raw);
  j["ndcg"] = cells(r.ndcg_raw);
  j["hit_self_normalized"] = cells(r.hit_self);
  j["ndcg_self_normalized"] = cells(r.ndcg_self);
  return j;
}

}  // namespace

std::string report_to_json(const EvalReport& report, const std::string& label) {
  return report_json_object(report, label).dump(2) + "\n";
}

std::string report_to_text(const EvalReport& report, const std::string& label) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-12s %-20s users=%d reps=%d seed=%llu negs=%d ess=%.1f\n",
                label.c_str(), to_string(report.weighting).c_str(), report.n_users,
                report.repetitions, static_cast<unsigned long long>(report.seed),
                report.n_eval_negatives, report.ess);
  out << buf;
  out << "  K     Hit@K        (std)      NDCG@K       (std)      Hit@K[sn]    NDCG@K[sn]\n";
  for (std::size_t c = 0; c < report.cutoffs.size(); ++c) {
    std::snprintf(buf, sizeof(buf),
                  "  %-5d %-12.5f %-10.5f %-12.5f %-10.5f %-12.5f %-12.5f\n",
                  report.cutoffs[c], report.hit_raw[c].mean, report.hit_raw[c].stddev,
                  report.ndcg_raw[c].mean, report.ndcg_raw[c].stddev,
                  report.hit_self[c].mean, report.ndcg_self[c].mean);
    out << buf;
  }
  if (report.raw_exceeds_unit) {
    out << "  note: raw IPS values exceed 1; see self-normalized columns\n";
  }
  return out.str();
}

}  // namespace acrec
