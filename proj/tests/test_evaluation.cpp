#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "acrec/evaluation.hpp"
#include "testutil.hpp"

using namespace acrec;
using namespace acrec::testutil;

namespace {

// Item-bias-only MF: score(u, i) = bias[i], easy to reason about.
RecModel bias_model(int n_users, const std::vector<double>& item_bias) {
  RecModel m = init_model(ModelKind::MF, n_users, static_cast<int>(item_bias.size()), 2, {}, 0);
  for (double& x : m.user_emb.data) x = 0.0;
  for (double& x : m.item_emb.data) x = 0.0;
  for (double& x : m.user_bias.data) x = 0.0;
  for (std::size_t i = 0; i < item_bias.size(); ++i) m.item_bias.at(static_cast<int>(i), 0) = item_bias[i];
  return m;
}

}  // namespace

TEST_CASE("rank_position basics") {
  RecModel m = bias_model(1, {10.0, 1.0, 2.0, 3.0});
  Rng rng(1);
  CHECK(rank_position(m, 0, 0, {1, 2, 3}, rng) == 1);  // positive on top
  CHECK(rank_position(m, 0, 1, {2, 3}, rng) == 3);     // both negatives above

  // 100 negatives all scoring above gives rank 101
  std::vector<double> biases(101, 5.0);
  biases[0] = 0.0;
  RecModel big = bias_model(1, biases);
  std::vector<int> negs;
  for (int i = 1; i <= 100; ++i) negs.push_back(i);
  Rng rng2(2);
  CHECK(rank_position(big, 0, 0, negs, rng2) == 101);
}

TEST_CASE("rank_position breaks ties by the shuffled candidate order") {
  RecModel m = bias_model(1, {1.0, 1.0});
  int rank1 = 0, rank2 = 0;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    Rng rng(seed);
    // replicate the shuffle to know the candidate order
    std::vector<int> cand = {1, 0};
    Rng replay(seed);
    replay.shuffle(cand);
    Rng fresh(seed);
    const int rank = rank_position(m, 0, 0, {1}, fresh);
    if (cand[0] == 1) {
      CHECK(rank == 2);  // tie shuffled before the positive
      ++rank2;
    } else {
      CHECK(rank == 1);
      ++rank1;
    }
  }
  CHECK(rank1 > 0);
  CHECK(rank2 > 0);
}

TEST_CASE("hit and ndcg closed forms and monotonicity in K") {
  CHECK(hit_at_k(1, 10) == 1.0);
  CHECK(ndcg_at_k(1, 10) == 1.0);
  CHECK(ndcg_at_k(3, 10) == doctest::Approx(0.5));  // 1/log2(4)
  CHECK(hit_at_k(11, 10) == 0.0);
  CHECK(ndcg_at_k(11, 10) == 0.0);
  for (int rank = 1; rank <= 20; ++rank) {
    for (int k = 1; k < 20; ++k) {
      CHECK(hit_at_k(rank, k) <= hit_at_k(rank, k + 1));
      CHECK(ndcg_at_k(rank, k) <= ndcg_at_k(rank, k + 1));
    }
  }
}

namespace {

SplitDataset tiny_split() {
  // 3 users, 8 items; positives chosen so 5 candidates remain per user
  return make_split(8, {{0, 1}, {2, 3}, {4, 5}}, {6, 6, 6}, {7, 0, 1});
}

EvalProtocol tiny_protocol() {
  EvalProtocol p;
  p.n_eval_negatives = 4;
  p.cutoffs = {1, 3, 5};
  p.repetitions = 1;
  p.seed = 2024;
  return p;
}

}  // namespace

TEST_CASE("evaluate: constant weights collapse to the standard report") {
  Rng rng(5);
  RecModel m = init_model(ModelKind::MF, 3, 8, 4, {}, 77);
  randomize_params(m, rng, 0.7);
  SplitDataset s = tiny_split();
  EvalProtocol p = tiny_protocol();

  EvalReport std_report = evaluate(m, s, p, nullptr);

  // all propensities exactly 1: identical to standard
  PairProbTable ones(3, 8);
  for (int u = 0; u < 3; ++u) {
    for (int i = 0; i < 8; ++i) ones.set(u, i, 1.0);
  }
  p.weighting = Weighting::OracleUnbiased;
  WeightsSource src;
  src.exposure = &ones;
  EvalReport w1 = evaluate(m, s, p, &src);
  for (std::size_t c = 0; c < p.cutoffs.size(); ++c) {
    CHECK(w1.hit_raw[c].mean == std_report.hit_raw[c].mean);
    CHECK(w1.ndcg_raw[c].mean == std_report.ndcg_raw[c].mean);
    CHECK(w1.hit_self[c].mean == std_report.hit_self[c].mean);
  }
  CHECK(w1.ess == doctest::Approx(3.0));

  // all propensities 0.5: raw doubles, self-normalized matches standard
  PairProbTable halves(3, 8);
  for (int u = 0; u < 3; ++u) {
    for (int i = 0; i < 8; ++i) halves.set(u, i, 0.5);
  }
  src.exposure = &halves;
  EvalReport w2 = evaluate(m, s, p, &src);
  for (std::size_t c = 0; c < p.cutoffs.size(); ++c) {
    CHECK(w2.hit_raw[c].mean == doctest::Approx(2.0 * std_report.hit_raw[c].mean));
    CHECK(w2.ndcg_raw[c].mean == doctest::Approx(2.0 * std_report.ndcg_raw[c].mean));
    CHECK(w2.hit_self[c].mean == doctest::Approx(std_report.hit_raw[c].mean));
    CHECK(w2.ndcg_self[c].mean == doctest::Approx(std_report.ndcg_raw[c].mean));
  }
}

TEST_CASE("evaluate matches a brute-force oracle on small candidate sets") {
  Rng rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    RecModel m = init_model(ModelKind::GMF, 3, 8, 3, {}, rng.next_u64());
    randomize_params(m, rng, 0.6);
    SplitDataset s = tiny_split();
    EvalProtocol p = tiny_protocol();
    p.seed = rng.next_u64();

    EvalReport report = evaluate(m, s, p, nullptr);

    // brute force: replay the candidate draw and the tie-break shuffle, then
    // compute the rank by direct enumeration
    std::vector<double> hit(p.cutoffs.size(), 0.0), ndcg(p.cutoffs.size(), 0.0);
    Rng replay(derive_seed(p.seed, "eval-rep", 0));
    for (int u = 0; u < s.n_users; ++u) {
      std::vector<int> negs = sample_negatives(u, p.n_eval_negatives, s, replay);
      std::vector<int> cand = negs;
      cand.push_back(s.test[u]);
      replay.shuffle(cand);
      const double s_pos = score(m, u, s.test[u]);
      int rank = 1;
      bool seen_pos = false;
      for (int c : cand) {
        if (c == s.test[u]) {
          seen_pos = true;
          continue;
        }
        const double sc = score(m, u, c);
        if (sc > s_pos || (sc == s_pos && !seen_pos)) ++rank;
      }
      for (std::size_t k = 0; k < p.cutoffs.size(); ++k) {
        hit[k] += rank <= p.cutoffs[k] ? 1.0 : 0.0;
        ndcg[k] += rank <= p.cutoffs[k] ? 1.0 / std::log2(rank + 1.0) : 0.0;
      }
    }
    for (std::size_t k = 0; k < p.cutoffs.size(); ++k) {
      CHECK(report.hit_raw[k].mean == doctest::Approx(hit[k] / 3.0));
      CHECK(report.ndcg_raw[k].mean == doctest::Approx(ndcg[k] / 3.0));
    }
  }
}

TEST_CASE("standard evaluation is invariant under strictly increasing score transforms") {
  Rng rng(9);
  RecModel m = init_model(ModelKind::MF, 3, 8, 4, {}, 31);
  randomize_params(m, rng, 0.5);
  SplitDataset s = tiny_split();
  EvalProtocol p = tiny_protocol();
  EvalReport before = evaluate(m, s, p, nullptr);

  // map every score to 2s + 1 through parameter surgery
  RecModel t = m;
  for (double& x : t.item_emb.data) x *= 2.0;
  for (double& x : t.user_bias.data) x = 2.0 * x + 0.5;
  for (double& x : t.item_bias.data) x = 2.0 * x + 0.5;
  for (int u = 0; u < 3; ++u) {
    for (int i = 0; i < 8; ++i) {
      CHECK(score(t, u, i) == doctest::Approx(2.0 * score(m, u, i) + 1.0).epsilon(1e-12));
    }
  }
  EvalReport after = evaluate(t, s, p, nullptr);
  for (std::size_t c = 0; c < p.cutoffs.size(); ++c) {
    CHECK(after.hit_raw[c].mean == before.hit_raw[c].mean);
    CHECK(after.ndcg_raw[c].mean == before.ndcg_raw[c].mean);
  }
}

TEST_CASE("self-normalized weighted metric is a convex combination of per-user metrics") {
  Rng rng(12);
  RecModel m = init_model(ModelKind::MF, 3, 8, 4, {}, 44);
  randomize_params(m, rng, 0.4);
  SplitDataset s = tiny_split();
  EvalProtocol p = tiny_protocol();
  p.weighting = Weighting::PopularityDebiased;
  std::vector<double> prop = {0.2, 0.9, 0.5, 1.0, 0.3, 0.8, 0.6, 0.05};
  WeightsSource src;
  src.item_propensity = &prop;
  EvalReport r = evaluate(m, s, p, &src);
  p.weighting = Weighting::Standard;
  EvalReport std_r = evaluate(m, s, p, nullptr);
  // per-user hit is 0 or 1, so any convex combination lies in [0, 1]
  for (std::size_t c = 0; c < p.cutoffs.size(); ++c) {
    CHECK(r.hit_self[c].mean >= 0.0);
    CHECK(r.hit_self[c].mean <= 1.0);
    CHECK(r.ndcg_self[c].mean >= 0.0);
    CHECK(r.ndcg_self[c].mean <= 1.0);
  }
  CHECK(r.ess <= 3.0 + 1e-12);
  CHECK(std_r.ess == doctest::Approx(3.0));
}

TEST_CASE("robust weighting uses the learned head; errors when missing pieces") {
  Rng rng(21);
  RecModel m = init_model(ModelKind::MF, 3, 8, 4, {}, 3);
  randomize_params(m, rng, 0.4);
  RecModel g = init_model(ModelKind::MF, 3, 8, 4, {}, 4);
  randomize_params(g, rng, 0.4);
  PropensityHead head{0.0, 0.0, 0.0, 0.05};  // constant G = 0.5
  SplitDataset s = tiny_split();
  EvalProtocol p = tiny_protocol();

  EvalReport std_r = evaluate(m, s, p, nullptr);
  p.weighting = Weighting::Robust;
  WeightsSource src;
  src.g = &g;
  src.head = &head;
  EvalReport rob = evaluate(m, s, p, &src);
  for (std::size_t c = 0; c < p.cutoffs.size(); ++c) {
    CHECK(rob.hit_raw[c].mean == doctest::Approx(2.0 * std_r.hit_raw[c].mean));
    CHECK(rob.hit_self[c].mean == doctest::Approx(std_r.hit_raw[c].mean));
  }
  WeightsSource empty;
  CHECK_THROWS_AS(evaluate(m, s, p, &empty), ConfigError);

  p.weighting = Weighting::OracleUnbiased;
  PairProbTable sparse(3, 8);  // nothing filled in
  WeightsSource osrc;
  osrc.exposure = &sparse;
  CHECK_THROWS_AS(evaluate(m, s, p, &osrc), DataError);
}

TEST_CASE("protocol validation") {
  RecModel m = init_model(ModelKind::MF, 3, 8, 2, {}, 0);
  SplitDataset s = tiny_split();
  EvalProtocol p = tiny_protocol();
  p.cutoffs = {5, 3};
  CHECK_THROWS_AS(evaluate(m, s, p, nullptr), ConfigError);
  p = tiny_protocol();
  p.n_eval_negatives = 2;  // max cutoff 5 needs >= 4
  CHECK_THROWS_AS(evaluate(m, s, p, nullptr), ConfigError);
  p = tiny_protocol();
  p.repetitions = 0;
  CHECK_THROWS_AS(evaluate(m, s, p, nullptr), ConfigError);
}

TEST_CASE("repetitions produce a spread and full catalog works") {
  Rng rng(33);
  RecModel m = init_model(ModelKind::MF, 3, 8, 4, {}, 5);
  randomize_params(m, rng, 0.5);
  SplitDataset s = tiny_split();
  EvalProtocol p = tiny_protocol();
  p.repetitions = 5;
  EvalReport r = evaluate(m, s, p, nullptr);
  CHECK(r.repetitions == 5);
  for (const MetricCell& c : r.hit_raw) CHECK(c.stddev >= 0.0);

  p.repetitions = 1;
  p.full_catalog = true;
  EvalReport full = evaluate(m, s, p, nullptr);
  CHECK(full.n_eval_negatives == -1);
  // with the full catalog the report is deterministic regardless of the seed
  p.seed = 999;
  EvalReport full2 = evaluate(m, s, p, nullptr);
  for (std::size_t c = 0; c < p.cutoffs.size(); ++c) {
    CHECK(full.hit_raw[c].mean == full2.hit_raw[c].mean);
  }
}

TEST_CASE("unbiased gap: zero under constant exposure, deterministic") {
  Rng rng(40);
  RecModel m = init_model(ModelKind::MF, 3, 8, 4, {}, 6);
  randomize_params(m, rng, 0.5);
  SplitDataset s = tiny_split();
  EvalProtocol p = tiny_protocol();
  p.full_catalog = true;
  p.cutoffs = {10};

  PairProbTable constant(3, 8);
  for (int u = 0; u < 3; ++u) {
    for (int i = 0; i < 8; ++i) constant.set(u, i, 0.37);
  }
  CHECK(unbiased_gap(m, constant, s, p) == doctest::Approx(0.0).epsilon(1e-12));

  PairProbTable skew(3, 8);
  for (int u = 0; u < 3; ++u) {
    for (int i = 0; i < 8; ++i) skew.set(u, i, 0.1 + 0.1 * i);
  }
  const double g1 = unbiased_gap(m, skew, s, p);
  const double g2 = unbiased_gap(m, skew, s, p);
  CHECK(g1 == g2);
}

TEST_CASE("popularity propensities are normalized to (0, 1]") {
  SplitDataset s = make_split(4, {{0, 1}, {0}, {0, 2}}, {3, 3, 3}, {3, 3, 3});
  std::vector<double> prop = popularity_propensities(s);
  CHECK(prop[0] == 1.0);
  CHECK(prop[1] == doctest::Approx(1.0 / 3.0));
  CHECK(prop[3] == 0.0);  // unseen items floor at the protocol mu later
}

TEST_CASE("report serialization round trips through JSON") {
  Rng rng(50);
  RecModel m = init_model(ModelKind::MF, 3, 8, 4, {}, 6);
  randomize_params(m, rng, 0.5);
  SplitDataset s = tiny_split();
  EvalReport r = evaluate(m, s, tiny_protocol(), nullptr);
  const std::string j = report_to_json(r, "unit");
  CHECK(j.find("\"label\": \"unit\"") != std::string::npos);
  CHECK(j.find("\"weighting\": \"standard\"") != std::string::npos);
  const std::string t = report_to_text(r, "unit");
  CHECK(t.find("Hit@K") != std::string::npos);
}
