#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "acrec/numerics.hpp"
#include "acrec/rng.hpp"
#include "testutil.hpp"

using namespace acrec;

TEST_CASE("sigmoid closed forms and saturation") {
  CHECK(sigmoid(0.0) == doctest::Approx(0.5));
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75));
  CHECK(sigmoid(-std::log(3.0)) == doctest::Approx(0.25));
  CHECK(sigmoid(700.0) < 1.0);
  CHECK(sigmoid(700.0) > 0.0);
  CHECK(sigmoid(-700.0) > 0.0);
  CHECK(std::isfinite(sigmoid(-700.0)));
}

TEST_CASE("logistic loss closed forms") {
  CHECK(logistic_loss(+1, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(logistic_loss(+1, 50.0) < 1e-20);
  CHECK(logistic_loss(-1, 50.0) == doctest::Approx(50.0).epsilon(1e-12));
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const double s = rng.normal(0.0, 5.0);
    CHECK(logistic_loss(y, s) >= 0.0);
  }
}

TEST_CASE("softplus identity: phi(y,s) + phi(-y,s) = |s| + 2*softplus(-|s|)") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const double s = rng.normal(0.0, 4.0);
    const double sum = logistic_loss(y, s) + logistic_loss(-y, s);
    CHECK(sum >= std::fabs(s));
    CHECK(sum - std::fabs(s) == doctest::Approx(2.0 * softplus(-std::fabs(s))).epsilon(1e-10));
  }
}

TEST_CASE("logistic loss derivative matches finite differences") {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const double s = rng.normal(0.0, 3.0);
    auto f = [&](const std::vector<double>& x) { return logistic_loss(y, x[0]); };
    const double fd = finite_diff_grad(f, {s}, 1e-5)[0];
    const double analytic = logistic_loss_dscore(y, s);
    CHECK(std::fabs(analytic - fd) <=
          1e-6 * std::max({std::fabs(analytic), std::fabs(fd), 1e-3}));
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged and advances t") {
  DenseMatrix p(2, 3);
  p.data = {1, 2, 3, 4, 5, 6};
  DenseMatrix g(2, 3);
  AdamState st = AdamState::for_param(p);
  const std::vector<double> before = p.data;
  adam_step(p, g, st, 0.1);
  CHECK(p.data == before);
  CHECK(st.step[0] == 1);
  CHECK(st.step[1] == 1);
}

TEST_CASE("adam first step closed form lr*g/(|g|+eps)") {
  DenseMatrix p(1, 1);
  DenseMatrix g(1, 1);
  g.data[0] = 2.0;
  AdamState st = AdamState::for_param(p);
  adam_step(p, g, st, 0.1);
  CHECK(std::fabs(p.data[0] + 0.1) < 1e-6);
  CHECK(st.step[0] == 1);
}

TEST_CASE("adam with two identical unit gradients steps by about lr twice") {
  DenseMatrix p(1, 1);
  DenseMatrix g(1, 1);
  g.data[0] = 1.0;
  AdamState st = AdamState::for_param(p);
  adam_step(p, g, st, 0.05);
  const double after1 = p.data[0];
  CHECK(after1 == doctest::Approx(-0.05).epsilon(1e-6));
  adam_step(p, g, st, 0.05);
  CHECK(p.data[0] == doctest::Approx(-0.10).epsilon(1e-6));
  CHECK(p.data[0] < after1);
}

TEST_CASE("adam first step is scale invariant up to eps") {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const double lr = 0.03;
    // gradients bounded away from zero: the eps effect scales like eps/|g|
    const double gv = (rng.bernoulli(0.5) ? 1.0 : -1.0) * (0.1 + std::fabs(rng.normal(0.0, 1.0)));
    const double c = std::exp(rng.normal(0.0, 1.0));
    DenseMatrix p1(1, 1), p2(1, 1), g1(1, 1), g2(1, 1);
    g1.data[0] = gv;
    g2.data[0] = c * gv;
    AdamState s1 = AdamState::for_param(p1);
    AdamState s2 = AdamState::for_param(p2);
    adam_step(p1, g1, s1, lr);
    adam_step(p2, g2, s2, lr);
    CHECK(std::fabs(p1.data[0] - p2.data[0]) < 1e-6 * lr);
  }
}

TEST_CASE("sparse adam: empty update is bit-identical; untouched rows stay put") {
  Rng rng(19);
  DenseMatrix p(4, 3);
  for (double& x : p.data) x = rng.normal();
  AdamState st = AdamState::for_param(p);
  const std::vector<double> before = p.data;

  sparse_adam_step(p, {}, st, 0.1);
  CHECK(p.data == before);
  CHECK(st.step == std::vector<std::int64_t>(4, 0));

  std::map<int, std::vector<double>> rows;
  rows[2] = {1.0, -2.0, 0.5};
  sparse_adam_step(p, rows, st, 0.1);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (r != 2) CHECK(p.at(r, c) == before[static_cast<std::size_t>(r) * 3 + c]);
    }
  }
  CHECK(st.step[2] == 1);
  CHECK(st.step[0] == 0);
}

TEST_CASE("sparse adam equals dense adam row-for-row and in full") {
  Rng rng(23);
  // same (row, grad) through the sparse path and through a 1-row dense step
  DenseMatrix big(5, 3), small(1, 3);
  for (int c = 0; c < 3; ++c) {
    const double v = rng.normal();
    big.at(3, c) = v;
    small.at(0, c) = v;
  }
  std::vector<double> gvec = {0.3, -1.2, 2.2};
  AdamState sb = AdamState::for_param(big);
  AdamState ss = AdamState::for_param(small);
  std::map<int, std::vector<double>> rows;
  rows[3] = gvec;
  sparse_adam_step(big, rows, sb, 0.07);
  DenseMatrix gm(1, 3);
  gm.data = gvec;
  adam_step(small, gm, ss, 0.07);
  for (int c = 0; c < 3; ++c) CHECK(big.at(3, c) == small.at(0, c));

  // touching every row equals the dense step bit-for-bit
  DenseMatrix a(4, 2), b(4, 2), grad(4, 2);
  for (std::size_t k = 0; k < a.data.size(); ++k) {
    a.data[k] = b.data[k] = rng.normal();
    grad.data[k] = rng.normal();
  }
  AdamState sa = AdamState::for_param(a);
  AdamState sb2 = AdamState::for_param(b);
  std::map<int, std::vector<double>> all_rows;
  for (int r = 0; r < 4; ++r) all_rows[r] = {grad.at(r, 0), grad.at(r, 1)};
  for (int it = 0; it < 3; ++it) {
    adam_step(a, grad, sa, 0.02);
    sparse_adam_step(b, all_rows, sb2, 0.02);
  }
  CHECK(a.data == b.data);
  CHECK(sa.step == sb2.step);
}

TEST_CASE("sparse adam rejects out-of-range rows and bad shapes") {
  DenseMatrix p(2, 2);
  AdamState st = AdamState::for_param(p);
  std::map<int, std::vector<double>> rows;
  rows[5] = {1.0, 1.0};
  CHECK_THROWS_AS(sparse_adam_step(p, rows, st, 0.1), ConfigError);
  DenseMatrix g(3, 2);
  CHECK_THROWS_AS(adam_step(p, g, st, 0.1), ConfigError);
}

TEST_CASE("adam keeps second moments nonnegative") {
  Rng rng(29);
  DenseMatrix p(2, 2), g(2, 2);
  AdamState st = AdamState::for_param(p);
  for (int it = 0; it < 20; ++it) {
    for (double& x : g.data) x = rng.normal(0.0, 3.0);
    adam_step(p, g, st, 0.01);
    for (double v : st.v.data) CHECK(v >= 0.0);
  }
}

TEST_CASE("finite differences: polynomial, constant, sigmoid") {
  auto sq = [](const std::vector<double>& x) { return x[0] * x[0]; };
  CHECK(std::fabs(finite_diff_grad(sq, {3.0}, 1e-5)[0] - 6.0) < 1e-8);

  auto constant = [](const std::vector<double>&) { return 4.2; };
  auto g = finite_diff_grad(constant, {1.0, -2.0, 0.5}, 1e-5);
  for (double v : g) CHECK(v == 0.0);

  auto sig = [](const std::vector<double>& x) { return sigmoid(x[0]); };
  CHECK(std::fabs(finite_diff_grad(sig, {0.0}, 1e-5)[0] - 0.25) < 1e-9);
}

TEST_CASE("finite differences reports the failing coordinate") {
  auto bad = [](const std::vector<double>& x) {
    return x[1] > 0.5 ? std::numeric_limits<double>::quiet_NaN() : x[0];
  };
  try {
    finite_diff_grad(bad, {0.0, 0.5}, 1e-1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("coordinate 1") != std::string::npos);
  }
}

TEST_CASE("pearson: affine invariance and degenerate flag") {
  Rng rng(31);
  std::vector<double> a, b;
  for (int i = 0; i < 40; ++i) {
    a.push_back(rng.normal());
    b.push_back(rng.normal());
  }
  const double r = pearson(a, b);
  std::vector<double> a2 = a, b2 = b;
  for (double& x : a2) x = 3.5 * x + 1.25;
  for (double& x : b2) x = 0.2 * x - 7.0;
  CHECK(pearson(a2, b2) == doctest::Approx(r).epsilon(1e-12));

  std::vector<double> flat(40, 2.0);
  bool degen = false;
  CHECK(pearson(flat, b, &degen) == 0.0);
  CHECK(degen);
}

TEST_CASE("rng determinism and bounded draws") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
}
