#include "acrec/numerics.hpp"

#include <cmath>
#include <limits>
#include <cstddef>
#include <string>

namespace acrec {

bool DenseMatrix::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double sigmoid(double x) {
  double p;
  if (x >= 0.0) {
    p = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    p = e / (1.0 + e);
  }
  // saturate strictly inside (0, 1) for finite inputs
  if (p >= 1.0) p = std::nextafter(1.0, 0.0);
  if (p <= 0.0) p = std::numeric_limits<double>::denorm_min();
  return p;
}

double softplus(double t) {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::fabs(t)));
}

double logistic_loss(int y, double s) {
  return softplus(-static_cast<double>(y) * s);
}

double logistic_loss_dscore(int y, double s) {
  double yd = static_cast<double>(y);
  return -yd * sigmoid(-yd * s);
}

double pearson(const std::vector<double>& a, const std::vector<double>& b,
               bool* degenerate) {
  if (degenerate) *degenerate = false;
  if (a.size() != b.size() || a.size() < 2) {
    throw ConfigError("pearson: need two equal-length vectors with >= 2 entries");
  }
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return sab / std::sqrt(saa * sbb);
}

AdamState AdamState::for_param(const DenseMatrix& param, double beta1,
                               double beta2, double eps) {
  AdamState st;
  st.m = DenseMatrix(param.rows, param.cols);
  st.v = DenseMatrix(param.rows, param.cols);
  st.step.assign(param.rows, 0);
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  return st;
}

namespace {

// Shared row kernel so dense and sparse paths are bit-identical.
void adam_row_update(double* p, const double* g, double* m, double* v,
                     std::int64_t t, int cols, double lr, double beta1,
                     double beta2, double eps) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (int c = 0; c < cols; ++c) {
    m[c] = beta1 * m[c] + (1.0 - beta1) * g[c];
    v[c] = beta2 * v[c] + (1.0 - beta2) * g[c] * g[c];
    const double mhat = m[c] / bc1;
    const double vhat = v[c] / bc2;
    p[c] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void check_state_shape(const DenseMatrix& param, const AdamState& state) {
  if (state.m.rows != param.rows || state.m.cols != param.cols ||
      state.v.rows != param.rows || state.v.cols != param.cols ||
      state.step.size() != static_cast<std::size_t>(param.rows)) {
    throw ConfigError("adam: state buffers do not match parameter shape");
  }
}

}  // namespace

void adam_step(DenseMatrix& param, const DenseMatrix& grad, AdamState& state, double lr) {
  if (grad.rows != param.rows || grad.cols != param.cols) {
    throw ConfigError("adam_step: gradient shape mismatch");
  }
  check_state_shape(param, state);
  if (lr <= 0.0) throw ConfigError("adam_step: lr must be positive");
  for (int r = 0; r < param.rows; ++r) {
    state.step[r] += 1;
    adam_row_update(param.row(r), grad.row(r), state.m.row(r), state.v.row(r),
                    state.step[r], param.cols, lr, state.beta1, state.beta2,
                    state.eps);
  }
}

void sparse_adam_step(DenseMatrix& param,
                      const std::map<int, std::vector<double>>& row_grads,
                      AdamState& state, double lr) {
  check_state_shape(param, state);
  if (lr <= 0.0) throw ConfigError("sparse_adam_step: lr must be positive");
  for (const auto& [r, g] : row_grads) {
    if (r < 0 || r >= param.rows) {
      throw ConfigError("sparse_adam_step: row " + std::to_string(r) + " out of range");
    }
    if (g.size() != static_cast<std::size_t>(param.cols)) {
      throw ConfigError("sparse_adam_step: gradient width mismatch for row " + std::to_string(r));
    }
    state.step[r] += 1;
    adam_row_update(param.row(r), g.data(), state.m.row(r), state.v.row(r),
                    state.step[r], param.cols, lr, state.beta1, state.beta2,
                    state.eps);
  }
}

void adam_step_flat(double* param, const double* grad, std::size_t len,
                    AdamState& state, double lr) {
  if (state.m.rows != 1 || state.m.cols != static_cast<int>(len)) {
    throw ConfigError("adam_step_flat: state buffers do not match parameter length");
  }
  if (lr <= 0.0) throw ConfigError("adam_step_flat: lr must be positive");
  state.step[0] += 1;
  adam_row_update(param, grad, state.m.row(0), state.v.row(0), state.step[0],
                  static_cast<int>(len), lr, state.beta1, state.beta2, state.eps);
}

std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& at, double h) {
  if (h <= 0.0) throw ConfigError("finite_diff_grad: h must be positive");
  std::vector<double> grad(at.size(), 0.0);
  std::vector<double> x = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    x[i] = at[i] + h;
    const double fp = f(x);
    x[i] = at[i] - h;
    const double fm = f(x);
    x[i] = at[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_grad: non-finite value at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace acrec
