#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "acrec/errors.hpp"

namespace acrec {

// Row-major dense matrix of doubles. All training math is 64-bit so the
// finite-difference checks have headroom.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::size_t size() const { return data.size(); }
  bool all_finite() const;
};

// --- elementwise functions and losses ---------------------------------------

// Numerically stable sigmoid; saturates but never returns exact 0 or 1 for
// finite inputs within double range.
double sigmoid(double x);

// softplus(t) = ln(1 + e^t) via the log-sum-exp trick.
double softplus(double t);

// Margin loss for labels y in {-1,+1}: ln(1 + exp(-y*s)).
double logistic_loss(int y, double s);

// d/ds logistic_loss(y, s) = -y * sigmoid(-y*s).
double logistic_loss_dscore(int y, double s);

// Pearson correlation of two equal-length vectors. Zero variance in either
// vector is degenerate: returns 0 and sets *degenerate when provided.
double pearson(const std::vector<double>& a, const std::vector<double>& b,
               bool* degenerate = nullptr);

// --- Adam -------------------------------------------------------------------

// Moment buffers shaped like the tracked parameter, with per-row step
// counters so rows untouched by a sparse update keep no stale momentum.
struct AdamState {
  DenseMatrix m;
  DenseMatrix v;
  std::vector<std::int64_t> step;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_param(const DenseMatrix& param, double beta1 = 0.9,
                             double beta2 = 0.999, double eps = 1e-8);
};

// Dense Adam update with bias correction; every row advances one step.
void adam_step(DenseMatrix& param, const DenseMatrix& grad, AdamState& state, double lr);

// Sparse Adam update: only the listed rows (and their moment buffers and
// step counters) change.
void sparse_adam_step(DenseMatrix& param,
                      const std::map<int, std::vector<double>>& row_grads,
                      AdamState& state, double lr);

// Whole-buffer update treated as a single row (state shaped 1 x len).
void adam_step_flat(double* param, const double* grad, std::size_t len,
                    AdamState& state, double lr);

// --- finite-difference oracle -------------------------------------------------

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate. Throws
// NumericError naming the coordinate if f evaluates non-finite.
std::vector<double> finite_diff_grad(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& at, double h);

}  // namespace acrec
