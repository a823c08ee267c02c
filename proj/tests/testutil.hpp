#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "acrec/data.hpp"
#include "acrec/models.hpp"
#include "acrec/rng.hpp"

namespace acrec::testutil {

// Central differences over raw parameter storage.
inline std::vector<double> fd_grad_ptrs(const std::vector<double*>& ptrs,
                                        const std::function<double()>& f, double h) {
  std::vector<double> grad(ptrs.size(), 0.0);
  for (std::size_t i = 0; i < ptrs.size(); ++i) {
    const double orig = *ptrs[i];
    *ptrs[i] = orig + h;
    const double fp = f();
    *ptrs[i] = orig - h;
    const double fm = f();
    *ptrs[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

struct GradCheck {
  bool ok = true;
  double max_rel = 0.0;
  std::size_t worst = 0;
  double analytic_at_worst = 0.0;
  double fd_at_worst = 0.0;
};

// Relative error with an absolute fallback for near-zero gradients, where
// central differences bottom out at ~1e-10 absolute noise.
inline GradCheck compare_grads(const std::vector<double>& analytic,
                               const std::vector<double>& fd, double rel_tol,
                               double zero_tol = 1e-9) {
  GradCheck out;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(std::fabs(analytic[i]), std::fabs(fd[i]));
    const double err = std::fabs(analytic[i] - fd[i]);
    if (denom < 1e-4) {
      if (err > zero_tol) {
        out.ok = false;
        out.worst = i;
        out.analytic_at_worst = analytic[i];
        out.fd_at_worst = fd[i];
        out.max_rel = err;
        return out;
      }
      continue;
    }
    const double rel = err / denom;
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst = i;
      out.analytic_at_worst = analytic[i];
      out.fd_at_worst = fd[i];
    }
  }
  out.ok = out.max_rel < rel_tol;
  return out;
}

inline std::vector<double*> collect_ptrs(RecModel& m) {
  std::vector<double*> ptrs;
  for (const ParamView& v : param_views(m)) {
    for (std::size_t k = 0; k < v.len; ++k) ptrs.push_back(v.ptr + k);
  }
  return ptrs;
}

// Flattens a ModelGradients into the param_views(model) order so analytic and
// finite-difference gradients line up coordinate by coordinate.
inline std::vector<double> flatten_grads(RecModel& m, const ModelGradients& g) {
  std::vector<double> flat;
  auto push_rows = [&](const std::map<int, std::vector<double>>& rows, int n, int width) {
    std::vector<double> block(static_cast<std::size_t>(n) * width, 0.0);
    for (const auto& [r, vec] : rows) {
      for (int k = 0; k < width; ++k) block[static_cast<std::size_t>(r) * width + k] = vec[k];
    }
    flat.insert(flat.end(), block.begin(), block.end());
  };
  auto push_bias = [&](const std::map<int, double>& rows, int n) {
    std::vector<double> block(n, 0.0);
    for (const auto& [r, v] : rows) block[r] = v;
    flat.insert(flat.end(), block.begin(), block.end());
  };
  auto push_mat = [&](const DenseMatrix& mat) {
    flat.insert(flat.end(), mat.data.begin(), mat.data.end());
  };

  for (const ParamView& v : param_views(m)) {
    if (v.name == "user_emb") push_rows(g.user_rows, m.n_users, m.d);
    else if (v.name == "item_emb") push_rows(g.item_rows, m.n_items, m.d);
    else if (v.name == "user_emb_mlp") push_rows(g.user_mlp_rows, m.n_users, m.d);
    else if (v.name == "item_emb_mlp") push_rows(g.item_mlp_rows, m.n_items, m.d);
    else if (v.name == "user_bias") push_bias(g.user_bias_rows, m.n_users);
    else if (v.name == "item_bias") push_bias(g.item_bias_rows, m.n_items);
    else if (v.name == "gmf_out") push_mat(g.gmf_out);
    else if (v.name == "fusion_w") push_mat(g.fusion_w);
    else if (v.name == "fusion_b") flat.push_back(g.fusion_b);
    else if (v.name.rfind("mlp_w", 0) == 0) push_mat(g.mlp_w[std::stoul(v.name.substr(5))]);
    else if (v.name.rfind("mlp_b", 0) == 0) {
      const auto& b = g.mlp_b[std::stoul(v.name.substr(5))];
      flat.insert(flat.end(), b.begin(), b.end());
    }
  }
  return flat;
}

// Re-randomizes every trainable scalar at a given scale; keeps gradcheck
// points away from dead ReLU kinks that the tiny init scale would cause.
inline void randomize_params(RecModel& m, Rng& rng, double scale) {
  for (const ParamView& v : param_views(m)) {
    for (std::size_t k = 0; k < v.len; ++k) v.ptr[k] = rng.normal(0.0, scale);
  }
}

inline Batch random_batch(int n_users, int n_items, int n_pairs, Rng& rng) {
  Batch b;
  for (int j = 0; j < n_pairs; ++j) {
    b.users.push_back(static_cast<int>(rng.below(n_users)));
    b.items.push_back(static_cast<int>(rng.below(n_items)));
    b.labels.push_back(rng.bernoulli(0.5) ? 1 : -1);
  }
  return b;
}

inline SplitDataset make_split(int n_items, std::vector<std::vector<int>> train,
                               std::vector<int> val, std::vector<int> test) {
  SplitDataset s;
  s.n_users = static_cast<int>(train.size());
  s.n_items = n_items;
  s.train = std::move(train);
  s.val = std::move(val);
  s.test = std::move(test);
  return s;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "acrec_test_XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::string& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }

 private:
  std::string path_;
};

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace acrec::testutil
