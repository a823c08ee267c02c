#include "acrec/models.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "acrec/rng.hpp"

namespace acrec {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Pop: return "pop";
    case ModelKind::MF: return "mf";
    case ModelKind::GMF: return "gmf";
    case ModelKind::MLP: return "mlp";
    case ModelKind::NCF: return "ncf";
  }
  return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "pop") return ModelKind::Pop;
  if (s == "mf") return ModelKind::MF;
  if (s == "gmf") return ModelKind::GMF;
  if (s == "mlp") return ModelKind::MLP;
  if (s == "ncf") return ModelKind::NCF;
  throw ConfigError("unknown model kind '" + s + "' (expected pop|mf|gmf|mlp|ncf)");
}

namespace {

void fill_normal(DenseMatrix& m, double stddev, Rng& rng) {
  for (double& x : m.data) x = rng.normal(0.0, stddev);
}

void fill_glorot(DenseMatrix& w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& x : w.data) x = (rng.uniform() * 2.0 - 1.0) * limit;
}

std::vector<int> tower_dims(ModelKind kind, int d, const std::vector<int>& layer_spec) {
  std::vector<int> hidden = layer_spec;
  if (hidden.empty()) hidden = {d, std::max(d / 2, 1)};
  for (int h : hidden) {
    if (h < 1) throw ConfigError("init_model: hidden layer width must be >= 1");
  }
  std::vector<int> dims;
  dims.push_back(2 * d);
  for (int h : hidden) dims.push_back(h);
  if (kind == ModelKind::MLP) dims.push_back(1);  // NCF fuses the last hidden layer instead
  return dims;
}

void init_tower(RecModel& m, Rng& rng) {
  const std::size_t n_layers = m.mlp_dims.size() - 1;
  m.mlp_w.resize(n_layers);
  m.mlp_b.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    m.mlp_w[l] = DenseMatrix(m.mlp_dims[l + 1], m.mlp_dims[l]);
    fill_glorot(m.mlp_w[l], m.mlp_dims[l], m.mlp_dims[l + 1], rng);
    m.mlp_b[l].assign(m.mlp_dims[l + 1], 0.0);
  }
}

}  // namespace

RecModel init_model(ModelKind kind, int n_users, int n_items, int d,
                    const std::vector<int>& layer_spec, std::uint64_t seed) {
  if (kind != ModelKind::Pop && d < 1) throw ConfigError("init_model: d must be >= 1");
  if (n_users < 1 || n_items < 1) throw ConfigError("init_model: empty id space");

  RecModel m;
  m.kind = kind;
  m.n_users = n_users;
  m.n_items = n_items;
  m.d = kind == ModelKind::Pop ? 0 : d;
  Rng rng(derive_seed(seed, "model-init"));

  switch (kind) {
    case ModelKind::Pop:
      m.pop_scores.assign(n_items, 0.0);
      break;
    case ModelKind::MF:
      m.user_emb = DenseMatrix(n_users, d);
      m.item_emb = DenseMatrix(n_items, d);
      fill_normal(m.user_emb, 0.01, rng);
      fill_normal(m.item_emb, 0.01, rng);
      m.user_bias = DenseMatrix(n_users, 1);
      m.item_bias = DenseMatrix(n_items, 1);
      break;
    case ModelKind::GMF:
      m.user_emb = DenseMatrix(n_users, d);
      m.item_emb = DenseMatrix(n_items, d);
      fill_normal(m.user_emb, 0.01, rng);
      fill_normal(m.item_emb, 0.01, rng);
      m.gmf_out = DenseMatrix(1, d);
      fill_glorot(m.gmf_out, d, 1, rng);
      break;
    case ModelKind::MLP:
      m.user_emb = DenseMatrix(n_users, d);
      m.item_emb = DenseMatrix(n_items, d);
      fill_normal(m.user_emb, 0.01, rng);
      fill_normal(m.item_emb, 0.01, rng);
      m.mlp_dims = tower_dims(kind, d, layer_spec);
      init_tower(m, rng);
      break;
    case ModelKind::NCF:
      m.user_emb = DenseMatrix(n_users, d);
      m.item_emb = DenseMatrix(n_items, d);
      m.user_emb_mlp = DenseMatrix(n_users, d);
      m.item_emb_mlp = DenseMatrix(n_items, d);
      fill_normal(m.user_emb, 0.01, rng);
      fill_normal(m.item_emb, 0.01, rng);
      fill_normal(m.user_emb_mlp, 0.01, rng);
      fill_normal(m.item_emb_mlp, 0.01, rng);
      m.mlp_dims = tower_dims(kind, d, layer_spec);
      init_tower(m, rng);
      m.fusion_w = DenseMatrix(1, d + m.mlp_dims.back());
      fill_glorot(m.fusion_w, d + m.mlp_dims.back(), 1, rng);
      m.fusion_b = 0.0;
      break;
  }
  return m;
}

namespace {

void check_ids(const RecModel& m, int u, int i) {
  if (u < 0 || u >= m.n_users || i < 0 || i >= m.n_items) {
    throw ConfigError("score: id out of range (user " + std::to_string(u) + ", item " +
                      std::to_string(i) + ")");
  }
}

// Forward pass through the tower. For MLP the final layer is linear; every
// earlier layer (and, for NCF, every layer) is ReLU. Pre-activations are kept
// for the backward pass.
struct TowerCache {
  std::vector<std::vector<double>> x;  // x[0] = input, x[l+1] = layer l output
  std::vector<std::vector<double>> a;  // pre-activations per layer
};

void tower_forward(const RecModel& m, std::vector<double> input, bool last_linear,
                   TowerCache* cache) {
  std::vector<double> x = std::move(input);
  if (cache) {
    cache->x.clear();
    cache->a.clear();
    cache->x.push_back(x);
  }
  for (std::size_t l = 0; l < m.mlp_w.size(); ++l) {
    const DenseMatrix& w = m.mlp_w[l];
    std::vector<double> a(w.rows, 0.0);
    for (int r = 0; r < w.rows; ++r) {
      double s = m.mlp_b[l][r];
      const double* wr = w.row(r);
      for (int c = 0; c < w.cols; ++c) s += wr[c] * x[c];
      a[r] = s;
    }
    const bool relu = !(last_linear && l + 1 == m.mlp_w.size());
    std::vector<double> out(a);
    if (relu) {
      for (double& v : out) v = v > 0.0 ? v : 0.0;
    }
    if (cache) {
      cache->a.push_back(a);
      cache->x.push_back(out);
    }
    x = std::move(out);
  }
  if (cache) return;
}

std::vector<double> tower_output(const RecModel& m, std::vector<double> input, bool last_linear) {
  TowerCache cache;
  tower_forward(m, std::move(input), last_linear, &cache);
  return cache.x.back();
}

std::vector<double> concat_embeddings(const DenseMatrix& ue, const DenseMatrix& ie, int u, int i) {
  std::vector<double> x(ue.cols + ie.cols);
  std::memcpy(x.data(), ue.row(u), sizeof(double) * ue.cols);
  std::memcpy(x.data() + ue.cols, ie.row(i), sizeof(double) * ie.cols);
  return x;
}

}  // namespace

double score(const RecModel& m, int u, int i) {
  check_ids(m, u, i);
  switch (m.kind) {
    case ModelKind::Pop:
      return m.pop_scores[i];
    case ModelKind::MF: {
      const double* p = m.user_emb.row(u);
      const double* q = m.item_emb.row(i);
      double s = m.user_bias.at(u, 0) + m.item_bias.at(i, 0);
      for (int k = 0; k < m.d; ++k) s += p[k] * q[k];
      return s;
    }
    case ModelKind::GMF: {
      const double* p = m.user_emb.row(u);
      const double* q = m.item_emb.row(i);
      const double* w = m.gmf_out.row(0);
      double s = 0.0;
      for (int k = 0; k < m.d; ++k) s += w[k] * p[k] * q[k];
      return s;
    }
    case ModelKind::MLP: {
      auto out = tower_output(m, concat_embeddings(m.user_emb, m.item_emb, u, i), true);
      return out[0];
    }
    case ModelKind::NCF: {
      const double* p = m.user_emb.row(u);
      const double* q = m.item_emb.row(i);
      auto h = tower_output(m, concat_embeddings(m.user_emb_mlp, m.item_emb_mlp, u, i), false);
      const double* fw = m.fusion_w.row(0);
      double s = m.fusion_b;
      for (int k = 0; k < m.d; ++k) s += fw[k] * p[k] * q[k];
      for (std::size_t j = 0; j < h.size(); ++j) s += fw[m.d + j] * h[j];
      return s;
    }
  }
  return 0.0;
}

namespace {

std::vector<double>& row_accum(std::map<int, std::vector<double>>& rows, int id, int width) {
  auto it = rows.find(id);
  if (it == rows.end()) it = rows.emplace(id, std::vector<double>(width, 0.0)).first;
  return it->second;
}

void init_head_grads(const RecModel& m, ModelGradients& g) {
  if (m.kind == ModelKind::GMF) g.gmf_out = DenseMatrix(1, m.d);
  if (m.kind == ModelKind::MLP || m.kind == ModelKind::NCF) {
    g.mlp_w.resize(m.mlp_w.size());
    g.mlp_b.resize(m.mlp_b.size());
    for (std::size_t l = 0; l < m.mlp_w.size(); ++l) {
      g.mlp_w[l] = DenseMatrix(m.mlp_w[l].rows, m.mlp_w[l].cols);
      g.mlp_b[l].assign(m.mlp_b[l].size(), 0.0);
    }
  }
  if (m.kind == ModelKind::NCF) g.fusion_w = DenseMatrix(1, m.fusion_w.cols);
}

// Backprop an output delta vector through the tower; accumulates weight/bias
// gradients and returns the delta at the tower input.
std::vector<double> tower_backward(const RecModel& m, const TowerCache& cache,
                                   std::vector<double> delta, bool last_linear,
                                   ModelGradients& g) {
  for (std::size_t li = m.mlp_w.size(); li-- > 0;) {
    const bool relu = !(last_linear && li + 1 == m.mlp_w.size());
    if (relu) {
      for (std::size_t r = 0; r < delta.size(); ++r) {
        if (cache.a[li][r] <= 0.0) delta[r] = 0.0;
      }
    }
    const DenseMatrix& w = m.mlp_w[li];
    const std::vector<double>& xin = cache.x[li];
    std::vector<double> prev(w.cols, 0.0);
    for (int r = 0; r < w.rows; ++r) {
      const double dr = delta[r];
      g.mlp_b[li][r] += dr;
      double* gw = g.mlp_w[li].row(r);
      const double* wr = w.row(r);
      for (int c = 0; c < w.cols; ++c) {
        gw[c] += dr * xin[c];
        prev[c] += dr * wr[c];
      }
    }
    delta = std::move(prev);
  }
  return delta;
}

}  // namespace

ModelGradients score_grad(const RecModel& m, const Batch& batch,
                          const std::vector<double>& upstream) {
  if (upstream.size() != batch.size()) {
    throw ConfigError("score_grad: upstream length must match batch length");
  }
  ModelGradients g;
  if (m.kind == ModelKind::Pop) return g;
  init_head_grads(m, g);

  for (std::size_t j = 0; j < batch.size(); ++j) {
    const int u = batch.users[j];
    const int i = batch.items[j];
    const double w = upstream[j];
    check_ids(m, u, i);

    switch (m.kind) {
      case ModelKind::Pop:
        break;
      case ModelKind::MF: {
        const double* p = m.user_emb.row(u);
        const double* q = m.item_emb.row(i);
        auto& gu = row_accum(g.user_rows, u, m.d);
        auto& gi = row_accum(g.item_rows, i, m.d);
        for (int k = 0; k < m.d; ++k) {
          gu[k] += w * q[k];
          gi[k] += w * p[k];
        }
        g.user_bias_rows[u] += w;
        g.item_bias_rows[i] += w;
        break;
      }
      case ModelKind::GMF: {
        const double* p = m.user_emb.row(u);
        const double* q = m.item_emb.row(i);
        const double* ow = m.gmf_out.row(0);
        auto& gu = row_accum(g.user_rows, u, m.d);
        auto& gi = row_accum(g.item_rows, i, m.d);
        double* gout = g.gmf_out.row(0);
        for (int k = 0; k < m.d; ++k) {
          gu[k] += w * ow[k] * q[k];
          gi[k] += w * ow[k] * p[k];
          gout[k] += w * p[k] * q[k];
        }
        break;
      }
      case ModelKind::MLP: {
        TowerCache cache;
        tower_forward(m, concat_embeddings(m.user_emb, m.item_emb, u, i), true, &cache);
        std::vector<double> delta{w};
        auto dx = tower_backward(m, cache, std::move(delta), true, g);
        auto& gu = row_accum(g.user_rows, u, m.d);
        auto& gi = row_accum(g.item_rows, i, m.d);
        for (int k = 0; k < m.d; ++k) {
          gu[k] += dx[k];
          gi[k] += dx[m.d + k];
        }
        break;
      }
      case ModelKind::NCF: {
        const double* p = m.user_emb.row(u);
        const double* q = m.item_emb.row(i);
        TowerCache cache;
        tower_forward(m, concat_embeddings(m.user_emb_mlp, m.item_emb_mlp, u, i), false, &cache);
        const std::vector<double>& h = cache.x.back();
        const double* fw = m.fusion_w.row(0);

        double* gfw = g.fusion_w.row(0);
        for (int k = 0; k < m.d; ++k) gfw[k] += w * p[k] * q[k];
        for (std::size_t r = 0; r < h.size(); ++r) gfw[m.d + r] += w * h[r];
        g.fusion_b += w;

        auto& gu = row_accum(g.user_rows, u, m.d);
        auto& gi = row_accum(g.item_rows, i, m.d);
        for (int k = 0; k < m.d; ++k) {
          gu[k] += w * fw[k] * q[k];
          gi[k] += w * fw[k] * p[k];
        }

        std::vector<double> delta(h.size());
        for (std::size_t r = 0; r < h.size(); ++r) delta[r] = w * fw[m.d + r];
        auto dx = tower_backward(m, cache, std::move(delta), false, g);
        auto& gu2 = row_accum(g.user_mlp_rows, u, m.d);
        auto& gi2 = row_accum(g.item_mlp_rows, i, m.d);
        for (int k = 0; k < m.d; ++k) {
          gu2[k] += dx[k];
          gi2[k] += dx[m.d + k];
        }
        break;
      }
    }
  }
  return g;
}

namespace {

void axpy_rows(std::map<int, std::vector<double>>& dst,
               const std::map<int, std::vector<double>>& src, double coef) {
  for (const auto& [id, vec] : src) {
    auto it = dst.find(id);
    if (it == dst.end()) it = dst.emplace(id, std::vector<double>(vec.size(), 0.0)).first;
    for (std::size_t k = 0; k < vec.size(); ++k) it->second[k] += coef * vec[k];
  }
}

void axpy_mat(DenseMatrix& dst, const DenseMatrix& src, double coef) {
  if (src.data.empty()) return;
  if (dst.data.empty()) dst = DenseMatrix(src.rows, src.cols);
  for (std::size_t k = 0; k < src.data.size(); ++k) dst.data[k] += coef * src.data[k];
}

}  // namespace

void accumulate_gradients(ModelGradients& dst, const ModelGradients& src, double coef) {
  axpy_rows(dst.user_rows, src.user_rows, coef);
  axpy_rows(dst.item_rows, src.item_rows, coef);
  axpy_rows(dst.user_mlp_rows, src.user_mlp_rows, coef);
  axpy_rows(dst.item_mlp_rows, src.item_mlp_rows, coef);
  for (const auto& [id, v] : src.user_bias_rows) dst.user_bias_rows[id] += coef * v;
  for (const auto& [id, v] : src.item_bias_rows) dst.item_bias_rows[id] += coef * v;
  axpy_mat(dst.gmf_out, src.gmf_out, coef);
  if (!src.mlp_w.empty()) {
    if (dst.mlp_w.empty()) {
      dst.mlp_w.resize(src.mlp_w.size());
      dst.mlp_b.resize(src.mlp_b.size());
      for (std::size_t l = 0; l < src.mlp_b.size(); ++l) dst.mlp_b[l].assign(src.mlp_b[l].size(), 0.0);
    }
    for (std::size_t l = 0; l < src.mlp_w.size(); ++l) {
      axpy_mat(dst.mlp_w[l], src.mlp_w[l], coef);
      for (std::size_t k = 0; k < src.mlp_b[l].size(); ++k) dst.mlp_b[l][k] += coef * src.mlp_b[l][k];
    }
  }
  axpy_mat(dst.fusion_w, src.fusion_w, coef);
  dst.fusion_b += coef * src.fusion_b;
}

void pop_fit(RecModel& m, const SplitDataset& split) {
  if (m.kind != ModelKind::Pop) throw ConfigError("pop_fit: model kind is not pop");
  if (static_cast<int>(m.pop_scores.size()) != split.n_items) {
    m.pop_scores.assign(split.n_items, 0.0);
    m.n_items = split.n_items;
  } else {
    std::fill(m.pop_scores.begin(), m.pop_scores.end(), 0.0);
  }
  for (const auto& items : split.train) {
    for (int i : items) m.pop_scores[i] += 1.0;
  }
}

bool model_all_finite(const RecModel& m) {
  if (!m.user_emb.all_finite() || !m.item_emb.all_finite()) return false;
  if (!m.user_emb_mlp.all_finite() || !m.item_emb_mlp.all_finite()) return false;
  if (!m.user_bias.all_finite() || !m.item_bias.all_finite()) return false;
  if (!m.gmf_out.all_finite() || !m.fusion_w.all_finite()) return false;
  if (!std::isfinite(m.fusion_b)) return false;
  for (const DenseMatrix& w : m.mlp_w) {
    if (!w.all_finite()) return false;
  }
  for (const auto& b : m.mlp_b) {
    for (double x : b) {
      if (!std::isfinite(x)) return false;
    }
  }
  for (double x : m.pop_scores) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::vector<ParamView> param_views(RecModel& m) {
  std::vector<ParamView> views;
  auto add = [&](const std::string& name, DenseMatrix& mat) {
    if (!mat.data.empty()) views.push_back({name, mat.data.data(), mat.data.size()});
  };
  add("user_emb", m.user_emb);
  add("item_emb", m.item_emb);
  add("user_emb_mlp", m.user_emb_mlp);
  add("item_emb_mlp", m.item_emb_mlp);
  add("user_bias", m.user_bias);
  add("item_bias", m.item_bias);
  add("gmf_out", m.gmf_out);
  for (std::size_t l = 0; l < m.mlp_w.size(); ++l) {
    add("mlp_w" + std::to_string(l), m.mlp_w[l]);
    if (!m.mlp_b[l].empty()) {
      views.push_back({"mlp_b" + std::to_string(l), m.mlp_b[l].data(), m.mlp_b[l].size()});
    }
  }
  add("fusion_w", m.fusion_w);
  if (m.kind == ModelKind::NCF) views.push_back({"fusion_b", &m.fusion_b, 1});
  return views;
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4b524341;  // "ACRK"
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i32(std::ofstream& out, std::int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ofstream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_vec(std::ofstream& out, const std::vector<double>& v) {
  write_u32(out, static_cast<std::uint32_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size());
}
void write_mat(std::ofstream& out, const DenseMatrix& m) {
  write_i32(out, m.rows);
  write_i32(out, m.cols);
  out.write(reinterpret_cast<const char*>(m.data.data()), sizeof(double) * m.data.size());
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::int32_t read_i32(std::ifstream& in) {
  std::int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
double read_f64(std::ifstream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::vector<double> read_vec(std::ifstream& in) {
  std::vector<double> v(read_u32(in));
  in.read(reinterpret_cast<char*>(v.data()), sizeof(double) * v.size());
  return v;
}
DenseMatrix read_mat(std::ifstream& in) {
  int rows = read_i32(in);
  int cols = read_i32(in);
  DenseMatrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data.data()), sizeof(double) * m.data.size());
  return m;
}

}  // namespace

void save_checkpoint(const RecModel& m, const std::string& path,
                     const std::vector<double>& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  write_u32(out, kCheckpointMagic);
  write_u32(out, kCheckpointVersion);
  write_i32(out, static_cast<std::int32_t>(m.kind));
  write_i32(out, m.n_users);
  write_i32(out, m.n_items);
  write_i32(out, m.d);
  write_u32(out, static_cast<std::uint32_t>(m.mlp_dims.size()));
  for (int dim : m.mlp_dims) write_i32(out, dim);
  write_mat(out, m.user_emb);
  write_mat(out, m.item_emb);
  write_mat(out, m.user_emb_mlp);
  write_mat(out, m.item_emb_mlp);
  write_mat(out, m.user_bias);
  write_mat(out, m.item_bias);
  write_mat(out, m.gmf_out);
  write_u32(out, static_cast<std::uint32_t>(m.mlp_w.size()));
  for (std::size_t l = 0; l < m.mlp_w.size(); ++l) {
    write_mat(out, m.mlp_w[l]);
    write_vec(out, m.mlp_b[l]);
  }
  write_mat(out, m.fusion_w);
  write_f64(out, m.fusion_b);
  write_vec(out, m.pop_scores);
  write_vec(out, extra);
  if (!out) throw DataError("short write on checkpoint: " + path);
}

RecModel load_checkpoint(const std::string& path, std::vector<double>* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  if (read_u32(in) != kCheckpointMagic) throw DataError("not a checkpoint file: " + path);
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  RecModel m;
  m.kind = static_cast<ModelKind>(read_i32(in));
  m.n_users = read_i32(in);
  m.n_items = read_i32(in);
  m.d = read_i32(in);
  m.mlp_dims.resize(read_u32(in));
  for (int& dim : m.mlp_dims) dim = read_i32(in);
  m.user_emb = read_mat(in);
  m.item_emb = read_mat(in);
  m.user_emb_mlp = read_mat(in);
  m.item_emb_mlp = read_mat(in);
  m.user_bias = read_mat(in);
  m.item_bias = read_mat(in);
  m.gmf_out = read_mat(in);
  m.mlp_w.resize(read_u32(in));
  m.mlp_b.resize(m.mlp_w.size());
  for (std::size_t l = 0; l < m.mlp_w.size(); ++l) {
    m.mlp_w[l] = read_mat(in);
    m.mlp_b[l] = read_vec(in);
  }
  m.fusion_w = read_mat(in);
  m.fusion_b = read_f64(in);
  m.pop_scores = read_vec(in);
  std::vector<double> ex = read_vec(in);
  if (extra) *extra = std::move(ex);
  if (!in) throw DataError("truncated checkpoint: " + path);
  return m;
}

}  // namespace acrec
