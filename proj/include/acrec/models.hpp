#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "acrec/data.hpp"
#include "acrec/numerics.hpp"

namespace acrec {

enum class ModelKind { Pop, MF, GMF, MLP, NCF };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

// Scoring model over user/item embedding tables.
//
//   Pop  - per-item train interaction count, no trainable parameters
//   MF   - <p_u, q_i> + b_u + b_i
//   GMF  - w . (p_u ⊙ q_i)
//   MLP  - tower over [p_u ; q_i] with ReLU hidden layers, linear output
//   NCF  - linear fusion of a GMF elementwise product and the last hidden
//          layer of an MLP tower; the two paths own separate tables
struct RecModel {
  ModelKind kind = ModelKind::MF;
  int n_users = 0;
  int n_items = 0;
  int d = 0;

  DenseMatrix user_emb, item_emb;          // GMF path for NCF
  DenseMatrix user_emb_mlp, item_emb_mlp;  // NCF only
  DenseMatrix user_bias, item_bias;        // MF only, n x 1
  DenseMatrix gmf_out;                     // GMF only, 1 x d
  std::vector<DenseMatrix> mlp_w;          // tower weights, (out x in)
  std::vector<std::vector<double>> mlp_b;
  DenseMatrix fusion_w;                    // NCF only, 1 x (d + last hidden)
  double fusion_b = 0.0;
  std::vector<double> pop_scores;          // Pop only
  std::vector<int> mlp_dims;               // full layer widths incl. input/output
};

// Embeddings ~ Normal(0, 0.01^2), head weights Glorot-uniform, biases zero.
// layer_spec lists hidden widths for the MLP tower; empty means the default
// [d, d/2] (clamped to >= 1).
RecModel init_model(ModelKind kind, int n_users, int n_items, int d,
                    const std::vector<int>& layer_spec, std::uint64_t seed);

double score(const RecModel& model, int u, int i);

// Gradients of sum_j upstream_j * score(u_j, i_j). Embedding-row entries are
// limited to rows appearing in the batch; head gradients are dense.
struct ModelGradients {
  std::map<int, std::vector<double>> user_rows, item_rows;
  std::map<int, std::vector<double>> user_mlp_rows, item_mlp_rows;
  std::map<int, double> user_bias_rows, item_bias_rows;
  DenseMatrix gmf_out;
  std::vector<DenseMatrix> mlp_w;
  std::vector<std::vector<double>> mlp_b;
  DenseMatrix fusion_w;
  double fusion_b = 0.0;
};

ModelGradients score_grad(const RecModel& model, const Batch& batch,
                          const std::vector<double>& upstream);

// dst += coef * src, growing dst's sparse maps and dense blocks as needed.
void accumulate_gradients(ModelGradients& dst, const ModelGradients& src, double coef);

// pop_scores[i] = train-set interaction count of item i.
void pop_fit(RecModel& model, const SplitDataset& split);

bool model_all_finite(const RecModel& model);

// Flat view over every trainable scalar, used by gradient checks and the
// plain-SGD dense updates.
struct ParamView {
  std::string name;
  double* ptr;
  std::size_t len;
};
std::vector<ParamView> param_views(RecModel& model);

// Binary checkpoint with a version field; round-trips bit-exactly. `extra`
// carries small auxiliary parameter blocks (e.g. a propensity head).
void save_checkpoint(const RecModel& model, const std::string& path,
                     const std::vector<double>& extra = {});
RecModel load_checkpoint(const std::string& path, std::vector<double>* extra = nullptr);

}  // namespace acrec
