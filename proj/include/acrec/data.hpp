#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "acrec/errors.hpp"
#include "acrec/rng.hpp"

namespace acrec {

// One user-item feedback event. `order` is the per-user chronological
// position after loading; `value` is a 1..5 rating for explicit logs and 1
// for implicit logs.
struct Interaction {
  int user = 0;
  int item = 0;
  double value = 1.0;
  std::int64_t order = 0;
};

// Interactions with dense 0..n-1 ids plus the retained remap tables
// (dense id -> original token).
struct InteractionLog {
  std::vector<Interaction> interactions;
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
  int n_users() const { return static_cast<int>(user_names.size()); }
  int n_items() const { return static_cast<int>(item_names.size()); }
};

// Parses delimited "user<sep>item<sep>value[<sep>timestamp]" lines. Ids are
// remapped to dense integers in order of first appearance; per-user order
// follows timestamps when present, file order otherwise. Malformed lines
// raise DataError naming the line number.
InteractionLog load_interactions(const std::string& path, const std::string& separator);

// Keeps users whose interaction count lies in [min_n, max_n], then drops
// items with no remaining interactions and re-densifies both id spaces.
InteractionLog filter_users(const InteractionLog& log, int min_n, int max_n);

// Leave-last-two-out partition: per user the last interaction is test, the
// second-to-last is validation, everything earlier is train.
struct SplitDataset {
  int n_users = 0;
  int n_items = 0;
  std::vector<std::vector<int>> train;  // per-user ordered item lists
  std::vector<int> val;                 // one item per user
  std::vector<int> test;                // one item per user

  // All items the user has interacted with (train + val + test).
  std::unordered_set<int> positives(int user) const;
};

SplitDataset leave_last_split(const InteractionLog& log);

// k items sampled uniformly without replacement from the items the user has
// never interacted with. Throws DataError when fewer than k candidates exist.
std::vector<int> sample_negatives(int user, int k, const SplitDataset& split, Rng& rng);

// Parallel arrays of (user, item, label) pairs with labels in {-1,+1}.
struct Batch {
  std::vector<int> users;
  std::vector<int> items;
  std::vector<int> labels;
  std::size_t size() const { return users.size(); }
};

// One epoch of training batches: positives shuffled once (seeded), each
// joined by negs_per_pos fresh uniform negatives with label -1, chunked into
// batch_size pairs with the final partial batch emitted.
std::vector<Batch> make_batches(const SplitDataset& split, int batch_size,
                                int negs_per_pos, std::uint64_t seed);

// Dense per-pair probability table (relevance or exposure ground truth).
// Missing entries are NaN; files are (user, item, p) triples.
struct PairProbTable {
  int n_users = 0;
  int n_items = 0;
  std::vector<double> p;

  PairProbTable() = default;
  PairProbTable(int nu, int ni);
  bool has(int u, int i) const;
  double at(int u, int i) const;
  void set(int u, int i, double v);
};

void save_pair_table(const PairProbTable& table, const std::string& path);
PairProbTable load_pair_table(const std::string& path);

// Split persistence: three delimited files (train/val/test, one interaction
// per line in per-user order) plus the id remap table.
void save_split_files(const InteractionLog& log, const SplitDataset& split,
                      const std::string& dir);
SplitDataset load_split_files(const std::string& dir);
// Rebuild the filtered interaction list (train + val + test per user, with
// values) from a saved split directory.
InteractionLog load_interactions_from_split(const std::string& dir);

}  // namespace acrec
