#include "acrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace acrec {

namespace {

std::vector<std::string> split_fields(const std::string& line, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = line.find(sep, pos);
    if (next == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line_no, const char* what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse " +
                    std::string(what) + " '" + s + "'");
  }
}

long long parse_int64(const std::string& s, std::size_t line_no, const char* what) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse " +
                    std::string(what) + " '" + s + "'");
  }
}

struct RawRecord {
  int user;
  int item;
  double value;
  long long timestamp;
  bool has_timestamp;
  std::size_t file_index;
};

}  // namespace

InteractionLog load_interactions(const std::string& path, const std::string& separator) {
  if (separator.empty()) throw ConfigError("load_interactions: empty separator");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file: " + path);

  InteractionLog log;
  std::unordered_map<std::string, int> user_ids, item_ids;
  std::vector<RawRecord> records;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line, separator);
    if (fields.size() != 3 && fields.size() != 4) {
      throw DataError("line " + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                      std::to_string(fields.size()));
    }
    RawRecord rec;
    auto uit = user_ids.emplace(fields[0], static_cast<int>(log.user_names.size()));
    if (uit.second) log.user_names.push_back(fields[0]);
    rec.user = uit.first->second;
    auto iit = item_ids.emplace(fields[1], static_cast<int>(log.item_names.size()));
    if (iit.second) log.item_names.push_back(fields[1]);
    rec.item = iit.first->second;
    rec.value = parse_double(fields[2], line_no, "value");
    rec.has_timestamp = fields.size() == 4;
    rec.timestamp = rec.has_timestamp ? parse_int64(fields[3], line_no, "timestamp") : 0;
    rec.file_index = line_no;
    records.push_back(rec);
  }

  // Per-user chronological order: timestamp when present, file order as the
  // tiebreak and the fallback.
  std::stable_sort(records.begin(), records.end(), [](const RawRecord& a, const RawRecord& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.has_timestamp && b.has_timestamp && a.timestamp != b.timestamp) {
      return a.timestamp < b.timestamp;
    }
    return a.file_index < b.file_index;
  });

  std::int64_t order = 0;
  int prev_user = -1;
  for (const RawRecord& rec : records) {
    if (rec.user != prev_user) {
      order = 0;
      prev_user = rec.user;
    }
    log.interactions.push_back({rec.user, rec.item, rec.value, order++});
  }
  return log;
}

InteractionLog filter_users(const InteractionLog& log, int min_n, int max_n) {
  if (min_n < 1 || max_n <= min_n) {
    throw ConfigError("filter_users: require min_n >= 1 and max_n > min_n");
  }
  std::vector<int> user_count(log.n_users(), 0);
  for (const Interaction& it : log.interactions) user_count[it.user]++;

  std::vector<int> user_map(log.n_users(), -1);
  InteractionLog out;
  for (int u = 0; u < log.n_users(); ++u) {
    if (user_count[u] >= min_n && user_count[u] <= max_n) {
      user_map[u] = static_cast<int>(out.user_names.size());
      out.user_names.push_back(log.user_names[u]);
    }
  }

  std::vector<bool> item_seen(log.n_items(), false);
  for (const Interaction& it : log.interactions) {
    if (user_map[it.user] >= 0) item_seen[it.item] = true;
  }
  std::vector<int> item_map(log.n_items(), -1);
  for (int i = 0; i < log.n_items(); ++i) {
    if (item_seen[i]) {
      item_map[i] = static_cast<int>(out.item_names.size());
      out.item_names.push_back(log.item_names[i]);
    }
  }

  std::vector<std::int64_t> next_order(out.user_names.size(), 0);
  for (const Interaction& it : log.interactions) {
    int u = user_map[it.user];
    if (u < 0) continue;
    out.interactions.push_back({u, item_map[it.item], it.value, next_order[u]++});
  }
  return out;
}

std::unordered_set<int> SplitDataset::positives(int user) const {
  std::unordered_set<int> s(train[user].begin(), train[user].end());
  s.insert(val[user]);
  s.insert(test[user]);
  return s;
}

SplitDataset leave_last_split(const InteractionLog& log) {
  SplitDataset split;
  split.n_users = log.n_users();
  split.n_items = log.n_items();
  std::vector<std::vector<std::pair<std::int64_t, int>>> per_user(split.n_users);
  for (const Interaction& it : log.interactions) {
    per_user[it.user].push_back({it.order, it.item});
  }
  split.train.resize(split.n_users);
  split.val.resize(split.n_users);
  split.test.resize(split.n_users);
  for (int u = 0; u < split.n_users; ++u) {
    auto& seq = per_user[u];
    if (seq.size() < 3) {
      throw DataError("leave_last_split: user " + log.user_names[u] + " has " +
                      std::to_string(seq.size()) + " interactions (< 3)");
    }
    std::sort(seq.begin(), seq.end());
    for (std::size_t k = 0; k + 2 < seq.size(); ++k) split.train[u].push_back(seq[k].second);
    split.val[u] = seq[seq.size() - 2].second;
    split.test[u] = seq[seq.size() - 1].second;
  }
  return split;
}

namespace {

std::vector<int> sample_from_complement(const std::unordered_set<int>& excluded,
                                        int n_items, int k, Rng& rng) {
  const int candidates = n_items - static_cast<int>(excluded.size());
  if (k > candidates) {
    throw DataError("sample_negatives: need " + std::to_string(k) + " items but only " +
                    std::to_string(candidates) + " candidates exist");
  }
  std::vector<int> out;
  out.reserve(k);
  if (static_cast<long long>(k) * 8 >= candidates) {
    // Dense regime: enumerate candidates, partial Fisher-Yates.
    std::vector<int> cand;
    cand.reserve(candidates);
    for (int i = 0; i < n_items; ++i) {
      if (!excluded.count(i)) cand.push_back(i);
    }
    for (int t = 0; t < k; ++t) {
      std::size_t j = t + rng.below(cand.size() - t);
      std::swap(cand[t], cand[j]);
      out.push_back(cand[t]);
    }
  } else {
    std::unordered_set<int> drawn;
    while (static_cast<int>(out.size()) < k) {
      int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_items)));
      if (excluded.count(x) || drawn.count(x)) continue;
      drawn.insert(x);
      out.push_back(x);
    }
  }
  return out;
}

}  // namespace

std::vector<int> sample_negatives(int user, int k, const SplitDataset& split, Rng& rng) {
  if (user < 0 || user >= split.n_users) {
    throw ConfigError("sample_negatives: user id out of range");
  }
  return sample_from_complement(split.positives(user), split.n_items, k, rng);
}

std::vector<Batch> make_batches(const SplitDataset& split, int batch_size,
                                int negs_per_pos, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  if (negs_per_pos < 0) throw ConfigError("make_batches: negs_per_pos must be >= 0");

  std::vector<std::pair<int, int>> positives;
  for (int u = 0; u < split.n_users; ++u) {
    for (int i : split.train[u]) positives.push_back({u, i});
  }
  Rng shuffle_rng(derive_seed(seed, "batch-shuffle"));
  shuffle_rng.shuffle(positives);
  Rng neg_rng(derive_seed(seed, "batch-negatives"));

  std::vector<std::unordered_set<int>> pos_sets(split.n_users);
  std::vector<bool> have_set(split.n_users, false);

  std::vector<Batch> batches;
  Batch cur;
  auto push_pair = [&](int u, int i, int y) {
    cur.users.push_back(u);
    cur.items.push_back(i);
    cur.labels.push_back(y);
    if (static_cast<int>(cur.size()) == batch_size) {
      batches.push_back(std::move(cur));
      cur = Batch{};
    }
  };
  for (const auto& [u, i] : positives) {
    push_pair(u, i, +1);
    if (negs_per_pos > 0) {
      if (!have_set[u]) {
        pos_sets[u] = split.positives(u);
        have_set[u] = true;
      }
      for (int x : sample_from_complement(pos_sets[u], split.n_items, negs_per_pos, neg_rng)) {
        push_pair(u, x, -1);
      }
    }
  }
  if (cur.size() > 0) batches.push_back(std::move(cur));
  return batches;
}

PairProbTable::PairProbTable(int nu, int ni)
    : n_users(nu),
      n_items(ni),
      p(static_cast<std::size_t>(nu) * ni, std::numeric_limits<double>::quiet_NaN()) {}

bool PairProbTable::has(int u, int i) const {
  if (u < 0 || u >= n_users || i < 0 || i >= n_items) return false;
  return !std::isnan(p[static_cast<std::size_t>(u) * n_items + i]);
}

double PairProbTable::at(int u, int i) const {
  return p[static_cast<std::size_t>(u) * n_items + i];
}

void PairProbTable::set(int u, int i, double v) {
  p[static_cast<std::size_t>(u) * n_items + i] = v;
}

void save_pair_table(const PairProbTable& table, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot write table file: " + path);
  std::fprintf(f, "#dims\t%d\t%d\n", table.n_users, table.n_items);
  for (int u = 0; u < table.n_users; ++u) {
    for (int i = 0; i < table.n_items; ++i) {
      if (table.has(u, i)) std::fprintf(f, "%d\t%d\t%.17g\n", u, i, table.at(u, i));
    }
  }
  std::fclose(f);
}

PairProbTable load_pair_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open table file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("empty table file: " + path);
  int nu = 0, ni = 0;
  if (std::sscanf(header.c_str(), "#dims\t%d\t%d", &nu, &ni) != 2) {
    throw DataError("bad table header in " + path);
  }
  PairProbTable table(nu, ni);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    int u, i;
    double v;
    if (std::sscanf(line.c_str(), "%d\t%d\t%lf", &u, &i, &v) != 3) {
      throw DataError(path + ": bad triple at line " + std::to_string(line_no));
    }
    table.set(u, i, v);
  }
  return table;
}

namespace {

void write_interaction_line(std::FILE* f, int user, int item, double value) {
  std::fprintf(f, "%d\t%d\t%.17g\n", user, item, value);
}

}  // namespace

void save_split_files(const InteractionLog& log, const SplitDataset& split,
                      const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::vector<std::pair<std::int64_t, std::pair<int, double>>>> per_user(log.n_users());
  for (const Interaction& it : log.interactions) {
    per_user[it.user].push_back({it.order, {it.item, it.value}});
  }
  if (split.n_users != log.n_users() || split.n_items != log.n_items()) {
    throw ConfigError("save_split_files: split does not match the interaction log");
  }
  for (int u = 0; u < log.n_users(); ++u) {
    if (per_user[u].size() != split.train[u].size() + 2) {
      throw ConfigError("save_split_files: split does not match the interaction log");
    }
  }
  std::FILE* ftrain = std::fopen((fs::path(dir) / "train.tsv").c_str(), "w");
  std::FILE* fval = std::fopen((fs::path(dir) / "val.tsv").c_str(), "w");
  std::FILE* ftest = std::fopen((fs::path(dir) / "test.tsv").c_str(), "w");
  if (!ftrain || !fval || !ftest) throw DataError("cannot write split files under " + dir);
  for (int u = 0; u < log.n_users(); ++u) {
    auto& seq = per_user[u];
    std::sort(seq.begin(), seq.end());
    for (std::size_t k = 0; k + 2 < seq.size(); ++k) {
      write_interaction_line(ftrain, u, seq[k].second.first, seq[k].second.second);
    }
    write_interaction_line(fval, u, seq[seq.size() - 2].second.first, seq[seq.size() - 2].second.second);
    write_interaction_line(ftest, u, seq[seq.size() - 1].second.first, seq[seq.size() - 1].second.second);
  }
  std::fclose(ftrain);
  std::fclose(fval);
  std::fclose(ftest);

  std::FILE* fmap = std::fopen((fs::path(dir) / "remap.tsv").c_str(), "w");
  if (!fmap) throw DataError("cannot write remap table under " + dir);
  for (int u = 0; u < log.n_users(); ++u) std::fprintf(fmap, "user\t%s\t%d\n", log.user_names[u].c_str(), u);
  for (int i = 0; i < log.n_items(); ++i) std::fprintf(fmap, "item\t%s\t%d\n", log.item_names[i].c_str(), i);
  std::fclose(fmap);
}

namespace {

struct SplitLines {
  std::vector<std::vector<std::pair<int, double>>> train;  // per user
  std::vector<std::vector<std::pair<int, double>>> val;
  std::vector<std::vector<std::pair<int, double>>> test;
  int n_users = 0;
  int n_items = 0;
};

void read_split_part(const std::string& path,
                     std::vector<std::vector<std::pair<int, double>>>& out, int n_users) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file: " + path);
  out.assign(n_users, {});
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    int u, i;
    double v;
    if (std::sscanf(line.c_str(), "%d\t%d\t%lf", &u, &i, &v) != 3) {
      throw DataError(path + ": bad line " + std::to_string(line_no));
    }
    if (u < 0 || u >= n_users) throw DataError(path + ": user id out of range at line " + std::to_string(line_no));
    out[u].push_back({i, v});
  }
}

SplitLines read_split_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream map_in((fs::path(dir) / "remap.tsv").string());
  if (!map_in) throw DataError("cannot open remap table under " + dir);
  SplitLines s;
  std::string line;
  while (std::getline(map_in, line)) {
    if (line.rfind("user\t", 0) == 0) s.n_users++;
    if (line.rfind("item\t", 0) == 0) s.n_items++;
  }
  read_split_part((fs::path(dir) / "train.tsv").string(), s.train, s.n_users);
  read_split_part((fs::path(dir) / "val.tsv").string(), s.val, s.n_users);
  read_split_part((fs::path(dir) / "test.tsv").string(), s.test, s.n_users);
  for (int u = 0; u < s.n_users; ++u) {
    if (s.val[u].size() != 1 || s.test[u].size() != 1 || s.train[u].empty()) {
      throw DataError(dir + ": user " + std::to_string(u) + " has an incomplete split");
    }
  }
  return s;
}

}  // namespace

SplitDataset load_split_files(const std::string& dir) {
  SplitLines s = read_split_dir(dir);
  SplitDataset split;
  split.n_users = s.n_users;
  split.n_items = s.n_items;
  split.train.resize(s.n_users);
  split.val.resize(s.n_users);
  split.test.resize(s.n_users);
  for (int u = 0; u < s.n_users; ++u) {
    for (auto& [i, v] : s.train[u]) split.train[u].push_back(i);
    split.val[u] = s.val[u][0].first;
    split.test[u] = s.test[u][0].first;
  }
  return split;
}

InteractionLog load_interactions_from_split(const std::string& dir) {
  SplitLines s = read_split_dir(dir);
  InteractionLog log;
  for (int u = 0; u < s.n_users; ++u) log.user_names.push_back(std::to_string(u));
  for (int i = 0; i < s.n_items; ++i) log.item_names.push_back(std::to_string(i));
  for (int u = 0; u < s.n_users; ++u) {
    std::int64_t order = 0;
    for (auto& [i, v] : s.train[u]) log.interactions.push_back({u, i, v, order++});
    log.interactions.push_back({u, s.val[u][0].first, s.val[u][0].second, order++});
    log.interactions.push_back({u, s.test[u][0].first, s.test[u][0].second, order++});
  }
  return log;
}

}  // namespace acrec
