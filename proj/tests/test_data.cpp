#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "acrec/data.hpp"
#include "testutil.hpp"

using namespace acrec;
using namespace acrec::testutil;

TEST_CASE("load_interactions: per-user ordering, remap, duplicates") {
  TempDir tmp;
  write_text(tmp.file("a.dat"), "a::x::5\na::y::3\nb::x::4\n");
  InteractionLog log = load_interactions(tmp.file("a.dat"), "::");
  CHECK(log.n_users() == 2);
  CHECK(log.n_items() == 2);
  REQUIRE(log.interactions.size() == 3);
  CHECK(log.user_names[0] == "a");
  CHECK(log.item_names[1] == "y");
  CHECK(log.interactions[0].order == 0);
  CHECK(log.interactions[1].order == 1);
  CHECK(log.interactions[2].user == 1);
  CHECK(log.interactions[2].order == 0);

  write_text(tmp.file("dup.dat"), "u::i::1\nu::i::1\n");
  InteractionLog dup = load_interactions(tmp.file("dup.dat"), "::");
  CHECK(dup.interactions.size() == 2);  // duplicates kept
  CHECK(dup.interactions[0].item == dup.interactions[1].item);
}

TEST_CASE("load_interactions: timestamps reorder within a user") {
  TempDir tmp;
  write_text(tmp.file("t.tsv"), "u\ti1\t1\t100\nu\ti2\t1\t50\nu\ti3\t1\t75\n");
  InteractionLog log = load_interactions(tmp.file("t.tsv"), "\t");
  REQUIRE(log.interactions.size() == 3);
  // chronological: i2 (50), i3 (75), i1 (100)
  CHECK(log.item_names[log.interactions[0].item] == "i2");
  CHECK(log.item_names[log.interactions[1].item] == "i3");
  CHECK(log.item_names[log.interactions[2].item] == "i1");
}

TEST_CASE("load_interactions error paths") {
  TempDir tmp;
  write_text(tmp.file("bad.dat"), "a::x::5\na::y::abc\n");
  try {
    load_interactions(tmp.file("bad.dat"), "::");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  write_text(tmp.file("empty.dat"), "");
  InteractionLog empty = load_interactions(tmp.file("empty.dat"), "::");
  CHECK(empty.interactions.empty());
  CHECK(empty.n_users() == 0);

  CHECK_THROWS_AS(load_interactions(tmp.file("missing.dat"), "::"), DataError);
  write_text(tmp.file("fields.dat"), "a::x\n");
  CHECK_THROWS_AS(load_interactions(tmp.file("fields.dat"), "::"), DataError);
}

namespace {

InteractionLog synth_log(const std::vector<int>& counts) {
  InteractionLog log;
  int item = 0;
  for (std::size_t u = 0; u < counts.size(); ++u) {
    log.user_names.push_back("u" + std::to_string(u));
    for (int k = 0; k < counts[u]; ++k) {
      const int it = (item++) % 7;
      while (static_cast<int>(log.item_names.size()) <= it) {
        log.item_names.push_back("i" + std::to_string(log.item_names.size()));
      }
      log.interactions.push_back({static_cast<int>(u), it, 1.0, k});
    }
  }
  return log;
}

}  // namespace

TEST_CASE("filter_users: bounds, identity, idempotence, id density") {
  InteractionLog log = synth_log({19, 20, 1000, 1001});
  InteractionLog f = filter_users(log, 20, 1000);
  CHECK(f.n_users() == 2);  // the 19er and the 1001er are gone
  CHECK(f.user_names[0] == "u1");
  CHECK(f.user_names[1] == "u2");

  // identity when everyone is within bounds
  InteractionLog all = synth_log({5, 6, 7});
  InteractionLog same = filter_users(all, 3, 10);
  CHECK(same.interactions.size() == all.interactions.size());
  CHECK(same.n_users() == all.n_users());

  // idempotence
  InteractionLog once = filter_users(log, 20, 1000);
  InteractionLog twice = filter_users(once, 20, 1000);
  CHECK(twice.n_users() == once.n_users());
  CHECK(twice.n_items() == once.n_items());
  REQUIRE(twice.interactions.size() == once.interactions.size());
  for (std::size_t i = 0; i < once.interactions.size(); ++i) {
    CHECK(twice.interactions[i].user == once.interactions[i].user);
    CHECK(twice.interactions[i].item == once.interactions[i].item);
  }

  // dense ids 0..n-1
  std::set<int> users, items;
  for (const Interaction& it : f.interactions) {
    users.insert(it.user);
    items.insert(it.item);
  }
  CHECK(static_cast<int>(users.size()) == f.n_users());
  CHECK(*users.begin() == 0);
  CHECK(*users.rbegin() == f.n_users() - 1);
  CHECK(static_cast<int>(items.size()) == f.n_items());
  CHECK(*items.rbegin() == f.n_items() - 1);

  CHECK_THROWS_AS(filter_users(log, 0, 10), ConfigError);
  CHECK_THROWS_AS(filter_users(log, 10, 10), ConfigError);
}

TEST_CASE("leave_last_split: definition, minimal case, independence, errors") {
  InteractionLog log;
  log.user_names = {"A", "B"};
  log.item_names = {"a", "b", "c", "d", "e"};
  log.interactions = {
      {0, 0, 1, 0}, {0, 1, 1, 1}, {0, 2, 1, 2}, {0, 3, 1, 3},  // A: a b c d
      {1, 4, 1, 0}, {1, 0, 1, 1}, {1, 2, 1, 2},                // B: e a c
  };
  SplitDataset s = leave_last_split(log);
  CHECK(s.train[0] == std::vector<int>{0, 1});
  CHECK(s.val[0] == 2);
  CHECK(s.test[0] == 3);
  CHECK(s.train[1] == std::vector<int>{4});
  CHECK(s.val[1] == 0);
  CHECK(s.test[1] == 2);

  // exhaustiveness: |train| + 2 equals the per-user interaction count
  for (int u = 0; u < s.n_users; ++u) {
    std::size_t count = 0;
    for (const Interaction& it : log.interactions) count += it.user == u;
    CHECK(s.train[u].size() + 2 == count);
  }

  InteractionLog two;
  two.user_names = {"solo"};
  two.item_names = {"a", "b"};
  two.interactions = {{0, 0, 1, 0}, {0, 1, 1, 1}};
  try {
    leave_last_split(two);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("solo") != std::string::npos);
  }
}

TEST_CASE("sample_negatives: exclusion, exhaustion, determinism, errors") {
  SplitDataset s = make_split(5, {{1}}, {2}, {2});
  // user positives {1, 2}; catalog {0..4}
  Rng rng(42);
  std::vector<int> negs = sample_negatives(0, 2, s, rng);
  CHECK(negs.size() == 2);
  std::set<int> chosen(negs.begin(), negs.end());
  CHECK(chosen.size() == 2);
  for (int x : chosen) CHECK((x == 0 || x == 3 || x == 4));

  Rng rng2(42);
  CHECK(sample_negatives(0, 2, s, rng2) == negs);

  Rng rng3(7);
  std::vector<int> all = sample_negatives(0, 3, s, rng3);
  CHECK(std::set<int>(all.begin(), all.end()) == std::set<int>{0, 3, 4});

  Rng rng4(7);
  CHECK_THROWS_AS(sample_negatives(0, 4, s, rng4), DataError);
}

TEST_CASE("make_batches: labels, counts, determinism, purity") {
  SplitDataset s = make_split(30, {{0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}},
                              {10, 11}, {12, 13});

  auto b0 = make_batches(s, 64, 0, 99);
  REQUIRE(b0.size() == 1);
  CHECK(b0[0].size() == 10);
  for (int y : b0[0].labels) CHECK(y == 1);

  auto b4 = make_batches(s, 50, 4, 99);
  REQUIRE(b4.size() == 1);
  CHECK(b4[0].size() == 50);  // 10 positives x (1 + 4)

  auto again = make_batches(s, 50, 4, 99);
  REQUIRE(again.size() == b4.size());
  CHECK(again[0].users == b4[0].users);
  CHECK(again[0].items == b4[0].items);
  CHECK(again[0].labels == b4[0].labels);

  auto other_seed = make_batches(s, 50, 4, 100);
  CHECK(other_seed[0].items != b4[0].items);

  // partial final batch
  auto parts = make_batches(s, 16, 4, 1);
  std::size_t total = 0;
  for (const Batch& b : parts) total += b.size();
  CHECK(total == 50);
  CHECK(parts.back().size() == 50 % 16);

  // purity fuzz: negatives never collide with the user's positives
  Rng fuzz(314);
  for (int round = 0; round < 20; ++round) {
    const int n_items = 8 + static_cast<int>(fuzz.below(20));
    std::vector<std::vector<int>> train(3);
    std::vector<int> val(3), test(3);
    for (int u = 0; u < 3; ++u) {
      std::set<int> pos;
      while (pos.size() < 4) pos.insert(static_cast<int>(fuzz.below(n_items)));
      auto it = pos.begin();
      int a = *it++, b = *it++, c = *it++, d = *it++;
      train[u] = {a, b};
      val[u] = c;
      test[u] = d;
    }
    SplitDataset rs = make_split(n_items, train, val, test);
    for (const Batch& b : make_batches(rs, 7, 3, fuzz.next_u64())) {
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (b.labels[j] == -1) {
          CHECK(rs.positives(b.users[j]).count(b.items[j]) == 0);
        }
      }
    }
  }
}

TEST_CASE("pair table round trip and missing entries") {
  PairProbTable t(3, 4);
  t.set(0, 0, 0.25);
  t.set(2, 3, 1e-9);
  t.set(1, 2, 0.999999);
  CHECK(t.has(0, 0));
  CHECK_FALSE(t.has(0, 1));
  CHECK_FALSE(t.has(5, 0));

  TempDir tmp;
  save_pair_table(t, tmp.file("t.tsv"));
  PairProbTable u = load_pair_table(tmp.file("t.tsv"));
  CHECK(u.n_users == 3);
  CHECK(u.n_items == 4);
  CHECK(u.at(0, 0) == t.at(0, 0));
  CHECK(u.at(2, 3) == t.at(2, 3));
  CHECK(u.at(1, 2) == t.at(1, 2));
  CHECK_FALSE(u.has(0, 1));
}

TEST_CASE("split files round trip") {
  TempDir tmp;
  write_text(tmp.file("r.dat"),
             "a::x::5::3\na::y::4::1\na::z::3::2\nb::x::2::9\nb::z::1::7\nb::y::5::8\n");
  InteractionLog log = load_interactions(tmp.file("r.dat"), "::");
  SplitDataset split = leave_last_split(log);
  save_split_files(log, split, tmp.file("out"));

  SplitDataset loaded = load_split_files(tmp.file("out"));
  CHECK(loaded.n_users == split.n_users);
  CHECK(loaded.n_items == split.n_items);
  CHECK(loaded.train == split.train);
  CHECK(loaded.val == split.val);
  CHECK(loaded.test == split.test);

  InteractionLog rebuilt = load_interactions_from_split(tmp.file("out"));
  REQUIRE(rebuilt.interactions.size() == log.interactions.size());
  for (int u = 0; u < log.n_users(); ++u) {
    std::vector<std::pair<int, double>> orig, back;
    for (const Interaction& it : log.interactions) {
      if (it.user == u) orig.push_back({it.item, it.value});
    }
    for (const Interaction& it : rebuilt.interactions) {
      if (it.user == u) back.push_back({it.item, it.value});
    }
    CHECK(orig == back);
  }
}
