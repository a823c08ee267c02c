#include "acrec/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;

namespace acrec {

namespace {

// One writer per run directory.
class RunLock {
 public:
  explicit RunLock(const std::string& dir) : path_((fs::path(dir) / ".lock").string()) {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw ConfigError("run directory is locked: " + dir +
                        " (remove " + path_ + " if no other process is writing)");
    }
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

void write_snapshot(const RunConfig& rc, const std::string& dir) {
  write_file((fs::path(dir) / "resolved_config.json").string(), resolved_config_json(rc));
}

std::string require_out_dir(const RunConfig& rc) {
  if (rc.out_dir.empty()) {
    throw ConfigError("no output directory: set [output] dir or pass --out");
  }
  return rc.out_dir;
}

nlohmann::json epoch_row_json(const EpochRow& r) {
  return {{"epoch", r.epoch},
          {"objective", r.objective},
          {"weighted_f_loss", r.weighted_f_loss},
          {"reg_term", r.reg_term},
          {"lr_theta", r.lr_theta},
          {"lr_psi", r.lr_psi},
          {"f_val_hit10", r.f_val_hit10},
          {"f_val_ndcg10", r.f_val_ndcg10},
          {"g_val_hit10", r.g_val_hit10},
          {"g_val_ndcg10", r.g_val_ndcg10}};
}

void write_train_log(const TrainState& st, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const EpochRow& r : st.epochs) out << epoch_row_json(r).dump() << "\n";
}

std::vector<double> head_extra(const PropensityHead& h) {
  return {h.beta0, h.beta1, h.beta2, h.mu};
}

PropensityHead head_from_extra(const std::vector<double>& extra, const std::string& where) {
  if (extra.size() != 4) throw DataError(where + ": checkpoint carries no propensity head");
  return PropensityHead{extra[0], extra[1], extra[2], extra[3]};
}

}  // namespace

void cmd_prepare(const RunConfig& rc) {
  if (!rc.has_data) throw ConfigError("prepare needs a [data] section");
  if (rc.data.path.empty()) throw ConfigError("prepare: [data] path is required");
  const std::string out = require_out_dir(rc);
  RunLock lock(out);

  InteractionLog raw = load_interactions(rc.data.path, rc.data.separator);
  InteractionLog filtered = filter_users(raw, rc.data.min_n, rc.data.max_n);
  if (filtered.interactions.empty()) {
    throw DataError("prepare: no interactions remain after filtering");
  }
  SplitDataset split = leave_last_split(filtered);
  save_split_files(filtered, split, out);
  write_snapshot(rc, out);

  std::size_t train_n = 0;
  for (const auto& t : split.train) train_n += t.size();
  std::printf("prepared %s: users=%d items=%d interactions=%zu train=%zu val=%d test=%d\n",
              out.c_str(), split.n_users, split.n_items, filtered.interactions.size(),
              train_n, split.n_users, split.n_users);
}

namespace {

void simulate_one(const RunConfig& rc, const InteractionLog& source, std::uint64_t seed,
                  const std::string& out) {
  RunLock lock(out);
  SimConfig cfg = rc.sim.cfg;
  cfg.seed = seed;
  OracleDataset oracle = generate_semi_synthetic(source, cfg);
  save_oracle(oracle, cfg, out);

  // Click split for downstream training, plus the exposure table remapped
  // into the split's id space for unbiased evaluation.
  InteractionLog clicks;
  for (int u = 0; u < oracle.n_users; ++u) clicks.user_names.push_back(std::to_string(u));
  for (int i = 0; i < oracle.n_items; ++i) clicks.item_names.push_back(std::to_string(i));
  clicks.interactions = oracle.clicks;
  const int min_n = std::max(rc.sim.min_n, 3);
  InteractionLog filtered = filter_users(clicks, min_n, rc.sim.max_n);
  if (filtered.interactions.empty()) {
    throw DataError("simulate: no users kept at least " + std::to_string(min_n) +
                    " clicks; raise exposure (kappa/sigma2) or lower min_n");
  }
  SplitDataset split = leave_last_split(filtered);
  const std::string split_dir = (fs::path(out) / "split").string();
  save_split_files(filtered, split, split_dir);
  PairProbTable exposure = remap_oracle_table(oracle.p_exposure, filtered.user_names,
                                              filtered.item_names);
  save_pair_table(exposure, (fs::path(split_dir) / "exposure_split.tsv").string());
  write_snapshot(rc, out);
  std::printf("simulated %s: grid=%dx%d clicks=%zu kept_users=%d kept_items=%d\n",
              out.c_str(), oracle.n_users, oracle.n_items, oracle.clicks.size(),
              split.n_users, split.n_items);
}

}  // namespace

void cmd_simulate(const RunConfig& rc) {
  if (!rc.has_sim) throw ConfigError("simulate needs a [sim] section");
  const std::string out = require_out_dir(rc);

  InteractionLog source;
  if (!rc.sim.input_dir.empty()) {
    source = load_interactions_from_split(rc.sim.input_dir);
  } else if (rc.has_data && !rc.data.path.empty()) {
    source = filter_users(load_interactions(rc.data.path, rc.data.separator),
                          rc.data.min_n, rc.data.max_n);
  } else {
    throw ConfigError("simulate: set [sim] input_dir to a prepared split or provide [data] path");
  }
  if (source.interactions.empty()) throw DataError("simulate: empty explicit dataset");

  if (rc.sim.sweep <= 1) {
    simulate_one(rc, source, rc.seed, out);
    return;
  }
  for (int k = 0; k < rc.sim.sweep; ++k) {
    const std::string sub = (fs::path(out) / ("seed_" + std::to_string(k))).string();
    simulate_one(rc, source, derive_seed(rc.seed, "sim-sweep", static_cast<std::uint64_t>(k)), sub);
  }
}

void cmd_train(const RunConfig& rc) {
  if (!rc.has_train) throw ConfigError("train needs a [train] section");
  if (rc.train.data_dir.empty()) throw ConfigError("train: [train] data_dir is required");
  const std::string out = require_out_dir(rc);
  RunLock lock(out);

  SplitDataset split = load_split_files(rc.train.data_dir);
  TrainConfig cfg = rc.train.cfg;
  cfg.seed = rc.seed;
  validate(cfg);

  if (rc.train.mode == "erm" && rc.train.alpha_explicit) {
    std::fprintf(stderr, "warning: [train] alpha is ignored in erm mode\n");
  }
  if (rc.train.mode != "erm" && rc.train.f_kind == ModelKind::Pop) {
    throw ConfigError("train: f_kind pop has no gradients; use mode=erm");
  }

  auto build = [&](ModelKind kind, const char* tag) {
    RecModel m = init_model(kind, split.n_users, split.n_items, cfg.hidden_dim,
                            rc.train.layer_spec, derive_seed(cfg.seed, tag));
    if (kind == ModelKind::Pop) pop_fit(m, split);
    return m;
  };

  if (rc.train.mode == "erm") {
    TrainState st;
    RecModel f = build(rc.train.f_kind, "f-init");
    if (rc.train.f_kind != ModelKind::Pop) f = erm_train(std::move(f), split, cfg, &st);
    save_checkpoint(f, (fs::path(out) / "f.ckpt").string());
    write_train_log(st, (fs::path(out) / "train_log.jsonl").string());
    write_snapshot(rc, out);
    std::printf("trained erm %s: epochs=%zu best_epoch=%d\n", out.c_str(), st.epochs.size(),
                st.best_epoch);
    return;
  }

  if (rc.train.mode == "ps") {
    PsResult res = ps_train(rc.train.f_kind, rc.train.g_kind, split, cfg, rc.train.layer_spec);
    save_checkpoint(res.f, (fs::path(out) / "f.ckpt").string());
    save_checkpoint(res.g, (fs::path(out) / "g.ckpt").string(), head_extra(res.head));
    write_train_log(res.stage2, (fs::path(out) / "train_log.jsonl").string());
    write_train_log(res.stage1, (fs::path(out) / "g_train_log.jsonl").string());
    write_snapshot(rc, out);
    std::printf("trained ps %s: stage1_epochs=%zu stage2_epochs=%zu\n", out.c_str(),
                res.stage1.epochs.size(), res.stage2.epochs.size());
    return;
  }

  // acl
  RecModel f = build(rc.train.f_kind, "f-init");
  RecModel g = build(rc.train.g_kind, "g-init");
  PropensityHead head{0.0, 0.0, 0.0, cfg.mu};
  AclResult res = acl_train(std::move(f), std::move(g), head, split, cfg);
  save_checkpoint(res.f, (fs::path(out) / "f.ckpt").string());
  save_checkpoint(res.g, (fs::path(out) / "g.ckpt").string(), head_extra(res.head));
  write_train_log(res.state, (fs::path(out) / "train_log.jsonl").string());
  write_snapshot(rc, out);
  std::printf("trained acl %s: epochs=%zu stopped_early=%d diverged=%d\n", out.c_str(),
              res.state.epochs.size(), res.state.stopped_early ? 1 : 0,
              res.state.diverged ? 1 : 0);
}

void cmd_evaluate(const RunConfig& rc) {
  if (!rc.has_eval) throw ConfigError("evaluate needs an [eval] section");
  if (rc.eval.split_dir.empty()) throw ConfigError("evaluate: [eval] split_dir is required");
  if (rc.eval.checkpoint_dir.empty()) throw ConfigError("evaluate: [eval] checkpoint_dir is required");
  const std::string out = require_out_dir(rc);
  RunLock lock(out);

  SplitDataset split = load_split_files(rc.eval.split_dir);
  RecModel f = load_checkpoint((fs::path(rc.eval.checkpoint_dir) / "f.ckpt").string());

  EvalProtocol protocol = rc.eval.protocol;
  protocol.seed = rc.seed;
  const std::string label = rc.eval.label.empty()
                                ? fs::path(rc.eval.checkpoint_dir).filename().string()
                                : rc.eval.label;

  // Lazy-loaded weight sources.
  RecModel g;
  PropensityHead head;
  bool have_g = false;
  PairProbTable exposure;
  bool have_exposure = false;
  std::vector<double> item_prop;

  std::string text_all;
  for (Weighting w : rc.eval.weightings) {
    protocol.weighting = w;
    WeightsSource src;
    if (w == Weighting::Robust) {
      if (!have_g) {
        const std::string gpath = (fs::path(rc.eval.checkpoint_dir) / "g.ckpt").string();
        if (!fs::exists(gpath)) {
          throw ConfigError("robust weighting needs a paired exposure model; train with "
                            "mode=ps or mode=acl, or point checkpoint_dir at such a run");
        }
        std::vector<double> extra;
        g = load_checkpoint(gpath, &extra);
        head = head_from_extra(extra, gpath);
        have_g = true;
      }
      src.g = &g;
      src.head = &head;
    } else if (w == Weighting::OracleUnbiased) {
      if (!have_exposure) {
        std::string tpath = rc.eval.oracle_table;
        if (tpath.empty()) tpath = (fs::path(rc.eval.split_dir) / "exposure_split.tsv").string();
        if (!fs::exists(tpath)) {
          throw DataError("oracle-unbiased weighting needs an exposure table; none at " + tpath);
        }
        exposure = load_pair_table(tpath);
        have_exposure = true;
      }
      src.exposure = &exposure;
    } else if (w == Weighting::PopularityDebiased) {
      if (item_prop.empty()) item_prop = popularity_propensities(split);
      src.item_propensity = &item_prop;
    }

    EvalReport report = evaluate(f, split, protocol, &src);
    const std::string name = to_string(w);
    write_file((fs::path(out) / ("eval_" + name + ".json")).string(),
               report_to_json(report, label));
    const std::string text = report_to_text(report, label);
    write_file((fs::path(out) / ("eval_" + name + ".txt")).string(), text);
    text_all += text;
  }
  write_snapshot(rc, out);
  std::fputs(text_all.c_str(), stdout);
}

namespace {

struct ReportRow {
  std::string label;
  std::string weighting;
  std::vector<int> cutoffs;
  int n_eval_negatives = 0;
  bool self_normalize = true;
  std::vector<double> hit, ndcg, hit_sn, ndcg_sn;
};

ReportRow parse_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  ReportRow row;
  row.label = j.at("label").get<std::string>();
  row.weighting = j.at("weighting").get<std::string>();
  row.cutoffs = j.at("cutoffs").get<std::vector<int>>();
  row.n_eval_negatives = j.at("n_eval_negatives").get<int>();
  row.self_normalize = j.at("self_normalize").get<bool>();
  for (const auto& c : j.at("hit")) row.hit.push_back(c.at("mean").get<double>());
  for (const auto& c : j.at("ndcg")) row.ndcg.push_back(c.at("mean").get<double>());
  for (const auto& c : j.at("hit_self_normalized")) row.hit_sn.push_back(c.at("mean").get<double>());
  for (const auto& c : j.at("ndcg_self_normalized")) row.ndcg_sn.push_back(c.at("mean").get<double>());
  return row;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, std::nan("")};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

std::string fmt_cell(double mean, double stddev) {
  char buf[64];
  if (std::isnan(stddev)) {
    std::snprintf(buf, sizeof(buf), "%.4f", mean);
  } else {
    std::snprintf(buf, sizeof(buf), "%.4f (%.4f)", mean, stddev);
  }
  return buf;
}

}  // namespace

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");

  std::vector<ReportRow> rows;
  for (const std::string& dir : run_dirs) {
    bool found = false;
    if (!fs::is_directory(dir)) throw DataError("report: not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("eval_", 0) == 0 && name.size() > 5 &&
          name.substr(name.size() - 5) == ".json") {
        files.push_back(entry.path().string());
      }
    }
    std::sort(files.begin(), files.end());
    for (const std::string& f : files) {
      rows.push_back(parse_report(f));
      found = true;
    }
    if (!found) throw DataError("report: no eval_*.json in " + dir);
  }

  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].cutoffs != rows[0].cutoffs ||
        rows[i].n_eval_negatives != rows[0].n_eval_negatives ||
        rows[i].self_normalize != rows[0].self_normalize) {
      auto fmt_proto = [](const ReportRow& r) {
        std::string c = "cutoffs=[";
        for (std::size_t k = 0; k < r.cutoffs.size(); ++k) {
          if (k) c += ",";
          c += std::to_string(r.cutoffs[k]);
        }
        c += "] negs=" + std::to_string(r.n_eval_negatives) +
             " self_normalize=" + (r.self_normalize ? "true" : "false");
        return c;
      };
      throw ConfigError("report: inconsistent protocols across runs: {" + fmt_proto(rows[0]) +
                        "} vs {" + fmt_proto(rows[i]) + "}");
    }
  }

  // group rows by (label, weighting)
  std::map<std::pair<std::string, std::string>, std::vector<const ReportRow*>> groups;
  for (const ReportRow& r : rows) groups[{r.label, r.weighting}].push_back(&r);

  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "report.csv");
  std::ostringstream text;
  csv << "label,weighting,k,n_runs,hit_mean,hit_std,ndcg_mean,ndcg_std,"
         "hit_sn_mean,hit_sn_std,ndcg_sn_mean,ndcg_sn_std\n";
  text << "label            weighting            K   runs  Hit@K            NDCG@K           "
          "Hit@K[sn]        NDCG@K[sn]\n";

  for (const auto& [key, members] : groups) {
    const auto& cutoffs = members[0]->cutoffs;
    for (std::size_t c = 0; c < cutoffs.size(); ++c) {
      std::vector<double> hit, ndcg, hit_sn, ndcg_sn;
      for (const ReportRow* r : members) {
        hit.push_back(r->hit[c]);
        ndcg.push_back(r->ndcg[c]);
        hit_sn.push_back(r->hit_sn[c]);
        ndcg_sn.push_back(r->ndcg_sn[c]);
      }
      auto [hm, hs] = mean_std(hit);
      auto [nm, ns] = mean_std(ndcg);
      auto [hsm, hss] = mean_std(hit_sn);
      auto [nsm, nss] = mean_std(ndcg_sn);
      csv << key.first << "," << key.second << "," << cutoffs[c] << "," << members.size() << ","
          << hm << "," << (std::isnan(hs) ? "" : std::to_string(hs)) << "," << nm << ","
          << (std::isnan(ns) ? "" : std::to_string(ns)) << "," << hsm << ","
          << (std::isnan(hss) ? "" : std::to_string(hss)) << "," << nsm << ","
          << (std::isnan(nss) ? "" : std::to_string(nss)) << "\n";
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%-16s %-20s %-4d %-5zu %-16s %-16s %-16s %-16s\n",
                    key.first.c_str(), key.second.c_str(), cutoffs[c], members.size(),
                    fmt_cell(hm, hs).c_str(), fmt_cell(nm, ns).c_str(),
                    fmt_cell(hsm, hss).c_str(), fmt_cell(nsm, nss).c_str());
      text << buf;
    }
  }
  write_file((fs::path(out_dir) / "report.txt").string(), text.str());
  std::fputs(text.str().c_str(), stdout);
}

}  // namespace acrec
