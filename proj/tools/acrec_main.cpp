#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "acrec/cli.hpp"

namespace {

// 0 ok, 1 usage/config, 2 data, 3 numerical divergence
int run(int argc, char** argv) {
  CLI::App app{"counterfactual recommender training and evaluation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (TOML-style sections)")->required();
    cmd->add_option("--seed", seed_override, "override the config seed");
    cmd->add_option("--out", out_override, "override the output directory");
  };

  CLI::App* prepare = app.add_subcommand("prepare", "load, filter and split an interaction log");
  add_common(prepare);
  CLI::App* simulate = app.add_subcommand("simulate", "generate semi-synthetic clicks with oracle tables");
  add_common(simulate);
  CLI::App* train = app.add_subcommand("train", "train a model (erm | ps | acl)");
  add_common(train);
  CLI::App* evaluate = app.add_subcommand("evaluate", "rank held-out items under the configured weightings");
  add_common(evaluate);

  CLI::App* report = app.add_subcommand("report", "aggregate evaluation reports across runs");
  std::vector<std::string> run_dirs;
  std::string report_out = "report";
  report->add_option("dirs", run_dirs, "run directories with eval_*.json files")->required();
  report->add_option("--out", report_out, "report output directory");

  CLI11_PARSE(app, argc, argv);

  if (report->parsed()) {
    acrec::cmd_report(run_dirs, report_out);
    return 0;
  }

  acrec::RunConfig rc = acrec::load_run_config(config_path);
  if (seed_override) rc.seed = *seed_override;
  if (out_override) rc.out_dir = *out_override;

  if (prepare->parsed()) acrec::cmd_prepare(rc);
  if (simulate->parsed()) acrec::cmd_simulate(rc);
  if (train->parsed()) acrec::cmd_train(rc);
  if (evaluate->parsed()) acrec::cmd_evaluate(rc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const acrec::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const acrec::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const acrec::NumericError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
