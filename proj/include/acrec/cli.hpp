#pragma once

#include <string>
#include <vector>

#include "acrec/config.hpp"

namespace acrec {

// Pipeline commands. Each writes its primary outputs plus a resolved-config
// snapshot into rc.out_dir and holds a lock file while doing so. Errors are
// reported by throwing ConfigError / DataError / NumericError, which the
// binary maps to exit codes 1 / 2 / 3.
void cmd_prepare(const RunConfig& rc);
void cmd_simulate(const RunConfig& rc);
void cmd_train(const RunConfig& rc);
void cmd_evaluate(const RunConfig& rc);

// Aggregates eval_*.json reports across run directories into mean (std)
// cells grouped by label and weighting; refuses mixed protocols.
void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace acrec
