#pragma once

#include <string>

#include "distilkit/config.hpp"
#include "distilkit/report.hpp"

namespace distilkit {

// Exit codes: 0 success, 1 runtime failure (partial manifest kept), 2 invalid
// config. Failures print a machine-parseable line: `error code=<Code> ...`.
int cmd_distill(const std::string& config_path, int jobs = 1);
int cmd_report(const std::string& records_dir, GroupBy group_by = GroupBy::OBJECTIVE);
// plant_bug injects a deliberately doubled matmul gradient so the checker's
// failure path can be exercised end to end.
int cmd_verify(bool plant_bug = false);

// Reads the header lines of every *.jsonl record under dir.
std::vector<RunRecord> load_records(const std::string& records_dir);

}  // namespace distilkit
