#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "distilkit/stats.hpp"

namespace distilkit {

// One finished run. Grid-search cells share (objective, init, task, seed) and
// differ in (lr, batch); aggregation keeps the best cell per seed, mirroring
// grid-search reporting.
struct RunRecord {
  std::string objective;
  std::string init;
  std::string task;
  std::uint64_t seed = 0;
  std::string metric = "acc";
  double value = 0.0;
  double lr = 0.0;  // 0 = not a grid run
  int batch = 0;
};

enum class GroupBy { OBJECTIVE, INIT };

struct EvalReport {
  using CellKey = std::tuple<std::string, std::string, std::string>;  // objective, init, task

  struct Cell {
    std::vector<std::uint64_t> seeds;
    std::vector<double> values;  // aligned with seeds, ascending seed order
    double mean = 0.0;
    double stddev = 0.0;
    bool single_seed = false;
    std::string metric;
  };

  struct Significance {
    std::string group_a;
    std::string group_b;
    std::string within;  // shared init (objective tests) or objective (init tests)
    std::string scope;   // task name or "pooled"
    double t = 0.0;
    double p = 1.0;
    int pairs = 0;
  };

  std::map<CellKey, Cell> cells;
  std::vector<Significance> objective_tests;
  std::vector<Significance> init_tests;

  std::vector<std::string> tasks() const;
};

EvalReport build_report(const std::vector<RunRecord>& records);

// Paper-style table: rows = (objective, init) pairs grouped by the requested
// axis, columns = tasks, cells = mean +- std.
std::string render_text(const EvalReport& report, GroupBy group_by);
std::string render_tsv(const EvalReport& report, GroupBy group_by);

}  // namespace distilkit
