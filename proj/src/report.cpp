#include "distilkit/report.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "distilkit/error.hpp"

namespace distilkit {

std::vector<std::string> EvalReport::tasks() const {
  std::set<std::string> seen;
  for (const auto& [key, cell] : cells) seen.insert(std::get<2>(key));
  return {seen.begin(), seen.end()};
}

namespace {

std::string format_value(double v) {
  std::ostringstream out;
  out.precision(4);
  out << v;
  return out.str();
}

void add_significance(std::vector<EvalReport::Significance>& out, const std::string& a,
                      const std::string& b, const std::string& within, const std::string& scope,
                      const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() < 2 || xs.size() != ys.size()) return;
  TTestResult t = paired_t_test(xs, ys);
  out.push_back({a, b, within, scope, t.t, t.p, static_cast<int>(xs.size())});
}

}  // namespace

EvalReport build_report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw EmptyRecords("no run records");

  // best-per-seed selection for grid runs, duplicate detection otherwise
  std::map<std::tuple<std::string, std::string, std::string, std::uint64_t>, RunRecord> per_seed;
  for (const RunRecord& r : records) {
    auto key = std::make_tuple(r.objective, r.init, r.task, r.seed);
    auto it = per_seed.find(key);
    if (it == per_seed.end()) {
      per_seed.emplace(key, r);
      continue;
    }
    if (r.lr == it->second.lr && r.batch == it->second.batch)
      throw DuplicateSeed("duplicate record for objective=" + r.objective + " init=" + r.init +
                          " task=" + r.task + " seed=" + std::to_string(r.seed));
    if (r.value > it->second.value) it->second = r;
  }

  EvalReport report;
  for (const auto& [key, r] : per_seed) {
    EvalReport::CellKey cell_key{r.objective, r.init, r.task};
    EvalReport::Cell& cell = report.cells[cell_key];
    cell.seeds.push_back(r.seed);
    cell.values.push_back(r.value);
    cell.metric = r.metric;
  }
  for (auto& [key, cell] : report.cells) {
    // per_seed map iteration is already seed-ascending within a cell
    cell.mean = mean_of(cell.values);
    cell.stddev = sample_std(cell.values);
    cell.single_seed = cell.values.size() < 2;
  }

  // pairwise significance, per task and pooled across tasks
  std::set<std::string> objectives, inits;
  for (const auto& [key, cell] : report.cells) {
    objectives.insert(std::get<0>(key));
    inits.insert(std::get<1>(key));
  }
  auto cell_of = [&report](const std::string& obj, const std::string& init,
                           const std::string& task) -> const EvalReport::Cell* {
    auto it = report.cells.find({obj, init, task});
    return it == report.cells.end() ? nullptr : &it->second;
  };
  auto paired_values = [](const EvalReport::Cell& a, const EvalReport::Cell& b,
                          std::vector<double>& xs, std::vector<double>& ys) {
    for (std::size_t i = 0; i < a.seeds.size(); ++i)
      for (std::size_t j = 0; j < b.seeds.size(); ++j)
        if (a.seeds[i] == b.seeds[j]) {
          xs.push_back(a.values[i]);
          ys.push_back(b.values[j]);
        }
  };

  std::vector<std::string> tasks = report.tasks();
  for (const std::string& init : inits) {
    for (auto a = objectives.begin(); a != objectives.end(); ++a) {
      for (auto b = std::next(a); b != objectives.end(); ++b) {
        std::vector<double> pooled_a, pooled_b;
        for (const std::string& task : tasks) {
          const auto* ca = cell_of(*a, init, task);
          const auto* cb = cell_of(*b, init, task);
          if (!ca || !cb) continue;
          std::vector<double> xs, ys;
          paired_values(*ca, *cb, xs, ys);
          add_significance(report.objective_tests, *a, *b, init, task, xs, ys);
          pooled_a.insert(pooled_a.end(), xs.begin(), xs.end());
          pooled_b.insert(pooled_b.end(), ys.begin(), ys.end());
        }
        add_significance(report.objective_tests, *a, *b, init, "pooled", pooled_a, pooled_b);
      }
    }
  }
  for (const std::string& obj : objectives) {
    for (auto a = inits.begin(); a != inits.end(); ++a) {
      for (auto b = std::next(a); b != inits.end(); ++b) {
        std::vector<double> pooled_a, pooled_b;
        for (const std::string& task : tasks) {
          const auto* ca = cell_of(obj, *a, task);
          const auto* cb = cell_of(obj, *b, task);
          if (!ca || !cb) continue;
          std::vector<double> xs, ys;
          paired_values(*ca, *cb, xs, ys);
          add_significance(report.init_tests, *a, *b, obj, task, xs, ys);
          pooled_a.insert(pooled_a.end(), xs.begin(), xs.end());
          pooled_b.insert(pooled_b.end(), ys.begin(), ys.end());
        }
        add_significance(report.init_tests, *a, *b, obj, "pooled", pooled_a, pooled_b);
      }
    }
  }
  return report;
}

namespace {

using Row = std::pair<std::string, std::string>;  // (objective, init)

std::vector<Row> ordered_rows(const EvalReport& report, GroupBy group_by) {
  std::set<Row> rows;
  for (const auto& [key, cell] : report.cells)
    rows.insert({std::get<0>(key), std::get<1>(key)});
  std::vector<Row> out(rows.begin(), rows.end());
  if (group_by == GroupBy::INIT)
    std::stable_sort(out.begin(), out.end(), [](const Row& a, const Row& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
  return out;
}

std::string cell_text(const EvalReport& report, const Row& row, const std::string& task) {
  auto it = report.cells.find({row.first, row.second, task});
  if (it == report.cells.end()) return "-";
  std::string s = format_value(it->second.mean) + "+-" + format_value(it->second.stddev);
  if (it->second.single_seed) s += " (1 seed)";
  return s;
}

}  // namespace

std::string render_tsv(const EvalReport& report, GroupBy group_by) {
  std::ostringstream out;
  out << "objective\tinit";
  for (const std::string& task : report.tasks()) out << "\t" << task;
  out << "\n";
  for (const Row& row : ordered_rows(report, group_by)) {
    out << row.first << "\t" << row.second;
    for (const std::string& task : report.tasks()) out << "\t" << cell_text(report, row, task);
    out << "\n";
  }
  return out.str();
}

std::string render_text(const EvalReport& report, GroupBy group_by) {
  std::vector<std::string> tasks = report.tasks();
  std::vector<Row> rows = ordered_rows(report, group_by);

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"objective", "init"};
  header.insert(header.end(), tasks.begin(), tasks.end());
  grid.push_back(header);
  for (const Row& row : rows) {
    std::vector<std::string> line{row.first, row.second};
    for (const std::string& task : tasks) line.push_back(cell_text(report, row, task));
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(grid[0].size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());

  std::ostringstream out;
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      out << line[c] << std::string(widths[c] - line[c].size() + 2, ' ');
    }
    out << "\n";
  }

  auto print_tests = [&out](const char* title,
                            const std::vector<EvalReport::Significance>& tests) {
    if (tests.empty()) return;
    out << "\n" << title << "\n";
    for (const auto& t : tests) {
      out << "  " << t.group_a << " vs " << t.group_b << " (within " << t.within << ", "
          << t.scope << "): t=" << format_value(t.t) << " p=" << format_value(t.p)
          << " n=" << t.pairs << (t.p < 0.05 ? "  *" : "") << "\n";
    }
  };
  print_tests("paired t-tests over objectives", report.objective_tests);
  print_tests("paired t-tests over initialisations", report.init_tests);
  return out.str();
}

}  // namespace distilkit
