#include <string>

#include <CLI11.hpp>

#include "distilkit/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"knowledge distillation workbench for transformer encoders"};
  app.require_subcommand(1);

  std::string config_path;
  int jobs = 1;
  CLI::App* distill = app.add_subcommand("distill", "run all (seed x grid) runs from a config");
  distill->add_option("--config", config_path, "experiment config (JSON)")->required();
  distill->add_option("--jobs", jobs, "number of concurrent runs")->check(CLI::PositiveNumber);

  std::string records_dir;
  std::string group_by = "objective";
  CLI::App* report = app.add_subcommand("report", "aggregate run records into tables");
  report->add_option("--in", records_dir, "directory of run records")->required();
  report->add_option("--group-by", group_by, "row grouping")
      ->check(CLI::IsMember({"objective", "init"}));

  bool plant_bug = false;
  CLI::App* verify = app.add_subcommand("verify", "run the invariant and oracle suite");
  verify->add_flag("--plant-bug", plant_bug, "inject a wrong backward to test the checker");

  CLI11_PARSE(app, argc, argv);

  if (distill->parsed()) return distilkit::cmd_distill(config_path, jobs);
  if (report->parsed())
    return distilkit::cmd_report(records_dir, group_by == "init" ? distilkit::GroupBy::INIT
                                                                 : distilkit::GroupBy::OBJECTIVE);
  return distilkit::cmd_verify(plant_bug);
}
