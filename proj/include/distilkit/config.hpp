#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "distilkit/data.hpp"
#include "distilkit/init_map.hpp"
#include "distilkit/trainer.hpp"

namespace distilkit {

struct ModelBlock {
  ModelConfig model;
  std::string checkpoint;  // load instead of training when set
  int train_epochs = 8;    // teacher preparation when no checkpoint
  std::uint64_t seed = 1234;
};

struct InitBlock {
  InitStrategy strategy = InitStrategy::EVERY_K;
  std::vector<int> layers;  // EXPLICIT only
  bool copy_embeddings = true;

  LayerMap to_map(int teacher_layers, int student_layers) const;
};

struct DataBlock {
  std::string kind = "keyword";  // keyword | parity | pair_match | tsv | corpus
  int n = 2000;
  int gen_vocab = 100;
  std::uint64_t seed = 7;
  int min_count = 1;
  MetricKind metric = MetricKind::ACC;
  std::string train_path, dev_path;
  TsvSchema schema;
};

// One config file describes one experiment group: the cross product of
// objective and init sweeps with the seed list (and, for finetune mode, the
// lr x batch grid).
struct ExperimentConfig {
  TrainMode mode = TrainMode::TASK_SPECIFIC;
  ModelBlock teacher;
  ModelBlock student;
  InitBlock init;
  ObjectiveSpec objective;
  TrainingRecipe recipe;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  std::vector<double> lr_grid;
  std::vector<int> batch_grid;
  DataBlock data;
  std::vector<std::set<Term>> objective_sweep;  // defaults to {objective.active}
  std::vector<InitBlock> init_sweep;            // defaults to {init}
  std::string output_dir = "runs/out";

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text);
  void validate() const;
};

}  // namespace distilkit
