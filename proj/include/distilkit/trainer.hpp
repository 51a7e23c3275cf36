#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "distilkit/data.hpp"
#include "distilkit/encoder.hpp"
#include "distilkit/init_map.hpp"
#include "distilkit/objectives.hpp"
#include "distilkit/stats.hpp"

namespace distilkit {

enum class TrainMode { TASK_SPECIFIC, TASK_AGNOSTIC, FINETUNE };

const char* train_mode_name(TrainMode mode);
TrainMode train_mode_from_name(const std::string& name);

struct TrainingRecipe {
  TrainMode mode = TrainMode::TASK_SPECIFIC;
  int stage1_epochs = 10;
  int stage2_epochs = 10;
  int epochs = 10;             // single-stage modes
  std::int64_t max_steps = 0;  // 0 = derive from epochs; also the schedule horizon
  int batch_size = 32;
  double peak_lr = 5e-4;
  double warmup_fraction = 0.06;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-6;
  double grad_clip = 0.0;  // 0 = off
  std::uint64_t seed = 1;
  ObjectiveSpec objective;
  double teacher_acc_floor = 0.6;
  double mask_rate = 0.15;

  void validate() const;
};

// Piecewise-linear warmup to peak_lr, then linear decay to 0 at
// recipe.max_steps. The trainer resolves max_steps before stepping.
double lr_at(std::int64_t step, const TrainingRecipe& recipe);

// Adam with decoupled weight decay. Parameters that received no gradient in
// a step are left untouched (no decay either), which keeps per-stage
// parameter isolation exact.
class AdamW {
public:
  AdamW(std::vector<Tensor> params, const TrainingRecipe& recipe);
  void zero_grad();
  void step(double lr);
  const std::vector<Tensor>& params() const { return params_; }

private:
  struct Slot {
    Matrix m, v;
  };
  std::vector<Tensor> params_;
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_, weight_decay_, grad_clip_;
  std::int64_t t_ = 0;
};

struct StageResult {
  std::string stage;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> loss_series;  // term -> per-epoch mean
  std::vector<LayerPair> supervision_pairs_used;
  double wall_seconds = 0.0;  // informational; never serialized into records
};

// One classification example prepared for a step; for MLM items input_ids
// carry the MASK substitutions.
struct TrainItem {
  const EncodedExample* example = nullptr;
  std::vector<int> input_ids;
  std::vector<Index> masked_positions;
  std::vector<int> masked_targets;
  bool mlm = false;
};

struct TaskData {
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> dev;
  MetricKind metric = MetricKind::ACC;
};

// One optimizer step on the combined loss over the batch. Teacher must be
// present iff a distillation term is active; it is only read.
std::map<Term, double> train_step(EncoderModel& student, const EncoderModel* teacher,
                                  const std::vector<TrainItem>& batch, const ObjectiveSpec& spec,
                                  const ProjectionSet& projections, AdamW& opt, double lr);

// Two-stage task-specific distillation: intermediate-layer terms first, then
// prediction-layer transfer. Objectives without intermediate terms (vanilla
// KD) skip stage 1. Supervision pairs come from recipe.objective.layer_pairs.
std::pair<StageResult, StageResult> run_task_specific(const EncoderModel& teacher,
                                                      EncoderModel& student, const TaskData& data,
                                                      const TrainingRecipe& recipe,
                                                      ProjectionSet& projections);

// Single-stage distillation on masked-language-model batches. Supervises only
// the (teacher last, student last) layer pair; SUPERVISED means the MLM loss.
StageResult run_task_agnostic(const EncoderModel& teacher, EncoderModel& student,
                              const std::vector<EncodedExample>& corpus,
                              const TrainingRecipe& recipe, ProjectionSet& projections);

// Plain supervised fine-tuning (also used for teacher preparation).
StageResult finetune(EncoderModel& model, const TaskData& data, const TrainingRecipe& recipe,
                     int epochs);

// Masked-language-model training on its own (no distillation terms); prepares
// a teacher for the task-agnostic setting.
StageResult train_mlm(EncoderModel& model, const std::vector<EncodedExample>& corpus,
                      const TrainingRecipe& recipe, int epochs);

struct GridRun {
  double lr = 0.0;
  int batch = 0;
  double dev_metric = 0.0;
  StageResult stage;
};

struct GridSearchResult {
  std::vector<GridRun> runs;
  std::size_t best = 0;
};

// Trains |lr_grid| x |batch_grid| runs from the same starting checkpoint and
// returns the argmax dev metric. Ties break to lower lr, then smaller batch.
GridSearchResult finetune_grid_search(const EncoderModel& start, const TaskData& data,
                                      std::vector<double> lr_grid, std::vector<int> batch_grid,
                                      int epochs, const TrainingRecipe& recipe);

std::vector<int> predict(const EncoderModel& model, const std::vector<EncodedExample>& examples);
double evaluate_metric(const EncoderModel& model, const std::vector<EncodedExample>& examples,
                       MetricKind kind);

}  // namespace distilkit
