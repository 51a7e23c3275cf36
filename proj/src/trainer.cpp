#include "distilkit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "distilkit/rng.hpp"

namespace distilkit {

const char* train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::TASK_SPECIFIC: return "task_specific";
    case TrainMode::TASK_AGNOSTIC: return "task_agnostic";
    case TrainMode::FINETUNE: return "finetune";
  }
  return "unknown";
}

TrainMode train_mode_from_name(const std::string& name) {
  for (TrainMode m : {TrainMode::TASK_SPECIFIC, TrainMode::TASK_AGNOSTIC, TrainMode::FINETUNE})
    if (name == train_mode_name(m)) return m;
  throw ConfigInvalid("unknown training mode: " + name);
}

void TrainingRecipe::validate() const {
  if (batch_size < 1) throw ConfigInvalid("batch_size must be >= 1");
  if (peak_lr <= 0) throw ConfigInvalid("peak_lr must be positive");
  if (warmup_fraction < 0 || warmup_fraction > 1)
    throw ConfigInvalid("warmup_fraction must lie in [0, 1]");
  if (weight_decay < 0) throw ConfigInvalid("weight_decay must be >= 0");
  if (grad_clip < 0) throw ConfigInvalid("grad_clip must be >= 0");
  if (mask_rate < 0 || mask_rate > 1) throw ConfigInvalid("mask_rate must lie in [0, 1]");
  if (mode == TrainMode::TASK_SPECIFIC && stage2_epochs < 1)
    throw ConfigInvalid("task-specific training needs stage2_epochs >= 1");
  if (mode == TrainMode::TASK_SPECIFIC && objective.any_intermediate() && stage1_epochs < 1)
    throw ConfigInvalid("intermediate-layer stage needs stage1_epochs >= 1");
  if ((mode == TrainMode::TASK_AGNOSTIC || mode == TrainMode::FINETUNE) && epochs < 1 &&
      max_steps < 1)
    throw ConfigInvalid("single-stage training needs epochs or max_steps");
  objective.validate();
}

double lr_at(std::int64_t step, const TrainingRecipe& recipe) {
  const std::int64_t total = recipe.max_steps;
  if (total < 1) throw StepOutOfRange("schedule horizon not resolved (max_steps unset)");
  if (step < 0 || step > total)
    throw StepOutOfRange("step " + std::to_string(step) + " outside [0, " +
                         std::to_string(total) + "]");
  const auto warmup =
      static_cast<std::int64_t>(std::llround(recipe.warmup_fraction * static_cast<double>(total)));
  if (warmup > 0 && step <= warmup)
    return recipe.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  return recipe.peak_lr * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

AdamW::AdamW(std::vector<Tensor> params, const TrainingRecipe& recipe)
    : params_(std::move(params)),
      beta1_(recipe.adam_beta1),
      beta2_(recipe.adam_beta2),
      eps_(recipe.adam_eps),
      weight_decay_(recipe.weight_decay),
      grad_clip_(recipe.grad_clip) {
  slots_.resize(params_.size());
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  if (grad_clip_ > 0) {
    double sq = 0.0;
    for (const Tensor& p : params_)
      if (p.has_grad()) sq += p.grad().squaredNorm();
    double norm = std::sqrt(sq);
    if (norm > grad_clip_) {
      double factor = grad_clip_ / norm;
      for (Tensor& p : params_)
        if (p.has_grad()) p.node()->grad *= factor;
    }
  }
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    Slot& s = slots_[i];
    const Matrix& g = p.grad();
    if (s.m.size() == 0) {
      s.m = Matrix::Zero(g.rows(), g.cols());
      s.v = Matrix::Zero(g.rows(), g.cols());
    }
    s.m = beta1_ * s.m + (1.0 - beta1_) * g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix update = (s.m / bc1).array() / ((s.v / bc2).array().sqrt() + eps_);
    p.value() -= lr * update + (lr * weight_decay_) * p.value();
  }
}

namespace {

TrainItem plain_item(const EncodedExample& ex) {
  TrainItem item;
  item.example = &ex;
  item.input_ids = ex.ids;
  return item;
}

TrainItem mlm_item(const EncodedExample& ex, double mask_rate, Rng& rng) {
  TrainItem item;
  item.example = &ex;
  item.input_ids = ex.ids;
  item.mlm = true;
  for (std::size_t i = 0; i < ex.ids.size(); ++i) {
    if (!ex.mask[i]) continue;
    int id = ex.ids[i];
    if (id == kClsId || id == kSepId || id == kPadId) continue;
    if (rng.uniform() < mask_rate) {
      item.masked_positions.push_back(static_cast<Index>(i));
      item.masked_targets.push_back(id);
      item.input_ids[i] = kMaskId;
    }
  }
  return item;
}

struct TermAccumulator {
  std::map<Term, Tensor> sums;
  std::map<Term, int> counts;

  void add(Term term, const Tensor& value) {
    auto it = sums.find(term);
    if (it == sums.end())
      sums.emplace(term, value);
    else
      it->second = distilkit::add(it->second, value);
    ++counts[term];
  }

  std::map<Term, Tensor> means() const {
    std::map<Term, Tensor> out;
    for (const auto& [term, total] : sums)
      out.emplace(term, scale(total, 1.0 / static_cast<Scalar>(counts.at(term))));
    return out;
  }
};

}  // namespace

std::map<Term, double> train_step(EncoderModel& student, const EncoderModel* teacher,
                                  const std::vector<TrainItem>& batch, const ObjectiveSpec& spec,
                                  const ProjectionSet& projections, AdamW& opt, double lr) {
  spec.validate();
  const bool needs_teacher =
      spec.has(Term::PRED) || spec.any_intermediate();
  if (needs_teacher && teacher == nullptr)
    throw MissingTeacher("a distillation term is active but no teacher was given");
  if (batch.empty()) throw InvalidSize("empty batch");

  opt.zero_grad();
  Tape tape;
  TapeScope scope(tape);

  std::vector<ForwardTrace> student_traces, teacher_traces;
  student_traces.reserve(batch.size());
  teacher_traces.reserve(batch.size());
  for (const TrainItem& item : batch) {
    const std::vector<bool>& mask = item.example->mask;
    student_traces.push_back(forward_with_trace(student, item.input_ids, mask));
    if (needs_teacher) {
      NoGradScope no_grad;
      teacher_traces.push_back(forward_with_trace(*teacher, item.input_ids, mask));
    }
  }

  TermAccumulator acc;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainItem& item = batch[i];
    ForwardTrace& s_trace = student_traces[i];

    if (spec.has(Term::SUPERVISED)) {
      if (item.mlm) {
        if (!item.masked_positions.empty())
          acc.add(Term::SUPERVISED, mlm_loss(mlm_logits(student, s_trace, item.masked_positions),
                                             item.masked_targets));
      } else {
        acc.add(Term::SUPERVISED, supervised_loss(classify(student, s_trace),
                                                  item.example->label));
      }
    }
    if (spec.has(Term::PRED)) {
      ForwardTrace& t_trace = teacher_traces[i];
      if (item.mlm) {
        if (!item.masked_positions.empty()) {
          Tensor zs = mlm_logits(student, s_trace, item.masked_positions);
          Tensor zt;
          {
            NoGradScope no_grad;
            zt = mlm_logits(*teacher, t_trace, item.masked_positions);
          }
          acc.add(Term::PRED, pred_loss(zt, zs, spec.temperature, spec.pred_t_squared));
        }
      } else {
        Tensor zs = classify(student, s_trace);
        Tensor zt;
        {
          NoGradScope no_grad;
          zt = classify(*teacher, t_trace);
        }
        acc.add(Term::PRED, pred_loss(zt, zs, spec.temperature, spec.pred_t_squared));
      }
    }
    if (spec.has(Term::HID_CLS))
      acc.add(Term::HID_CLS, hid_loss(s_trace, teacher_traces[i], spec.layer_pairs, projections,
                                      HidVariant::CLS));
    if (spec.has(Term::HID_SEQ))
      acc.add(Term::HID_SEQ, hid_loss(s_trace, teacher_traces[i], spec.layer_pairs, projections,
                                      HidVariant::SEQ));
    if (spec.has(Term::ATT_MSE))
      acc.add(Term::ATT_MSE, att_mse_loss(s_trace, teacher_traces[i], spec.layer_pairs));
    if (spec.has(Term::ATT_KL))
      acc.add(Term::ATT_KL, att_kl_loss(s_trace, teacher_traces[i], spec.layer_pairs));
    if (spec.has(Term::VAL_KL))
      acc.add(Term::VAL_KL, val_kl_loss(s_trace, teacher_traces[i], spec.layer_pairs));
  }
  if (spec.has(Term::HID_CONTRAST)) {
    std::vector<const ForwardTrace*> s_ptrs, t_ptrs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      s_ptrs.push_back(&student_traces[i]);
      t_ptrs.push_back(&teacher_traces[i]);
    }
    acc.add(Term::HID_CONTRAST, contrast_loss(s_ptrs, t_ptrs, spec.layer_pairs, projections,
                                              spec.contrast_temperature));
  }

  std::map<Term, Tensor> means = acc.means();
  std::map<Term, double> values;
  // a term can come up empty (e.g. no masked positions in the whole batch)
  std::map<Term, Tensor> present;
  for (Term t : spec.active) {
    auto it = means.find(t);
    if (it == means.end()) {
      values[t] = 0.0;
      present.emplace(t, Tensor::scalar(0.0));
    } else {
      values[t] = it->second.item();
      present.emplace(t, it->second);
    }
  }
  Tensor combined = combine(spec, present);
  // a batch can degenerate to constants (e.g. no masked positions at all)
  if (combined.requires_grad()) {
    tape.backward(combined);
    opt.step(lr);
  }
  return values;
}

namespace {

struct StageConfig {
  std::string name;
  ObjectiveSpec spec;
  int epochs = 0;
  bool mlm = false;
  std::uint64_t stream = 0;
};

StageResult run_stage(EncoderModel& student, const EncoderModel* teacher,
                      const std::vector<EncodedExample>& train, const StageConfig& stage,
                      const ProjectionSet& projections, std::vector<Tensor> opt_params,
                      const TrainingRecipe& recipe) {
  auto started = std::chrono::steady_clock::now();
  StageResult result;
  result.stage = stage.name;
  result.epochs = stage.epochs;
  result.seed = recipe.seed;
  result.supervision_pairs_used = stage.spec.layer_pairs;

  const std::int64_t steps_per_epoch =
      (static_cast<std::int64_t>(train.size()) + recipe.batch_size - 1) / recipe.batch_size;
  TrainingRecipe sched = recipe;
  std::int64_t total = steps_per_epoch * stage.epochs;
  if (recipe.max_steps > 0) total = std::min(total, recipe.max_steps);
  sched.max_steps = std::max<std::int64_t>(total, 1);

  AdamW opt(std::move(opt_params), recipe);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::int64_t step = 0;
  for (int epoch = 0; epoch < stage.epochs && step < sched.max_steps; ++epoch) {
    Rng rng(Rng::derive(recipe.seed, stage.stream * 1000003ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    std::map<Term, double> epoch_sums;
    int batches = 0;
    for (std::size_t at = 0; at < order.size() && step < sched.max_steps;
         at += static_cast<std::size_t>(recipe.batch_size)) {
      std::vector<TrainItem> batch;
      for (std::size_t k = at;
           k < std::min(order.size(), at + static_cast<std::size_t>(recipe.batch_size)); ++k) {
        const EncodedExample& ex = train[order[k]];
        batch.push_back(stage.mlm ? mlm_item(ex, recipe.mask_rate, rng) : plain_item(ex));
      }
      double lr = lr_at(step, sched);
      std::map<Term, double> losses =
          train_step(student, teacher, batch, stage.spec, projections, opt, lr);
      for (const auto& [term, value] : losses) epoch_sums[term] += value;
      ++batches;
      ++step;
    }
    for (const auto& [term, total_loss] : epoch_sums)
      result.loss_series[term_name(term)].push_back(total_loss / std::max(1, batches));
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::vector<Tensor> concat_params(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::pair<StageResult, StageResult> run_task_specific(const EncoderModel& teacher,
                                                      EncoderModel& student, const TaskData& data,
                                                      const TrainingRecipe& recipe,
                                                      ProjectionSet& projections) {
  recipe.validate();
  if (data.train.empty()) throw EmptyCorpus("no training examples");
  double teacher_acc = evaluate_metric(teacher, data.train, MetricKind::ACC);
  if (teacher_acc < recipe.teacher_acc_floor)
    throw UntrainedTeacher("teacher train accuracy " + std::to_string(teacher_acc) +
                           " below floor " + std::to_string(recipe.teacher_acc_floor));

  StageConfig stage1;
  stage1.name = "intermediate";
  stage1.stream = 1;
  stage1.spec = recipe.objective;
  stage1.spec.active.clear();
  for (Term t : recipe.objective.active)
    if (is_intermediate(t)) stage1.spec.active.insert(t);
  stage1.epochs = stage1.spec.active.empty() ? 0 : recipe.stage1_epochs;

  StageResult first;
  first.stage = stage1.name;
  first.seed = recipe.seed;
  if (stage1.epochs > 0) {
    first = run_stage(student, &teacher, data.train, stage1, projections,
                      concat_params(student.body_parameters(), projections.parameters()), recipe);
  }

  StageConfig stage2;
  stage2.name = "prediction";
  stage2.stream = 2;
  stage2.spec = recipe.objective;
  stage2.spec.active = {Term::PRED};
  if (recipe.objective.has(Term::SUPERVISED)) stage2.spec.active.insert(Term::SUPERVISED);
  stage2.epochs = recipe.stage2_epochs;
  StageResult second = run_stage(student, &teacher, data.train, stage2, projections,
                                 student.parameters(), recipe);
  return {first, second};
}

StageResult run_task_agnostic(const EncoderModel& teacher, EncoderModel& student,
                              const std::vector<EncodedExample>& corpus,
                              const TrainingRecipe& recipe, ProjectionSet& projections) {
  recipe.validate();
  if (corpus.empty()) throw EmptyCorpus("task-agnostic distillation needs a corpus");

  StageConfig stage;
  stage.name = "task_agnostic";
  stage.stream = 3;
  stage.mlm = true;
  stage.spec = recipe.objective;
  // last-layer knowledge transfer, regardless of what the caller put in
  stage.spec.layer_pairs = supervision_pairs(LayerMap{}, TransferMode::TASK_AGNOSTIC,
                                             teacher.config.num_layers,
                                             student.config.num_layers);
  stage.epochs = recipe.epochs;
  return run_stage(student, &teacher, corpus, stage, projections,
                   concat_params(student.parameters(), projections.parameters()), recipe);
}

StageResult finetune(EncoderModel& model, const TaskData& data, const TrainingRecipe& recipe,
                     int epochs) {
  if (data.train.empty()) throw EmptyCorpus("no training examples");
  StageConfig stage;
  stage.name = "finetune";
  stage.stream = 4;
  stage.spec.active = {Term::SUPERVISED};
  stage.spec.temperature = 1.0;
  stage.epochs = epochs;
  ProjectionSet none;
  return run_stage(model, nullptr, data.train, stage, none, model.parameters(), recipe);
}

StageResult train_mlm(EncoderModel& model, const std::vector<EncodedExample>& corpus,
                      const TrainingRecipe& recipe, int epochs) {
  if (corpus.empty()) throw EmptyCorpus("no corpus");
  StageConfig stage;
  stage.name = "mlm_pretrain";
  stage.stream = 5;
  stage.mlm = true;
  stage.spec.active = {Term::SUPERVISED};
  stage.epochs = epochs;
  ProjectionSet none;
  return run_stage(model, nullptr, corpus, stage, none, model.parameters(), recipe);
}

GridSearchResult finetune_grid_search(const EncoderModel& start, const TaskData& data,
                                      std::vector<double> lr_grid, std::vector<int> batch_grid,
                                      int epochs, const TrainingRecipe& recipe) {
  if (lr_grid.empty() || batch_grid.empty()) throw InvalidSize("grid must be nonempty");
  if (data.dev.empty()) throw NoDevSplit("grid search needs a dev split");
  std::sort(lr_grid.begin(), lr_grid.end());
  std::sort(batch_grid.begin(), batch_grid.end());

  GridSearchResult result;
  for (double lr : lr_grid) {
    for (int batch : batch_grid) {
      EncoderModel model = clone_model(start);
      TrainingRecipe cell = recipe;
      cell.peak_lr = lr;
      cell.batch_size = batch;
      GridRun run;
      run.lr = lr;
      run.batch = batch;
      run.stage = finetune(model, data, cell, epochs);
      run.dev_metric = evaluate_metric(model, data.dev, data.metric);
      result.runs.push_back(std::move(run));
    }
  }
  for (std::size_t i = 1; i < result.runs.size(); ++i)
    if (result.runs[i].dev_metric > result.runs[result.best].dev_metric) result.best = i;
  return result;
}

std::vector<int> predict(const EncoderModel& model, const std::vector<EncodedExample>& examples) {
  NoGradScope no_grad;
  std::vector<int> out;
  out.reserve(examples.size());
  for (const EncodedExample& ex : examples) {
    ForwardTrace trace = forward_with_trace(model, ex.ids, ex.mask);
    Tensor logits = classify(model, trace);
    Index best = 0;
    logits.value().row(0).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

double evaluate_metric(const EncoderModel& model, const std::vector<EncodedExample>& examples,
                       MetricKind kind) {
  if (examples.empty()) throw NoDevSplit("no examples to evaluate");
  std::vector<int> golds;
  golds.reserve(examples.size());
  for (const EncodedExample& ex : examples) golds.push_back(ex.label);
  return metric(kind, predict(model, examples), golds);
}

}  // namespace distilkit
