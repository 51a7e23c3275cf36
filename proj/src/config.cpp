#include "distilkit/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace distilkit {

using nlohmann::json;

namespace {

// unknown keys are errors, not warnings
void check_keys(const json& obj, const std::string& context,
                const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigInvalid(context + " must be an object");
  for (const auto& [key, value] : obj.items())
    if (allowed.find(key) == allowed.end())
      throw ConfigInvalid("unknown key '" + key + "' in " + context);
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigInvalid(std::string("bad value for '") + key + "'");
  }
}

ModelConfig parse_model(const json& obj, const std::string& context) {
  check_keys(obj, context,
             {"num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size", "max_seq_len",
              "num_labels"});
  ModelConfig m;
  m.vocab_size = 0;  // 0 = derive from data
  read(obj, "num_layers", m.num_layers);
  read(obj, "hidden_dim", m.hidden_dim);
  read(obj, "num_heads", m.num_heads);
  read(obj, "ffn_dim", m.ffn_dim);
  read(obj, "vocab_size", m.vocab_size);
  read(obj, "max_seq_len", m.max_seq_len);
  read(obj, "num_labels", m.num_labels);
  return m;
}

ModelBlock parse_model_block(const json& obj, const std::string& context) {
  check_keys(obj, context, {"model", "checkpoint", "train_epochs", "seed"});
  ModelBlock block;
  if (obj.contains("model")) block.model = parse_model(obj.at("model"), context + ".model");
  read(obj, "checkpoint", block.checkpoint);
  read(obj, "train_epochs", block.train_epochs);
  read(obj, "seed", block.seed);
  return block;
}

InitBlock parse_init(const json& obj, const std::string& context) {
  check_keys(obj, context, {"strategy", "layers", "copy_embeddings"});
  InitBlock block;
  std::string strategy = "every_k";
  read(obj, "strategy", strategy);
  block.strategy = init_strategy_from_name(strategy);
  read(obj, "layers", block.layers);
  read(obj, "copy_embeddings", block.copy_embeddings);
  return block;
}

std::set<Term> parse_terms(const json& arr, const std::string& context) {
  if (!arr.is_array() || arr.empty())
    throw ConfigInvalid(context + " must be a nonempty array of term names");
  std::set<Term> terms;
  for (const auto& name : arr) terms.insert(term_from_name(name.get<std::string>()));
  return terms;
}

ObjectiveSpec parse_objective(const json& obj) {
  check_keys(obj, "objective", {"terms", "temperature", "alpha", "tau", "pred_t_squared"});
  ObjectiveSpec spec;
  if (obj.contains("terms")) spec.active = parse_terms(obj.at("terms"), "objective.terms");
  read(obj, "temperature", spec.temperature);
  read(obj, "alpha", spec.alpha);
  read(obj, "tau", spec.contrast_temperature);
  read(obj, "pred_t_squared", spec.pred_t_squared);
  return spec;
}

DataBlock parse_data(const json& obj) {
  check_keys(obj, "data",
             {"kind", "n", "gen_vocab", "seed", "min_count", "metric", "train_path", "dev_path",
              "schema"});
  DataBlock block;
  read(obj, "kind", block.kind);
  read(obj, "n", block.n);
  read(obj, "gen_vocab", block.gen_vocab);
  read(obj, "seed", block.seed);
  read(obj, "min_count", block.min_count);
  std::string metric = "acc";
  read(obj, "metric", metric);
  block.metric = metric_from_name(metric);
  read(obj, "train_path", block.train_path);
  read(obj, "dev_path", block.dev_path);
  if (obj.contains("schema")) {
    const json& s = obj.at("schema");
    check_keys(s, "data.schema", {"text_a", "text_b", "label"});
    read(s, "text_a", block.schema.text_a);
    read(s, "text_b", block.schema.text_b);
    read(s, "label", block.schema.label);
  }
  return block;
}

}  // namespace

LayerMap InitBlock::to_map(int teacher_layers, int student_layers) const {
  return build_layer_map(strategy, teacher_layers, student_layers, layers, copy_embeddings);
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigInvalid(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"mode", "teacher", "student", "init", "objective", "recipe", "data", "sweeps",
              "output_dir"});

  ExperimentConfig cfg;
  std::string mode = "task_specific";
  read(root, "mode", mode);
  cfg.mode = train_mode_from_name(mode);
  cfg.recipe.mode = cfg.mode;

  if (root.contains("teacher")) cfg.teacher = parse_model_block(root.at("teacher"), "teacher");
  if (root.contains("student")) cfg.student = parse_model_block(root.at("student"), "student");
  if (root.contains("init")) cfg.init = parse_init(root.at("init"), "init");
  if (root.contains("objective")) cfg.objective = parse_objective(root.at("objective"));

  if (root.contains("recipe")) {
    const json& r = root.at("recipe");
    check_keys(r, "recipe",
               {"stage1_epochs", "stage2_epochs", "epochs", "max_steps", "batch_size", "peak_lr",
                "warmup_fraction", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps",
                "grad_clip", "seeds", "lr_grid", "batch_grid", "teacher_acc_floor", "mask_rate"});
    read(r, "stage1_epochs", cfg.recipe.stage1_epochs);
    read(r, "stage2_epochs", cfg.recipe.stage2_epochs);
    read(r, "epochs", cfg.recipe.epochs);
    read(r, "max_steps", cfg.recipe.max_steps);
    read(r, "batch_size", cfg.recipe.batch_size);
    read(r, "peak_lr", cfg.recipe.peak_lr);
    read(r, "warmup_fraction", cfg.recipe.warmup_fraction);
    read(r, "weight_decay", cfg.recipe.weight_decay);
    read(r, "adam_beta1", cfg.recipe.adam_beta1);
    read(r, "adam_beta2", cfg.recipe.adam_beta2);
    read(r, "adam_eps", cfg.recipe.adam_eps);
    read(r, "grad_clip", cfg.recipe.grad_clip);
    read(r, "seeds", cfg.seeds);
    read(r, "lr_grid", cfg.lr_grid);
    read(r, "batch_grid", cfg.batch_grid);
    read(r, "teacher_acc_floor", cfg.recipe.teacher_acc_floor);
    read(r, "mask_rate", cfg.recipe.mask_rate);
  }
  if (root.contains("data")) cfg.data = parse_data(root.at("data"));
  if (root.contains("sweeps")) {
    const json& s = root.at("sweeps");
    check_keys(s, "sweeps", {"objectives", "inits"});
    if (s.contains("objectives")) {
      for (const auto& terms : s.at("objectives"))
        cfg.objective_sweep.push_back(parse_terms(terms, "sweeps.objectives[]"));
    }
    if (s.contains("inits")) {
      for (const auto& block : s.at("inits"))
        cfg.init_sweep.push_back(parse_init(block, "sweeps.inits[]"));
    }
  }
  read(root, "output_dir", cfg.output_dir);

  if (cfg.objective_sweep.empty()) {
    if (cfg.objective.active.empty()) cfg.objective.active = {Term::PRED, Term::SUPERVISED};
    cfg.objective_sweep.push_back(cfg.objective.active);
  }
  if (cfg.init_sweep.empty()) cfg.init_sweep.push_back(cfg.init);
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigInvalid("recipe.seeds must be nonempty");
  if (output_dir.empty()) throw ConfigInvalid("output_dir must be set");
  if (data.n < 20 && data.kind != "tsv") throw ConfigInvalid("data.n must be >= 20");
  if (mode == TrainMode::FINETUNE && (lr_grid.empty() || batch_grid.empty()))
    throw ConfigInvalid("finetune mode needs recipe.lr_grid and recipe.batch_grid");
  if (data.kind == "tsv" && (data.train_path.empty() || data.dev_path.empty()))
    throw ConfigInvalid("tsv data needs train_path and dev_path");
  for (const auto& terms : objective_sweep)
    if (terms.empty()) throw ConfigInvalid("empty objective term set in sweep");
  // model shape checks run later, once vocab size is known
  if (teacher.model.hidden_dim % teacher.model.num_heads != 0 ||
      student.model.hidden_dim % student.model.num_heads != 0)
    throw ConfigInvalid("hidden_dim must be divisible by num_heads");
}

}  // namespace distilkit
