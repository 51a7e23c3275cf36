#include "distilkit/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "distilkit/grad_check.hpp"
#include "distilkit/rng.hpp"

namespace distilkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sanitize(const std::string& label) {
  std::string out;
  for (char c : label)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out;
}

void atomic_write(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp);
    out << content;
  }
  fs::rename(tmp, path);
}

std::string terms_label(const std::set<Term>& terms) {
  std::string out;
  for (Term t : terms) {
    if (!out.empty()) out += "+";
    out += term_name(t);
  }
  return out;
}

// ---- data preparation -------------------------------------------------------

struct PreparedData {
  Vocab vocab;
  TaskData task;
  std::vector<EncodedExample> corpus;
  std::string task_name;
  int max_len = 0;
  ModelConfig teacher_cfg;
  ModelConfig student_cfg;
};

std::vector<EncodedExample> encode_corpus(const Vocab& vocab,
                                          const std::vector<std::string>& sentences, int max_len) {
  std::vector<EncodedExample> out;
  out.reserve(sentences.size());
  for (const std::string& s : sentences) {
    Example e{s, std::nullopt, 0};
    out.push_back(encode_example(vocab, e, max_len));
  }
  return out;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData pd;
  pd.teacher_cfg = cfg.teacher.model;
  pd.student_cfg = cfg.student.model;
  pd.max_len = std::min(pd.teacher_cfg.max_seq_len, pd.student_cfg.max_seq_len);
  pd.task_name = cfg.data.kind;

  Dataset ds;
  std::vector<std::string> corpus_texts;
  if (cfg.data.kind == "corpus") {
    corpus_texts = synth_corpus(cfg.data.n, cfg.data.gen_vocab, cfg.data.seed);
  } else if (cfg.data.kind == "tsv") {
    ds = ingest_tsv(cfg.data.train_path, cfg.data.schema);
    Dataset dev = ingest_tsv(cfg.data.dev_path, cfg.data.schema);
    ds.dev = std::move(dev.train);
    for (int label : dev.label_space)
      if (std::find(ds.label_space.begin(), ds.label_space.end(), label) == ds.label_space.end())
        ds.label_space.push_back(label);
  } else {
    ds = synth_task(synth_kind_from_name(cfg.data.kind), cfg.data.n, cfg.data.gen_vocab,
                    cfg.data.seed);
  }

  std::vector<std::string> vocab_source =
      cfg.data.kind == "corpus" ? corpus_texts : ds.all_texts();
  pd.vocab = Vocab::build(vocab_source, cfg.data.min_count);

  auto resolve = [&pd](ModelConfig& m) {
    if (m.vocab_size == 0)
      m.vocab_size = pd.vocab.size();
    else if (m.vocab_size < pd.vocab.size())
      throw ConfigInvalid("model vocab_size " + std::to_string(m.vocab_size) +
                          " smaller than data vocabulary " + std::to_string(pd.vocab.size()));
  };
  resolve(pd.teacher_cfg);
  resolve(pd.student_cfg);
  if (pd.teacher_cfg.vocab_size != pd.student_cfg.vocab_size)
    pd.teacher_cfg.vocab_size = pd.student_cfg.vocab_size =
        std::max(pd.teacher_cfg.vocab_size, pd.student_cfg.vocab_size);

  if (cfg.data.kind == "corpus") {
    pd.corpus = encode_corpus(pd.vocab, corpus_texts, pd.max_len);
  } else {
    int labels = static_cast<int>(ds.label_space.size());
    pd.teacher_cfg.num_labels = std::max(pd.teacher_cfg.num_labels, labels);
    pd.student_cfg.num_labels = std::max(pd.student_cfg.num_labels, labels);
    pd.task.train = encode_all(pd.vocab, ds.train, pd.max_len);
    pd.task.dev = encode_all(pd.vocab, ds.dev, pd.max_len);
    pd.task.metric = cfg.data.metric;
    if (cfg.mode == TrainMode::TASK_AGNOSTIC) {
      // reuse the task texts as an unlabeled corpus
      for (const EncodedExample& ex : pd.task.train) pd.corpus.push_back(ex);
    }
  }
  return pd;
}

EncoderModel prepare_teacher(const ExperimentConfig& cfg, const PreparedData& pd,
                             const std::string& out_dir) {
  if (!cfg.teacher.checkpoint.empty()) return load_checkpoint(cfg.teacher.checkpoint);
  std::string cached = out_dir + "/teacher.ckpt";
  if (fs::exists(cached)) return load_checkpoint(cached);

  EncoderModel teacher = make_encoder(pd.teacher_cfg, cfg.teacher.seed);
  TrainingRecipe recipe = cfg.recipe;
  recipe.mode = TrainMode::FINETUNE;
  recipe.seed = cfg.teacher.seed;
  recipe.objective = ObjectiveSpec{};
  recipe.objective.active = {Term::SUPERVISED};
  if (cfg.mode == TrainMode::TASK_AGNOSTIC)
    train_mlm(teacher, pd.corpus, recipe, cfg.teacher.train_epochs);
  else
    finetune(teacher, pd.task, recipe, cfg.teacher.train_epochs);
  save_checkpoint(teacher, cached);
  return teacher;
}

// ---- run execution ----------------------------------------------------------

struct RunDesc {
  std::set<Term> terms;
  InitBlock init;
  std::uint64_t seed = 0;
  double lr = 0.0;  // finetune grid cell
  int batch = 0;

  std::string objective_label() const { return terms_label(terms); }
  std::string init_label(int teacher_layers, int student_layers) const {
    return init.to_map(teacher_layers, student_layers).label();
  }
  std::string key(const std::string& init_lab) const {
    std::string k = objective_label() + "|" + init_lab + "|seed" + std::to_string(seed);
    if (batch > 0) {
      std::ostringstream cell;
      cell << "|lr" << lr << "|bs" << batch;
      k += cell.str();
    }
    return k;
  }
};

struct RunOutput {
  RunRecord record;
  std::vector<StageResult> stages;
  EncoderModel student;
};

json stage_to_json(const StageResult& stage) {
  json j;
  j["type"] = "stage";
  j["name"] = stage.stage;
  j["epochs"] = stage.epochs;
  json losses = json::object();
  for (const auto& [term, series] : stage.loss_series) losses[term] = series;
  j["losses"] = losses;
  json pairs = json::array();
  for (const auto& [tl, sl] : stage.supervision_pairs_used) pairs.push_back({tl, sl});
  j["supervision_pairs"] = pairs;
  return j;
}

RunOutput execute_run(const ExperimentConfig& cfg, const PreparedData& pd,
                      const EncoderModel* teacher, const RunDesc& desc) {
  RunOutput out;
  out.record.task = pd.task_name;
  out.record.seed = desc.seed;
  out.record.objective = desc.objective_label();

  TrainingRecipe recipe = cfg.recipe;
  recipe.seed = desc.seed;

  if (cfg.mode == TrainMode::FINETUNE) {
    out.record.init = "finetune";
    out.record.lr = desc.lr;
    out.record.batch = desc.batch;
    recipe.peak_lr = desc.lr;
    recipe.batch_size = desc.batch;
    recipe.objective = ObjectiveSpec{};
    recipe.objective.active = {Term::SUPERVISED};
    EncoderModel model = cfg.student.checkpoint.empty()
                             ? make_encoder(pd.student_cfg, cfg.student.seed)
                             : load_checkpoint(cfg.student.checkpoint);
    out.stages.push_back(finetune(model, pd.task, recipe, cfg.recipe.epochs));
    out.record.metric = metric_name(pd.task.metric);
    out.record.value = evaluate_metric(model, pd.task.dev, pd.task.metric);
    out.student = std::move(model);
    return out;
  }

  const int teacher_layers = teacher->config.num_layers;
  const int student_layers = pd.student_cfg.num_layers;
  LayerMap map = desc.init.to_map(teacher_layers, student_layers);
  out.record.init = map.label();

  EncoderModel student = make_encoder(pd.student_cfg, desc.seed);
  initialize_student(student, *teacher, map, Rng::derive(desc.seed, 101));

  ObjectiveSpec spec = cfg.objective;
  spec.active = desc.terms;
  spec.layer_pairs.clear();
  if (cfg.mode == TrainMode::TASK_SPECIFIC) {
    if (spec.any_intermediate())
      spec.layer_pairs = supervision_pairs(map, TransferMode::TASK_SPECIFIC, teacher_layers,
                                           student_layers);
  } else {
    spec.layer_pairs = supervision_pairs(map, TransferMode::TASK_AGNOSTIC, teacher_layers,
                                         student_layers);
  }
  recipe.objective = spec;

  ProjectionSet projections = ProjectionSet::for_spec(
      spec, student.config.hidden_dim, teacher->config.hidden_dim, Rng::derive(desc.seed, 202));

  if (cfg.mode == TrainMode::TASK_SPECIFIC) {
    auto [stage1, stage2] = run_task_specific(*teacher, student, pd.task, recipe, projections);
    out.stages.push_back(std::move(stage1));
    out.stages.push_back(std::move(stage2));
    out.record.metric = metric_name(pd.task.metric);
    out.record.value = evaluate_metric(student, pd.task.dev, pd.task.metric);
  } else {
    StageResult stage = run_task_agnostic(*teacher, student, pd.corpus, recipe, projections);
    double final_loss = 0.0;
    for (const auto& [term, series] : stage.loss_series)
      if (!series.empty()) final_loss += series.back();
    out.stages.push_back(std::move(stage));
    out.record.metric = "loss";
    out.record.value = final_loss;
  }
  out.student = std::move(student);
  return out;
}

void write_record_file(const std::string& dir, const std::string& key, const RunOutput& out) {
  json header;
  header["type"] = "run";
  header["objective"] = out.record.objective;
  header["init"] = out.record.init;
  header["task"] = out.record.task;
  header["seed"] = out.record.seed;
  header["metric"] = out.record.metric;
  header["value"] = out.record.value;
  header["lr"] = out.record.lr;
  header["batch"] = out.record.batch;
  std::ostringstream body;
  body << header.dump() << "\n";
  for (const StageResult& stage : out.stages) body << stage_to_json(stage).dump() << "\n";
  std::string base = dir + "/" + sanitize(key);
  atomic_write(base + ".jsonl", body.str());
  save_checkpoint(out.student, base + ".ckpt");
}

std::set<std::string> read_manifest(const std::string& dir) {
  std::set<std::string> done;
  std::ifstream in(dir + "/manifest.json");
  if (!in) return done;
  json j;
  try {
    in >> j;
  } catch (const json::exception&) {
    return done;
  }
  if (j.contains("completed"))
    for (const auto& k : j.at("completed")) done.insert(k.get<std::string>());
  return done;
}

void write_manifest(const std::string& dir, const std::set<std::string>& done) {
  json j;
  j["completed"] = json::array();
  for (const std::string& k : done) j["completed"].push_back(k);
  atomic_write(dir + "/manifest.json", j.dump(2) + "\n");
}

int report_error(const Error& e) {
  std::cerr << "error code=" << e.code() << " message=\"" << e.what() << "\"\n";
  return e.code() == "ConfigInvalid" ? 2 : 1;
}

}  // namespace

int cmd_distill(const std::string& config_path, int jobs) {
  ExperimentConfig cfg;
  try {
    cfg = ExperimentConfig::from_file(config_path);
  } catch (const Error& e) {
    return report_error(e);
  }
  try {
    fs::create_directories(cfg.output_dir);
    PreparedData pd = prepare_data(cfg);

    EncoderModel teacher;
    bool have_teacher = cfg.mode != TrainMode::FINETUNE;
    if (have_teacher) teacher = prepare_teacher(cfg, pd, cfg.output_dir);

    std::vector<RunDesc> runs;
    if (cfg.mode == TrainMode::FINETUNE) {
      std::vector<double> lrs = cfg.lr_grid;
      std::vector<int> batches = cfg.batch_grid;
      std::sort(lrs.begin(), lrs.end());
      std::sort(batches.begin(), batches.end());
      for (std::uint64_t seed : cfg.seeds)
        for (double lr : lrs)
          for (int batch : batches)
            runs.push_back({{Term::SUPERVISED}, cfg.init, seed, lr, batch});
    } else {
      for (const auto& terms : cfg.objective_sweep)
        for (const InitBlock& init : cfg.init_sweep)
          for (std::uint64_t seed : cfg.seeds) runs.push_back({terms, init, seed, 0.0, 0});
    }

    std::mutex manifest_mutex;
    std::set<std::string> done = read_manifest(cfg.output_dir);
    std::vector<std::pair<std::string, const RunDesc*>> pending;
    for (const RunDesc& desc : runs) {
      std::string init_lab = cfg.mode == TrainMode::FINETUNE
                                 ? "finetune"
                                 : desc.init_label(pd.teacher_cfg.num_layers,
                                                   pd.student_cfg.num_layers);
      std::string key = desc.key(init_lab);
      if (done.count(key)) continue;
      pending.emplace_back(key, &desc);
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= pending.size() || failed.load()) return;
        const auto& [key, desc] = pending[i];
        try {
          RunOutput out = execute_run(cfg, pd, have_teacher ? &teacher : nullptr, *desc);
          write_record_file(cfg.output_dir, key, out);
          std::lock_guard<std::mutex> lock(manifest_mutex);
          done.insert(key);
          write_manifest(cfg.output_dir, done);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          failed.store(true);
          failure = std::string("run ") + key + " failed: " + e.what();
        }
      }
    };

    int workers = std::max(1, jobs);
    if (workers == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
    }
    if (failed.load()) throw RuntimeFailure(failure);
    std::cout << "completed " << done.size() << " runs in " << cfg.output_dir << "\n";
    return 0;
  } catch (const Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    return report_error(RuntimeFailure(e.what()));
  }
}

std::vector<RunRecord> load_records(const std::string& records_dir) {
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(records_dir))
    if (entry.path().extension() == ".jsonl") paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());

  std::vector<RunRecord> records;
  for (const std::string& path : paths) {
    std::ifstream in(path);
    std::string line;
    if (!std::getline(in, line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      continue;
    }
    if (j.value("type", "") != "run") continue;
    RunRecord r;
    r.objective = j.value("objective", "");
    r.init = j.value("init", "");
    r.task = j.value("task", "");
    r.seed = j.value("seed", 0ULL);
    r.metric = j.value("metric", "acc");
    r.value = j.value("value", 0.0);
    r.lr = j.value("lr", 0.0);
    r.batch = j.value("batch", 0);
    records.push_back(std::move(r));
  }
  return records;
}

int cmd_report(const std::string& records_dir, GroupBy group_by) {
  try {
    std::vector<RunRecord> records = load_records(records_dir);
    EvalReport report = build_report(records);  // throws EmptyRecords when none
    std::string text = render_text(report, group_by);
    atomic_write(records_dir + "/report.txt", text);
    atomic_write(records_dir + "/report.tsv", render_tsv(report, group_by));
    std::cout << text;
    return 0;
  } catch (const Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    return report_error(RuntimeFailure(e.what()));
  }
}

// ---- verify -----------------------------------------------------------------

namespace {

struct VerifyContext {
  int passed = 0;
  int failed = 0;

  void check(const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "PASS " : "FAIL ") << name;
    if (!ok && !detail.empty()) std::cout << "  (" << detail << ")";
    std::cout << "\n";
    ++(ok ? passed : failed);
  }
};

Matrix random_matrix(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, 1.0);
  return m;
}

// matmul with a deliberately doubled backward, for exercising the checker
Tensor planted_matmul(const Tensor& a, const Tensor& b) {
  Matrix value = a.value() * b.value();
  Tensor out = Tensor::from_matrix(value);
  Tape* tape = Tape::current();
  if (tape != nullptr && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    int ia = tape->ensure_id(a), ib = tape->ensure_id(b), io = tape->ensure_id(out);
    auto an = a.shared_node(), bn = b.shared_node();
    tape->push_record({OpKind::MatMul,
                       {ia, ib},
                       io,
                       [ia, ib, io, an, bn](Tape& t) {
                         t.adj_add(ia, 2.0 * (t.adj(io) * bn->value.transpose()));
                         t.adj_add(ib, 2.0 * (an->value.transpose() * t.adj(io)));
                       },
                       [an, bn]() -> Matrix { return an->value * bn->value; }});
  }
  return out;
}

double op_grad_err(const std::string& op, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = Tensor::from_matrix(random_matrix(3, 4, rng));
  Tensor x = Tensor::from_matrix(random_matrix(3, 4, rng), true);
  Tensor y = Tensor::from_matrix(random_matrix(3, 4, rng), true);
  auto weighted = [&w](const Tensor& t) { return sum(mul(t, w)); };

  ScalarFn f;
  std::vector<Tensor> inputs{x, y};
  if (op == "add") f = [&](const std::vector<Tensor>& in) { return weighted(add(in[0], in[1])); };
  else if (op == "sub") f = [&](const std::vector<Tensor>& in) { return weighted(sub(in[0], in[1])); };
  else if (op == "mul") f = [&](const std::vector<Tensor>& in) { return weighted(mul(in[0], in[1])); };
  else if (op == "matmul") {
    inputs = {Tensor::from_matrix(random_matrix(3, 5, rng), true),
              Tensor::from_matrix(random_matrix(5, 4, rng), true)};
    f = [&](const std::vector<Tensor>& in) { return weighted(matmul(in[0], in[1])); };
  } else if (op == "softmax") {
    inputs = {x};
    f = [&](const std::vector<Tensor>& in) { return weighted(softmax(in[0], 1)); };
  } else if (op == "log_softmax") {
    inputs = {x};
    f = [&](const std::vector<Tensor>& in) { return weighted(log_softmax(in[0], 1)); };
  } else if (op == "layer_norm") {
    Tensor gamma = Tensor::from_matrix(random_matrix(1, 4, rng), true);
    Tensor beta = Tensor::from_matrix(random_matrix(1, 4, rng), true);
    inputs = {x, gamma, beta};
    f = [&](const std::vector<Tensor>& in) {
      return weighted(layer_norm(in[0], in[1], in[2], 1e-5));
    };
  } else if (op == "gelu") {
    inputs = {x};
    f = [&](const std::vector<Tensor>& in) { return weighted(gelu(in[0])); };
  } else if (op == "planted_matmul") {
    inputs = {Tensor::from_matrix(random_matrix(3, 5, rng), true),
              Tensor::from_matrix(random_matrix(5, 4, rng), true)};
    f = [&](const std::vector<Tensor>& in) { return weighted(planted_matmul(in[0], in[1])); };
  } else {
    throw RuntimeFailure("unknown op in verify: " + op);
  }
  return grad_check(f, inputs, 1e-5, 1e-4).max_rel_err;
}

struct TinyRig {
  EncoderModel teacher;
  EncoderModel student;
  std::vector<int> tokens;
  ObjectiveSpec spec;
  ProjectionSet projections;
};

TinyRig make_rig(std::uint64_t seed, bool identical) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.vocab_size = 12;
  cfg.max_seq_len = 8;
  cfg.num_labels = 2;
  TinyRig rig;
  rig.teacher = make_encoder(cfg, Rng::derive(seed, 1));
  rig.student = identical ? clone_model(rig.teacher) : make_encoder(cfg, Rng::derive(seed, 2));
  rig.tokens = {kClsId, 5, 6, 7, 8};
  rig.spec.layer_pairs = {{1, 1}, {2, 2}};
  rig.spec.active = {Term::ATT_MSE};
  rig.projections = ProjectionSet::for_spec(
      ObjectiveSpec{{Term::HID_CLS, Term::HID_SEQ, Term::HID_CONTRAST}, 1.0, 0.5, 0.1, true,
                    rig.spec.layer_pairs},
      cfg.hidden_dim, cfg.hidden_dim, Rng::derive(seed, 3));
  return rig;
}

Tensor rig_term_loss(Term term, const TinyRig& rig, const ForwardTrace& s_trace,
                     const ForwardTrace& t_trace, const ForwardTrace& s2, const ForwardTrace& t2) {
  switch (term) {
    case Term::PRED: {
      ForwardTrace& s = const_cast<ForwardTrace&>(s_trace);
      ForwardTrace& t = const_cast<ForwardTrace&>(t_trace);
      return pred_loss(classify(rig.teacher, t), classify(rig.student, s), 2.0);
    }
    case Term::HID_CLS:
      return hid_loss(s_trace, t_trace, rig.spec.layer_pairs, rig.projections, HidVariant::CLS);
    case Term::HID_SEQ:
      return hid_loss(s_trace, t_trace, rig.spec.layer_pairs, rig.projections, HidVariant::SEQ);
    case Term::HID_CONTRAST: {
      std::vector<const ForwardTrace*> ss{&s_trace, &s2}, ts{&t_trace, &t2};
      return contrast_loss(ss, ts, rig.spec.layer_pairs, rig.projections, 0.5);
    }
    case Term::ATT_MSE: return att_mse_loss(s_trace, t_trace, rig.spec.layer_pairs);
    case Term::ATT_KL: return att_kl_loss(s_trace, t_trace, rig.spec.layer_pairs);
    case Term::VAL_KL: return val_kl_loss(s_trace, t_trace, rig.spec.layer_pairs);
    case Term::SUPERVISED: {
      ForwardTrace& s = const_cast<ForwardTrace&>(s_trace);
      return supervised_loss(classify(rig.student, s), 1);
    }
  }
  throw RuntimeFailure("unreachable");
}

double objective_grad_err(Term term, std::uint64_t seed) {
  TinyRig rig = make_rig(seed, false);
  std::vector<int> tokens2 = {kClsId, 9, 10, 4, 11};

  std::vector<Tensor> inputs = rig.student.parameters();
  for (const Tensor& p : rig.projections.parameters()) inputs.push_back(p);

  ScalarFn f = [&](const std::vector<Tensor>&) {
    ForwardTrace t_trace, t2;
    {
      NoGradScope no_grad;
      t_trace = forward_with_trace(rig.teacher, rig.tokens);
      t2 = forward_with_trace(rig.teacher, tokens2);
    }
    ForwardTrace s_trace = forward_with_trace(rig.student, rig.tokens);
    ForwardTrace s2 = forward_with_trace(rig.student, tokens2);
    return rig_term_loss(term, rig, s_trace, t_trace, s2, t2);
  };
  return grad_check(f, inputs, 1e-5, 1e-4, 4).max_rel_err;
}

double fixed_point_value(Term term) {
  TinyRig rig = make_rig(99, true);
  Tape tape;
  TapeScope scope(tape);
  ForwardTrace t_trace, t2;
  {
    NoGradScope no_grad;
    t_trace = forward_with_trace(rig.teacher, rig.tokens);
    t2 = forward_with_trace(rig.teacher, {kClsId, 9, 10, 4, 11});
  }
  ForwardTrace s_trace = forward_with_trace(rig.student, rig.tokens);
  ForwardTrace s2 = forward_with_trace(rig.student, {kClsId, 9, 10, 4, 11});
  Tensor loss = rig_term_loss(term, rig, s_trace, t_trace, s2, t2);
  if (term == Term::PRED) {
    // subtract the soft-target entropy so the fixed point sits at zero
    ForwardTrace fresh;
    {
      NoGradScope no_grad;
      fresh = forward_with_trace(rig.teacher, rig.tokens);
    }
    Matrix z = classify(rig.teacher, fresh).value() / 2.0;
    Scalar m = z.row(0).maxCoeff();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (z.row(0).array() - m).exp();
    Eigen::Array<Scalar, 1, Eigen::Dynamic> p = e / e.sum();
    Scalar entropy = 0.0;
    for (Index j = 0; j < p.size(); ++j)
      if (p(j) > 0) entropy -= p(j) * std::log(p(j));
    return loss.item() / (2.0 * 2.0) - entropy;  // undo the t^2 factor
  }
  return loss.item();
}

}  // namespace

int cmd_verify(bool plant_bug) {
  VerifyContext v;
  try {
    for (const char* op : {"add", "sub", "mul", "matmul", "softmax", "log_softmax", "layer_norm",
                           "gelu"}) {
      double worst = 0.0;
      for (std::uint64_t seed : {11ULL, 22ULL}) worst = std::max(worst, op_grad_err(op, seed));
      v.check(std::string("tensor.gradcheck.") + op, worst < 1e-4,
              "max rel err " + std::to_string(worst));
    }
    // the checker must reject a wrong backward
    double planted = op_grad_err("planted_matmul", 33);
    v.check("tensor.gradcheck.detects_planted_bug", planted > 1e-2,
            "planted bug slipped through");
    if (plant_bug)
      v.check("tensor.gradcheck.matmul(planted)", planted < 1e-4,
              "planted 2x backward in matmul, max rel err " + std::to_string(planted));

    for (Term term : {Term::PRED, Term::HID_CLS, Term::HID_SEQ, Term::HID_CONTRAST, Term::ATT_MSE,
                      Term::ATT_KL, Term::VAL_KL}) {
      double err = objective_grad_err(term, 7);
      v.check(std::string("objectives.gradcheck.") + term_name(term), err < 1e-4,
              "max rel err " + std::to_string(err));
    }

    // frozen worked examples
    {
      Tensor a = Tensor::from_matrix((Matrix(2, 2) << 1, 2, 3, 4).finished());
      Tensor b = Tensor::from_matrix((Matrix(2, 1) << 1, 1).finished());
      Matrix got = matmul(a, b).value();
      v.check("oracle.matmul", got(0, 0) == 3.0 && got(1, 0) == 7.0);

      Tensor s = Tensor::from_matrix((Matrix(1, 2) << 0.0, std::log(2.0)).finished());
      Matrix sm = softmax(s, 1).value();
      v.check("oracle.softmax",
              std::abs(sm(0, 0) - 1.0 / 3) < 1e-12 && std::abs(sm(0, 1) - 2.0 / 3) < 1e-12);

      Tensor zt = Tensor::from_matrix((Matrix(1, 2) << std::log(1.0), std::log(3.0)).finished());
      Tensor zs = Tensor::zeros(1, 2);
      double pl = pred_loss(zt, zs, 1.0).item();
      v.check("oracle.pred_loss", std::abs(pl - std::log(2.0)) < 1e-12,
              "got " + std::to_string(pl));

      TTestResult t = paired_t_test({1, 2, 0, 3}, {0, 0, 0, 0});
      v.check("oracle.paired_t_test",
              std::abs(t.t - 2.3238) < 1e-3 && std::abs(t.p - 0.1027) < 1e-3,
              "t=" + std::to_string(t.t) + " p=" + std::to_string(t.p));

      double mcc = metric(MetricKind::MCC, {1, 1, 1, 1, 0, 0, 0, 0, 0, 0},
                          {1, 1, 1, 0, 1, 1, 0, 0, 0, 0});
      v.check("oracle.mcc", std::abs(mcc - 10.0 / std::sqrt(600.0)) < 1e-12,
              "got " + std::to_string(mcc));
    }

    for (Term term : {Term::PRED, Term::HID_CLS, Term::HID_SEQ, Term::ATT_MSE, Term::ATT_KL,
                      Term::VAL_KL}) {
      double value = fixed_point_value(term);
      v.check(std::string("objectives.fixed_point.") + term_name(term), std::abs(value) < 1e-10,
              "got " + std::to_string(value));
    }

    {
      ModelConfig tc;
      tc.num_layers = 12;
      tc.hidden_dim = 8;
      tc.num_heads = 2;
      tc.ffn_dim = 16;
      tc.vocab_size = 16;
      tc.max_seq_len = 8;
      EncoderModel teacher = make_encoder(tc, 5);
      for (const auto& layers : std::vector<std::vector<int>>{{4, 8, 12}, {1, 8, 12}, {1, 2, 3}}) {
        ModelConfig sc = tc;
        sc.num_layers = 3;
        EncoderModel student = make_encoder(sc, 6);
        LayerMap map = build_layer_map(InitStrategy::EXPLICIT, 12, 3, layers);
        initialize_student(student, teacher, map, 7);
        bool equal = true;
        for (int j = 0; j < 3; ++j) {
          const Matrix& a = student.layers[static_cast<std::size_t>(j)].wq.value();
          const Matrix& b = teacher.layers[static_cast<std::size_t>(layers[static_cast<std::size_t>(j)] - 1)].wq.value();
          equal = equal && std::memcmp(a.data(), b.data(),
                                       sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0;
        }
        LayerMap check = map;
        v.check("init.bit_equal." + check.label(), equal);
      }
    }

    {
      TinyRig rig = make_rig(123, false);
      Tape tape;
      TapeScope scope(tape);
      ForwardTrace trace = forward_with_trace(rig.student, rig.tokens);
      Tensor logits = classify(rig.student, trace);
      (void)logits;
      v.check("tape.replay_determinism", tape.replay_check());
    }
  } catch (const std::exception& e) {
    v.check("verify.unexpected_exception", false, e.what());
  }
  std::cout << v.passed << " passed, " << v.failed << " failed\n";
  return v.failed == 0 ? 0 : 1;
}

}  // namespace distilkit
