#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "distilkit/config.hpp"
#include "distilkit/runner.hpp"

using namespace distilkit;
namespace fs = std::filesystem;

namespace {

std::string mini_config_json(const std::string& out_dir, const std::string& seeds = "[1]") {
  std::ostringstream cfg;
  cfg << R"({
  "mode": "task_specific",
  "teacher": {"model": {"num_layers": 2, "hidden_dim": 16, "num_heads": 2, "ffn_dim": 32,
                         "max_seq_len": 24, "num_labels": 2},
               "train_epochs": 2, "seed": 900},
  "student": {"model": {"num_layers": 1, "hidden_dim": 16, "num_heads": 2, "ffn_dim": 32,
                         "max_seq_len": 24, "num_labels": 2}},
  "init": {"strategy": "every_k", "copy_embeddings": true},
  "objective": {"terms": ["ATT_MSE"], "temperature": 2.0, "alpha": 0.5},
  "recipe": {"stage1_epochs": 1, "stage2_epochs": 1, "batch_size": 16, "peak_lr": 1e-3,
             "seeds": )"
      << seeds << R"(, "teacher_acc_floor": 0.0},
  "data": {"kind": "keyword", "n": 40, "gen_vocab": 20, "seed": 3},
  "output_dir": ")"
      << out_dir << R"("
})";
  return cfg.str();
}

std::string write_config(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("valid config round-trips the key fields") {
    TempDir dir("distilkit_cfg_ok");
    ExperimentConfig cfg = ExperimentConfig::from_json_text(mini_config_json(dir.str()));
    CHECK(cfg.mode == TrainMode::TASK_SPECIFIC);
    CHECK(cfg.teacher.model.num_layers == 2);
    CHECK(cfg.student.model.num_layers == 1);
    CHECK(cfg.objective_sweep.size() == 1);
    CHECK(cfg.objective_sweep[0] == std::set<Term>{Term::ATT_MSE});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
  }
  SUBCASE("unknown keys are errors naming the key") {
    std::string bad = R"({"objctive": {}, "output_dir": "x"})";
    try {
      ExperimentConfig::from_json_text(bad);
      FAIL("expected ConfigInvalid");
    } catch (const ConfigInvalid& e) {
      CHECK(std::string(e.what()).find("objctive") != std::string::npos);
    }
  }
  SUBCASE("nested unknown keys are errors too") {
    std::string bad = R"({"objective": {"trems": ["PRED"]}, "output_dir": "x"})";
    CHECK_THROWS_AS(ExperimentConfig::from_json_text(bad), ConfigInvalid);
  }
  SUBCASE("term names are the spec names, verbatim") {
    for (const char* name : {"PRED", "HID_CLS", "HID_SEQ", "HID_CONTRAST", "ATT_MSE", "ATT_KL",
                             "VAL_KL", "SUPERVISED"})
      CHECK(term_name(term_from_name(name)) == std::string(name));
    CHECK_THROWS_AS(term_from_name("ATT-MSE"), ConfigInvalid);
  }
  SUBCASE("invalid JSON is ConfigInvalid") {
    CHECK_THROWS_AS(ExperimentConfig::from_json_text("{nope"), ConfigInvalid);
  }
}

TEST_CASE("cmd_distill end to end" * doctest::timeout(600)) {
  TempDir out("distilkit_run_a");
  TempDir cfg_dir("distilkit_cfg_run");
  std::string cfg_path =
      write_config(cfg_dir.str() + "/cfg.json", mini_config_json(out.str(), "[1, 2]"));

  REQUIRE(cmd_distill(cfg_path, 1) == 0);
  SUBCASE("records, checkpoints and manifest exist") {
    int records = 0, checkpoints = 0;
    for (const auto& entry : fs::directory_iterator(out.str())) {
      if (entry.path().extension() == ".jsonl") ++records;
      if (entry.path().extension() == ".ckpt") ++checkpoints;
    }
    CHECK(records == 2);          // one per seed
    CHECK(checkpoints == 2 + 1);  // students + cached teacher
    CHECK(fs::exists(out.path / "manifest.json"));
    std::vector<RunRecord> loaded = load_records(out.str());
    CHECK(loaded.size() == 2);
    CHECK(loaded[0].objective == "ATT_MSE");
    CHECK(loaded[0].init == "every_k[2]");
  }
  SUBCASE("rerunning skips completed runs via the manifest") {
    fs::path record;
    for (const auto& entry : fs::directory_iterator(out.str()))
      if (entry.path().extension() == ".jsonl") record = entry.path();
    fs::remove(record);
    REQUIRE(cmd_distill(cfg_path, 1) == 0);
    CHECK_FALSE(fs::exists(record));  // manifest says done, so not redone
  }
  SUBCASE("reports render from the records") {
    REQUIRE(cmd_report(out.str(), GroupBy::OBJECTIVE) == 0);
    CHECK(fs::exists(out.path / "report.txt"));
    CHECK(fs::exists(out.path / "report.tsv"));
    std::string tsv = slurp((out.path / "report.tsv").string());
    CHECK(tsv.find("ATT_MSE") != std::string::npos);
  }
}

TEST_CASE("cmd_distill is byte-deterministic across fresh directories" * doctest::timeout(600)) {
  TempDir a("distilkit_det_a"), b("distilkit_det_b"), cfgs("distilkit_det_cfg");
  std::string cfg_a = write_config(cfgs.str() + "/a.json", mini_config_json(a.str()));
  std::string cfg_b = write_config(cfgs.str() + "/b.json", mini_config_json(b.str()));
  REQUIRE(cmd_distill(cfg_a, 1) == 0);
  REQUIRE(cmd_distill(cfg_b, 1) == 0);
  std::vector<fs::path> records_a;
  for (const auto& entry : fs::directory_iterator(a.str()))
    if (entry.path().extension() == ".jsonl") records_a.push_back(entry.path());
  REQUIRE(records_a.size() == 1);
  for (const fs::path& ra : records_a) {
    fs::path rb = b.path / ra.filename();
    REQUIRE(fs::exists(rb));
    CHECK(slurp(ra.string()) == slurp(rb.string()));
  }
}

TEST_CASE("cmd_distill exit codes") {
  TempDir cfgs("distilkit_badcfg");
  SUBCASE("invalid key exits 2") {
    std::string bad = write_config(cfgs.str() + "/bad.json", R"({"objctive": {}})");
    CHECK(cmd_distill(bad, 1) == 2);
  }
  SUBCASE("missing file exits 2") { CHECK(cmd_distill(cfgs.str() + "/nope.json", 1) == 2); }
  SUBCASE("empty records dir is an error") {
    TempDir empty("distilkit_empty_records");
    CHECK(cmd_report(empty.str(), GroupBy::OBJECTIVE) == 1);
  }
}
