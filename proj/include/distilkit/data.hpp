#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "distilkit/encoder.hpp"

namespace distilkit {

// Whitespace + lowercase word vocabulary with reserved ids
// 0=PAD 1=UNK 2=CLS 3=MASK 4=SEP. Stands in for WordPiece.
class Vocab {
public:
  static Vocab build(const std::vector<std::string>& texts, int min_count = 2);

  int id_of(const std::string& token) const;  // kUnkId for unknown
  const std::string& token_of(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

std::vector<std::string> tokenize(const std::string& text);

struct Example {
  std::string text_a;
  std::optional<std::string> text_b;
  int label = 0;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::vector<int> label_space;
  int ingest_warnings = 0;  // malformed rows skipped during TSV parsing

  std::vector<std::string> all_texts() const;
};

struct TsvSchema {
  std::string text_a = "sentence";
  std::string text_b;  // empty = single-sentence task
  std::string label = "label";
};

// Parses a GLUE-layout TSV with a header row into the train split.
// Malformed rows are skipped and counted.
Dataset ingest_tsv(const std::string& path, const TsvSchema& schema);

enum class SynthKind { KEYWORD, PARITY, PAIR_MATCH };

const char* synth_kind_name(SynthKind kind);
SynthKind synth_kind_from_name(const std::string& name);

// Deterministic labeled toy tasks, class-balanced, split 80/20 train/dev.
//   KEYWORD:    label 1 iff the trigger token appears
//   PARITY:     parity of the marked-token count
//   PAIR_MATCH: label 1 iff the two sentences share >= 2 content tokens
Dataset synth_task(SynthKind kind, int n, int vocab_size, std::uint64_t seed);

// Unlabeled sentences for task-agnostic distillation.
std::vector<std::string> synth_corpus(int n, int vocab_size, std::uint64_t seed);

// [CLS] a-tokens ([SEP] b-tokens) truncated to max_len, with validity mask.
struct EncodedExample {
  std::vector<int> ids;
  std::vector<bool> mask;  // true = real token
  int label = 0;
};

EncodedExample encode_example(const Vocab& vocab, const Example& example, int max_len);
std::vector<EncodedExample> encode_all(const Vocab& vocab, const std::vector<Example>& examples,
                                       int max_len);

}  // namespace distilkit
