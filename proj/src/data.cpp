#include "distilkit/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "distilkit/rng.hpp"

namespace distilkit {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocab Vocab::build(const std::vector<std::string>& texts, int min_count) {
  std::unordered_map<std::string, int> counts;
  for (const std::string& text : texts)
    for (const std::string& tok : tokenize(text)) ++counts[tok];

  Vocab v;
  v.id_to_token_ = {"[PAD]", "[UNK]", "[CLS]", "[MASK]", "[SEP]"};
  for (int id = 0; id < kNumReservedIds; ++id) v.token_to_id_[v.id_to_token_[id]] = id;

  // frequency-descending, token ascending: a stable id assignment
  std::vector<std::pair<std::string, int>> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (const auto& [tok, count] : sorted) {
    if (count < min_count) continue;
    v.token_to_id_[tok] = static_cast<int>(v.id_to_token_.size());
    v.id_to_token_.push_back(tok);
  }
  return v;
}

int Vocab::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) throw UnknownTokenId(std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const std::string& tok : tokenize(text)) ids.push_back(id_of(tok));
  return ids;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += " ";
    out += token_of(id);
  }
  return out;
}

std::vector<std::string> Dataset::all_texts() const {
  std::vector<std::string> texts;
  for (const auto* split : {&train, &dev}) {
    for (const Example& e : *split) {
      texts.push_back(e.text_a);
      if (e.text_b) texts.push_back(*e.text_b);
    }
  }
  return texts;
}

Dataset ingest_tsv(const std::string& path, const TsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw EmptyFile("cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw EmptyFile(path + " has no header row");

  auto split_tsv = [](const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    return fields;
  };

  std::vector<std::string> columns = split_tsv(header);
  auto find_column = [&columns](const std::string& name) {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    return -1;
  };
  int col_a = find_column(schema.text_a);
  int col_b = schema.text_b.empty() ? -1 : find_column(schema.text_b);
  int col_label = find_column(schema.label);
  if (col_a < 0) throw MissingColumn(schema.text_a + " not in header of " + path);
  if (!schema.text_b.empty() && col_b < 0)
    throw MissingColumn(schema.text_b + " not in header of " + path);
  if (col_label < 0) throw MissingColumn(schema.label + " not in header of " + path);

  Dataset ds;
  std::set<int> labels;
  std::string line;
  int needed = std::max({col_a, col_b, col_label}) + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields = split_tsv(line);
    if (static_cast<int>(fields.size()) < needed) {
      ++ds.ingest_warnings;
      continue;
    }
    Example e;
    e.text_a = fields[static_cast<std::size_t>(col_a)];
    if (col_b >= 0) e.text_b = fields[static_cast<std::size_t>(col_b)];
    try {
      std::size_t used = 0;
      e.label = std::stoi(fields[static_cast<std::size_t>(col_label)], &used);
      if (used != fields[static_cast<std::size_t>(col_label)].size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      ++ds.ingest_warnings;
      continue;
    }
    labels.insert(e.label);
    ds.train.push_back(std::move(e));
  }
  if (ds.train.empty()) throw EmptyFile(path + " has no well-formed rows");
  ds.label_space.assign(labels.begin(), labels.end());
  return ds;
}

const char* synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::KEYWORD: return "keyword";
    case SynthKind::PARITY: return "parity";
    case SynthKind::PAIR_MATCH: return "pair_match";
  }
  return "unknown";
}

SynthKind synth_kind_from_name(const std::string& name) {
  for (SynthKind k : {SynthKind::KEYWORD, SynthKind::PARITY, SynthKind::PAIR_MATCH})
    if (name == synth_kind_name(k)) return k;
  throw ConfigInvalid("unknown synthetic task: " + name);
}

namespace {

constexpr const char* kTrigger = "trigger";
constexpr const char* kMarker = "marker";
constexpr int kPairMatchShared = 2;
constexpr int kMinLen = 6;
constexpr int kMaxLen = 12;

std::string word(int i) { return "w" + std::to_string(i); }

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const std::string& t : tokens) {
    if (!out.empty()) out += " ";
    out += t;
  }
  return out;
}

std::vector<std::string> random_sentence(Rng& rng, int vocab_size, int len,
                                         const std::vector<std::string>& avoid = {}) {
  std::vector<std::string> tokens;
  while (static_cast<int>(tokens.size()) < len) {
    std::string t = word(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(vocab_size))));
    if (std::find(avoid.begin(), avoid.end(), t) != avoid.end()) continue;
    tokens.push_back(std::move(t));
  }
  return tokens;
}

Example make_keyword(Rng& rng, int vocab_size, int target_label) {
  int len = kMinLen + static_cast<int>(rng.uniform_int(kMaxLen - kMinLen + 1));
  std::vector<std::string> tokens = random_sentence(rng, vocab_size, len, {kTrigger});
  if (target_label == 1)
    tokens[rng.uniform_int(tokens.size())] = kTrigger;
  return {join(tokens), std::nullopt, target_label};
}

Example make_parity(Rng& rng, int vocab_size, int target_label) {
  int len = kMinLen + static_cast<int>(rng.uniform_int(kMaxLen - kMinLen + 1));
  std::vector<std::string> tokens = random_sentence(rng, vocab_size, len, {kMarker});
  // marker count with the requested parity, at most 4
  int count = target_label + 2 * static_cast<int>(rng.uniform_int(2));
  std::vector<std::size_t> slots(tokens.size());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  rng.shuffle(slots);
  for (int c = 0; c < count && c < static_cast<int>(slots.size()); ++c)
    tokens[slots[static_cast<std::size_t>(c)]] = kMarker;
  return {join(tokens), std::nullopt, target_label};
}

Example make_pair_match(Rng& rng, int vocab_size, int target_label) {
  int len_a = kMinLen + static_cast<int>(rng.uniform_int(kMaxLen - kMinLen + 1));
  int len_b = kMinLen + static_cast<int>(rng.uniform_int(kMaxLen - kMinLen + 1));
  std::vector<std::string> a = random_sentence(rng, vocab_size, len_a);
  std::vector<std::string> avoid = a;
  std::vector<std::string> b = random_sentence(rng, vocab_size, len_b, avoid);
  int shared = target_label == 1 ? kPairMatchShared + static_cast<int>(rng.uniform_int(2))
                                 : static_cast<int>(rng.uniform_int(kPairMatchShared));
  std::vector<std::size_t> slots(b.size());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  rng.shuffle(slots);
  std::vector<std::string> distinct_a = a;
  std::sort(distinct_a.begin(), distinct_a.end());
  distinct_a.erase(std::unique(distinct_a.begin(), distinct_a.end()), distinct_a.end());
  rng.shuffle(distinct_a);
  for (int c = 0; c < shared && c < static_cast<int>(distinct_a.size()); ++c)
    b[slots[static_cast<std::size_t>(c)]] = distinct_a[static_cast<std::size_t>(c)];
  // label from the realized overlap, so the rule holds exactly
  std::set<std::string> in_a(a.begin(), a.end());
  std::set<std::string> overlap;
  for (const std::string& t : b)
    if (in_a.count(t)) overlap.insert(t);
  int label = static_cast<int>(overlap.size()) >= kPairMatchShared ? 1 : 0;
  return {join(a), join(b), label};
}

}  // namespace

Dataset synth_task(SynthKind kind, int n, int vocab_size, std::uint64_t seed) {
  if (n < 20) throw InvalidSize("synthetic tasks need n >= 20, got " + std::to_string(n));
  if (vocab_size < 8) throw InvalidSize("generator vocab must be >= 8");
  Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(kind)));
  Dataset ds;
  ds.label_space = {0, 1};
  std::vector<Example> examples;
  examples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int target = i % 2;  // alternate labels: exactly balanced
    switch (kind) {
      case SynthKind::KEYWORD: examples.push_back(make_keyword(rng, vocab_size, target)); break;
      case SynthKind::PARITY: examples.push_back(make_parity(rng, vocab_size, target)); break;
      case SynthKind::PAIR_MATCH:
        examples.push_back(make_pair_match(rng, vocab_size, target));
        break;
    }
  }
  rng.shuffle(examples);
  int dev_size = std::max(1, n / 5);
  ds.dev.assign(examples.end() - dev_size, examples.end());
  ds.train.assign(examples.begin(), examples.end() - dev_size);
  return ds;
}

std::vector<std::string> synth_corpus(int n, int vocab_size, std::uint64_t seed) {
  if (n < 1) throw InvalidSize("corpus needs n >= 1");
  Rng rng(Rng::derive(seed, 77));
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int len = kMinLen + static_cast<int>(rng.uniform_int(kMaxLen - kMinLen + 1));
    out.push_back(join(random_sentence(rng, vocab_size, len)));
  }
  return out;
}

EncodedExample encode_example(const Vocab& vocab, const Example& example, int max_len) {
  EncodedExample enc;
  enc.label = example.label;
  enc.ids.push_back(kClsId);
  for (int id : vocab.encode(example.text_a)) enc.ids.push_back(id);
  if (example.text_b) {
    enc.ids.push_back(kSepId);
    for (int id : vocab.encode(*example.text_b)) enc.ids.push_back(id);
  }
  if (static_cast<int>(enc.ids.size()) > max_len) enc.ids.resize(static_cast<std::size_t>(max_len));
  enc.mask.assign(enc.ids.size(), true);
  return enc;
}

std::vector<EncodedExample> encode_all(const Vocab& vocab, const std::vector<Example>& examples,
                                       int max_len) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const Example& e : examples) out.push_back(encode_example(vocab, e, max_len));
  return out;
}

}  // namespace distilkit
