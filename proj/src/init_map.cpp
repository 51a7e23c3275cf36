#include "distilkit/init_map.hpp"

#include <algorithm>
#include <map>

#include "distilkit/rng.hpp"

namespace distilkit {

const char* init_strategy_name(InitStrategy s) {
  switch (s) {
    case InitStrategy::EVERY_K: return "every_k";
    case InitStrategy::EXPLICIT: return "explicit";
    case InitStrategy::FIRST_K: return "first_k";
    case InitStrategy::RANDOM_INIT: return "random";
  }
  return "unknown";
}

InitStrategy init_strategy_from_name(const std::string& name) {
  for (InitStrategy s : {InitStrategy::EVERY_K, InitStrategy::EXPLICIT, InitStrategy::FIRST_K,
                         InitStrategy::RANDOM_INIT})
    if (name == init_strategy_name(s)) return s;
  throw ConfigInvalid("unknown init strategy: " + name);
}

std::string LayerMap::label() const {
  std::string out = init_strategy_name(strategy);
  if (!teacher_layers.empty()) {
    out += "[";
    for (std::size_t i = 0; i < teacher_layers.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(teacher_layers[i]);
    }
    out += "]";
  }
  return out;
}

LayerMap build_layer_map(InitStrategy strategy, int teacher_layers, int student_layers,
                         const std::vector<int>& explicit_layers, bool copy_embeddings) {
  if (teacher_layers < 1 || student_layers < 1)
    throw InvalidExplicitList("layer counts must be positive");
  if (student_layers > teacher_layers)
    throw InvalidExplicitList("student deeper than teacher");

  LayerMap map;
  map.strategy = strategy;
  map.copy_embeddings = copy_embeddings;
  switch (strategy) {
    case InitStrategy::EVERY_K: {
      if (teacher_layers % student_layers != 0)
        throw IndivisibleDepth(std::to_string(teacher_layers) + " teacher layers not divisible by " +
                               std::to_string(student_layers));
      int k = teacher_layers / student_layers;
      for (int j = 1; j <= student_layers; ++j) map.teacher_layers.push_back(j * k);
      break;
    }
    case InitStrategy::FIRST_K: {
      for (int j = 1; j <= student_layers; ++j) map.teacher_layers.push_back(j);
      break;
    }
    case InitStrategy::EXPLICIT: {
      if (static_cast<int>(explicit_layers.size()) != student_layers)
        throw InvalidExplicitList("explicit list length " +
                                  std::to_string(explicit_layers.size()) + " != student depth " +
                                  std::to_string(student_layers));
      int prev = 0;
      for (int layer : explicit_layers) {
        if (layer <= prev || layer > teacher_layers)
          throw InvalidExplicitList("layers must be strictly increasing within [1, " +
                                    std::to_string(teacher_layers) + "]");
        prev = layer;
      }
      map.teacher_layers = explicit_layers;
      break;
    }
    case InitStrategy::RANDOM_INIT:
      break;
  }
  return map;
}

namespace {

std::vector<std::pair<std::string, Tensor>> layer_blocks(const LayerParams& p,
                                                         const std::string& prefix) {
  return {{prefix + "attn.wq", p.wq},         {prefix + "attn.bq", p.bq},
          {prefix + "attn.wk", p.wk},         {prefix + "attn.bk", p.bk},
          {prefix + "attn.wv", p.wv},         {prefix + "attn.bv", p.bv},
          {prefix + "attn.wo", p.wo},         {prefix + "attn.bo", p.bo},
          {prefix + "ln1.gamma", p.ln1_gamma}, {prefix + "ln1.beta", p.ln1_beta},
          {prefix + "ffn.w1", p.w1},          {prefix + "ffn.b1", p.b1},
          {prefix + "ffn.w2", p.w2},          {prefix + "ffn.b2", p.b2},
          {prefix + "ln2.gamma", p.ln2_gamma}, {prefix + "ln2.beta", p.ln2_beta}};
}

void copy_block(Tensor dst, const Tensor& src, const std::string& what) {
  if (dst.rows() != src.rows() || dst.cols() != src.cols())
    throw DimensionMismatch("cannot copy " + what + ": " + std::to_string(src.rows()) + "x" +
                            std::to_string(src.cols()) + " into " + std::to_string(dst.rows()) +
                            "x" + std::to_string(dst.cols()));
  dst.value() = src.value();
}

}  // namespace

InitReport initialize_student(EncoderModel& student, const EncoderModel& teacher,
                              const LayerMap& map, std::uint64_t seed) {
  if (!map.teacher_layers.empty()) {
    if (static_cast<int>(map.teacher_layers.size()) != student.config.num_layers)
      throw MapLengthMismatch("map covers " + std::to_string(map.teacher_layers.size()) +
                              " layers, student has " +
                              std::to_string(student.config.num_layers));
    for (int layer : map.teacher_layers)
      if (layer < 1 || layer > teacher.config.num_layers)
        throw MapLengthMismatch("teacher layer " + std::to_string(layer) + " out of range");
    if (student.config.hidden_dim != teacher.config.hidden_dim ||
        student.config.num_heads != teacher.config.num_heads ||
        student.config.ffn_dim != teacher.config.ffn_dim)
      throw DimensionMismatch("copying needs matching hidden_dim/num_heads/ffn_dim");
  }
  if (map.copy_embeddings && (student.config.hidden_dim != teacher.config.hidden_dim ||
                              student.config.vocab_size != teacher.config.vocab_size ||
                              student.config.max_seq_len > teacher.config.max_seq_len))
    throw DimensionMismatch("embedding copy needs matching vocab/hidden dims");

  // fresh random baseline for every block, then overwrite the copied ones
  EncoderModel reference = make_encoder(student.config, seed);
  auto fresh = reference.named_params();
  auto current = student.named_params();
  for (std::size_t i = 0; i < current.size(); ++i)
    current[i].tensor.value() = fresh[i].tensor.value();

  std::map<std::string, std::string> copied;  // student block -> teacher block

  if (map.copy_embeddings) {
    copy_block(student.token_embedding, teacher.token_embedding, "embed.token");
    copied["embed.token"] = "embed.token";
    if (student.config.max_seq_len == teacher.config.max_seq_len) {
      copy_block(student.position_embedding, teacher.position_embedding, "embed.position");
    } else {
      student.position_embedding.value() =
          teacher.position_embedding.value().topRows(student.config.max_seq_len);
    }
    copied["embed.position"] = "embed.position";
  }

  for (std::size_t j = 0; j < map.teacher_layers.size(); ++j) {
    int teacher_layer = map.teacher_layers[j];
    auto src = layer_blocks(teacher.layers[static_cast<std::size_t>(teacher_layer - 1)],
                            "layer" + std::to_string(teacher_layer) + ".");
    auto dst = layer_blocks(student.layers[j], "layer" + std::to_string(j + 1) + ".");
    for (std::size_t b = 0; b < dst.size(); ++b) {
      copy_block(dst[b].second, src[b].second, dst[b].first);
      copied[dst[b].first] = src[b].first;
    }
  }

  // Heads travel with the teacher when shapes allow it, never under RANDOM_INIT.
  if (map.strategy != InitStrategy::RANDOM_INIT) {
    if (student.cls_w.defined() && teacher.cls_w.defined() &&
        student.cls_w.rows() == teacher.cls_w.rows() &&
        student.cls_w.cols() == teacher.cls_w.cols()) {
      copy_block(student.cls_w, teacher.cls_w, "head.cls.w");
      copy_block(student.cls_b, teacher.cls_b, "head.cls.b");
      copied["head.cls.w"] = "head.cls.w";
      copied["head.cls.b"] = "head.cls.b";
    }
    if (student.mlm_w.rows() == teacher.mlm_w.rows() &&
        student.mlm_w.cols() == teacher.mlm_w.cols()) {
      copy_block(student.mlm_w, teacher.mlm_w, "head.mlm.w");
      copy_block(student.mlm_b, teacher.mlm_b, "head.mlm.b");
      copied["head.mlm.w"] = "head.mlm.w";
      copied["head.mlm.b"] = "head.mlm.b";
    }
  }

  InitReport report;
  for (const NamedParam& p : student.named_params()) {
    InitReport::Block block;
    block.name = p.name;
    auto it = copied.find(p.name);
    if (it != copied.end()) {
      block.copied = true;
      block.source = it->second;
      ++report.copied_count;
    } else {
      ++report.random_count;
    }
    report.blocks.push_back(std::move(block));
  }
  return report;
}

std::vector<LayerPair> supervision_pairs(const LayerMap& map, TransferMode mode,
                                         int teacher_layers, int student_layers) {
  if (mode == TransferMode::TASK_AGNOSTIC) return {{teacher_layers, student_layers}};
  if (map.teacher_layers.empty())
    throw EmptyMapForTaskSpecific("task-specific supervision needs a non-empty layer map");
  std::vector<LayerPair> pairs;
  for (std::size_t j = 0; j < map.teacher_layers.size(); ++j)
    pairs.emplace_back(map.teacher_layers[j], static_cast<int>(j + 1));
  return pairs;
}

}  // namespace distilkit
