#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distilkit/tensor.hpp"

namespace distilkit {

// Reserved token ids, shared by the tokenizer and the models.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kSepId = 4;
inline constexpr int kNumReservedIds = 5;

struct ModelConfig {
  int num_layers = 2;
  int hidden_dim = 32;
  int num_heads = 4;
  int ffn_dim = 64;
  int vocab_size = 64;
  int max_seq_len = 32;
  int num_labels = 2;  // 0 = no classification head

  int head_dim() const { return hidden_dim / num_heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gamma, ln1_beta;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gamma, ln2_beta;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// BERT-style encoder, post-layer-norm residual ordering. Attention masking is
// an additive -1e9 on the scores of padded key positions.
struct EncoderModel {
  ModelConfig config;
  Tensor token_embedding;     // vocab x d
  Tensor position_embedding;  // max_seq_len x d
  std::vector<LayerParams> layers;
  Tensor cls_w, cls_b;  // undefined when num_labels == 0
  Tensor mlm_w, mlm_b;

  std::vector<NamedParam> named_params() const;
  std::vector<Tensor> parameters() const;
  // Everything except the task heads (embeddings + encoder layers).
  std::vector<Tensor> body_parameters() const;
  std::vector<Tensor> head_parameters() const;
  void zero_grads() const;
};

// Per-layer capture of every quantity the distillation objectives consume.
struct ForwardTrace {
  Index seq_len = 0;
  std::vector<Index> valid_positions;             // unpadded indices, ascending
  std::vector<Tensor> hidden_states;              // [L], l x d
  std::vector<std::vector<Tensor>> attn_scores;   // [L][h], l x l, pre-softmax (unmasked)
  std::vector<std::vector<Tensor>> attn_probs;    // [L][h], l x l, rows sum to 1
  std::vector<std::vector<Tensor>> values;        // [L][h], l x head_dim
  Tensor logits;                                  // set by classify / mlm_logits
};

EncoderModel make_encoder(const ModelConfig& config, std::uint64_t seed);

// Deep copy: fresh parameter nodes with identical values.
EncoderModel clone_model(const EncoderModel& model);

ForwardTrace forward_with_trace(const EncoderModel& model, const std::vector<int>& tokens,
                                const std::vector<bool>& pad_mask = {});

// Logits from the CLS-position final hidden state; also stored on the trace.
Tensor classify(const EncoderModel& model, ForwardTrace& trace);

// Per-position vocabulary logits at the given sequence positions.
Tensor mlm_logits(const EncoderModel& model, ForwardTrace& trace,
                  const std::vector<Index>& masked_positions);

std::int64_t count_params(const EncoderModel& model);

// Checkpoints round-trip bit-exactly (raw little-endian doubles).
void save_checkpoint(const EncoderModel& model, const std::string& path);
EncoderModel load_checkpoint(const std::string& path);

}  // namespace distilkit
