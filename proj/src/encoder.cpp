#include "distilkit/encoder.hpp"

#include <cstring>
#include <fstream>

#include "distilkit/rng.hpp"

namespace distilkit {

namespace {

constexpr Scalar kMaskPenalty = -1e9;
constexpr Scalar kLayerNormEps = 1e-12;
constexpr Scalar kInitStd = 0.02;

Tensor random_param(Index rows, Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, kInitStd);
  return Tensor::from_matrix(std::move(m), true);
}

Tensor const_param(Index rows, Index cols, Scalar v) {
  return Tensor::from_matrix(Matrix::Constant(rows, cols, v), true);
}

void append(std::vector<NamedParam>& out, const std::string& name, const Tensor& t) {
  if (t.defined()) out.push_back({name, t});
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers < 1) throw DimensionMismatch("num_layers must be >= 1");
  if (hidden_dim < 1 || num_heads < 1 || ffn_dim < 1)
    throw DimensionMismatch("hidden_dim, num_heads, ffn_dim must be >= 1");
  if (hidden_dim % num_heads != 0)
    throw DimensionMismatch("hidden_dim " + std::to_string(hidden_dim) +
                            " not divisible by num_heads " + std::to_string(num_heads));
  if (max_seq_len < 1) throw DimensionMismatch("max_seq_len must be >= 1");
  if (vocab_size < 4) throw DimensionMismatch("vocab_size must reserve PAD, UNK, CLS, MASK");
  if (num_labels < 0) throw DimensionMismatch("num_labels must be >= 0");
}

EncoderModel make_encoder(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EncoderModel m;
  m.config = config;
  const Index d = config.hidden_dim;
  m.token_embedding = random_param(config.vocab_size, d, rng);
  m.position_embedding = random_param(config.max_seq_len, d, rng);
  for (int l = 0; l < config.num_layers; ++l) {
    LayerParams p;
    p.wq = random_param(d, d, rng);
    p.bq = const_param(1, d, 0.0);
    p.wk = random_param(d, d, rng);
    p.bk = const_param(1, d, 0.0);
    p.wv = random_param(d, d, rng);
    p.bv = const_param(1, d, 0.0);
    p.wo = random_param(d, d, rng);
    p.bo = const_param(1, d, 0.0);
    p.ln1_gamma = const_param(1, d, 1.0);
    p.ln1_beta = const_param(1, d, 0.0);
    p.w1 = random_param(d, config.ffn_dim, rng);
    p.b1 = const_param(1, config.ffn_dim, 0.0);
    p.w2 = random_param(config.ffn_dim, d, rng);
    p.b2 = const_param(1, d, 0.0);
    p.ln2_gamma = const_param(1, d, 1.0);
    p.ln2_beta = const_param(1, d, 0.0);
    m.layers.push_back(std::move(p));
  }
  if (config.num_labels > 0) {
    m.cls_w = random_param(d, config.num_labels, rng);
    m.cls_b = const_param(1, config.num_labels, 0.0);
  }
  m.mlm_w = random_param(d, config.vocab_size, rng);
  m.mlm_b = const_param(1, config.vocab_size, 0.0);
  return m;
}

EncoderModel clone_model(const EncoderModel& model) {
  EncoderModel copy;
  copy.config = model.config;
  auto dup = [](const Tensor& t) {
    return t.defined() ? Tensor::from_matrix(t.value(), true) : Tensor();
  };
  copy.token_embedding = dup(model.token_embedding);
  copy.position_embedding = dup(model.position_embedding);
  for (const LayerParams& p : model.layers) {
    LayerParams q;
    q.wq = dup(p.wq);
    q.bq = dup(p.bq);
    q.wk = dup(p.wk);
    q.bk = dup(p.bk);
    q.wv = dup(p.wv);
    q.bv = dup(p.bv);
    q.wo = dup(p.wo);
    q.bo = dup(p.bo);
    q.ln1_gamma = dup(p.ln1_gamma);
    q.ln1_beta = dup(p.ln1_beta);
    q.w1 = dup(p.w1);
    q.b1 = dup(p.b1);
    q.w2 = dup(p.w2);
    q.b2 = dup(p.b2);
    q.ln2_gamma = dup(p.ln2_gamma);
    q.ln2_beta = dup(p.ln2_beta);
    copy.layers.push_back(std::move(q));
  }
  copy.cls_w = dup(model.cls_w);
  copy.cls_b = dup(model.cls_b);
  copy.mlm_w = dup(model.mlm_w);
  copy.mlm_b = dup(model.mlm_b);
  return copy;
}

std::vector<NamedParam> EncoderModel::named_params() const {
  std::vector<NamedParam> out;
  append(out, "embed.token", token_embedding);
  append(out, "embed.position", position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& p = layers[l];
    std::string prefix = "layer" + std::to_string(l + 1) + ".";
    append(out, prefix + "attn.wq", p.wq);
    append(out, prefix + "attn.bq", p.bq);
    append(out, prefix + "attn.wk", p.wk);
    append(out, prefix + "attn.bk", p.bk);
    append(out, prefix + "attn.wv", p.wv);
    append(out, prefix + "attn.bv", p.bv);
    append(out, prefix + "attn.wo", p.wo);
    append(out, prefix + "attn.bo", p.bo);
    append(out, prefix + "ln1.gamma", p.ln1_gamma);
    append(out, prefix + "ln1.beta", p.ln1_beta);
    append(out, prefix + "ffn.w1", p.w1);
    append(out, prefix + "ffn.b1", p.b1);
    append(out, prefix + "ffn.w2", p.w2);
    append(out, prefix + "ffn.b2", p.b2);
    append(out, prefix + "ln2.gamma", p.ln2_gamma);
    append(out, prefix + "ln2.beta", p.ln2_beta);
  }
  append(out, "head.cls.w", cls_w);
  append(out, "head.cls.b", cls_b);
  append(out, "head.mlm.w", mlm_w);
  append(out, "head.mlm.b", mlm_b);
  return out;
}

std::vector<Tensor> EncoderModel::parameters() const {
  std::vector<Tensor> out;
  for (const NamedParam& p : named_params()) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> EncoderModel::body_parameters() const {
  std::vector<Tensor> out;
  for (const NamedParam& p : named_params())
    if (p.name.rfind("head.", 0) != 0) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> EncoderModel::head_parameters() const {
  std::vector<Tensor> out;
  for (const NamedParam& p : named_params())
    if (p.name.rfind("head.", 0) == 0) out.push_back(p.tensor);
  return out;
}

void EncoderModel::zero_grads() const {
  for (const NamedParam& p : named_params()) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

ForwardTrace forward_with_trace(const EncoderModel& model, const std::vector<int>& tokens,
                                const std::vector<bool>& pad_mask) {
  const ModelConfig& cfg = model.config;
  const Index l = static_cast<Index>(tokens.size());
  if (l == 0) throw SequenceTooLong("empty token sequence");
  if (l > cfg.max_seq_len)
    throw SequenceTooLong("sequence length " + std::to_string(l) + " > max_seq_len " +
                          std::to_string(cfg.max_seq_len));
  if (!pad_mask.empty() && static_cast<Index>(pad_mask.size()) != l)
    throw DimensionMismatch("pad_mask length differs from token length");
  for (int id : tokens)
    if (id < 0 || id >= cfg.vocab_size)
      throw UnknownTokenId("token id " + std::to_string(id) + " outside vocab of size " +
                           std::to_string(cfg.vocab_size));

  ForwardTrace trace;
  trace.seq_len = l;
  std::vector<Index> tok_idx(tokens.begin(), tokens.end());
  std::vector<Index> pos_idx(static_cast<std::size_t>(l));
  for (Index i = 0; i < l; ++i) pos_idx[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < l; ++i)
    if (pad_mask.empty() || pad_mask[static_cast<std::size_t>(i)])
      trace.valid_positions.push_back(i);

  // additive key mask row: 0 for valid keys, -1e9 for padded ones
  Matrix mask_row = Matrix::Zero(1, l);
  if (!pad_mask.empty())
    for (Index i = 0; i < l; ++i)
      if (!pad_mask[static_cast<std::size_t>(i)]) mask_row(0, i) = kMaskPenalty;
  Tensor key_mask = Tensor::from_matrix(mask_row);

  Tensor x = add(select_rows(model.token_embedding, tok_idx),
                 select_rows(model.position_embedding, pos_idx));

  const int h = cfg.num_heads;
  const Index hd = cfg.head_dim();
  const Scalar inv_sqrt_hd = 1.0 / std::sqrt(static_cast<Scalar>(hd));

  for (const LayerParams& p : model.layers) {
    Tensor q = add_row(matmul(x, p.wq), p.bq);
    Tensor k = add_row(matmul(x, p.wk), p.bk);
    Tensor v = add_row(matmul(x, p.wv), p.bv);

    std::vector<Tensor> layer_scores, layer_probs, layer_values, head_ctx;
    for (int i = 0; i < h; ++i) {
      std::vector<Index> cols(static_cast<std::size_t>(hd));
      for (Index j = 0; j < hd; ++j) cols[static_cast<std::size_t>(j)] = i * hd + j;
      Tensor qi = select_cols(q, cols);
      Tensor ki = select_cols(k, cols);
      Tensor vi = select_cols(v, cols);
      Tensor scores = scale(matmul(qi, transpose(ki)), inv_sqrt_hd);
      Tensor probs = softmax(add_row(scores, key_mask), 1);
      head_ctx.push_back(matmul(probs, vi));
      layer_scores.push_back(scores);
      layer_probs.push_back(probs);
      layer_values.push_back(vi);
    }
    Tensor attn_out = add_row(matmul(concat_cols(head_ctx), p.wo), p.bo);
    x = layer_norm(add(x, attn_out), p.ln1_gamma, p.ln1_beta, kLayerNormEps);

    Tensor ffn = add_row(matmul(gelu(add_row(matmul(x, p.w1), p.b1)), p.w2), p.b2);
    x = layer_norm(add(x, ffn), p.ln2_gamma, p.ln2_beta, kLayerNormEps);

    trace.hidden_states.push_back(x);
    trace.attn_scores.push_back(std::move(layer_scores));
    trace.attn_probs.push_back(std::move(layer_probs));
    trace.values.push_back(std::move(layer_values));
  }
  return trace;
}

Tensor classify(const EncoderModel& model, ForwardTrace& trace) {
  if (!model.cls_w.defined()) throw MissingHead("model has no classification head");
  Tensor cls_hidden = select_rows(trace.hidden_states.back(), {0});
  trace.logits = add_row(matmul(cls_hidden, model.cls_w), model.cls_b);
  return trace.logits;
}

Tensor mlm_logits(const EncoderModel& model, ForwardTrace& trace,
                  const std::vector<Index>& masked_positions) {
  for (Index p : masked_positions)
    if (p < 0 || p >= trace.seq_len)
      throw PositionOutOfRange("masked position " + std::to_string(p) +
                               " outside sequence of length " + std::to_string(trace.seq_len));
  if (masked_positions.empty())
    return Tensor::zeros(0, model.config.vocab_size);
  Tensor rows = select_rows(trace.hidden_states.back(), masked_positions);
  trace.logits = add_row(matmul(rows, model.mlm_w), model.mlm_b);
  return trace.logits;
}

std::int64_t count_params(const EncoderModel& model) {
  std::int64_t n = 0;
  for (const NamedParam& p : model.named_params()) n += p.tensor.size();
  return n;
}

// ---- checkpoint io ----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'K', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_i64(std::ofstream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::ifstream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_checkpoint(const EncoderModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
  const ModelConfig& c = model.config;
  for (int v : {c.num_layers, c.hidden_dim, c.num_heads, c.ffn_dim, c.vocab_size, c.max_seq_len,
                c.num_labels})
    write_i64(out, v);
  auto params = model.named_params();
  write_i64(out, static_cast<std::int64_t>(params.size()));
  for (const NamedParam& p : params) {
    write_i64(out, static_cast<std::int64_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_i64(out, p.tensor.rows());
    write_i64(out, p.tensor.cols());
    out.write(reinterpret_cast<const char*>(p.tensor.value().data()),
              static_cast<std::streamsize>(sizeof(Scalar) * p.tensor.size()));
  }
  if (!out) throw RuntimeFailure("checkpoint write failed: " + path);
}

EncoderModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || std::memcmp(magic, kMagic, 4) != 0 || version != kVersion)
    throw RuntimeFailure("not a distilkit checkpoint: " + path);
  ModelConfig c;
  c.num_layers = static_cast<int>(read_i64(in));
  c.hidden_dim = static_cast<int>(read_i64(in));
  c.num_heads = static_cast<int>(read_i64(in));
  c.ffn_dim = static_cast<int>(read_i64(in));
  c.vocab_size = static_cast<int>(read_i64(in));
  c.max_seq_len = static_cast<int>(read_i64(in));
  c.num_labels = static_cast<int>(read_i64(in));
  EncoderModel model = make_encoder(c, 0);
  std::int64_t n = read_i64(in);
  auto params = model.named_params();
  if (n != static_cast<std::int64_t>(params.size()))
    throw RuntimeFailure("checkpoint parameter count mismatch in " + path);
  for (NamedParam& p : params) {
    std::int64_t name_len = read_i64(in);
    std::string name(static_cast<std::size_t>(name_len), '\0');
    in.read(name.data(), name_len);
    std::int64_t rows = read_i64(in);
    std::int64_t cols = read_i64(in);
    if (name != p.name || rows != p.tensor.rows() || cols != p.tensor.cols())
      throw RuntimeFailure("checkpoint block " + name + " does not match model layout");
    in.read(reinterpret_cast<char*>(p.tensor.value().data()),
            static_cast<std::streamsize>(sizeof(Scalar) * p.tensor.size()));
  }
  if (!in) throw RuntimeFailure("truncated checkpoint: " + path);
  return model;
}

}  // namespace distilkit
