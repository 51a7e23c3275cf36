#include "distilkit/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "distilkit/rng.hpp"

namespace distilkit {

namespace {

constexpr Scalar kProbFloor = 1e-12;

void check_pair_bounds(const std::vector<LayerPair>& pairs, const ForwardTrace& student,
                       const ForwardTrace& teacher) {
  if (pairs.empty()) throw MissingProjection("no layer pairs configured");
  for (const auto& [tl, sl] : pairs) {
    if (tl < 1 || tl > static_cast<int>(teacher.hidden_states.size()))
      throw LengthMismatch("teacher layer " + std::to_string(tl) + " out of range");
    if (sl < 1 || sl > static_cast<int>(student.hidden_states.size()))
      throw LengthMismatch("student layer " + std::to_string(sl) + " out of range");
  }
}

void check_traces_aligned(const ForwardTrace& student, const ForwardTrace& teacher) {
  if (student.seq_len != teacher.seq_len || student.valid_positions != teacher.valid_positions)
    throw LengthMismatch("student and teacher traces cover different sequences");
}

void check_head_counts(const ForwardTrace& student, const ForwardTrace& teacher) {
  if (student.attn_scores.empty() || teacher.attn_scores.empty() ||
      student.attn_scores[0].size() != teacher.attn_scores[0].size())
    throw HeadCountMismatch("student and teacher head counts differ");
}

// sum_j p_j ln p_j with the 0 * ln 0 := 0 convention
Scalar neg_entropy(const Matrix& p) {
  Scalar acc = 0.0;
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0.0) acc += p(i, j) * std::log(p(i, j));
  return acc;
}

// KL(p_const || q) summed over all rows: constant teacher part plus the
// -sum(p * ln q) graph part with the student floored at kProbFloor.
Tensor kl_rows(const Matrix& p, const Tensor& q) {
  Tensor cross = scale(sum(mul(Tensor::from_matrix(p), log_floor(q, kProbFloor))), -1.0);
  return add_scalar(cross, neg_entropy(p));
}

}  // namespace

const char* term_name(Term term) {
  switch (term) {
    case Term::PRED: return "PRED";
    case Term::HID_CLS: return "HID_CLS";
    case Term::HID_SEQ: return "HID_SEQ";
    case Term::HID_CONTRAST: return "HID_CONTRAST";
    case Term::ATT_MSE: return "ATT_MSE";
    case Term::ATT_KL: return "ATT_KL";
    case Term::VAL_KL: return "VAL_KL";
    case Term::SUPERVISED: return "SUPERVISED";
  }
  return "UNKNOWN";
}

Term term_from_name(const std::string& name) {
  for (Term t : {Term::PRED, Term::HID_CLS, Term::HID_SEQ, Term::HID_CONTRAST, Term::ATT_MSE,
                 Term::ATT_KL, Term::VAL_KL, Term::SUPERVISED})
    if (name == term_name(t)) return t;
  throw ConfigInvalid("unknown objective term: " + name);
}

bool is_intermediate(Term term) {
  switch (term) {
    case Term::HID_CLS:
    case Term::HID_SEQ:
    case Term::HID_CONTRAST:
    case Term::ATT_MSE:
    case Term::ATT_KL:
    case Term::VAL_KL:
      return true;
    default:
      return false;
  }
}

bool ObjectiveSpec::any_intermediate() const {
  for (Term t : active)
    if (is_intermediate(t)) return true;
  return false;
}

void ObjectiveSpec::validate() const {
  if (active.empty()) throw MissingTerm("objective has no active terms");
  if (temperature <= 0) throw NonpositiveTemperature("temperature must be > 0");
  if (contrast_temperature <= 0) throw NonpositiveTemperature("tau must be > 0");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigInvalid("alpha must lie in [0, 1]");
  if (any_intermediate() && layer_pairs.empty())
    throw MissingProjection("intermediate terms need layer pairs");
  for (const auto& [tl, sl] : layer_pairs)
    if (tl < 1 || sl < 1) throw ConfigInvalid("layer pairs are 1-based");
}

std::string ObjectiveSpec::label() const {
  std::string out;
  for (Term t : active) {
    if (!out.empty()) out += "+";
    out += term_name(t);
  }
  return out;
}

ProjectionSet ProjectionSet::for_spec(const ObjectiveSpec& spec, int student_dim, int teacher_dim,
                                      std::uint64_t seed) {
  ProjectionSet set;
  Rng rng(seed);
  for (Term term : {Term::HID_CLS, Term::HID_SEQ, Term::HID_CONTRAST}) {
    if (!spec.has(term)) continue;
    for (const auto& [tl, sl] : spec.layer_pairs) {
      (void)tl;
      auto key = std::make_pair(term, sl);
      if (set.projections_.count(key)) continue;
      Matrix w;
      if (student_dim == teacher_dim) {
        w = Matrix::Identity(student_dim, teacher_dim);
      } else {
        w.resize(student_dim, teacher_dim);
        for (Index i = 0; i < w.rows(); ++i)
          for (Index j = 0; j < w.cols(); ++j) w(i, j) = rng.normal(0.0, 0.02);
      }
      set.projections_.emplace(key, Tensor::from_matrix(std::move(w), true));
    }
  }
  return set;
}

const Tensor& ProjectionSet::at(Term term, int student_layer) const {
  auto it = projections_.find({term, student_layer});
  if (it == projections_.end())
    throw MissingProjection(std::string(term_name(term)) + " projection for student layer " +
                            std::to_string(student_layer));
  return it->second;
}

std::vector<Tensor> ProjectionSet::parameters() const {
  std::vector<Tensor> out;
  for (const auto& [key, tensor] : projections_) out.push_back(tensor);
  return out;
}

Tensor pred_loss(const Tensor& teacher_logits, const Tensor& student_logits, double temperature,
                 bool t_squared) {
  if (temperature <= 0) throw NonpositiveTemperature(std::to_string(temperature));
  if (teacher_logits.rows() != student_logits.rows() ||
      teacher_logits.cols() != student_logits.cols())
    throw ShapeMismatch("teacher and student logits differ in shape");
  Tensor zt = teacher_logits.detach();
  Tensor soft_targets;
  {
    NoGradScope no_grad;
    soft_targets = softmax(scale(zt, 1.0 / temperature), 1);
  }
  Tensor log_probs = log_softmax(scale(student_logits, 1.0 / temperature), 1);
  Tensor ce = scale(sum(mul(soft_targets, log_probs)),
                    -1.0 / static_cast<Scalar>(student_logits.rows()));
  return t_squared ? scale(ce, temperature * temperature) : ce;
}

Tensor hid_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                const std::vector<LayerPair>& pairs, const ProjectionSet& proj,
                HidVariant variant) {
  check_traces_aligned(student, teacher);
  check_pair_bounds(pairs, student, teacher);
  const Term term = variant == HidVariant::CLS ? Term::HID_CLS : Term::HID_SEQ;
  Tensor acc;
  for (const auto& [tl, sl] : pairs) {
    const Tensor& w = proj.at(term, sl);
    Tensor hs, ht;
    if (variant == HidVariant::CLS) {
      hs = select_rows(student.hidden_states[sl - 1], {0});
      ht = select_rows(teacher.hidden_states[tl - 1], {0});
    } else {
      hs = select_rows(student.hidden_states[sl - 1], student.valid_positions);
      ht = select_rows(teacher.hidden_states[tl - 1], teacher.valid_positions);
    }
    Tensor term_loss = mse(matmul(hs, w), ht.detach());
    acc = acc.defined() ? add(acc, term_loss) : term_loss;
  }
  return scale(acc, 1.0 / static_cast<Scalar>(pairs.size()));
}

Tensor contrast_loss(const std::vector<const ForwardTrace*>& student_batch,
                     const std::vector<const ForwardTrace*>& teacher_batch,
                     const std::vector<LayerPair>& pairs, const ProjectionSet& proj, double tau) {
  if (tau <= 0) throw NonpositiveTemperature("tau " + std::to_string(tau));
  if (student_batch.size() != teacher_batch.size())
    throw LengthMismatch("student and teacher batches differ in size");
  const std::size_t batch = student_batch.size();
  if (batch < 2) throw BatchTooSmall("contrastive loss needs at least one negative");
  if (pairs.empty()) throw MissingProjection("no layer pairs configured");

  Tensor acc;
  int count = 0;
  for (const auto& [tl, sl] : pairs) {
    // teacher CLS rows as constants, with precomputed norms
    std::vector<Matrix> t_cls(batch);
    std::vector<Scalar> t_norm(batch);
    for (std::size_t j = 0; j < batch; ++j) {
      t_cls[j] = teacher_batch[j]->hidden_states[tl - 1].value().row(0);
      t_norm[j] = std::max(t_cls[j].norm(), kProbFloor);
    }
    const Tensor& w = proj.at(Term::HID_CONTRAST, sl);
    for (std::size_t i = 0; i < batch; ++i) {
      Tensor projected = matmul(select_rows(student_batch[i]->hidden_states[sl - 1], {0}), w);
      Tensor s_norm = sqrt(add_scalar(sum(mul(projected, projected)), kProbFloor));
      std::vector<Tensor> sims;
      for (std::size_t j = 0; j < batch; ++j) {
        Tensor dot = sum(mul(projected, Tensor::from_matrix(t_cls[j])));
        Tensor cosine = scale_by(dot, recip(scale(s_norm, t_norm[j])));
        sims.push_back(scale(cosine, 1.0 / tau));
      }
      Tensor log_p = log_softmax(concat_cols(sims), 1);
      Tensor anchor = scale(select_cols(log_p, {static_cast<Index>(i)}), -1.0);
      acc = acc.defined() ? add(acc, anchor) : anchor;
      ++count;
    }
  }
  return scale(sum(acc), 1.0 / static_cast<Scalar>(count));
}

Tensor att_mse_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                    const std::vector<LayerPair>& pairs) {
  check_traces_aligned(student, teacher);
  check_head_counts(student, teacher);
  check_pair_bounds(pairs, student, teacher);
  const std::size_t heads = student.attn_scores[0].size();
  const std::vector<Index>& valid = student.valid_positions;
  Tensor acc;
  for (const auto& [tl, sl] : pairs) {
    for (std::size_t h = 0; h < heads; ++h) {
      // masked query rows and key columns are excluded from the mean
      Tensor s = select_cols(select_rows(student.attn_scores[sl - 1][h], valid), valid);
      Tensor t = select_cols(select_rows(teacher.attn_scores[tl - 1][h], valid), valid);
      Tensor head_loss = mse(s, t.detach());
      acc = acc.defined() ? add(acc, head_loss) : head_loss;
    }
  }
  return scale(acc, 1.0 / static_cast<Scalar>(pairs.size() * heads));
}

Tensor att_kl_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                   const std::vector<LayerPair>& pairs) {
  check_traces_aligned(student, teacher);
  check_head_counts(student, teacher);
  check_pair_bounds(pairs, student, teacher);
  const std::size_t heads = student.attn_probs[0].size();
  const std::vector<Index>& valid = student.valid_positions;
  Tensor acc;
  for (const auto& [tl, sl] : pairs) {
    for (std::size_t h = 0; h < heads; ++h) {
      Matrix p = select_rows(teacher.attn_probs[tl - 1][h], valid).value();
      for (Index i = 0; i < p.rows(); ++i)
        if (std::abs(p.row(i).sum() - 1.0) > 1e-6)
          throw InvalidDistribution("teacher attention row does not sum to 1");
      Tensor q = select_rows(student.attn_probs[sl - 1][h], valid);
      Tensor head_kl = kl_rows(p, q);
      acc = acc.defined() ? add(acc, head_kl) : head_kl;
    }
  }
  const Scalar rows = static_cast<Scalar>(valid.size());
  return scale(acc, 1.0 / (static_cast<Scalar>(pairs.size() * heads) * rows));
}

Tensor val_kl_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                   const std::vector<LayerPair>& pairs) {
  check_traces_aligned(student, teacher);
  if (student.values.empty() || teacher.values.empty() ||
      student.values[0].size() != teacher.values[0].size())
    throw HeadCountMismatch("student and teacher head counts differ");
  check_pair_bounds(pairs, student, teacher);
  const std::size_t heads = student.values[0].size();
  const std::vector<Index>& valid = student.valid_positions;
  Tensor acc;
  for (const auto& [tl, sl] : pairs) {
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor vs = select_rows(student.values[sl - 1][h], valid);
      Tensor vt = select_rows(teacher.values[tl - 1][h], valid).detach();
      const Scalar inv_sqrt = 1.0 / std::sqrt(static_cast<Scalar>(vs.cols()));
      Tensor rel_s = softmax(scale(matmul(vs, transpose(vs)), inv_sqrt), 1);
      Matrix rel_t;
      {
        NoGradScope no_grad;
        rel_t = softmax(scale(matmul(vt, transpose(vt)), inv_sqrt), 1).value();
      }
      Tensor head_kl = kl_rows(rel_t, rel_s);
      acc = acc.defined() ? add(acc, head_kl) : head_kl;
    }
  }
  const Scalar rows = static_cast<Scalar>(valid.size());
  return scale(acc, 1.0 / (static_cast<Scalar>(pairs.size() * heads) * rows));
}

Tensor combine(const ObjectiveSpec& spec, const std::map<Term, Tensor>& losses) {
  spec.validate();
  for (Term t : spec.active)
    if (losses.find(t) == losses.end())
      throw MissingTerm(std::string("no loss supplied for ") + term_name(t));

  Tensor acc;
  auto accumulate = [&acc](const Tensor& t) { acc = acc.defined() ? add(acc, t) : t; };

  const bool mix = spec.has(Term::PRED) && spec.has(Term::SUPERVISED);
  for (Term t : spec.active) {
    const Tensor& loss = losses.at(t);
    if (mix && t == Term::SUPERVISED)
      accumulate(scale(loss, spec.alpha));
    else if (mix && t == Term::PRED)
      accumulate(scale(loss, 1.0 - spec.alpha));
    else
      accumulate(loss);
  }
  return acc;
}

Tensor supervised_loss(const Tensor& logits, int label) {
  if (label < 0 || label >= logits.cols())
    throw PositionOutOfRange("label " + std::to_string(label) + " outside logit width " +
                             std::to_string(logits.cols()));
  Tensor log_probs = log_softmax(logits, 1);
  return scale(select_cols(select_rows(log_probs, {0}), {label}), -1.0);
}

Tensor mlm_loss(const Tensor& position_logits, const std::vector<int>& target_ids) {
  if (static_cast<Index>(target_ids.size()) != position_logits.rows())
    throw LengthMismatch("one target id per masked position required");
  if (target_ids.empty()) return Tensor::scalar(0.0);
  Tensor log_probs = log_softmax(position_logits, 1);
  Tensor acc;
  for (std::size_t i = 0; i < target_ids.size(); ++i) {
    Tensor row = select_rows(log_probs, {static_cast<Index>(i)});
    Tensor picked = select_cols(row, {target_ids[i]});
    acc = acc.defined() ? add(acc, picked) : picked;
  }
  return scale(acc, -1.0 / static_cast<Scalar>(target_ids.size()));
}

}  // namespace distilkit
