#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "distilkit/encoder.hpp"
#include "distilkit/tensor.hpp"

namespace distilkit {

enum class Term {
  PRED,
  HID_CLS,
  HID_SEQ,
  HID_CONTRAST,
  ATT_MSE,
  ATT_KL,
  VAL_KL,
  SUPERVISED,
};

const char* term_name(Term term);
Term term_from_name(const std::string& name);
bool is_intermediate(Term term);  // hidden-state / attention / value terms

using LayerPair = std::pair<int, int>;  // (teacher_layer, student_layer), 1-based

struct ObjectiveSpec {
  std::set<Term> active;
  double temperature = 1.0;
  double alpha = 0.5;
  double contrast_temperature = 0.1;
  bool pred_t_squared = true;
  std::vector<LayerPair> layer_pairs;

  bool has(Term t) const { return active.count(t) > 0; }
  bool any_intermediate() const;
  void validate() const;
  std::string label() const;  // canonical "TERM+TERM" string for records
};

// Learnable alignment matrices, one per (term, student layer) that needs one.
// Identity-initialized when student and teacher widths match.
class ProjectionSet {
public:
  ProjectionSet() = default;
  static ProjectionSet for_spec(const ObjectiveSpec& spec, int student_dim, int teacher_dim,
                                std::uint64_t seed);
  const Tensor& at(Term term, int student_layer) const;
  std::vector<Tensor> parameters() const;
  bool empty() const { return projections_.empty(); }

private:
  std::map<std::pair<Term, int>, Tensor> projections_;
};

// Soft cross-entropy between temperature-scaled logits, mean over rows.
// Differentiable w.r.t. the student logits only. When t_squared, the result
// carries the usual t^2 factor so its gradient scale is temperature-free.
Tensor pred_loss(const Tensor& teacher_logits, const Tensor& student_logits, double temperature,
                 bool t_squared = true);

enum class HidVariant { CLS, SEQ };

Tensor hid_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                const std::vector<LayerPair>& pairs, const ProjectionSet& proj,
                HidVariant variant);

// In-batch InfoNCE on projected student CLS vs teacher CLS with cosine
// similarity; negatives are the other teachers in the batch.
Tensor contrast_loss(const std::vector<const ForwardTrace*>& student_batch,
                     const std::vector<const ForwardTrace*>& teacher_batch,
                     const std::vector<LayerPair>& pairs, const ProjectionSet& proj, double tau);

Tensor att_mse_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                    const std::vector<LayerPair>& pairs);

Tensor att_kl_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                   const std::vector<LayerPair>& pairs);

Tensor val_kl_loss(const ForwardTrace& student, const ForwardTrace& teacher,
                   const std::vector<LayerPair>& pairs);

// alpha * supervised + (1 - alpha) * pred when both are active; intermediate
// terms enter with unit weight.
Tensor combine(const ObjectiveSpec& spec, const std::map<Term, Tensor>& losses);

// Hard-label cross entropy for the SUPERVISED term.
Tensor supervised_loss(const Tensor& logits, int label);
// Mean cross entropy of per-position vocabulary logits against target ids.
Tensor mlm_loss(const Tensor& position_logits, const std::vector<int>& target_ids);

}  // namespace distilkit
