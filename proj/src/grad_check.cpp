#include "distilkit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace distilkit {

namespace {

Scalar eval_plain(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  NoGradScope no_grad;
  Tensor out = f(inputs);
  return out.item();
}

std::vector<Index> coord_subset(Index size, int max_coords) {
  std::vector<Index> coords;
  if (max_coords <= 0 || size <= max_coords) {
    coords.resize(static_cast<std::size_t>(size));
    for (Index i = 0; i < size; ++i) coords[static_cast<std::size_t>(i)] = i;
  } else {
    coords.reserve(static_cast<std::size_t>(max_coords));
    for (int k = 0; k < max_coords; ++k)
      coords.push_back(static_cast<Index>(static_cast<long long>(k) * size / max_coords));
  }
  return coords;
}

}  // namespace

CheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step,
                       double tol, int max_coords_per_input,
                       const std::vector<std::string>& names) {
  if (step <= 0) throw InvalidSize("grad_check: step must be positive");

  Scalar v1 = eval_plain(f, inputs);
  Scalar v2 = eval_plain(f, inputs);
  if (std::memcmp(&v1, &v2, sizeof(Scalar)) != 0)
    throw NonDeterministicFunction("two forward passes disagree: " + std::to_string(v1) +
                                   " vs " + std::to_string(v2));

  for (const Tensor& t : inputs) {
    const_cast<Tensor&>(t).set_requires_grad(true);
    const_cast<Tensor&>(t).zero_grad();
  }
  std::vector<Matrix> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f(inputs);
    tape.backward(loss);
  }
  for (const Tensor& t : inputs) {
    analytic.push_back(t.has_grad() ? t.grad() : Matrix::Zero(t.rows(), t.cols()));
    const_cast<Tensor&>(t).zero_grad();
  }

  CheckReport report;
  report.max_rel_err = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CheckReport::PerInput per;
    per.name = i < names.size() ? names[i] : "input" + std::to_string(i);
    Matrix& value = const_cast<Tensor&>(inputs[i]).value();
    for (Index flat : coord_subset(value.size(), max_coords_per_input)) {
      Index r = flat / value.cols();
      Index c = flat % value.cols();
      Scalar saved = value(r, c);
      value(r, c) = saved + step;
      Scalar up = eval_plain(f, inputs);
      value(r, c) = saved - step;
      Scalar down = eval_plain(f, inputs);
      value(r, c) = saved;
      Scalar numeric = (up - down) / (2.0 * step);
      Scalar a = analytic[i](r, c);
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      if (rel > per.max_rel_err) {
        per.max_rel_err = rel;
        per.worst_row = r;
        per.worst_col = c;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, per.max_rel_err);
    report.inputs.push_back(std::move(per));
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace distilkit
