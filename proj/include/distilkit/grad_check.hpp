#pragma once

#include <functional>
#include <string>
#include <vector>

#include "distilkit/tensor.hpp"

namespace distilkit {

// Scalar-valued function of the given tensors. The callable must read the
// tensors it is handed (not copies), so parameters threaded through a model
// can be checked in place.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct CheckReport {
  struct PerInput {
    std::string name;
    double max_rel_err = 0.0;
    Index worst_row = 0;
    Index worst_col = 0;
  };
  std::vector<PerInput> inputs;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Central-difference gradient check. Compares analytic gradients from one
// backward pass against (f(x+h) - f(x-h)) / 2h per coordinate, using
// rel_err = |a - n| / max(|a|, |n|, 1).
//
// Runs f twice up front and raises NonDeterministicFunction when the two
// values differ bitwise. Perturbs input values in place (restoring them) and
// clears the inputs' gradients.
//
// max_coords_per_input = 0 checks every coordinate; a positive value checks a
// deterministic evenly spaced subset, for large parameter tensors.
CheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& inputs, double step,
                       double tol, int max_coords_per_input = 0,
                       const std::vector<std::string>& names = {});

}  // namespace distilkit
