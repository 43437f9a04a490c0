#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "vipt/tape.hpp"
#include "vipt/tensor.hpp"

namespace vipt {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var(Tape&, const Var&)>;
using MultiScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares reverse-mode gradients against central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
// Throws std::domain_error if f is non-finite at any probe.
GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// Same, over several inputs; only the inputs with `checked[i]` are tracked
// and perturbed, the rest enter the tape as constants.
GradCheckReport grad_check(const MultiScalarFn& f, std::vector<Tensor> inputs,
                           const std::vector<bool>& checked, double h = 1e-5);

}  // namespace vipt
