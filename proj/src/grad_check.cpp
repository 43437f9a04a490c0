#include "vipt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vipt {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const MultiScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  const Var out = f(tape, vars);
  if (out.value().size() != 1) throw DimensionError("grad_check: function must return a scalar");
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw std::domain_error("grad_check: function is not finite at a probe point");
  return v;
}

}  // namespace

GradCheckReport grad_check(const MultiScalarFn& f, std::vector<Tensor> inputs,
                           const std::vector<bool>& checked, double h) {
  if (checked.size() != inputs.size()) throw std::invalid_argument("grad_check: mask/input count mismatch");

  std::vector<Tensor> analytic(inputs.size());
  {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], checked[i]));
    const Var out = f(tape, vars);
    if (!std::isfinite(out.value()[0])) throw std::domain_error("grad_check: function is not finite at x");
    tape.backward(out);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!checked[i]) continue;
      analytic[i] = vars[i].grad().empty() ? Tensor::zeros(inputs[i].shape()) : vars[i].grad();
    }
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!checked[i]) continue;
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double fp = evaluate(f, inputs);
      inputs[i][j] = saved - h;
      const double fm = evaluate(f, inputs);
      inputs[i][j] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = relative_error(analytic[i][j], numeric);
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_index = j;
        report.worst_analytic = analytic[i][j];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double h) {
  return grad_check([&f](Tape& t, const std::vector<Var>& v) { return f(t, v[0]); }, {x}, {true}, h);
}

}  // namespace vipt
