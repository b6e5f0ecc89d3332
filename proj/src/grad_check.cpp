#include "cdon/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cdon {

namespace {

real evaluate(const ScalarClosure& f, const std::vector<Tensor4>& inputs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor4& t : inputs) vars.push_back(g.constant(t));
  const Var out = f(g, vars);
  if (g.value(out).size() != 1) throw UsageError("grad_check: closure must return a scalar");
  return g.value(out)[0];
}

}  // namespace

GradCheckReport grad_check(const ScalarClosure& f, const std::vector<Tensor4>& inputs,
                           const GradCheckOptions& options) {
  GradCheckReport report;

  Graph g;
  std::vector<Var> vars;
  for (const Tensor4& t : inputs) vars.push_back(g.variable(t));
  const Var out = f(g, vars);
  g.backward(out);
  const real f0 = g.value(out)[0];

  if (evaluate(f, inputs) != f0 || evaluate(f, inputs) != f0) {
    report.reliable = false;
    return report;
  }

  std::vector<Tensor4> probe = inputs;
  const real h = options.step;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const std::size_t n = inputs[t].size();
    std::size_t stride = 1;
    if (options.max_probes_per_input > 0 && n > options.max_probes_per_input) {
      stride = (n + options.max_probes_per_input - 1) / options.max_probes_per_input;
    }
    const bool reached = g.has_grad(vars[t]);
    for (std::size_t i = 0; i < n; i += stride) {
      const real x = inputs[t][i];
      probe[t][i] = x + h;
      const real fp = evaluate(f, probe);
      probe[t][i] = x - h;
      const real fm = evaluate(f, probe);
      probe[t][i] = x;

      GradCheckEntry e;
      e.input = t;
      e.index = i;
      e.analytic = reached ? g.grad(vars[t])[i] : real(0);
      e.numeric = (fp - fm) / (2 * h);
      const real left = (f0 - fm) / h;
      const real right = (fp - f0) / h;
      const real slope_scale = std::max({real(1), std::abs(left), std::abs(right)});
      if (std::abs(left - right) > options.kink_tol * slope_scale) {
        e.skipped = true;
        ++report.skipped;
      } else {
        const real denom =
            std::max({std::abs(e.analytic), std::abs(e.numeric), options.scale_floor});
        e.rel_error = std::abs(e.analytic - e.numeric) / denom;
        report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
        ++report.checked;
      }
      report.entries.push_back(e);
    }
  }
  report.passed = report.reliable && report.max_rel_error < options.tol;
  return report;
}

}  // namespace cdon
