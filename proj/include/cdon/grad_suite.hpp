#pragma once

#include <string>
#include <vector>

#include "cdon/grad_check.hpp"

namespace cdon {

struct GradSuiteResult {
  std::string op;
  GradCheckReport report;
};

/// Names accepted by run_grad_suite, in execution order.
std::vector<std::string> grad_suite_ops();

/// Central-difference checks of every differentiable op on small seeded
/// random inputs. `only` restricts the run to one op; unknown names throw
/// ConfigError.
std::vector<GradSuiteResult> run_grad_suite(const std::string& only = "",
                                            const GradCheckOptions& options = {});

}  // namespace cdon
