#pragma once

#include <string>
#include <vector>

namespace dann {

enum class FaultInjection { None, ConvInputSignFlip };

struct GradCheckItem {
  std::string name;
  double worst_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckItem> items;
  bool all_pass = false;
  double seconds = 0.0;
};

// Checks every layer's analytic backward against central finite differences
// in 64-bit mode, then probes the full objective (label loss minus
// lambda * domain loss) through the real network. The fault hook exists so
// tests can confirm the harness catches a broken backward pass.
GradCheckReport run_gradient_checks(int num_seeds = 5, double tolerance = 1e-4,
                                    FaultInjection fault = FaultInjection::None);

}  // namespace dann
