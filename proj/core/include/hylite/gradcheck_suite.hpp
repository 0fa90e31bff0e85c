#pragma once

#include <string>
#include <vector>

namespace hylite {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckSuite {
  std::vector<GradCheckEntry> entries;
  double tol = 1e-4;
  bool pass() const {
    for (const auto& e : entries)
      if (!(e.max_rel_err <= tol)) return false;
    return true;
  }
};

/// Central-difference checks (h = 1e-6) for every differentiable op and for
/// the full tiny-model objective, parameter tensor by parameter tensor.
/// `inject_fault` adds a deliberately broken backward as a negative control.
GradCheckSuite run_gradcheck_suite(bool inject_fault = false);

}  // namespace hylite
