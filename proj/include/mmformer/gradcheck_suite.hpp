#pragma once

#include <functional>
#include <string>
#include <vector>

namespace mmf {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  bool passed = false;
};

/// Finite-difference checks of every differentiable op (tolerance 1e-3) and
/// of the full tiny-network loss (tolerance 1e-2). `on_entry` sees each
/// result as soon as it is computed.
std::vector<GradCheckEntry> run_gradcheck_suite(const std::function<void(const GradCheckEntry&)>& on_entry = {});

}  // namespace mmf
