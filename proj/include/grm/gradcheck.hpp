#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace grm {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Central-difference check of every primitive plus the GRPO-RM loss (all
/// reward modes, both tasks) and the cross-entropy loss on a 2->8->4 model
/// with a batch of 4.
std::vector<GradCheckCase> run_gradcheck_suite(double threshold = 1e-4,
                                               std::uint64_t seed = 7);

}  // namespace grm
