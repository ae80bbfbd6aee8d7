#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace convnorm {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t seeds = 0;
  std::size_t tensors = 0;  // distinct inputs/parameters checked per seed

  bool passed() const { return max_rel_error < kGradCheckTolerance; }
};

// Double-precision central-difference checks of every differentiable op and
// all three normalization layers (inputs and parameters), each over `seeds`
// random draws. The scalar under test is a random linear functional of the
// op output so no gradient is trivially zero.
std::vector<GradCheckEntry> run_gradcheck_suite(std::size_t seeds = 10,
                                                std::uint64_t base_seed = 1);

}  // namespace convnorm
