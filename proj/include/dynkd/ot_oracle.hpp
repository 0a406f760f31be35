#pragma once

#include <span>

#include "dynkd/tensor.hpp"

namespace dynkd {

/// Exact Wasserstein-1 between two uniform empirical distributions on the real
/// line, solved as a discrete transportation LP (min-cost flow on the complete
/// bipartite graph, integral after scaling masses by |x|*|y|). Shares no code
/// with the sorting estimator; meant as a test oracle for small instances.
///
/// Throws InputError for empty or non-finite input and RefusalError when
/// either side has more than 64 points.
real ot_lp_oracle(std::span<const real> x, std::span<const real> y);

inline constexpr std::size_t kOtOracleMaxPoints = 64;

}  // namespace dynkd
