#pragma once

// Self-checks shared by the command line and the acceptance run.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvxl/rbm.hpp"

namespace pvxl {

struct CheckResult {
  std::string name;
  double error = 0;
  double tolerance = 0;
  bool passed() const { return error < tolerance; }
};

/// Central-difference checks in 64-bit mode: every differentiable tensor
/// op, both pixel likelihoods, the relaxation, a gated layer, and the full
/// relaxed bound with exact log Z and frozen noise. Errors are maximum
/// relative errors; tolerance 1e-4 throughout.
std::vector<CheckResult> gradient_suite(std::uint64_t seed = 1);

/// W, a and b drawn uniformly from [lo, hi].
RbmParams random_rbm(std::size_t m, std::size_t k, double lo, double hi, std::uint64_t seed);

struct AisCheck {
  int steps = 0;
  double estimate = 0;
  double exact = 0;
  double error = 0;
  double ess = 0;
  double seconds = 0;
};

/// AIS estimates for each ladder length against enumeration.
std::vector<AisCheck> check_ais(const RbmParams& p, std::span<const int> steps, int updates, int chains,
                                std::uint64_t seed);

}  // namespace pvxl
