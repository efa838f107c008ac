#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pvxl/params.hpp"
#include "pvxl/tensor.hpp"

namespace pvxl {

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t coordinates = 0;
};

/// Builds a scalar objective on `tape` from leaves bound to `params`.
using GradObjective = std::function<Var<double>(Tape<double>& tape, const std::vector<Var<double>>& params)>;

/// Compares tape gradients against central differences with step `eps`.
/// Error per coordinate is |a - c| / max(|a|, |c|, floor); the report holds
/// the maximum. `f` must be deterministic (freeze any noise outside it).
GradCheckReport finite_diff_check(const GradObjective& f, std::vector<Tensor<double>> params,
                                  double eps = 1e-4, double floor = 1e-8);

/// Objective over a named parameter set.
using ParamObjective = std::function<Var<double>(const Binder<double>& params)>;

/// finite_diff_check over every coordinate of `params`.
GradCheckReport finite_diff_check_params(const ParamObjective& f, const ParamSet<double>& params, double eps = 1e-4,
                                         double floor = 1e-8);

}  // namespace pvxl
