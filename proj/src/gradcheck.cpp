#include "pvxl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pvxl {

namespace {

double evaluate(const GradObjective& f, const std::vector<Tensor<double>>& params) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p, false));
  return f(tape, leaves).item();
}

}  // namespace

GradCheckReport finite_diff_check(const GradObjective& f, std::vector<Tensor<double>> params, double eps,
                                  double floor) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    Var<double> root = f(tape, leaves);
    tape.backward(root);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + eps;
      const double fp = evaluate(f, params);
      params[p][i] = orig - eps;
      const double fm = evaluate(f, params);
      params[p][i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        if (err >= report.max_rel_error) {
          report.worst_param = p;
          report.worst_index = i;
          report.analytic = a;
          report.numeric = numeric;
        }
      }
    }
  }
  return report;
}

GradCheckReport finite_diff_check_params(const ParamObjective& f, const ParamSet<double>& params, double eps,
                                         double floor) {
  std::vector<Tensor<double>> values;
  for (std::size_t i = 0; i < params.size(); ++i) values.push_back(params.at(i));
  return finite_diff_check(
      [&](Tape<double>& tape, const std::vector<Var<double>>& leaves) {
        return f(Binder<double>(tape, params, std::span<const Var<double>>(leaves)));
      },
      std::move(values), eps, floor);
}

}  // namespace pvxl
