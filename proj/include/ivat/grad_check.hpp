#pragma once

// Central-difference gradient verification. The builder function must be a
// deterministic pure function of the current parameter values; it is called
// once under a fresh tape for analytic gradients and 2N more times, tape
// suppressed, for the numeric estimates.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ivat/error.hpp"
#include "ivat/tensor.hpp"

namespace ivat {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  bool pass = false;
};

inline double rel_err(double analytic, double numeric) {
  double denom = std::max(std::fabs(analytic), std::max(std::fabs(numeric), 1e-8));
  return std::fabs(analytic - numeric) / denom;
}

// Components whose analytic/numeric difference is below abs_tol sit under the
// finite-difference noise floor (the loss changes by less than one ulp over
// 2h) and are not scored; real gradient bugs show up at the gradient's own
// magnitude and still trip the relative test.
inline GradCheckReport grad_check(const std::string& name, std::vector<Tensor> params,
                                  const std::function<Tensor()>& build, double h = 1e-5,
                                  double tol = 1e-4, double abs_tol = 1e-9) {
  if (params.empty()) raise(ErrorKind::contract, "grad_check: no parameters");
  if (h <= 0.0 || tol <= 0.0) raise(ErrorKind::value, "grad_check: h and tol must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = build();
    tape.backward(loss);
  }
  for (auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  report.name = name;
  report.tolerance = tol;
  NoTape guard;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi].value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      double saved = value[i];
      value[i] = saved + h;
      double fp = build().item();
      value[i] = saved - h;
      double fm = build().item();
      value[i] = saved;
      double numeric = (fp - fm) / (2.0 * h);
      double e = std::fabs(analytic[pi][i] - numeric) <= abs_tol ? 0.0
                                                                 : rel_err(analytic[pi][i], numeric);
      if (e > report.max_rel_err) {
        report.max_rel_err = e;
        report.worst_param = pi;
        report.worst_index = i;
      }
      ++report.checked;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace ivat
