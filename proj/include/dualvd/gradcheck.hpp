#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "dualvd/autodiff.hpp"
#include "dualvd/params.hpp"

namespace dualvd {

using ScalarFn = std::function<Var(Params&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::map<std::string, double> per_param;  // max relative error per parameter
  std::size_t entries_checked = 0;
};

namespace detail {

inline double eval_scalar(const ScalarFn& f, const ParamStore& point) {
  Tape tape(false);
  Params params(tape, point);
  const double v = f(params).value()[0];
  if (!std::isfinite(v)) throw EvaluationError("grad_check: objective is not finite");
  return v;
}

}  // namespace detail

// Compares reverse-mode gradients of `f` at `point` against central
// differences, entry by entry, for every parameter `f` touches. The error
// per entry is |autodiff − numeric| / max(1, |numeric|).
inline GradCheckReport grad_check(const ScalarFn& f, const ParamStore& point, double h = 1e-6) {
  ParamStore grads;
  {
    Tape tape;
    Params params(tape, point);
    Var y = f(params);
    if (y.value().size() != 1) throw DimensionError("grad_check: objective must be scalar");
    if (!std::isfinite(y.value()[0])) throw EvaluationError("grad_check: objective is not finite");
    tape.backward(y);
    grads = params.gradients();
  }

  GradCheckReport report;
  ParamStore probe = point;
  for (const auto& [name, g] : grads.entries()) {
    Tensor& p = probe.at(name);
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = detail::eval_scalar(f, probe);
      p[i] = orig - h;
      const double down = detail::eval_scalar(f, probe);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
      }
      worst = std::max(worst, err);
      ++report.entries_checked;
    }
    report.per_param[name] = worst;
  }
  return report;
}

}  // namespace dualvd
