// SPDX-License-Identifier: Apache-2.0
#include "dropping/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dropping/errors.hpp"

namespace dropping {

double gradient_check(const ScalarGraph& f, std::span<const ParamRef> params, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-4)) throw ConfigError("gradient_check: eps must lie in [1e-6, 1e-4]");
  for (const auto& p : params) p.grad->fill(0.0);

  Tape tape;
  tape.backward(f(tape));
  for (const auto& p : params) check_finite(*p.grad, "analytic gradient");

  auto evaluate = [&] {
    tape.clear();
    return tape.value(f(tape))[0];
  };

  double worst = 0.0;
  for (const auto& p : params) {
    Tensor& value = *p.value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = evaluate();
      value[i] = saved - eps;
      const double down = evaluate();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      if (!std::isfinite(numeric)) throw NumericError("gradient_check: non-finite numeric gradient");
      const double analytic = (*p.grad)[i];
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace dropping
