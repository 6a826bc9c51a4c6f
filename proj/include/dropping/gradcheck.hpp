// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>

#include "dropping/tape.hpp"

namespace dropping {

struct ParamRef {
  Tensor* value;
  Tensor* grad;
};

/// Builds a scalar graph on the tape. Must register each checked parameter as a
/// leaf whose sink is the matching ParamRef::grad, and must be deterministic.
using ScalarGraph = std::function<Var(Tape&)>;

/// Max over all parameter entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// with numeric gradients from central differences of step eps.
double gradient_check(const ScalarGraph& f, std::span<const ParamRef> params, double eps = 1e-5);

}  // namespace dropping
