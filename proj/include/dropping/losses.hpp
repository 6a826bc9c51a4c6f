// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace dropping {

using Probs = std::vector<double>;

/// Positive per-class loss weights.
struct ClassWeights {
  std::vector<double> weights;

  static ClassWeights uniform(std::size_t classes) { return {std::vector<double>(classes, 1.0)}; }
  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t c) const { return weights[c]; }
  void validate() const;
};

/// Mean negative log-likelihood of the gold class; probabilities clamped at 1e-12.
double cross_entropy(const std::vector<Probs>& pred, const std::vector<std::size_t>& gold);

/// Class-weighted NLL normalised by the total weight of the gold labels.
double weighted_nll(const std::vector<Probs>& pred, const std::vector<std::size_t>& gold, const ClassWeights& w);

struct Metrics {
  double accuracy = 0.0;  // percent
  double log_loss = 0.0;
};

/// Index of the largest probability; ties go to the lowest index.
std::size_t argmax(const Probs& p);

Metrics evaluate(const std::vector<Probs>& pred, const std::vector<std::size_t>& gold);

}  // namespace dropping
