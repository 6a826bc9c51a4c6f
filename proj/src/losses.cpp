// SPDX-License-Identifier: Apache-2.0
#include "dropping/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dropping/errors.hpp"

namespace dropping {

namespace {

constexpr double kProbFloor = 1e-12;

void check_batch(const std::vector<Probs>& pred, const std::vector<std::size_t>& gold) {
  if (pred.empty()) throw InputError("loss: empty batch");
  if (pred.size() != gold.size()) {
    throw InputError("loss: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gold.size()) +
                     " labels");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gold[i] >= pred[i].size()) throw InputError("loss: gold label outside class range");
  }
}

double instance_nll(const Probs& p, std::size_t gold) { return -std::log(std::max(p[gold], kProbFloor)); }

}  // namespace

void ClassWeights::validate() const {
  if (weights.empty()) throw ConfigError("class weights: empty weight vector");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("class weights must be positive and finite");
  }
}

double cross_entropy(const std::vector<Probs>& pred, const std::vector<std::size_t>& gold) {
  check_batch(pred, gold);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += instance_nll(pred[i], gold[i]);
  return total / static_cast<double>(pred.size());
}

double weighted_nll(const std::vector<Probs>& pred, const std::vector<std::size_t>& gold, const ClassWeights& w) {
  check_batch(pred, gold);
  w.validate();
  double total = 0.0;
  double norm = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (w.size() != pred[i].size()) {
      throw ConfigError("weighted_nll: " + std::to_string(w.size()) + " class weights for " +
                        std::to_string(pred[i].size()) + " classes");
    }
    total += w[gold[i]] * instance_nll(pred[i], gold[i]);
    norm += w[gold[i]];
  }
  return total / norm;
}

std::size_t argmax(const Probs& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

Metrics evaluate(const std::vector<Probs>& pred, const std::vector<std::size_t>& gold) {
  check_batch(pred, gold);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += argmax(pred[i]) == gold[i];
  return {100.0 * static_cast<double>(correct) / static_cast<double>(pred.size()), cross_entropy(pred, gold)};
}

}  // namespace dropping
