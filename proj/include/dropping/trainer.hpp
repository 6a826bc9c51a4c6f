// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dropping/data.hpp"
#include "dropping/losses.hpp"
#include "dropping/model.hpp"

namespace dropping {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 20;
  /// Dev evaluation cadence in training iterations (minibatch updates).
  std::size_t eval_every = 20;
  bool early_stopping = true;
  /// Evaluations without dev-loss improvement before stopping.
  std::size_t patience = 5;
  bool use_class_weights = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// Per-parameter trainable flags, in PairModel::for_each_parameter order.
using ParamMask = std::vector<char>;

ParamMask trainable_mask(const PairModel& model, const std::function<bool(const std::string&)>& trainable);

/// ADAM with bias correction.
class Adam {
 public:
  Adam(const PairModel& like, const TrainConfig& config);
  void step(PairModel& model, const PairModel& grads, const ParamMask* mask = nullptr);
  std::size_t steps() const { return t_; }

 private:
  PairModel m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Fixed source-side class probabilities per instance, blended with the model
/// output as gamma * source + (1 - gamma) * model.
struct SourceVotes {
  const std::vector<Probs>* train = nullptr;
  const std::vector<Probs>* dev = nullptr;
};

/// Receives dev evaluations and supplies the blend coefficient.
class TrainObserver {
 public:
  virtual ~TrainObserver() = default;
  virtual double gamma() const { return 0.0; }
  virtual void on_evaluation(std::size_t iteration, double dev_error, double dev_loss) {
    (void)iteration, (void)dev_error, (void)dev_loss;
  }
};

struct EvalPoint {
  std::size_t iteration = 0;
  double dev_error = 0.0;  // fraction misclassified
  double dev_loss = 0.0;
};

struct TrainResult {
  std::size_t iterations = 0;
  std::size_t epochs = 0;
  double best_dev_loss = 0.0;
  bool stopped_early = false;
  std::vector<EvalPoint> history;
};

/// Predicted class probabilities for every instance (inference mode).
std::vector<Probs> predict_all(const PairModel& model, std::span<const EncodedPair> data);

/// Blended predictions: gamma * source + (1 - gamma) * model, per instance.
std::vector<Probs> predict_blended(const PairModel& model, std::span<const EncodedPair> data,
                                   const std::vector<Probs>* source, double gamma);

Metrics evaluate_model(const PairModel& model, std::span<const EncodedPair> data);

/// One ADAM update over `batch` (indices into data). Returns the weighted mean loss.
double train_batch(PairModel& model, PairModel& grads, Adam& opt, std::span<const EncodedPair> data,
                   std::span<const std::size_t> batch, const ClassWeights& weights, std::mt19937_64& rng,
                   const std::vector<Probs>* source, double gamma, const ParamMask* mask);

/// Minibatch training with periodic dev evaluation.
///
/// The dev set is evaluated at iteration 0 and every eval_every iterations. With
/// early stopping the parameters of the best dev-loss evaluation are restored.
/// Throws NumericError if a batch loss is not finite.
TrainResult train_model(PairModel& model, std::span<const EncodedPair> train, std::span<const EncodedPair> dev,
                        const TrainConfig& config, const ClassWeights& weights, std::mt19937_64& rng,
                        const ParamMask* mask = nullptr, const SourceVotes* sources = nullptr,
                        TrainObserver* observer = nullptr);

}  // namespace dropping
