// SPDX-License-Identifier: Apache-2.0
#include "dropping/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dropping/errors.hpp"
#include "dropping/transfer.hpp"

namespace dropping {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (batch_size == 0) throw ConfigError("train: batch size must be positive");
  if (eval_every == 0) throw ConfigError("train: eval_every must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: ADAM betas must lie in [0, 1)");
}

ParamMask trainable_mask(const PairModel& model, const std::function<bool(const std::string&)>& trainable) {
  ParamMask mask;
  model.for_each_parameter([&](const std::string& name, const Tensor&) { mask.push_back(trainable(name) ? 1 : 0); });
  return mask;
}

Adam::Adam(const PairModel& like, const TrainConfig& config)
    : m_(like.zeros_like()),
      v_(like.zeros_like()),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon) {}

void Adam::step(PairModel& model, const PairModel& grads, const ParamMask* mask) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<Tensor*> params, ms, vs;
  std::vector<const Tensor*> gs;
  model.for_each_parameter([&](const std::string&, Tensor& t) { params.push_back(&t); });
  m_.for_each_parameter([&](const std::string&, Tensor& t) { ms.push_back(&t); });
  v_.for_each_parameter([&](const std::string&, Tensor& t) { vs.push_back(&t); });
  grads.for_each_parameter([&](const std::string&, const Tensor& t) { gs.push_back(&t); });
  if (gs.size() != params.size() || (mask && mask->size() != params.size())) {
    throw ShapeError("Adam: parameter/gradient structure mismatch");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (mask && !(*mask)[k]) continue;
    Tensor& p = *params[k];
    Tensor& m = *ms[k];
    Tensor& v = *vs[k];
    const Tensor& g = *gs[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::vector<Probs> predict_all(const PairModel& model, std::span<const EncodedPair> data) {
  std::vector<Probs> out;
  out.reserve(data.size());
  for (const auto& p : data) out.push_back(predict_pair(p.s1, p.s2, model));
  return out;
}

std::vector<Probs> predict_blended(const PairModel& model, std::span<const EncodedPair> data,
                                   const std::vector<Probs>* source, double gamma) {
  std::vector<Probs> out = predict_all(model, data);
  if (!source) return out;
  if (source->size() != out.size()) throw ShapeError("predict_blended: source votes do not cover the data");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = combine_outputs((*source)[i], out[i], gamma);
  return out;
}

Metrics evaluate_model(const PairModel& model, std::span<const EncodedPair> data) {
  std::vector<std::size_t> gold;
  for (const auto& p : data) gold.push_back(p.label);
  return evaluate(predict_all(model, data), gold);
}

double train_batch(PairModel& model, PairModel& grads, Adam& opt, std::span<const EncodedPair> data,
                   std::span<const std::size_t> batch, const ClassWeights& weights, std::mt19937_64& rng,
                   const std::vector<Probs>* source, double gamma, const ParamMask* mask) {
  grads.for_each_parameter([](const std::string&, Tensor& t) { t.fill(0.0); });
  double norm = 0.0;
  for (auto i : batch) norm += weights[data[i].label];
  double total = 0.0;
  Tape tape;
  for (auto i : batch) {
    tape.clear();
    BoundModel bound(tape, model, &grads);
    const EncodedPair& ex = data[i];
    Var logits = bound.logits(ex.s1, ex.s2, rng, true);
    std::span<const double> src;
    if (source) src = (*source)[i];
    Var loss = tape.blended_nll(logits, ex.label, src, gamma);
    const double w = weights[ex.label];
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) throw NumericError("training loss is not finite");
    total += w * value;
    tape.backward(loss, w / norm);
  }
  opt.step(model, grads, mask);
  return total / norm;
}

TrainResult train_model(PairModel& model, std::span<const EncodedPair> train, std::span<const EncodedPair> dev,
                        const TrainConfig& config, const ClassWeights& weights, std::mt19937_64& rng,
                        const ParamMask* mask, const SourceVotes* sources, TrainObserver* observer) {
  config.validate();
  if (train.empty()) throw InputError("train_model: empty training set");
  if (dev.empty()) throw InputError("train_model: empty dev set");
  const ClassWeights w = config.use_class_weights ? weights : ClassWeights::uniform(model.config().classes);
  w.validate();
  if (w.size() != model.config().classes) throw ConfigError("train_model: class weight count does not match model");
  const std::vector<Probs>* train_src = sources ? sources->train : nullptr;
  const std::vector<Probs>* dev_src = sources ? sources->dev : nullptr;
  if (train_src && train_src->size() != train.size()) throw ShapeError("train_model: train source votes size mismatch");

  std::vector<std::size_t> dev_gold;
  for (const auto& p : dev) dev_gold.push_back(p.label);

  TrainResult result;
  result.best_dev_loss = std::numeric_limits<double>::infinity();
  PairModel best = model;
  std::size_t since_best = 0;

  auto run_eval = [&](std::size_t iteration) {
    const double gamma = observer ? observer->gamma() : 0.0;
    const Metrics m = evaluate(predict_blended(model, dev, dev_src, gamma), dev_gold);
    const double error = 1.0 - m.accuracy / 100.0;
    result.history.push_back({iteration, error, m.log_loss});
    if (observer) observer->on_evaluation(iteration, error, m.log_loss);
    if (m.log_loss < result.best_dev_loss) {
      result.best_dev_loss = m.log_loss;
      if (config.early_stopping) best = model;
      since_best = 0;
    } else {
      ++since_best;
    }
    return config.early_stopping && since_best >= config.patience;
  };

  PairModel grads = model.zeros_like();
  Adam opt(model, config);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  bool stop = run_eval(0);
  for (std::size_t epoch = 0; epoch < config.max_epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size() && !stop; start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double gamma = observer ? observer->gamma() : 0.0;
      train_batch(model, grads, opt, train, std::span(order).subspan(start, end - start), w, rng, train_src, gamma, mask);
      ++result.iterations;
      if (result.iterations % config.eval_every == 0) stop = run_eval(result.iterations);
    }
    ++result.epochs;
  }
  result.stopped_early = stop;
  if (config.early_stopping) model = best;
  return result;
}

}  // namespace dropping
