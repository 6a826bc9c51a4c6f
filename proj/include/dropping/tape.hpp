// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "dropping/tensor.hpp"

namespace dropping {

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode differentiation record.
///
/// Nodes are appended in evaluation order, so a node's parents always precede
/// it and backward() is a single reverse sweep. Parameter leaves carry a
/// pointer to an external gradient buffer; backward() accumulates into it.
/// The tape never owns model parameters and must not outlive them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Trainable leaf. grad_sink may be null for leaves whose gradient is only inspected.
  Var leaf(const Tensor& value, Tensor* grad_sink);
  /// Embedding lookup of one row of table; the row gradient is scattered into grad_sink.
  Var gather_row(const Tensor& table, Tensor* grad_sink, std::size_t row);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var one_minus(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var abs(Var a);
  Var square(Var a);
  Var sum(Var a);
  /// Row-wise softmax.
  Var softmax(Var a);
  /// Concatenation of row vectors along columns.
  Var concat(std::span<const Var> parts);
  /// Stacks equal-width row vectors into a matrix.
  Var stack_rows(std::span<const Var> rows);
  /// Row r of a matrix as a 1 x n row vector.
  Var select_row(Var m, std::size_t r);
  Var dropout(Var a, double rate, std::mt19937_64& rng, bool training);

  /// -log(max(p[gold], 1e-12)) for a 1 x M probability row.
  Var nll(Var probs, std::size_t gold);

  /// Fused softmax + blended negative log-likelihood for one instance.
  ///
  /// q = gamma * source[gold] + (1 - gamma) * softmax(logits)[gold]; returns -log(max(q, 1e-12)).
  /// With gamma == 0 this is plain softmax cross-entropy and the logit gradient is
  /// exactly softmax(logits) - onehot(gold). Pass an empty span when there is no source.
  Var blended_nll(Var logits, std::size_t gold, std::span<const double> source, double gamma);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() output with respect to v.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  /// Backpropagates from scalar out, seeding its gradient with seed.
  void backward(Var out, double seed = 1.0);

 private:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Tensor* sink = nullptr;
  };

  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn, Tensor* sink = nullptr);
  Node& node(std::size_t i) { return nodes_[i]; }
  Node& parent(std::size_t self, std::size_t k) { return nodes_[nodes_[self].parents[k]]; }

  std::vector<Node> nodes_;
};

}  // namespace dropping
