// SPDX-License-Identifier: Apache-2.0
#include "dropping/tape.hpp"

#include <algorithm>
#include <cmath>

#include "dropping/errors.hpp"

namespace dropping {

namespace {

constexpr double kProbFloor = 1e-12;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Tensor transposed(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Var Tape::push(Tensor value, std::vector<std::size_t> parents, BackwardFn fn, Tensor* sink) {
  nodes_.push_back(Node{std::move(value), Tensor(), std::move(parents), std::move(fn), sink});
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::leaf(const Tensor& value, Tensor* grad_sink) {
  if (grad_sink && !grad_sink->same_shape(value)) throw ShapeError("leaf: gradient buffer shape mismatch");
  BackwardFn fn;
  if (grad_sink) {
    fn = [](Tape& t, std::size_t self) { accumulate(*t.node(self).sink, t.node(self).grad); };
  }
  return push(value, {}, std::move(fn), grad_sink);
}

Var Tape::gather_row(const Tensor& table, Tensor* grad_sink, std::size_t row) {
  if (row >= table.rows()) {
    throw InputError("gather_row: index " + std::to_string(row) + " outside table of " +
                     std::to_string(table.rows()) + " rows");
  }
  const std::size_t width = table.cols();
  std::vector<double> values(table.data().begin() + static_cast<std::ptrdiff_t>(row * width),
                             table.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * width));
  BackwardFn fn;
  if (grad_sink) {
    fn = [row, width](Tape& t, std::size_t self) {
      Node& n = t.node(self);
      for (std::size_t j = 0; j < width; ++j) n.sink->at(row, j) += n.grad[j];
    };
  }
  return push(Tensor::row(std::move(values)), {}, std::move(fn), grad_sink);
}

Var Tape::matmul(Var a, Var b) {
  Tensor out = dropping::matmul(value(a), value(b));
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    Node& n = t.node(self);
    Node& pa = t.parent(self, 0);
    Node& pb = t.parent(self, 1);
    const std::size_t m = pa.value.rows(), k = pa.value.cols(), cols = pb.value.cols();
    // dA = dC * B^T, dB = A^T * dC
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double g = n.grad[i * cols + j];
        if (g == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          pa.grad[i * k + p] += g * pb.value[p * cols + j];
          pb.grad[p * cols + j] += g * pa.value[i * k + p];
        }
      }
    }
  });
}

Var Tape::transpose(Var a) {
  return push(transposed(value(a)), {a.id}, [](Tape& t, std::size_t self) {
    accumulate(t.parent(self, 0).grad, transposed(t.node(self).grad));
  });
}

Var Tape::add(Var a, Var b) {
  require_same(value(a), value(b), "add");
  Tensor out = value(a);
  accumulate(out, value(b));
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    accumulate(t.parent(self, 0).grad, t.node(self).grad);
    accumulate(t.parent(self, 1).grad, t.node(self).grad);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same(value(a), value(b), "sub");
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= value(b)[i];
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Tensor& gb = t.parent(self, 1).grad;
    accumulate(t.parent(self, 0).grad, g);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var Tape::mul(Var a, Var b) {
  require_same(value(a), value(b), "mul");
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= value(b)[i];
  return push(std::move(out), {a.id, b.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Node& pa = t.parent(self, 0);
    Node& pb = t.parent(self, 1);
    for (std::size_t i = 0; i < g.size(); ++i) {
      pa.grad[i] += g[i] * pb.value[i];
      pb.grad[i] += g[i] * pa.value[i];
    }
  });
}

Var Tape::scale(Var a, double factor) {
  Tensor out = value(a);
  for (auto& v : out.values()) v *= factor;
  return push(std::move(out), {a.id}, [factor](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Tensor& ga = t.parent(self, 0).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Var Tape::one_minus(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = 1.0 - v;
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Tensor& ga = t.parent(self, 0).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    Tensor& ga = t.parent(self, 0).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
  });
}

Var Tape::tanh(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = std::tanh(v);
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    Tensor& ga = t.parent(self, 0).grad;
    for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
  });
}

Var Tape::abs(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = std::fabs(v);
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Node& pa = t.parent(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = pa.value[i];
      pa.grad[i] += g[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
    }
  });
}

Var Tape::square(Var a) {
  Tensor out = value(a);
  for (auto& v : out.values()) v = v * v;
  return push(std::move(out), {a.id}, [](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Node& pa = t.parent(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += 2.0 * g[i] * pa.value[i];
  });
}

Var Tape::sum(Var a) {
  double total = 0.0;
  for (double v : value(a).values()) total += v;
  return push(Tensor::scalar(total), {a.id}, [](Tape& t, std::size_t self) {
    const double g = t.node(self).grad[0];
    for (auto& v : t.parent(self, 0).grad.values()) v += g;
  });
}

Var Tape::softmax(Var a) {
  return push(dropping::softmax(value(a), 1), {a.id}, [](Tape& t, std::size_t self) {
    const Node& n = t.node(self);
    Tensor& ga = t.parent(self, 0).grad;
    const std::size_t r = n.value.rows(), c = n.value.cols();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += n.grad.at(i, j) * n.value.at(i, j);
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += n.value.at(i, j) * (n.grad.at(i, j) - dot);
    }
  });
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<double> out;
  std::vector<std::size_t> parents;
  for (Var p : parts) {
    const Tensor& v = value(p);
    if (v.rows() != 1) throw ShapeError("concat: expects row vectors, got " + shape_string(v.shape()));
    out.insert(out.end(), v.data().begin(), v.data().end());
    parents.push_back(p.id);
  }
  return push(Tensor::row(std::move(out)), std::move(parents), [](Tape& t, std::size_t self) {
    std::size_t offset = 0;
    const Tensor& g = t.node(self).grad;
    for (std::size_t k = 0; k < t.node(self).parents.size(); ++k) {
      Tensor& gp = t.parent(self, k).grad;
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      offset += gp.size();
    }
  });
}

Var Tape::stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t width = value(rows[0]).size();
  std::vector<double> out;
  out.reserve(rows.size() * width);
  std::vector<std::size_t> parents;
  for (Var r : rows) {
    const Tensor& v = value(r);
    if (v.rows() != 1 || v.size() != width) {
      throw ShapeError("stack_rows: row of shape " + shape_string(v.shape()) + " does not match width " +
                       std::to_string(width));
    }
    out.insert(out.end(), v.data().begin(), v.data().end());
    parents.push_back(r.id);
  }
  return push(Tensor({rows.size(), width}, std::move(out)), std::move(parents), [width](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    for (std::size_t k = 0; k < t.node(self).parents.size(); ++k) {
      Tensor& gp = t.parent(self, k).grad;
      for (std::size_t i = 0; i < width; ++i) gp[i] += g[k * width + i];
    }
  });
}

Var Tape::select_row(Var m, std::size_t r) {
  const Tensor& v = value(m);
  if (r >= v.rows()) throw ShapeError("select_row: row index out of range");
  const std::size_t width = v.cols();
  std::vector<double> out(v.data().begin() + static_cast<std::ptrdiff_t>(r * width),
                          v.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  return push(Tensor::row(std::move(out)), {m.id}, [r, width](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Tensor& gm = t.parent(self, 0).grad;
    for (std::size_t j = 0; j < width; ++j) gm[r * width + j] += g[j];
  });
}

Var Tape::dropout(Var a, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return a;
  Tensor mask = dropout_mask(value(a).shape(), rate, rng);
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return push(std::move(out), {a.id}, [mask = std::move(mask)](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).grad;
    Tensor& ga = t.parent(self, 0).grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
  });
}

Var Tape::nll(Var probs, std::size_t gold) {
  const Tensor& p = value(probs);
  if (p.rows() != 1 || gold >= p.cols()) throw InputError("nll: gold index outside probability row");
  const double q = p[gold];
  const double loss = -std::log(std::max(q, kProbFloor));
  return push(Tensor::scalar(loss), {probs.id}, [gold, q](Tape& t, std::size_t self) {
    if (q <= kProbFloor) return;
    t.parent(self, 0).grad[gold] -= t.node(self).grad[0] / q;
  });
}

Var Tape::blended_nll(Var logits, std::size_t gold, std::span<const double> source, double gamma) {
  const Tensor& z = value(logits);
  if (z.rows() != 1 || gold >= z.cols()) throw InputError("blended_nll: gold index outside logit row");
  if (!source.empty() && source.size() != z.cols()) {
    throw ShapeError("blended_nll: source has " + std::to_string(source.size()) + " classes, logits " +
                     std::to_string(z.cols()));
  }
  Tensor probs = dropping::softmax(z, 1);
  const double src = source.empty() ? 0.0 : source[gold];
  const double q = gamma * src + (1.0 - gamma) * probs[gold];
  const double loss = -std::log(std::max(q, kProbFloor));
  return push(Tensor::scalar(loss), {logits.id},
              [gold, q, gamma, probs = std::move(probs)](Tape& t, std::size_t self) {
                if (q <= kProbFloor) return;
                // dL/dz_j = -(1-gamma) p_gold / q * (1[j==gold] - p_j)
                const double coeff = (1.0 - gamma) * probs[gold] / q * t.node(self).grad[0];
                Tensor& gz = t.parent(self, 0).grad;
                for (std::size_t j = 0; j < probs.size(); ++j) {
                  gz[j] += coeff * (probs[j] - (j == gold ? 1.0 : 0.0));
                }
              });
}

void Tape::backward(Var out, double seed) {
  if (out.id >= nodes_.size()) throw StateError("backward: unknown output node");
  if (value(out).size() != 1) throw ShapeError("backward: output must be a scalar");
  for (std::size_t i = 0; i <= out.id; ++i) {
    Node& n = nodes_[i];
    if (n.grad.same_shape(n.value)) {
      n.grad.fill(0.0);
    } else {
      n.grad = Tensor(n.value.shape());
    }
  }
  nodes_[out.id].grad[0] = seed;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward(*this, i);
  }
}

}  // namespace dropping
