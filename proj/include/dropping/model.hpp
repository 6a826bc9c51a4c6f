// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "dropping/tape.hpp"
#include "dropping/tensor.hpp"

namespace dropping {

enum class AttentionMode { none, cross };

/// How the two sentence vectors are fused before the output head.
///   full:      [v1; v2; |v1 - v2|; v1 * v2]
///   symmetric: [v1 + v2; |v1 - v2|; v1 * v2]  (invariant to swapping the pair)
enum class FusionMode { full, symmetric };

std::string to_string(AttentionMode m);
std::string to_string(FusionMode m);
AttentionMode parse_attention_mode(const std::string& s);
FusionMode parse_fusion_mode(const std::string& s);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_size = 16;
  std::size_t layers = 2;
  bool bidirectional = false;
  AttentionMode attention = AttentionMode::none;
  FusionMode fusion = FusionMode::full;
  /// Siamese weight tying: one encoder for both sentences.
  bool tied = true;
  std::size_t classes = 2;
  double dropout = 0.5;

  /// Width of a per-timestep top-layer state.
  std::size_t state_width() const { return bidirectional ? 2 * hidden_size : hidden_size; }
  std::size_t feature_width() const;
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One GRU layer in one direction. Inputs are row vectors: x W + h U + b.
struct GruLayerParams {
  Tensor w_z, w_r, w_h;  // input_dim x hidden
  Tensor u_z, u_r, u_h;  // hidden x hidden
  Tensor b_z, b_r, b_h;  // 1 x hidden

  static GruLayerParams zeros(std::size_t input_dim, std::size_t hidden);
  static GruLayerParams xavier(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng);
  std::size_t input_dim() const { return w_z.rows(); }
  std::size_t hidden_size() const { return u_z.rows(); }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "W_z", w_z); f(prefix + "W_r", w_r); f(prefix + "W_h", w_h);
    f(prefix + "U_z", u_z); f(prefix + "U_r", u_r); f(prefix + "U_h", u_h);
    f(prefix + "b_z", b_z); f(prefix + "b_r", b_r); f(prefix + "b_h", b_h);
  }
  friend bool operator==(const GruLayerParams&, const GruLayerParams&) = default;
};

/// z = s(x W_z + h U_z + b_z), r = s(x W_r + h U_r + b_r),
/// h~ = tanh(x W_h + (r * h) U_h + b_h), h' = (1 - z) * h + z * h~
Tensor gru_step(const Tensor& x, const Tensor& h_prev, const GruLayerParams& p);

struct AttentionState {
  Tensor scores;   // 1 x |S| alignment scores h_t . h_s
  Tensor alpha;    // softmax of scores
  Tensor context;  // sum_s alpha_s h_s
  Tensor output;   // tanh([context; h_t] W_c)
};

/// Dot-score attention of target state h_t (1 x F) over source states (|S| x F).
AttentionState attend(const Tensor& target_state, const Tensor& source_states, const Tensor& w_c);

/// Embeddings plus a stack of (bi)GRU layers.
struct Encoder {
  Tensor embedding;                       // vocab x embed_dim
  std::vector<GruLayerParams> forward;    // one per layer
  std::vector<GruLayerParams> backward;   // empty unless bidirectional

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + "embedding", embedding);
    for (std::size_t l = 0; l < forward.size(); ++l) forward[l].for_each(prefix + "l" + std::to_string(l) + ".fw.", f);
    for (std::size_t l = 0; l < backward.size(); ++l) backward[l].for_each(prefix + "l" + std::to_string(l) + ".bw.", f);
  }
  friend bool operator==(const Encoder&, const Encoder&) = default;
};

/// Siamese GRU pair classifier.
class PairModel {
 public:
  PairModel() = default;
  /// Xavier-uniform weights, zero biases.
  PairModel(const ModelConfig& config, std::mt19937_64& rng);

  /// Same structure, all parameters zero. Used for gradient and optimiser buffers.
  PairModel zeros_like() const;

  const ModelConfig& config() const { return config_; }

  Encoder& encoder(int side) { return side == 1 && !config_.tied ? encoder2_ : encoder1_; }
  const Encoder& encoder(int side) const { return side == 1 && !config_.tied ? encoder2_ : encoder1_; }
  Tensor& w_c() { return w_c_; }
  Tensor& w_out() { return w_out_; }
  Tensor& b_out() { return b_out_; }
  const Tensor& w_c() const { return w_c_; }
  const Tensor& w_out() const { return w_out_; }
  const Tensor& b_out() const { return b_out_; }

  /// Visits every parameter tensor in a fixed order with a stable name.
  template <class F>
  void for_each_parameter(F&& f) {
    encoder1_.for_each("enc.", f);
    if (!config_.tied) encoder2_.for_each("enc2.", f);
    if (config_.attention == AttentionMode::cross) f("W_c", w_c_);
    f("W_out", w_out_);
    f("b_out", b_out_);
  }
  template <class F>
  void for_each_parameter(F&& f) const {
    const_cast<PairModel*>(this)->for_each_parameter(
        [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  std::size_t parameter_count() const;

  /// Dropout is a training-time setting and does not touch the parameters.
  void set_dropout(double rate);

  /// Replaces the output head with a fresh one for a different class count.
  void resize_head(std::size_t classes, std::mt19937_64& rng);

  friend bool operator==(const PairModel&, const PairModel&) = default;

 private:
  ModelConfig config_;
  Encoder encoder1_;
  Encoder encoder2_;
  Tensor w_c_;
  Tensor w_out_;
  Tensor b_out_;
};

/// Per-timestep top-layer states of a token sequence (plain forward pass).
std::vector<Tensor> encode_sequence(const std::vector<std::size_t>& tokens, const PairModel& model, int side,
                                    std::mt19937_64& rng, bool training);

/// Class probabilities for a sentence pair.
std::vector<double> classify_pair(const std::vector<std::size_t>& s1, const std::vector<std::size_t>& s2,
                                  const PairModel& model, std::mt19937_64& rng, bool training);

/// Inference-mode probabilities; consumes no randomness.
std::vector<double> predict_pair(const std::vector<std::size_t>& s1, const std::vector<std::size_t>& s2,
                                 const PairModel& model);

/// Differentiable forward pass recorded on a tape.
///
/// Parameters are registered as leaves once per bind; gradients flow into the
/// matching tensors of `grads` (which must be model.zeros_like()-shaped), or are
/// dropped when `grads` is null.
class BoundModel {
 public:
  BoundModel(Tape& tape, const PairModel& model, PairModel* grads);

  Var gru_step(Var x, Var h, std::size_t layer, bool backward_dir, int side);
  std::vector<Var> encode(const std::vector<std::size_t>& tokens, int side, std::mt19937_64& rng, bool training);
  /// Returns the attention output a_t; alpha/context are stored on the tape.
  Var attend(Var target_state, const std::vector<Var>& source_states);
  /// Pre-softmax class scores.
  Var logits(const std::vector<std::size_t>& s1, const std::vector<std::size_t>& s2, std::mt19937_64& rng,
             bool training);

 private:
  struct LayerVars {
    Var w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h;
  };
  struct EncoderVars {
    const Tensor* embedding = nullptr;
    Tensor* embedding_grad = nullptr;
    std::vector<LayerVars> forward, backward;
  };
  EncoderVars bind_encoder(const Encoder& enc, Encoder* grad);
  Var step(const LayerVars& p, Var x, Var h);
  void run_layer(const std::vector<Var>& inputs, const LayerVars& p, std::vector<Var>& outputs, bool reverse);

  Tape& tape_;
  const PairModel& model_;
  EncoderVars enc1_, enc2_;
  Var w_c_, w_out_, b_out_;
};

/// Text checkpoint of config and all parameters; doubles round-trip exactly.
void save_model(const PairModel& model, std::ostream& os);
PairModel load_model(std::istream& is);
void save_model(const PairModel& model, const std::string& path);
PairModel load_model(const std::string& path);

}  // namespace dropping
