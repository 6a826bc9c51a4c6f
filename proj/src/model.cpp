// SPDX-License-Identifier: Apache-2.0
#include "dropping/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "dropping/errors.hpp"
#include "dropping/io.hpp"

namespace dropping {

std::string to_string(AttentionMode m) { return m == AttentionMode::cross ? "cross" : "none"; }
std::string to_string(FusionMode m) { return m == FusionMode::symmetric ? "symmetric" : "full"; }

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "none") return AttentionMode::none;
  if (s == "cross") return AttentionMode::cross;
  throw ConfigError("unknown attention mode '" + s + "' (expected none|cross)");
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "full") return FusionMode::full;
  if (s == "symmetric") return FusionMode::symmetric;
  throw ConfigError("unknown fusion mode '" + s + "' (expected full|symmetric)");
}

std::size_t ModelConfig::feature_width() const {
  return (fusion == FusionMode::full ? 4 : 3) * state_width();
}

void ModelConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("model: vocab_size must be positive");
  if (embed_dim == 0 || hidden_size == 0) throw ConfigError("model: embed_dim and hidden_size must be positive");
  if (layers < 1 || layers > 2) throw ConfigError("model: layers must be 1 or 2");
  if (classes < 2) throw ConfigError("model: at least two classes required");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
}

GruLayerParams GruLayerParams::zeros(std::size_t input_dim, std::size_t hidden) {
  GruLayerParams p;
  p.w_z = p.w_r = p.w_h = Tensor::zeros(input_dim, hidden);
  p.u_z = p.u_r = p.u_h = Tensor::zeros(hidden, hidden);
  p.b_z = p.b_r = p.b_h = Tensor::zeros(1, hidden);
  return p;
}

GruLayerParams GruLayerParams::xavier(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng) {
  GruLayerParams p = zeros(input_dim, hidden);
  for (Tensor* w : {&p.w_z, &p.w_r, &p.w_h}) *w = Tensor::xavier_uniform(input_dim, hidden, rng);
  for (Tensor* u : {&p.u_z, &p.u_r, &p.u_h}) *u = Tensor::xavier_uniform(hidden, hidden, rng);
  return p;
}

namespace {

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// x W + h U + b for row vectors
Tensor affine2(const Tensor& x, const Tensor& w, const Tensor& h, const Tensor& u, const Tensor& b) {
  Tensor out = matmul(x, w);
  Tensor hu = matmul(h, u);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += hu[i] + b[i];
  return out;
}

}  // namespace

Tensor gru_step(const Tensor& x, const Tensor& h_prev, const GruLayerParams& p) {
  if (x.size() != p.input_dim() || h_prev.size() != p.hidden_size()) {
    throw ShapeError("gru_step: input " + shape_string(x.shape()) + " / state " + shape_string(h_prev.shape()) +
                     " do not conform to layer " + std::to_string(p.input_dim()) + "->" +
                     std::to_string(p.hidden_size()));
  }
  const Tensor xr = Tensor::row(x.values());
  const Tensor hr = Tensor::row(h_prev.values());
  Tensor z = affine2(xr, p.w_z, hr, p.u_z, p.b_z);
  Tensor r = affine2(xr, p.w_r, hr, p.u_r, p.b_r);
  for (auto& v : z.values()) v = sigm(v);
  for (auto& v : r.values()) v = sigm(v);
  Tensor rh = hr;
  for (std::size_t i = 0; i < rh.size(); ++i) rh[i] *= r[i];
  Tensor cand = affine2(xr, p.w_h, rh, p.u_h, p.b_h);
  Tensor out = hr;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - z[i]) * hr[i] + z[i] * std::tanh(cand[i]);
  return out;
}

AttentionState attend(const Tensor& target_state, const Tensor& source_states, const Tensor& w_c) {
  const std::size_t width = target_state.size();
  if (source_states.cols() != width) {
    throw ShapeError("attend: target width " + std::to_string(width) + " vs source states " +
                     shape_string(source_states.shape()));
  }
  if (w_c.rows() != 2 * width) throw ShapeError("attend: W_c must have 2 x state-width rows");
  const std::size_t n = source_states.rows();
  AttentionState st;
  st.scores = Tensor::zeros(1, n);
  for (std::size_t s = 0; s < n; ++s) {
    double dot = 0.0;
    for (std::size_t j = 0; j < width; ++j) dot += target_state[j] * source_states.at(s, j);
    st.scores[s] = dot;
  }
  st.alpha = softmax(st.scores, 1);
  st.context = Tensor::zeros(1, width);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < width; ++j) st.context[j] += st.alpha[s] * source_states.at(s, j);
  std::vector<double> joined = st.context.values();
  joined.insert(joined.end(), target_state.values().begin(), target_state.values().end());
  st.output = matmul(Tensor::row(std::move(joined)), w_c);
  for (auto& v : st.output.values()) v = std::tanh(v);
  return st;
}

namespace {

Encoder make_encoder(const ModelConfig& c, std::mt19937_64& rng) {
  Encoder e;
  e.embedding = Tensor::xavier_uniform(c.vocab_size, c.embed_dim, rng);
  std::size_t in = c.embed_dim;
  for (std::size_t l = 0; l < c.layers; ++l) {
    e.forward.push_back(GruLayerParams::xavier(in, c.hidden_size, rng));
    if (c.bidirectional) e.backward.push_back(GruLayerParams::xavier(in, c.hidden_size, rng));
    in = c.state_width();
  }
  return e;
}

}  // namespace

PairModel::PairModel(const ModelConfig& config, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  encoder1_ = make_encoder(config_, rng);
  if (!config_.tied) encoder2_ = make_encoder(config_, rng);
  const std::size_t width = config_.state_width();
  if (config_.attention == AttentionMode::cross) w_c_ = Tensor::xavier_uniform(2 * width, width, rng);
  w_out_ = Tensor::xavier_uniform(config_.feature_width(), config_.classes, rng);
  b_out_ = Tensor::zeros(1, config_.classes);
}

PairModel PairModel::zeros_like() const {
  PairModel z = *this;
  z.for_each_parameter([](const std::string&, Tensor& t) { t.fill(0.0); });
  return z;
}

std::size_t PairModel::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

void PairModel::set_dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  config_.dropout = rate;
}

void PairModel::resize_head(std::size_t classes, std::mt19937_64& rng) {
  if (classes < 2) throw ConfigError("resize_head: at least two classes required");
  config_.classes = classes;
  w_out_ = Tensor::xavier_uniform(config_.feature_width(), classes, rng);
  b_out_ = Tensor::zeros(1, classes);
}

// ---------------------------------------------------------------------------
// Tape-bound forward pass

BoundModel::EncoderVars BoundModel::bind_encoder(const Encoder& enc, Encoder* grad) {
  EncoderVars ev;
  ev.embedding = &enc.embedding;
  ev.embedding_grad = grad ? &grad->embedding : nullptr;
  auto bind_layer = [&](const GruLayerParams& p, GruLayerParams* g) {
    auto leaf = [&](const Tensor& v, Tensor* gv) { return tape_.leaf(v, g ? gv : nullptr); };
    return LayerVars{leaf(p.w_z, g ? &g->w_z : nullptr), leaf(p.w_r, g ? &g->w_r : nullptr),
                     leaf(p.w_h, g ? &g->w_h : nullptr), leaf(p.u_z, g ? &g->u_z : nullptr),
                     leaf(p.u_r, g ? &g->u_r : nullptr), leaf(p.u_h, g ? &g->u_h : nullptr),
                     leaf(p.b_z, g ? &g->b_z : nullptr), leaf(p.b_r, g ? &g->b_r : nullptr),
                     leaf(p.b_h, g ? &g->b_h : nullptr)};
  };
  for (std::size_t l = 0; l < enc.forward.size(); ++l)
    ev.forward.push_back(bind_layer(enc.forward[l], grad ? &grad->forward[l] : nullptr));
  for (std::size_t l = 0; l < enc.backward.size(); ++l)
    ev.backward.push_back(bind_layer(enc.backward[l], grad ? &grad->backward[l] : nullptr));
  return ev;
}

BoundModel::BoundModel(Tape& tape, const PairModel& model, PairModel* grads) : tape_(tape), model_(model) {
  if (grads && !(grads->config() == model.config())) throw ShapeError("BoundModel: gradient buffer structure mismatch");
  const ModelConfig& c = model.config();
  enc1_ = bind_encoder(model.encoder(0), grads ? &grads->encoder(0) : nullptr);
  if (!c.tied) enc2_ = bind_encoder(model.encoder(1), grads ? &grads->encoder(1) : nullptr);
  if (c.attention == AttentionMode::cross) w_c_ = tape_.leaf(model.w_c(), grads ? &grads->w_c() : nullptr);
  w_out_ = tape_.leaf(model.w_out(), grads ? &grads->w_out() : nullptr);
  b_out_ = tape_.leaf(model.b_out(), grads ? &grads->b_out() : nullptr);
}

Var BoundModel::step(const LayerVars& p, Var x, Var h) {
  Tape& t = tape_;
  Var z = t.sigmoid(t.add(t.add(t.matmul(x, p.w_z), t.matmul(h, p.u_z)), p.b_z));
  Var r = t.sigmoid(t.add(t.add(t.matmul(x, p.w_r), t.matmul(h, p.u_r)), p.b_r));
  Var cand = t.tanh(t.add(t.add(t.matmul(x, p.w_h), t.matmul(t.mul(r, h), p.u_h)), p.b_h));
  return t.add(t.mul(t.one_minus(z), h), t.mul(z, cand));
}

Var BoundModel::gru_step(Var x, Var h, std::size_t layer, bool backward_dir, int side) {
  const EncoderVars& ev = side == 1 && !model_.config().tied ? enc2_ : enc1_;
  return step(backward_dir ? ev.backward.at(layer) : ev.forward.at(layer), x, h);
}

void BoundModel::run_layer(const std::vector<Var>& inputs, const LayerVars& p, std::vector<Var>& outputs,
                           bool reverse) {
  Var h = tape_.constant(Tensor::zeros(1, model_.config().hidden_size));
  const std::size_t n = inputs.size();
  outputs.assign(n, Var{});
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = reverse ? n - 1 - k : k;
    h = step(p, inputs[i], h);
    outputs[i] = h;
  }
}

std::vector<Var> BoundModel::encode(const std::vector<std::size_t>& tokens, int side, std::mt19937_64& rng,
                                    bool training) {
  const ModelConfig& c = model_.config();
  if (tokens.empty()) throw InputError("encode_sequence: empty token sequence");
  const EncoderVars& ev = side == 1 && !c.tied ? enc2_ : enc1_;
  std::vector<Var> inputs;
  inputs.reserve(tokens.size());
  for (std::size_t id : tokens) {
    if (id >= c.vocab_size) {
      throw InputError("encode_sequence: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.vocab_size));
    }
    inputs.push_back(tape_.gather_row(*ev.embedding, ev.embedding_grad, id));
  }
  for (std::size_t l = 0; l < c.layers; ++l) {
    if (l > 0) {
      for (auto& x : inputs) x = tape_.dropout(x, c.dropout, rng, training);
    }
    std::vector<Var> fw;
    run_layer(inputs, ev.forward[l], fw, false);
    if (c.bidirectional) {
      std::vector<Var> bw;
      run_layer(inputs, ev.backward[l], bw, true);
      for (std::size_t i = 0; i < fw.size(); ++i) {
        const Var both[] = {fw[i], bw[i]};
        fw[i] = tape_.concat(both);
      }
    }
    inputs = std::move(fw);
  }
  return inputs;
}

Var BoundModel::attend(Var target_state, const std::vector<Var>& source_states) {
  Tape& t = tape_;
  Var sources = t.stack_rows(source_states);
  Var alpha = t.softmax(t.matmul(target_state, t.transpose(sources)));
  Var context = t.matmul(alpha, sources);
  const Var joined[] = {context, target_state};
  return t.tanh(t.matmul(t.concat(joined), w_c_));
}

Var BoundModel::logits(const std::vector<std::size_t>& s1, const std::vector<std::size_t>& s2,
                       std::mt19937_64& rng, bool training) {
  const ModelConfig& c = model_.config();
  Tape& t = tape_;
  std::vector<Var> states1 = encode(s1, 0, rng, training);
  std::vector<Var> states2 = encode(s2, 1, rng, training);
  Var v1 = states1.back();
  Var v2 = states2.back();
  if (c.attention == AttentionMode::cross) {
    v1 = attend(states1.back(), states2);
    v2 = attend(states2.back(), states1);
  }
  Var diff = t.abs(t.sub(v1, v2));
  Var prod = t.mul(v1, v2);
  Var feature;
  if (c.fusion == FusionMode::full) {
    const Var parts[] = {v1, v2, diff, prod};
    feature = t.concat(parts);
  } else {
    const Var parts[] = {t.add(v1, v2), diff, prod};
    feature = t.concat(parts);
  }
  feature = t.dropout(feature, c.dropout, rng, training);
  return t.add(t.matmul(feature, w_out_), b_out_);
}

std::vector<Tensor> encode_sequence(const std::vector<std::size_t>& tokens, const PairModel& model, int side,
                                    std::mt19937_64& rng, bool training) {
  Tape tape;
  BoundModel bound(tape, model, nullptr);
  std::vector<Tensor> out;
  for (Var v : bound.encode(tokens, side, rng, training)) out.push_back(tape.value(v));
  return out;
}

std::vector<double> classify_pair(const std::vector<std::size_t>& s1, const std::vector<std::size_t>& s2,
                                  const PairModel& model, std::mt19937_64& rng, bool training) {
  Tape tape;
  BoundModel bound(tape, model, nullptr);
  return softmax(tape.value(bound.logits(s1, s2, rng, training)), 1).values();
}

std::vector<double> predict_pair(const std::vector<std::size_t>& s1, const std::vector<std::size_t>& s2,
                                 const PairModel& model) {
  std::mt19937_64 unused(0);
  return classify_pair(s1, s2, model, unused, false);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kModelMagic = "dropping-model";
constexpr int kModelVersion = 1;

}  // namespace

void save_model(const PairModel& model, std::ostream& os) {
  const ModelConfig& c = model.config();
  os << kModelMagic << ' ' << kModelVersion << '\n';
  os << "vocab_size " << c.vocab_size << '\n'
     << "embed_dim " << c.embed_dim << '\n'
     << "hidden_size " << c.hidden_size << '\n'
     << "layers " << c.layers << '\n'
     << "bidirectional " << (c.bidirectional ? 1 : 0) << '\n'
     << "attention " << to_string(c.attention) << '\n'
     << "fusion " << to_string(c.fusion) << '\n'
     << "tied " << (c.tied ? 1 : 0) << '\n'
     << "classes " << c.classes << '\n'
     << "dropout " << format_double(c.dropout) << '\n';
  model.for_each_parameter([&](const std::string& name, const Tensor& t) {
    os << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) os << (c ? " " : "") << format_double(t.at(r, c));
      os << '\n';
    }
  });
  os << "end\n";
}

PairModel load_model(std::istream& is) {
  std::string magic;
  int version = 0;
  is >> magic >> version;
  if (magic != kModelMagic) throw InputError("checkpoint: not a model checkpoint");
  if (version != kModelVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));
  std::map<std::string, std::string> fields;
  std::string key;
  while (is >> key && key != "tensor") {
    std::string value;
    is >> value;
    fields[key] = value;
  }
  auto get = [&](const std::string& k) {
    auto it = fields.find(k);
    if (it == fields.end()) throw InputError("checkpoint: missing field '" + k + "'");
    return it->second;
  };
  ModelConfig c;
  c.vocab_size = std::stoul(get("vocab_size"));
  c.embed_dim = std::stoul(get("embed_dim"));
  c.hidden_size = std::stoul(get("hidden_size"));
  c.layers = std::stoul(get("layers"));
  c.bidirectional = get("bidirectional") == "1";
  c.attention = parse_attention_mode(get("attention"));
  c.fusion = parse_fusion_mode(get("fusion"));
  c.tied = get("tied") == "1";
  c.classes = std::stoul(get("classes"));
  c.dropout = parse_double(get("dropout"));

  std::mt19937_64 rng(0);
  PairModel model(c, rng);
  bool first = true;
  model.for_each_parameter([&](const std::string& name, Tensor& t) {
    if (!first && !(is >> key)) throw InputError("checkpoint: truncated before " + name);
    first = false;
    std::string stored;
    std::size_t rows = 0, cols = 0;
    if (key != "tensor" || !(is >> stored >> rows >> cols)) throw InputError("checkpoint: malformed tensor header");
    if (stored != name || rows != t.rows() || cols != t.cols()) {
      throw InputError("checkpoint: expected tensor " + name + " " + shape_string(t.shape()) + ", found " + stored);
    }
    std::string token;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(is >> token)) throw InputError("checkpoint: truncated tensor " + name);
      t[i] = parse_double(token);
    }
  });
  if (!(is >> key) || key != "end") throw InputError("checkpoint: missing end marker");
  return model;
}

void save_model(const PairModel& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write checkpoint " + path);
  save_model(model, os);
}

PairModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read checkpoint " + path);
  return load_model(is);
}

}  // namespace dropping
