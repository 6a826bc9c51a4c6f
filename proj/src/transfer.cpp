// SPDX-License-Identifier: Apache-2.0
#include "dropping/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <mutex>
#include <optional>
#include <ostream>
#include <thread>

#include "dropping/errors.hpp"
#include "dropping/io.hpp"

namespace dropping {

GammaMode parse_gamma_mode(const std::string& s) {
  if (s == "slope_driven") return GammaMode::slope_driven;
  if (s == "fixed_decay") return GammaMode::fixed_decay;
  if (s == "constant") return GammaMode::constant;
  throw ConfigError("unknown gamma mode '" + s + "' (expected slope_driven|fixed_decay|constant)");
}

std::string to_string(GammaMode m) {
  switch (m) {
    case GammaMode::slope_driven: return "slope_driven";
    case GammaMode::fixed_decay: return "fixed_decay";
    case GammaMode::constant: return "constant";
  }
  return "?";
}

SourceWeighting parse_source_weighting(const std::string& s) {
  if (s == "softmax") return SourceWeighting::softmax;
  if (s == "uniform") return SourceWeighting::uniform;
  if (s == "ensemble") return SourceWeighting::ensemble;
  throw ConfigError("unknown source weighting '" + s + "' (expected softmax|uniform|ensemble)");
}

std::string to_string(SourceWeighting w) {
  switch (w) {
    case SourceWeighting::softmax: return "softmax";
    case SourceWeighting::uniform: return "uniform";
    case SourceWeighting::ensemble: return "ensemble";
  }
  return "?";
}

BaselineKind parse_baseline_kind(const std::string& s) {
  if (s == "dropping") return BaselineKind::dropping;
  if (s == "hard_full") return BaselineKind::hard_full;
  if (s == "freeze_lower") return BaselineKind::freeze_lower;
  throw ConfigError("unknown baseline '" + s + "' (expected dropping|hard_full|freeze_lower)");
}

std::string to_string(BaselineKind b) {
  switch (b) {
    case BaselineKind::dropping: return "dropping";
    case BaselineKind::hard_full: return "hard_full";
    case BaselineKind::freeze_lower: return "freeze_lower";
  }
  return "?";
}

void GammaSchedule::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  if (!(delta_accum >= 0.0)) throw ConfigError("accumulated delta must be non-negative");
  if (!(decay_rate > 0.0 && decay_rate <= 1.0)) throw ConfigError("decay rate must lie in (0, 1]");
  if (!(delta_scale >= 0.0) || !std::isfinite(delta_scale)) throw ConfigError("delta scale must be finite and non-negative");
  smoother.validate();
}

GammaSchedule gamma_from_delta(GammaSchedule s, double delta) {
  if (!std::isfinite(delta)) throw NumericError("gamma update: slope is not finite");
  switch (s.mode) {
    case GammaMode::slope_driven:
      s.delta_accum += std::fabs(delta) * s.delta_scale;
      s.gamma = std::exp(-s.delta_accum);
      break;
    case GammaMode::fixed_decay:
      s.gamma *= s.decay_rate;
      break;
    case GammaMode::constant:
      break;
  }
  s.gamma = std::clamp(s.gamma, 0.0, 1.0);
  return s;
}

Probs combine_outputs(const Probs& source, const Probs& target, double gamma) {
  if (source.size() != target.size()) {
    throw ShapeError("combine_outputs: source has " + std::to_string(source.size()) + " classes, target " +
                     std::to_string(target.size()));
  }
  Probs out(source.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = gamma * source[c] + (1.0 - gamma) * target[c];
  return out;
}

// ---------------------------------------------------------------------------
// Plans and pooled votes

std::vector<double> TransferPlan::source_weights() const {
  double total = 0.0;
  for (const auto& s : sources) total += s.weight;
  std::vector<double> w;
  for (const auto& s : sources) w.push_back(s.weight / total);
  return w;
}

void TransferPlan::validate() const {
  target.validate();
  train.validate();
  schedule.validate();
  if (!(temperature > 0.0)) throw ConfigError("transfer: temperature must be positive");
  if (sources.empty()) throw ConfigError("transfer: at least one source ensemble required");
  double total = 0.0;
  for (const auto& s : sources) {
    if (!s.ensemble) throw ConfigError("transfer: null source ensemble");
    if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) throw ConfigError("transfer: source weights must be finite and non-negative");
    s.ensemble->validate();
    total += s.weight;
  }
  if (!(total > 0.0)) throw ConfigError("transfer: source weights sum to zero");
}

std::vector<double> PooledVote::source_mass(std::size_t sources) const {
  std::vector<double> mass(sources, 0.0);
  for (std::size_t j = 0; j < alpha.size(); ++j) mass[source_of[j]] += alpha[j];
  return mass;
}

PooledVote pool_sources(const TransferPlan& plan, std::span<const EncodedPair> target_dev) {
  plan.validate();
  const auto w = plan.source_weights();
  PooledVote vote;
  vote.averaging = plan.averaging;
  const std::size_t classes = plan.sources.front().ensemble->members.front().config().classes;
  std::vector<double> logits;
  for (std::size_t s = 0; s < plan.sources.size(); ++s) {
    const DroppingEnsemble& ens = *plan.sources[s].ensemble;
    std::vector<double> scores;
    if (plan.weighting == SourceWeighting::softmax) scores = member_scores(ens, target_dev);
    for (std::size_t i = 0; i < ens.size(); ++i) {
      if (ens.members[i].config().classes != classes) throw ConfigError("transfer: sources disagree on class count");
      vote.members.push_back(&ens.members[i]);
      vote.source_of.push_back(s);
      switch (plan.weighting) {
        case SourceWeighting::softmax:
          logits.push_back(w[s] > 0.0 ? scores[i] / plan.temperature + std::log(w[s])
                                      : -std::numeric_limits<double>::infinity());
          break;
        case SourceWeighting::uniform:
          vote.alpha.push_back(w[s] / static_cast<double>(ens.size()));
          break;
        case SourceWeighting::ensemble:
          vote.alpha.push_back(w[s] * ens.alpha[i]);
          break;
      }
    }
  }
  if (plan.weighting == SourceWeighting::softmax) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double l : logits) {
      vote.alpha.push_back(std::exp(l - mx));
      total += vote.alpha.back();
    }
    for (auto& a : vote.alpha) a /= total;
  }
  return vote;
}

namespace {

std::vector<std::vector<Probs>> predict_members(const std::vector<const PairModel*>& members,
                                                std::span<const EncodedPair> data, std::size_t jobs) {
  std::vector<std::vector<Probs>> out(members.size());
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(members.size(), 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < members.size(); ++i) out[i] = predict_all(*members[i], data);
    return out;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      while (true) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= members.size()) return;
          i = next++;
        }
        out[i] = predict_all(*members[i], data);
      }
    });
  }
  for (auto& t : workers) t.join();
  return out;
}

std::vector<std::size_t> gold_labels(std::span<const EncodedPair> data) {
  std::vector<std::size_t> gold;
  gold.reserve(data.size());
  for (const auto& p : data) gold.push_back(p.label);
  return gold;
}

}  // namespace

std::vector<Probs> pooled_predict(const PooledVote& vote, std::span<const EncodedPair> data, std::size_t jobs) {
  if (vote.members.empty() || vote.alpha.size() != vote.members.size()) throw StateError("pooled vote is empty");
  const auto per_member = predict_members(vote.members, data, jobs);
  std::vector<Probs> out;
  out.reserve(data.size());
  std::vector<Probs> votes(vote.members.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (std::size_t j = 0; j < votes.size(); ++j) votes[j] = per_member[j][n];
    out.push_back(combine_votes(votes, vote.alpha, vote.averaging));
  }
  return out;
}

Metrics zero_shot_eval(const PooledVote& vote, std::span<const EncodedPair> test) {
  return evaluate(pooled_predict(vote, test), gold_labels(test));
}

Metrics zero_shot_eval(std::span<const TransferSource> sources, std::span<const EncodedPair> test) {
  if (sources.empty()) throw ConfigError("zero_shot_eval: no sources");
  double total = 0.0;
  for (const auto& s : sources) total += s.weight;
  if (!(total > 0.0)) throw ConfigError("zero_shot_eval: source weights sum to zero");
  std::vector<Probs> avg;
  std::size_t classes = 0;
  for (const auto& s : sources) {
    const auto pred = ensemble_predict(*s.ensemble, test);
    const double w = s.weight / total;
    if (avg.empty()) {
      classes = s.ensemble->members.front().config().classes;
      avg.assign(pred.size(), Probs(classes, 0.0));
    }
    if (s.ensemble->members.front().config().classes != classes) {
      throw ConfigError("zero_shot_eval: sources disagree on class count");
    }
    for (std::size_t n = 0; n < pred.size(); ++n) {
      for (std::size_t c = 0; c < classes; ++c) avg[n][c] += w * pred[n][c];
    }
  }
  return evaluate(avg, gold_labels(test));
}

// ---------------------------------------------------------------------------
// Parameter transfer

PairModel hard_transfer(const PairModel& source, const ModelConfig& target, std::mt19937_64& rng) {
  ModelConfig a = source.config();
  ModelConfig b = target;
  a.classes = b.classes = 0;
  a.dropout = b.dropout = 0.0;
  if (!(a == b)) throw ConfigError("hard_transfer: source and target architectures differ");
  PairModel out = source;
  out.set_dropout(target.dropout);
  if (target.classes != source.config().classes) out.resize_head(target.classes, rng);
  return out;
}

bool is_lower_parameter(const std::string& name) {
  for (const char* prefix : {"enc.", "enc2."}) {
    const std::string p = prefix;
    if (name == p + "embedding" || name.rfind(p + "l0.", 0) == 0) return true;
  }
  return false;
}

PairModel freeze_lower_finetune(const PairModel& source, const ModelConfig& target, std::span<const EncodedPair> train,
                                std::span<const EncodedPair> dev, const TrainConfig& config,
                                const ClassWeights& weights, std::mt19937_64& rng, TrainResult* result) {
  if (source.config().layers < 2) throw ConfigError("freeze_lower_finetune: source needs at least two GRU layers");
  PairModel out = hard_transfer(source, target, rng);
  const ParamMask mask = trainable_mask(out, [](const std::string& n) { return !is_lower_parameter(n); });
  TrainResult r = train_model(out, train, dev, config, weights, rng, &mask);
  if (result) *result = std::move(r);
  return out;
}

// ---------------------------------------------------------------------------
// Curve rows

namespace {
constexpr const char* kCurveHeader = "iteration,error,smoothed,delta,gamma";
}

void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& rows) {
  os << kCurveHeader << '\n';
  for (const auto& r : rows) {
    os << r.iteration << ',' << format_double(r.error) << ',' << format_double(r.smoothed) << ','
       << format_double(r.delta) << ',' << format_double(r.gamma) << '\n';
  }
}

std::vector<CurveRow> read_curve_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InputError("curve csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCurveHeader) throw InputError("curve csv: expected header '" + std::string(kCurveHeader) + "'");
  std::vector<CurveRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 5) throw InputError("curve csv line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      CurveRow r;
      r.iteration = static_cast<std::size_t>(std::stoull(f[0]));
      r.error = parse_double(f[1]);
      r.smoothed = parse_double(f[2]);
      r.delta = parse_double(f[3]);
      r.gamma = parse_double(f[4]);
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw InputError("curve csv line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Gamma controller

GammaController::GammaController(GammaSchedule schedule) : schedule_(std::move(schedule)) { schedule_.validate(); }

void GammaController::on_evaluation(std::size_t iteration, double dev_error, double /*dev_loss*/) {
  curve_.append(iteration, dev_error);
  const SmootherConfig& sm = schedule_.smoother;
  std::optional<double> delta;
  if (schedule_.mode == GammaMode::slope_driven) {
    delta = estimate_delta(curve_, sm, iteration);
    if (delta) schedule_ = gamma_from_delta(schedule_, *delta);
  } else {
    try {
      delta = estimate_delta(curve_, sm, iteration);
    } catch (const Error&) {
      delta.reset();
    }
    const bool due = iteration > 0 && iteration % sm.update_interval == 0;
    if (due) schedule_ = gamma_from_delta(schedule_, 0.0);
  }
  if (delta) last_delta_ = *delta;
  double smoothed = dev_error;
  try {
    smoothed = smooth_curve(curve_, sm).back();
  } catch (const Error&) {
    // too few samples for the smoother yet
  }
  rows_.push_back({iteration, dev_error, smoothed, last_delta_, schedule_.gamma});
}

// ---------------------------------------------------------------------------
// Few-shot transfer

namespace {

const PairModel& best_member(const DroppingEnsemble& ens) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < ens.size(); ++i) {
    if (ens.meta[i].dev_score > ens.meta[best].dev_score) best = i;
  }
  return ens.members[best];
}

}  // namespace

TransferOutcome few_shot_dropping_transfer(const TransferPlan& plan, std::span<const EncodedPair> train,
                                           std::span<const EncodedPair> dev, std::span<const EncodedPair> test,
                                           const ClassWeights& weights, std::ostream* diagnostics) {
  plan.validate();
  if (train.empty()) throw InputError("few-shot transfer: empty few-shot training set");
  std::mt19937_64 rng(plan.seed);
  TransferOutcome out;
  TransferReport& rep = out.report;
  rep.baseline = plan.baseline;

  if (plan.baseline == BaselineKind::dropping) {
    out.target = PairModel(plan.target, rng);
    const PooledVote vote = pool_sources(plan, dev);
    rep.alpha = vote.alpha;
    rep.source_mass = vote.source_mass(plan.sources.size());
    const auto train_src = pooled_predict(vote, train, plan.jobs);
    const auto dev_src = pooled_predict(vote, dev, plan.jobs);
    const auto test_src = pooled_predict(vote, test, plan.jobs);
    if (train_src.front().size() != plan.target.classes) {
      throw ConfigError("few-shot transfer: source and target class counts differ");
    }
    GammaController controller(plan.schedule);
    const SourceVotes votes{&train_src, &dev_src};
    try {
      rep.training = train_model(out.target, train, dev, plan.train, weights, rng, nullptr, &votes, &controller);
    } catch (const NumericError&) {
      if (diagnostics) write_curve_csv(*diagnostics, controller.rows());
      throw;
    }
    rep.curve = controller.rows();
    rep.final_gamma = controller.gamma();
    rep.train = evaluate(predict_blended(out.target, train, &train_src, rep.final_gamma), gold_labels(train));
    rep.test = evaluate(predict_blended(out.target, test, &test_src, rep.final_gamma), gold_labels(test));
    return out;
  }

  const PairModel& source = best_member(*plan.sources.front().ensemble);
  GammaSchedule flat = plan.schedule;
  flat.mode = GammaMode::constant;
  flat.gamma = 0.0;
  GammaController controller(flat);
  ParamMask mask;
  if (plan.baseline == BaselineKind::freeze_lower && source.config().layers < 2) {
    throw ConfigError("freeze_lower baseline: source needs at least two GRU layers");
  }
  out.target = hard_transfer(source, plan.target, rng);
  if (plan.baseline == BaselineKind::freeze_lower) {
    mask = trainable_mask(out.target, [](const std::string& n) { return !is_lower_parameter(n); });
  }
  try {
    rep.training = train_model(out.target, train, dev, plan.train, weights, rng, mask.empty() ? nullptr : &mask,
                               nullptr, &controller);
  } catch (const NumericError&) {
    if (diagnostics) write_curve_csv(*diagnostics, controller.rows());
    throw;
  }
  rep.curve = controller.rows();
  rep.final_gamma = 0.0;
  rep.train = evaluate_model(out.target, train);
  rep.test = evaluate_model(out.target, test);
  return out;
}

void write_transfer_report(std::ostream& os, const TransferPlan& plan, const TransferReport& report) {
  os << "# transfer report\n";
  os << "baseline = " << to_string(plan.baseline) << '\n';
  os << "weighting = " << to_string(plan.weighting) << '\n';
  os << "temperature = " << format_double(plan.temperature) << '\n';
  os << "averaging = " << to_string(plan.averaging) << '\n';
  os << "gamma_mode = " << to_string(plan.schedule.mode) << '\n';
  os << "decay_rate = " << format_double(plan.schedule.decay_rate) << '\n';
  os << "delta_scale = " << format_double(plan.schedule.delta_scale) << '\n';
  os << "smoother = " << to_string(plan.schedule.smoother.kind) << '\n';
  os << "update_interval = " << plan.schedule.smoother.update_interval << '\n';
  os << "seed = " << plan.seed << '\n';
  const auto w = plan.source_weights();
  for (std::size_t s = 0; s < plan.sources.size(); ++s) {
    os << "source." << s << ".weight = " << format_double(w[s]) << '\n';
    os << "source." << s << ".members = " << plan.sources[s].ensemble->size() << '\n';
    if (s < report.source_mass.size()) os << "source." << s << ".alpha_mass = " << format_double(report.source_mass[s]) << '\n';
  }
  os << "\n# iteration gamma delta dev_error\n";
  for (const auto& r : report.curve) {
    os << r.iteration << ' ' << format_double(r.gamma) << ' ' << format_double(r.delta) << ' '
       << format_double(r.error) << '\n';
  }
  os << "\n# final\n";
  os << "iterations = " << report.training.iterations << '\n';
  os << "final_gamma = " << format_double(report.final_gamma) << '\n';
  os << "train_accuracy = " << format_double(report.train.accuracy) << '\n';
  os << "train_log_loss = " << format_double(report.train.log_loss) << '\n';
  os << "test_accuracy = " << format_double(report.test.accuracy) << '\n';
  os << "test_log_loss = " << format_double(report.test.log_loss) << '\n';
}

}  // namespace dropping
