// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dropping/data.hpp"
#include "dropping/ensemble.hpp"
#include "dropping/losses.hpp"
#include "dropping/model.hpp"
#include "dropping/smoothing.hpp"
#include "dropping/trainer.hpp"

namespace dropping {

enum class GammaMode { slope_driven, fixed_decay, constant };

GammaMode parse_gamma_mode(const std::string& s);
std::string to_string(GammaMode m);

/// State of the source/target blend coefficient.
struct GammaSchedule {
  GammaMode mode = GammaMode::slope_driven;
  double gamma = 1.0;
  double delta_accum = 0.0;
  /// Multiplier per update in fixed_decay mode.
  double decay_rate = 0.9;
  /// Scale applied to |delta| before accumulation in slope_driven mode.
  double delta_scale = 10.0;
  SmootherConfig smoother;

  void validate() const;
};

/// slope_driven: delta_accum += |delta| * delta_scale, gamma = exp(-delta_accum).
/// fixed_decay:  gamma *= decay_rate.
/// constant:     unchanged.
/// gamma is clamped to [0, 1]. Throws NumericError on a non-finite delta.
GammaSchedule gamma_from_delta(GammaSchedule schedule, double delta);

/// gamma * source + (1 - gamma) * target.
Probs combine_outputs(const Probs& source, const Probs& target, double gamma);

/// How pooled source members are weighted in the vote.
///   softmax:  alpha_j proportional to w_s * exp(score_j / temperature), scores on target dev
///   uniform:  alpha_j = w_s / N_s (plain averaging)
///   ensemble: alpha_j = w_s * alpha of member j inside its own ensemble
enum class SourceWeighting { softmax, uniform, ensemble };

SourceWeighting parse_source_weighting(const std::string& s);
std::string to_string(SourceWeighting w);

enum class BaselineKind { dropping, hard_full, freeze_lower };

BaselineKind parse_baseline_kind(const std::string& s);
std::string to_string(BaselineKind b);

struct TransferSource {
  const DroppingEnsemble* ensemble = nullptr;
  double weight = 1.0;
};

struct TransferPlan {
  std::vector<TransferSource> sources;
  /// Architecture of the target model (vocabulary shared with the sources).
  ModelConfig target;
  TrainConfig train;
  GammaSchedule schedule;
  SourceWeighting weighting = SourceWeighting::softmax;
  double temperature = 0.05;
  Averaging averaging = Averaging::arithmetic;
  BaselineKind baseline = BaselineKind::dropping;
  std::uint64_t seed = 0;
  /// Threads for source-member forward passes.
  std::size_t jobs = 1;

  /// Source weights scaled to sum to 1.
  std::vector<double> source_weights() const;
  void validate() const;
};

/// All source members flattened into one weighted vote.
struct PooledVote {
  std::vector<const PairModel*> members;
  /// Index of the source each member came from.
  std::vector<std::size_t> source_of;
  std::vector<double> alpha;
  Averaging averaging = Averaging::arithmetic;

  /// Total alpha mass per source.
  std::vector<double> source_mass(std::size_t sources) const;
};

/// Builds the pooled vote for `plan`. Scores are dev accuracies of each member on `target_dev`
/// (only consulted for softmax weighting). Throws ConfigError when class counts disagree.
PooledVote pool_sources(const TransferPlan& plan, std::span<const EncodedPair> target_dev);

/// Per-instance pooled vote. Member forward passes run on up to `jobs` threads.
std::vector<Probs> pooled_predict(const PooledVote& vote, std::span<const EncodedPair> data, std::size_t jobs = 1);

/// Metrics of the pooled vote on `test`.
Metrics zero_shot_eval(const PooledVote& vote, std::span<const EncodedPair> test);
/// Each source's own ensemble vote, averaged with the normalised source weights.
Metrics zero_shot_eval(std::span<const TransferSource> sources, std::span<const EncodedPair> test);

/// Deep copy of `source` for a target with `target` architecture. Only the class count may
/// differ (the output head is then re-initialised); anything else is a ConfigError.
PairModel hard_transfer(const PairModel& source, const ModelConfig& target, std::mt19937_64& rng);

/// True for parameters frozen by freeze_lower_finetune: embeddings and the first GRU layer.
bool is_lower_parameter(const std::string& name);

/// Hard transfer, then training with embeddings and the first GRU layer frozen.
/// Throws ConfigError for single-layer sources.
PairModel freeze_lower_finetune(const PairModel& source, const ModelConfig& target, std::span<const EncodedPair> train,
                                std::span<const EncodedPair> dev, const TrainConfig& config,
                                const ClassWeights& weights, std::mt19937_64& rng, TrainResult* result = nullptr);

/// One evaluation point of a transfer run.
struct CurveRow {
  std::size_t iteration = 0;
  double error = 0.0;
  double smoothed = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
};

/// CSV with header iteration,error,smoothed,delta,gamma.
void write_curve_csv(std::ostream& os, const std::vector<CurveRow>& rows);
/// Throws InputError on a missing header or malformed row.
std::vector<CurveRow> read_curve_csv(std::istream& is);

/// Observer that records the dev-error curve and updates gamma every U iterations.
class GammaController : public TrainObserver {
 public:
  explicit GammaController(GammaSchedule schedule);
  double gamma() const override { return schedule_.gamma; }
  void on_evaluation(std::size_t iteration, double dev_error, double dev_loss) override;

  const GammaSchedule& schedule() const { return schedule_; }
  const ErrorCurve& curve() const { return curve_; }
  const std::vector<CurveRow>& rows() const { return rows_; }

 private:
  GammaSchedule schedule_;
  ErrorCurve curve_;
  std::vector<CurveRow> rows_;
  double last_delta_ = 0.0;
};

struct TransferReport {
  BaselineKind baseline = BaselineKind::dropping;
  Metrics train;
  Metrics test;
  double final_gamma = 0.0;
  /// Pooled member weights (empty for the parameter-transfer baselines).
  std::vector<double> alpha;
  std::vector<double> source_mass;
  std::vector<CurveRow> curve;
  TrainResult training;
};

struct TransferOutcome {
  PairModel target;
  TransferReport report;
};

/// Trains a target model on the few-shot set according to plan.baseline:
///   dropping:     fresh target, outputs blended with the pooled source vote under the gamma schedule
///   hard_full:    copy of the best member of the first source, fine-tuned
///   freeze_lower: as hard_full with embeddings and first layer frozen
/// Sources are never modified. On a non-finite loss the curve so far is written as CSV to
/// `diagnostics` (when given) and the NumericError is rethrown.
TransferOutcome few_shot_dropping_transfer(const TransferPlan& plan, std::span<const EncodedPair> train,
                                           std::span<const EncodedPair> dev, std::span<const EncodedPair> test,
                                           const ClassWeights& weights, std::ostream* diagnostics = nullptr);

/// Structured-text report: config echo, per-evaluation rows, final metrics.
void write_transfer_report(std::ostream& os, const TransferPlan& plan, const TransferReport& report);

}  // namespace dropping
