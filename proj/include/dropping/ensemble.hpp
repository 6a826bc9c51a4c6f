// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dropping/data.hpp"
#include "dropping/model.hpp"
#include "dropping/trainer.hpp"

namespace dropping {

enum class Averaging { arithmetic, geometric };

Averaging parse_averaging(const std::string& s);
std::string to_string(Averaging a);

struct BagConfig {
  std::size_t n_members = 10;
  double sample_fraction = 1.0;
  bool with_replacement = true;
  /// Dropout rate p_d applied to every member.
  double dropout = 0.5;
  TrainConfig train;
  /// Softmax temperature for performance-based vote weights.
  double temperature = 0.05;
  Averaging averaging = Averaging::arithmetic;
  /// Members trained concurrently.
  std::size_t jobs = 1;

  void validate() const;
};

struct MemberMeta {
  std::uint64_t seed = 0;
  double dropout = 0.0;
  double dev_score = 0.0;  // dev accuracy as a fraction
};

struct DroppingEnsemble {
  std::vector<PairModel> members;
  std::vector<double> alpha;
  std::vector<MemberMeta> meta;
  Averaging averaging = Averaging::arithmetic;
  /// Members dropped after diverging during training.
  std::vector<MemberMeta> excluded;

  std::size_t size() const { return members.size(); }
  /// Throws StateError when empty or when alpha is off the simplex.
  void validate() const;
};

/// Per-member seeds derived from one root seed.
std::uint64_t member_seed(std::uint64_t root, std::size_t index);

/// ceil(fraction * n) indices drawn uniformly (with or without replacement).
std::vector<std::size_t> bag_sample(std::size_t dataset_size, const BagConfig& config, std::mt19937_64& rng);

/// softmax(scores / temperature).
std::vector<double> softmax_weights(std::span<const double> scores, double temperature);

/// Weighted vote over member outputs for one instance.
///   arithmetic: sum_i alpha_i p_i
///   geometric:  exp(sum_i alpha_i log p_i), renormalised
Probs combine_votes(std::span<const Probs> member_outputs, std::span<const double> alpha, Averaging mode);

/// Outputs of every member on every instance: [member][instance].
std::vector<std::vector<Probs>> member_predictions(const DroppingEnsemble& ensemble, std::span<const EncodedPair> data);

/// Dev accuracy (fraction) of each member.
std::vector<double> member_scores(const DroppingEnsemble& ensemble, std::span<const EncodedPair> dev);

/// Moves member `index` to the excluded list and renormalises the remaining vote weights.
/// Throws StateError if it is the last member.
void exclude_member(DroppingEnsemble& ensemble, std::size_t index);

/// Re-scores members on `dev` and resets alpha to softmax(scores / temperature).
void rescore_ensemble(DroppingEnsemble& ensemble, std::span<const EncodedPair> dev, double temperature);

std::vector<Probs> ensemble_predict(const DroppingEnsemble& ensemble, std::span<const EncodedPair> data);

/// Trains N bagged, dropout-regularised members. Members whose loss diverges are
/// excluded with a warning. alpha is softmax_weights of the survivors' dev scores.
DroppingEnsemble train_dropping_ensemble(std::span<const EncodedPair> train, std::span<const EncodedPair> dev,
                                         const ClassWeights& weights, const ModelConfig& model_config,
                                         const BagConfig& config, std::uint64_t seed);

/// Directory of member checkpoints plus manifest.txt.
void save_ensemble(const DroppingEnsemble& ensemble, const std::string& dir);
DroppingEnsemble load_ensemble(const std::string& dir);

}  // namespace dropping
