// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dropping/losses.hpp"

namespace dropping {

struct PairInstance {
  std::vector<std::string> sentence1;
  std::vector<std::string> sentence2;
  std::size_t label = 0;
  std::optional<std::string> genre;
  std::size_t pair_id = 0;
};

/// Token to id map. Id 0 is the shared out-of-vocabulary slot.
class Vocabulary {
 public:
  static constexpr std::size_t kOov = 0;
  static constexpr const char* kOovToken = "<oov>";

  Vocabulary();

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const;

  /// `token<TAB>id` per line, in id order.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct PairDataset {
  std::vector<PairInstance> instances;
  std::vector<std::string> label_names;
  Vocabulary vocab;
  ClassWeights class_weights;
  std::vector<std::string> genres;
  std::size_t dropped = 0;
  std::vector<std::string> warnings;

  std::size_t size() const { return instances.size(); }
  std::size_t classes() const { return label_names.size(); }
  bool empty() const { return instances.empty(); }
  /// Same labels, vocabulary and genres with the given instances.
  PairDataset with_instances(std::vector<PairInstance> subset) const;
};

struct EncodedPair {
  std::vector<std::size_t> s1;
  std::vector<std::size_t> s2;
  std::size_t label = 0;
};

std::vector<EncodedPair> encode(const PairDataset& data, const Vocabulary& vocab);
inline std::vector<EncodedPair> encode(const PairDataset& data) { return encode(data, data.vocab); }

/// Lowercases and splits on whitespace; punctuation characters become single tokens.
std::vector<std::string> tokenize(const std::string& text);

enum class PairFormat { tsv, snli_jsonl };
PairFormat parse_pair_format(const std::string& s);

/// Loads `label<TAB>s1<TAB>s2[<TAB>genre]` or SNLI-style JSON lines. Labels are
/// indexed in sorted name order; rows labelled "-" are dropped and counted.
PairDataset load_pairs(const std::string& path, PairFormat format);

/// Writes the TSV format read by load_pairs.
void save_pairs_tsv(const PairDataset& data, const std::string& path);

/// Appends swapped copies of ceil(rate * n) randomly chosen instances.
PairDataset pair_swap_augment(const PairDataset& data, std::mt19937_64& rng, double rate);

/// Inverse class frequency normalised to mean 1.
ClassWeights class_weights(const PairDataset& data);

/// Draws ceil(fraction * n) instances (more if genre minimums require it).
/// Returns (sample, remainder); instances sharing a pair_id stay on one side.
std::pair<PairDataset, PairDataset> few_shot_sample(const PairDataset& data, double fraction, std::size_t genre_min,
                                                    std::mt19937_64& rng);

struct DataSplits {
  PairDataset train, dev, test;
};

/// Shuffled train/dev/test partition by fractions; test gets the rest.
DataSplits split_dataset(const PairDataset& data, double train_fraction, double dev_fraction, std::mt19937_64& rng);

enum class SynthRule { overlap_threshold, order_sensitive };
SynthRule parse_synth_rule(const std::string& s);
std::string to_string(SynthRule r);

struct SynthSpec {
  std::size_t vocab_size = 30;
  SynthRule rule = SynthRule::overlap_threshold;
  double noise = 0.0;
  /// 0 = pure overlap task; larger values blend a topic cue into the score, so
  /// small shifts give related tasks and large ones unrelated tasks.
  double shift = 0.0;
  std::size_t size = 1000;
  std::size_t min_length = 4;
  std::size_t max_length = 8;
  double base_threshold = 0.5;
  /// Pairs whose score lies within this distance of the threshold are redrawn.
  double margin = 0.1;
};

/// 1 when most tokens of the sentence come from the lower half of the synthetic vocabulary, else 0.
double synth_topic(const std::vector<std::string>& sentence, std::size_t vocab_size);

/// Similarity score used by the synthetic labelling rule.
double synth_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b, SynthRule rule);

/// Labelling score: (1 - shift) * similarity(s1, s2) + shift * topic(s1).
double synth_score(const std::vector<std::string>& a, const std::vector<std::string>& b, const SynthSpec& spec);

/// Balanced synthetic pair task. Label 1 iff synth_score >= base_threshold, then flipped with probability noise.
/// Pairs scoring within `margin` of the threshold are rejected.
/// The vocabulary holds every synthetic token in a fixed order, so tasks with the
/// same vocab_size share token ids.
PairDataset synth_task(const SynthSpec& spec, std::mt19937_64& rng);

}  // namespace dropping
