// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dropping/data.hpp"
#include "dropping/ensemble.hpp"
#include "dropping/model.hpp"
#include "dropping/smoothing.hpp"
#include "dropping/trainer.hpp"
#include "dropping/transfer.hpp"

namespace dropping {

/// Flat `section.key -> value` settings. Text form:
///
///   # comment
///   [model]
///   hidden = 16
///
/// Keys outside any section keep their bare name.
class ConfigMap {
 public:
  static ConfigMap parse(std::istream& is, const std::string& origin = "<config>");
  static ConfigMap load(const std::string& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  /// Entries of `over` replace ours.
  void merge(const ConfigMap& over);
  const std::map<std::string, std::string>& entries() const { return entries_; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

 private:
  std::map<std::string, std::string> entries_;
};

struct ConfigKey {
  const char* name;
  const char* help;
};

/// Every recognised configuration key. CLI flags are `--<key>`.
const std::vector<ConfigKey>& config_keys();

/// Typed view of one run.
struct ExperimentConfig {
  std::string command;

  /// Pair file, or `synth:` followed by comma-separated synth.* overrides (e.g. `synth:shift=0.1,size=500`).
  std::string data;
  PairFormat format = PairFormat::tsv;
  /// Existing vocabulary to encode with; defaults to the data's own (or the sources').
  std::string vocab;
  double train_fraction = 0.8;
  double dev_fraction = 0.1;
  /// Pair-swap augmentation rate on the training split; 0 disables it.
  double swap_rate = 0.0;

  ModelConfig model;
  TrainConfig train;
  BagConfig bag;
  GammaSchedule schedule;
  SynthSpec synth;
  /// Seed of generated data; derived from `seed` when unset.
  std::optional<std::uint64_t> synth_seed;

  std::vector<std::string> sources;
  std::vector<double> source_weights;
  /// Empty means the command default (ensemble for transfer-zero, softmax for transfer-few).
  std::string weighting;
  double temperature = 0.05;
  BaselineKind baseline = BaselineKind::dropping;
  double fewshot_fraction = 0.03;
  /// Absolute few-shot size; overrides the fraction when positive.
  std::size_t fewshot_size = 0;
  std::size_t genre_min = 100;
  bool compare_target_only = true;

  std::string eval_model;
  std::string eval_ensemble;
  std::string plot_curve;
  std::string plot_out;

  std::uint64_t seed = 1;
  std::string out_dir;
  std::size_t jobs = 1;

  /// Throws ConfigError naming the first bad setting.
  void validate() const;
};

/// Builds the typed config. Unknown keys are a ConfigError. `out_dir` falls back to
/// $DROPPING_OUT_DIR, then "runs".
ExperimentConfig config_from_map(const ConfigMap& map);
/// Inverse of config_from_map (every key written explicitly).
ConfigMap config_to_map(const ExperimentConfig& config);

/// Independent seed for a named component of a run.
std::uint64_t derive_seed(std::uint64_t root, const std::string& component);

/// Writes `phase,split,accuracy,log_loss` rows.
struct MetricsRow {
  std::string phase;
  std::string split;
  Metrics metrics;
};
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

/// Runs the named pipeline, writing outputs under config.out_dir. Progress goes to `log`.
/// Returns 0 on success; errors propagate as dropping::Error.
int run_experiment(const ExperimentConfig& config, std::ostream& log);

}  // namespace dropping
