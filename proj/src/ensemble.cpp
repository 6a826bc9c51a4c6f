// SPDX-License-Identifier: Apache-2.0
#include "dropping/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

#include "dropping/errors.hpp"
#include "dropping/io.hpp"

namespace dropping {

Averaging parse_averaging(const std::string& s) {
  if (s == "arithmetic") return Averaging::arithmetic;
  if (s == "geometric") return Averaging::geometric;
  throw ConfigError("unknown averaging mode '" + s + "' (expected arithmetic|geometric)");
}

std::string to_string(Averaging a) { return a == Averaging::geometric ? "geometric" : "arithmetic"; }

void BagConfig::validate() const {
  if (n_members < 1) throw ConfigError("ensemble: at least one member required");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) throw ConfigError("ensemble: sample fraction must lie in (0, 1]");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("ensemble: dropout must lie in [0, 1)");
  if (!(temperature > 0.0)) throw ConfigError("ensemble: temperature must be positive");
  train.validate();
}

void DroppingEnsemble::validate() const {
  if (members.empty()) throw StateError("ensemble has no members");
  if (alpha.size() != members.size()) throw StateError("ensemble: one vote weight per member required");
  double total = 0.0;
  for (double a : alpha) {
    if (!(a >= 0.0)) throw StateError("ensemble: negative vote weight");
    total += a;
  }
  if (std::fabs(total - 1.0) > 1e-10) throw StateError("ensemble: vote weights do not sum to 1");
}

std::uint64_t member_seed(std::uint64_t root, std::size_t index) {
  return splitmix64(splitmix64(root) + static_cast<std::uint64_t>(index));
}

std::vector<std::size_t> bag_sample(std::size_t dataset_size, const BagConfig& config, std::mt19937_64& rng) {
  if (!(config.sample_fraction > 0.0 && config.sample_fraction <= 1.0)) {
    throw ConfigError("bag_sample: fraction must lie in (0, 1]");
  }
  if (dataset_size == 0) throw InputError("bag_sample: empty dataset");
  const auto count = static_cast<std::size_t>(std::ceil(config.sample_fraction * static_cast<double>(dataset_size)));
  std::vector<std::size_t> out;
  out.reserve(count);
  if (config.with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, dataset_size - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pick(rng));
  } else {
    std::vector<std::size_t> all(dataset_size);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    out.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count));
  }
  return out;
}

std::vector<double> softmax_weights(std::span<const double> scores, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("softmax_weights: temperature must be positive");
  if (scores.empty()) throw InputError("softmax_weights: no scores");
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    w[i] = std::exp((scores[i] - mx) / temperature);
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

Probs combine_votes(std::span<const Probs> member_outputs, std::span<const double> alpha, Averaging mode) {
  if (member_outputs.empty() || member_outputs.size() != alpha.size()) {
    throw ShapeError("combine_votes: need one weight per member output");
  }
  const std::size_t m = member_outputs.front().size();
  Probs out(m, 0.0);
  for (std::size_t i = 0; i < member_outputs.size(); ++i) {
    if (member_outputs[i].size() != m) throw ShapeError("combine_votes: members disagree on class count");
    for (std::size_t c = 0; c < m; ++c) {
      out[c] += mode == Averaging::arithmetic ? alpha[i] * member_outputs[i][c]
                                              : alpha[i] * std::log(std::max(member_outputs[i][c], 1e-300));
    }
  }
  if (mode == Averaging::geometric) {
    const double mx = *std::max_element(out.begin(), out.end());
    double total = 0.0;
    for (auto& v : out) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : out) v /= total;
  }
  return out;
}

std::vector<std::vector<Probs>> member_predictions(const DroppingEnsemble& ensemble, std::span<const EncodedPair> data) {
  std::vector<std::vector<Probs>> out;
  out.reserve(ensemble.size());
  for (const auto& m : ensemble.members) out.push_back(predict_all(m, data));
  return out;
}

std::vector<double> member_scores(const DroppingEnsemble& ensemble, std::span<const EncodedPair> dev) {
  std::vector<double> scores;
  for (const auto& m : ensemble.members) scores.push_back(evaluate_model(m, dev).accuracy / 100.0);
  return scores;
}

void exclude_member(DroppingEnsemble& ensemble, std::size_t index) {
  if (index >= ensemble.size()) throw InputError("exclude_member: no member " + std::to_string(index));
  if (ensemble.size() == 1) throw StateError("exclude_member: cannot exclude the last member");
  const auto at = static_cast<std::ptrdiff_t>(index);
  ensemble.excluded.push_back(ensemble.meta[index]);
  ensemble.members.erase(ensemble.members.begin() + at);
  ensemble.meta.erase(ensemble.meta.begin() + at);
  ensemble.alpha.erase(ensemble.alpha.begin() + at);
  double total = std::accumulate(ensemble.alpha.begin(), ensemble.alpha.end(), 0.0);
  if (total > 0.0) {
    for (auto& a : ensemble.alpha) a /= total;
  } else {
    ensemble.alpha.assign(ensemble.size(), 1.0 / static_cast<double>(ensemble.size()));
  }
}

void rescore_ensemble(DroppingEnsemble& ensemble, std::span<const EncodedPair> dev, double temperature) {
  const auto scores = member_scores(ensemble, dev);
  ensemble.alpha = softmax_weights(scores, temperature);
  for (std::size_t i = 0; i < scores.size(); ++i) ensemble.meta[i].dev_score = scores[i];
}

std::vector<Probs> ensemble_predict(const DroppingEnsemble& ensemble, std::span<const EncodedPair> data) {
  ensemble.validate();
  const auto per_member = member_predictions(ensemble, data);
  std::vector<Probs> out;
  out.reserve(data.size());
  std::vector<Probs> votes(ensemble.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    for (std::size_t i = 0; i < ensemble.size(); ++i) votes[i] = per_member[i][n];
    out.push_back(combine_votes(votes, ensemble.alpha, ensemble.averaging));
  }
  return out;
}

DroppingEnsemble train_dropping_ensemble(std::span<const EncodedPair> train, std::span<const EncodedPair> dev,
                                         const ClassWeights& weights, const ModelConfig& model_config,
                                         const BagConfig& config, std::uint64_t seed) {
  config.validate();
  if (train.empty() || dev.empty()) throw InputError("train_dropping_ensemble: empty train or dev split");
  ModelConfig member_config = model_config;
  member_config.dropout = config.dropout;

  struct Slot {
    std::optional<PairModel> model;
    MemberMeta meta;
    std::string failure;
  };
  std::vector<Slot> slots(config.n_members);

  auto train_member = [&](std::size_t i) {
    Slot& slot = slots[i];
    slot.meta.seed = member_seed(seed, i);
    slot.meta.dropout = config.dropout;
    std::mt19937_64 rng(slot.meta.seed);
    const auto bag = bag_sample(train.size(), config, rng);
    std::vector<EncodedPair> bagged;
    bagged.reserve(bag.size());
    for (auto k : bag) bagged.push_back(train[k]);
    PairModel model(member_config, rng);
    try {
      train_model(model, bagged, dev, config.train, weights, rng);
      slot.meta.dev_score = evaluate_model(model, dev).accuracy / 100.0;
      slot.model = std::move(model);
    } catch (const NumericError& e) {
      slot.failure = e.what();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(config.jobs, 1, config.n_members);
  if (jobs == 1) {
    for (std::size_t i = 0; i < config.n_members; ++i) train_member(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        while (true) {
          std::size_t i;
          {
            std::lock_guard lock(mu);
            if (next >= config.n_members) return;
            i = next++;
          }
          train_member(i);
        }
      });
    }
    for (auto& t : workers) t.join();
  }

  DroppingEnsemble ens;
  ens.averaging = config.averaging;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].model) {
      ens.members.push_back(std::move(*slots[i].model));
      ens.meta.push_back(slots[i].meta);
    } else {
      std::cerr << "warning: ensemble member " << i << " excluded: " << slots[i].failure << '\n';
      ens.excluded.push_back(slots[i].meta);
    }
  }
  if (ens.members.empty()) throw StateError("train_dropping_ensemble: every member diverged");
  std::vector<double> scores;
  for (const auto& m : ens.meta) scores.push_back(m.dev_score);
  ens.alpha = softmax_weights(scores, config.temperature);
  return ens;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kEnsembleMagic = "dropping-ensemble";
constexpr int kEnsembleVersion = 1;

std::string member_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "member_%03zu.ckpt", i);
  return buf;
}

}  // namespace

void save_ensemble(const DroppingEnsemble& ensemble, const std::string& dir) {
  ensemble.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / "manifest.txt");
  if (!os) throw InputError("cannot write ensemble manifest in " + dir);
  os << kEnsembleMagic << ' ' << kEnsembleVersion << '\n';
  os << "averaging " << to_string(ensemble.averaging) << '\n';
  os << "members " << ensemble.size() << '\n';
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const auto& m = ensemble.meta[i];
    os << "member " << member_file(i) << " seed " << m.seed << " dropout " << format_double(m.dropout)
       << " dev_score " << format_double(m.dev_score) << " alpha " << format_double(ensemble.alpha[i]) << '\n';
    save_model(ensemble.members[i], (fs::path(dir) / member_file(i)).string());
  }
  os << "excluded " << ensemble.excluded.size() << '\n';
  for (const auto& m : ensemble.excluded) {
    os << "excluded_member seed " << m.seed << " dropout " << format_double(m.dropout) << '\n';
  }
}

DroppingEnsemble load_ensemble(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.txt");
  if (!is) throw InputError("cannot read ensemble manifest in " + dir);
  std::string magic, key, value;
  int version = 0;
  is >> magic >> version;
  if (magic != kEnsembleMagic || version != kEnsembleVersion) throw InputError("not an ensemble manifest: " + dir);
  DroppingEnsemble ens;
  std::size_t count = 0;
  is >> key >> value;
  if (key != "averaging") throw InputError("ensemble manifest: expected averaging");
  ens.averaging = parse_averaging(value);
  is >> key >> count;
  if (key != "members") throw InputError("ensemble manifest: expected members");
  for (std::size_t i = 0; i < count; ++i) {
    std::string file, k_seed, k_drop, k_score, k_alpha, drop, score, alpha;
    MemberMeta meta;
    if (!(is >> key >> file >> k_seed >> meta.seed >> k_drop >> drop >> k_score >> score >> k_alpha >> alpha) ||
        key != "member") {
      throw InputError("ensemble manifest: malformed member line " + std::to_string(i));
    }
    meta.dropout = parse_double(drop);
    meta.dev_score = parse_double(score);
    ens.meta.push_back(meta);
    ens.alpha.push_back(parse_double(alpha));
    ens.members.push_back(load_model((fs::path(dir) / file).string()));
  }
  std::size_t excluded = 0;
  if (is >> key >> excluded && key == "excluded") {
    for (std::size_t i = 0; i < excluded; ++i) {
      MemberMeta meta;
      std::string k1, k2, drop;
      is >> key >> k1 >> meta.seed >> k2 >> drop;
      meta.dropout = parse_double(drop);
      ens.excluded.push_back(meta);
    }
  }
  ens.validate();
  return ens;
}

}  // namespace dropping
