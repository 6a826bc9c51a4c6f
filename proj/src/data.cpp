// SPDX-License-Identifier: Apache-2.0
#include "dropping/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dropping/errors.hpp"

namespace dropping {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() { add(kOovToken); }

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kOov : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw InputError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write vocabulary " + path);
  for (std::size_t i = 0; i < tokens_.size(); ++i) os << tokens_[i] << '\t' << i << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read vocabulary " + path);
  Vocabulary v;
  std::string line;
  std::size_t expected = 0;
  while (std::getline(is, line)) {
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw InputError("vocabulary: malformed line '" + line + "'");
    const std::string token = line.substr(0, tab);
    const std::size_t id = std::stoul(line.substr(tab + 1));
    if (id != expected++) throw InputError("vocabulary: ids must be dense and ordered");
    if (id == kOov) continue;
    if (v.add(token) != id) throw InputError("vocabulary: duplicate token '" + token + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Dataset helpers

PairDataset PairDataset::with_instances(std::vector<PairInstance> subset) const {
  PairDataset out;
  out.instances = std::move(subset);
  out.label_names = label_names;
  out.vocab = vocab;
  out.class_weights = class_weights;
  out.genres = genres;
  return out;
}

std::vector<EncodedPair> encode(const PairDataset& data, const Vocabulary& vocab) {
  std::vector<EncodedPair> out;
  out.reserve(data.size());
  for (const auto& inst : data.instances) out.push_back({vocab.encode(inst.sentence1), vocab.encode(inst.sentence2), inst.label});
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

PairFormat parse_pair_format(const std::string& s) {
  if (s == "tsv") return PairFormat::tsv;
  if (s == "snli_jsonl" || s == "jsonl") return PairFormat::snli_jsonl;
  throw ConfigError("unknown dataset format '" + s + "' (expected tsv|snli_jsonl)");
}

namespace {

struct RawRow {
  std::string label, s1, s2;
  std::optional<std::string> genre;
};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

std::optional<RawRow> parse_row(const std::string& line, PairFormat format, std::string& why) {
  if (format == PairFormat::tsv) {
    auto cols = split_tabs(line);
    if (cols.size() < 3 || cols.size() > 4) {
      why = "expected 3 or 4 tab-separated columns, found " + std::to_string(cols.size());
      return std::nullopt;
    }
    RawRow r{cols[0], cols[1], cols[2], std::nullopt};
    if (cols.size() == 4 && !cols[3].empty()) r.genre = cols[3];
    return r;
  }
  try {
    auto j = nlohmann::json::parse(line);
    RawRow r{j.at("gold_label").get<std::string>(), j.at("sentence1").get<std::string>(),
             j.at("sentence2").get<std::string>(), std::nullopt};
    if (j.contains("genre") && j["genre"].is_string()) r.genre = j["genre"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    why = e.what();
    return std::nullopt;
  }
}

}  // namespace

PairDataset load_pairs(const std::string& path, PairFormat format) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read dataset " + path);

  std::vector<RawRow> rows;
  std::vector<std::string> warnings;
  std::size_t dropped = 0;
  std::size_t line_no = 0;
  std::size_t nonblank = 0;
  std::string line;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++nonblank;
    std::string why;
    auto row = parse_row(line, format, why);
    if (row && (tokenize(row->s1).empty() || tokenize(row->s2).empty())) {
      row.reset();
      why = "empty sentence";
    }
    if (!row) {
      warnings.push_back(path + ":" + std::to_string(line_no) + ": skipped malformed row (" + why + ")");
      continue;
    }
    if (row->label.empty() || row->label == "-") {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(*row));
  }
  if (rows.empty()) {
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    throw InputError("dataset " + path + (dropped == 0 && nonblank > 0 ? ": every row is malformed" : ": no labelled rows"));
  }

  std::set<std::string> names;
  std::set<std::string> genres;
  for (const auto& r : rows) {
    names.insert(r.label);
    if (r.genre) genres.insert(*r.genre);
  }
  PairDataset data;
  data.label_names.assign(names.begin(), names.end());
  data.genres.assign(genres.begin(), genres.end());
  data.dropped = dropped;
  data.warnings = std::move(warnings);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    PairInstance inst;
    inst.sentence1 = tokenize(rows[i].s1);
    inst.sentence2 = tokenize(rows[i].s2);
    inst.label = static_cast<std::size_t>(
        std::lower_bound(data.label_names.begin(), data.label_names.end(), rows[i].label) - data.label_names.begin());
    inst.genre = rows[i].genre;
    inst.pair_id = i;
    for (const auto& t : inst.sentence1) data.vocab.add(t);
    for (const auto& t : inst.sentence2) data.vocab.add(t);
    data.instances.push_back(std::move(inst));
  }
  for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
  data.class_weights = class_weights(data);
  return data;
}

void save_pairs_tsv(const PairDataset& data, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write dataset " + path);
  auto join = [](const std::vector<std::string>& toks) {
    std::string s;
    for (std::size_t i = 0; i < toks.size(); ++i) s += (i ? " " : "") + toks[i];
    return s;
  };
  for (const auto& inst : data.instances) {
    os << data.label_names.at(inst.label) << '\t' << join(inst.sentence1) << '\t' << join(inst.sentence2);
    if (inst.genre) os << '\t' << *inst.genre;
    os << '\n';
  }
}

PairDataset pair_swap_augment(const PairDataset& data, std::mt19937_64& rng, double rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("pair_swap_augment: rate must lie in [0, 1]");
  PairDataset out = data;
  const auto count = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(data.size())));
  if (count == 0) return out;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t next_id = 0;
  for (const auto& inst : data.instances) next_id = std::max(next_id, inst.pair_id + 1);
  for (std::size_t k = 0; k < count; ++k) {
    PairInstance swapped = data.instances[order[k]];
    std::swap(swapped.sentence1, swapped.sentence2);
    swapped.pair_id = next_id++;
    out.instances.push_back(std::move(swapped));
  }
  return out;
}

ClassWeights class_weights(const PairDataset& data) {
  const std::size_t m = data.classes();
  if (m == 0) throw InputError("class_weights: dataset has no label names");
  std::vector<double> counts(m, 0.0);
  for (const auto& inst : data.instances) counts.at(inst.label) += 1.0;
  for (std::size_t c = 0; c < m; ++c) {
    if (counts[c] == 0.0) throw InputError("class_weights: class '" + data.label_names[c] + "' has no instances");
  }
  std::vector<double> inv(m);
  for (std::size_t c = 0; c < m; ++c) inv[c] = 1.0 / counts[c];
  const double mean = std::accumulate(inv.begin(), inv.end(), 0.0) / static_cast<double>(m);
  for (auto& w : inv) w /= mean;
  return {inv};
}

namespace {

using Groups = std::vector<std::vector<std::size_t>>;

// Instances grouped by pair_id, in first-appearance order.
Groups group_by_pair_id(const PairDataset& data) {
  std::map<std::size_t, std::size_t> slot;
  Groups groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto [it, inserted] = slot.emplace(data.instances[i].pair_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

// Shuffles the groups and takes whole groups until at least `quota` instances are chosen.
void take_groups(Groups groups, std::size_t quota, std::mt19937_64& rng, std::vector<char>& chosen) {
  std::shuffle(groups.begin(), groups.end(), rng);
  std::size_t taken = 0;
  for (const auto& g : groups) {
    if (taken >= quota) break;
    for (auto i : g) chosen[i] = 1;
    taken += g.size();
  }
}

// Per-genre quotas: proportional to genre size, each at least genre_min.
std::vector<std::size_t> genre_quotas(const std::vector<std::size_t>& sizes, std::size_t target, std::size_t genre_min) {
  const std::size_t k = sizes.size();
  std::vector<char> fixed(k, 0);
  std::vector<double> share(k, 0.0);
  while (true) {
    double budget = static_cast<double>(target);
    double free_total = 0.0;
    for (std::size_t g = 0; g < k; ++g) {
      if (fixed[g]) budget -= static_cast<double>(genre_min);
      else free_total += static_cast<double>(sizes[g]);
    }
    bool changed = false;
    for (std::size_t g = 0; g < k; ++g) {
      if (fixed[g]) continue;
      share[g] = budget > 0.0 && free_total > 0.0 ? budget * static_cast<double>(sizes[g]) / free_total : 0.0;
      if (share[g] < static_cast<double>(genre_min)) {
        fixed[g] = 1;
        changed = true;
      }
    }
    if (!changed) break;
  }
  // Largest-remainder rounding of the free shares.
  std::vector<std::size_t> quota(k, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  double free_sum = 0.0;
  for (std::size_t g = 0; g < k; ++g) {
    if (fixed[g]) {
      quota[g] = genre_min;
      continue;
    }
    quota[g] = static_cast<std::size_t>(std::floor(share[g]));
    assigned += quota[g];
    free_sum += share[g];
    remainders.emplace_back(share[g] - std::floor(share[g]), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  auto leftover = static_cast<std::size_t>(std::llround(free_sum)) - std::min(assigned, static_cast<std::size_t>(std::llround(free_sum)));
  for (std::size_t i = 0; i < remainders.size() && leftover > 0; ++i, --leftover) ++quota[remainders[i].second];
  return quota;
}

}  // namespace

std::pair<PairDataset, PairDataset> few_shot_sample(const PairDataset& data, double fraction, std::size_t genre_min,
                                                    std::mt19937_64& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("few_shot_sample: fraction must lie in (0, 1)");
  if (data.empty()) throw InputError("few_shot_sample: empty dataset");
  const auto target = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(data.size())));
  const Groups groups = group_by_pair_id(data);
  std::vector<char> chosen(data.size(), 0);

  const bool has_genres = std::any_of(data.instances.begin(), data.instances.end(),
                                      [](const PairInstance& p) { return p.genre.has_value(); });
  if (!has_genres) {
    take_groups(groups, target, rng, chosen);
  } else {
    std::map<std::string, Groups> by_genre;
    std::map<std::string, std::size_t> genre_size;
    for (const auto& g : groups) {
      const auto& first = data.instances[g.front()];
      const std::string key = first.genre.value_or("");
      by_genre[key].push_back(g);
      genre_size[key] += g.size();
    }
    std::vector<std::size_t> sizes;
    for (const auto& [name, n] : genre_size) {
      if (n < genre_min) {
        throw ConfigError("few_shot_sample: genre '" + name + "' has " + std::to_string(n) + " instances, fewer than " +
                          std::to_string(genre_min));
      }
      sizes.push_back(n);
    }
    const auto quotas = genre_quotas(sizes, target, genre_min);
    std::size_t k = 0;
    for (auto& [name, gs] : by_genre) take_groups(gs, quotas[k++], rng, chosen);
  }

  std::vector<PairInstance> sample, rest;
  for (std::size_t i = 0; i < data.size(); ++i) (chosen[i] ? sample : rest).push_back(data.instances[i]);
  return {data.with_instances(std::move(sample)), data.with_instances(std::move(rest))};
}

DataSplits split_dataset(const PairDataset& data, double train_fraction, double dev_fraction, std::mt19937_64& rng) {
  if (!(train_fraction > 0.0 && dev_fraction >= 0.0 && train_fraction + dev_fraction < 1.0)) {
    throw ConfigError("split_dataset: need train > 0, dev >= 0 and train + dev < 1");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(data.size());
  const auto n_train = static_cast<std::size_t>(std::round(train_fraction * n));
  const auto n_dev = static_cast<std::size_t>(std::round(dev_fraction * n));
  std::vector<PairInstance> tr, dv, te;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < n_train ? tr : (k < n_train + n_dev ? dv : te);
    dst.push_back(data.instances[order[k]]);
  }
  return {data.with_instances(std::move(tr)), data.with_instances(std::move(dv)), data.with_instances(std::move(te))};
}

// ---------------------------------------------------------------------------
// Synthetic tasks

SynthRule parse_synth_rule(const std::string& s) {
  if (s == "overlap_threshold" || s == "overlap") return SynthRule::overlap_threshold;
  if (s == "order_sensitive" || s == "order") return SynthRule::order_sensitive;
  throw ConfigError("unknown synthetic rule '" + s + "' (expected overlap_threshold|order_sensitive)");
}

std::string to_string(SynthRule r) {
  return r == SynthRule::order_sensitive ? "order_sensitive" : "overlap_threshold";
}

double synth_topic(const std::vector<std::string>& sentence, std::size_t vocab_size) {
  std::size_t low = 0;
  for (const auto& t : sentence) {
    if (t.size() < 2 || t[0] != 't') throw InputError("synth_topic: '" + t + "' is not a synthetic token");
    low += std::stoul(t.substr(1)) < vocab_size / 2;
  }
  return 2 * low > sentence.size() ? 1.0 : 0.0;
}

double synth_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b, SynthRule rule) {
  if (rule == SynthRule::order_sensitive) {
    const std::size_t n = std::max(a.size(), b.size());
    std::size_t same = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) same += a[i] == b[i];
    return n ? static_cast<double>(same) / static_cast<double>(n) : 1.0;
  }
  std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

double synth_score(const std::vector<std::string>& a, const std::vector<std::string>& b, const SynthSpec& spec) {
  return (1.0 - spec.shift) * synth_similarity(a, b, spec.rule) + spec.shift * synth_topic(a, spec.vocab_size);
}

PairDataset synth_task(const SynthSpec& spec, std::mt19937_64& rng) {
  if (spec.size < 10) throw ConfigError("synth_task: size must be at least 10");
  if (!(spec.noise >= 0.0 && spec.noise < 0.5)) throw ConfigError("synth_task: noise must lie in [0, 0.5)");
  if (!(spec.shift >= 0.0 && spec.shift <= 1.0)) throw ConfigError("synth_task: shift must lie in [0, 1]");
  if (spec.vocab_size < 4) throw ConfigError("synth_task: vocab_size must be at least 4");
  if (!(spec.margin >= 0.0 && spec.margin < 0.5)) throw ConfigError("synth_task: margin must lie in [0, 0.5)");
  if (spec.min_length < 1 || spec.max_length < spec.min_length) throw ConfigError("synth_task: bad length range");

  PairDataset data;
  data.label_names = {"0", "1"};
  for (std::size_t t = 0; t < spec.vocab_size; ++t) data.vocab.add("t" + std::to_string(t));

  std::uniform_int_distribution<std::size_t> token(0, spec.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto word = [&] { return "t" + std::to_string(token(rng)); };

  const std::size_t per_class[2] = {spec.size / 2, spec.size - spec.size / 2};
  std::size_t have[2] = {0, 0};
  std::size_t attempts = 0;
  while (have[0] < per_class[0] || have[1] < per_class[1]) {
    if (++attempts > 1000 * spec.size) throw ConfigError("synth_task: cannot balance classes at this shift");
    PairInstance inst;
    const std::size_t len = length(rng);
    for (std::size_t i = 0; i < len; ++i) inst.sentence1.push_back(word());
    // Copy each token with probability `keep`, otherwise substitute a random one.
    const double keep = unit(rng);
    for (const auto& t : inst.sentence1) inst.sentence2.push_back(unit(rng) < keep ? t : word());
    const double score = synth_score(inst.sentence1, inst.sentence2, spec);
    if (std::fabs(score - spec.base_threshold) < spec.margin) continue;
    const std::size_t label = score >= spec.base_threshold ? 1 : 0;
    if (have[label] >= per_class[label]) continue;
    ++have[label];
    inst.label = label;
    data.instances.push_back(std::move(inst));
  }
  if (spec.noise > 0.0) {
    for (auto& inst : data.instances) {
      if (unit(rng) < spec.noise) inst.label = 1 - inst.label;
    }
  }
  for (std::size_t i = 0; i < data.instances.size(); ++i) data.instances[i].pair_id = i;
  data.class_weights = class_weights(data);
  return data;
}

}  // namespace dropping
