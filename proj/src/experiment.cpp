// SPDX-License-Identifier: Apache-2.0
#include "dropping/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "dropping/errors.hpp"
#include "dropping/io.hpp"
#include "dropping/plot.hpp"

namespace dropping {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

}  // namespace

// ---------------------------------------------------------------------------
// ConfigMap

ConfigMap ConfigMap::parse(std::istream& is, const std::string& origin) {
  ConfigMap map;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    map.set(section.empty() ? key : section + "." + key, trim(t.substr(eq + 1)));
  }
  return map;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  return parse(is, path);
}

void ConfigMap::merge(const ConfigMap& over) {
  for (const auto& [k, v] : over.entries_) entries_[k] = v;
}

std::string ConfigMap::get(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    return parse_double(get(key, ""));
  } catch (const Error&) {
    throw ConfigError(key + ": expected a number, got '" + get(key, "") + "'");
  }
}

std::uint64_t ConfigMap::get_u64(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t ConfigMap::get_size(const std::string& key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

// ---------------------------------------------------------------------------
// Keys

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"command", "pipeline to run"},
      {"data.path", "pair file (tsv or jsonl) or synth:key=value,..."},
      {"data.format", "tsv | snli_jsonl"},
      {"data.vocab", "existing vocabulary file to encode with"},
      {"data.train_fraction", "training share of the data"},
      {"data.dev_fraction", "development share of the data"},
      {"data.swap_rate", "pair-swap augmentation rate on the training split"},
      {"model.embed_dim", "embedding width"},
      {"model.hidden", "GRU hidden width"},
      {"model.layers", "GRU layers (1 or 2)"},
      {"model.bidirectional", "bidirectional GRUs"},
      {"model.attention", "none | cross"},
      {"model.fusion", "full | symmetric"},
      {"model.tied", "share one encoder between both sentences"},
      {"model.dropout", "dropout rate for single-model training"},
      {"train.lr", "ADAM learning rate"},
      {"train.batch", "minibatch size"},
      {"train.epochs", "maximum epochs"},
      {"train.eval_every", "dev evaluation cadence in iterations"},
      {"train.early_stopping", "restore the best dev-loss parameters"},
      {"train.patience", "evaluations without improvement before stopping"},
      {"train.class_weights", "inverse-frequency class weighting"},
      {"ensemble.members", "ensemble size"},
      {"ensemble.sample_fraction", "bag size as a fraction of the training split"},
      {"ensemble.with_replacement", "bootstrap sampling"},
      {"ensemble.dropout", "dropout rate of every member"},
      {"ensemble.temperature", "softmax temperature of member vote weights"},
      {"ensemble.averaging", "arithmetic | geometric"},
      {"smoother.kind", "moving_average | gaussian_kernel | lowess | spline"},
      {"smoother.window", "moving-average window in evaluations"},
      {"smoother.bandwidth", "Gaussian kernel bandwidth in iterations"},
      {"smoother.lowess_fraction", "LOWESS neighbourhood fraction"},
      {"smoother.knots", "spline knot count"},
      {"smoother.lambda", "spline ridge penalty"},
      {"smoother.update_interval", "slope update cadence in iterations"},
      {"smoother.subinterval", "trailing slope span in iterations (0 = update interval)"},
      {"gamma.mode", "slope_driven | fixed_decay | constant"},
      {"gamma.initial", "starting gamma"},
      {"gamma.decay_rate", "multiplier per update in fixed_decay mode"},
      {"gamma.delta_scale", "slope scale in slope_driven mode"},
      {"transfer.sources", "comma-separated source run directories"},
      {"transfer.source_weights", "comma-separated source weights"},
      {"transfer.weighting", "softmax | uniform | ensemble"},
      {"transfer.temperature", "softmax temperature of pooled member weights"},
      {"transfer.baseline", "dropping | hard_full | freeze_lower"},
      {"transfer.fewshot_fraction", "few-shot share of the target training split"},
      {"transfer.fewshot_size", "absolute few-shot size (overrides the fraction)"},
      {"transfer.genre_min", "minimum few-shot draws per genre"},
      {"transfer.compare_target_only", "also train a target-only model on the few-shot set"},
      {"synth.vocab", "synthetic vocabulary size"},
      {"synth.rule", "overlap_threshold | order_sensitive"},
      {"synth.noise", "label noise rate"},
      {"synth.shift", "task shift in [0, 1]"},
      {"synth.size", "number of pairs"},
      {"synth.min_length", "shortest sentence"},
      {"synth.max_length", "longest sentence"},
      {"synth.base_threshold", "decision threshold on the labelling score"},
      {"synth.margin", "rejection band around the threshold"},
      {"synth.seed", "seed of the generated data (defaults to the run seed)"},
      {"eval.model", "model checkpoint to evaluate"},
      {"eval.ensemble", "ensemble run directory to evaluate"},
      {"plot.curve", "curve csv to plot"},
      {"plot.out", "output svg path"},
      {"run.seed", "root seed"},
      {"run.out", "output directory"},
      {"run.jobs", "worker threads"},
  };
  return keys;
}

std::uint64_t derive_seed(std::uint64_t root, const std::string& component) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : component) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return splitmix64(root ^ h);
}

namespace {

SynthSpec synth_from_map(const ConfigMap& m, SynthSpec s) {
  s.vocab_size = m.get_size("synth.vocab", s.vocab_size);
  if (m.has("synth.rule")) s.rule = parse_synth_rule(m.get("synth.rule", ""));
  s.noise = m.get_double("synth.noise", s.noise);
  s.shift = m.get_double("synth.shift", s.shift);
  s.size = m.get_size("synth.size", s.size);
  s.min_length = m.get_size("synth.min_length", s.min_length);
  s.max_length = m.get_size("synth.max_length", s.max_length);
  s.base_threshold = m.get_double("synth.base_threshold", s.base_threshold);
  s.margin = m.get_double("synth.margin", s.margin);
  return s;
}

bool is_synth(const std::string& data) { return data == "synth" || data.rfind("synth:", 0) == 0; }

/// `synth:shift=0.1,size=500` -> synth.* entries.
ConfigMap synth_overrides(const std::string& data) {
  ConfigMap m;
  if (data.size() <= 6) return m;
  for (const auto& item : split_list(data.substr(6))) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("data.path: expected key=value in '" + item + "'");
    m.set("synth." + trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  return m;
}

}  // namespace

ExperimentConfig config_from_map(const ConfigMap& m) {
  std::set<std::string> known;
  for (const auto& k : config_keys()) known.insert(k.name);
  for (const auto& [k, v] : m.entries()) {
    if (!known.count(k)) throw ConfigError("unknown configuration key '" + k + "'");
  }

  ExperimentConfig c;
  c.command = m.get("command", "");
  c.data = m.get("data.path", "");
  c.format = parse_pair_format(m.get("data.format", "tsv"));
  c.vocab = m.get("data.vocab", "");
  c.train_fraction = m.get_double("data.train_fraction", c.train_fraction);
  c.dev_fraction = m.get_double("data.dev_fraction", c.dev_fraction);
  c.swap_rate = m.get_double("data.swap_rate", c.swap_rate);

  ModelConfig& mc = c.model;
  mc.embed_dim = m.get_size("model.embed_dim", mc.embed_dim);
  mc.hidden_size = m.get_size("model.hidden", mc.hidden_size);
  mc.layers = m.get_size("model.layers", mc.layers);
  mc.bidirectional = m.get_bool("model.bidirectional", mc.bidirectional);
  mc.attention = parse_attention_mode(m.get("model.attention", to_string(mc.attention)));
  mc.fusion = parse_fusion_mode(m.get("model.fusion", to_string(mc.fusion)));
  mc.tied = m.get_bool("model.tied", mc.tied);
  mc.dropout = m.get_double("model.dropout", mc.dropout);

  TrainConfig& tc = c.train;
  tc.learning_rate = m.get_double("train.lr", tc.learning_rate);
  tc.batch_size = m.get_size("train.batch", tc.batch_size);
  tc.max_epochs = m.get_size("train.epochs", tc.max_epochs);
  tc.eval_every = m.get_size("train.eval_every", tc.eval_every);
  tc.early_stopping = m.get_bool("train.early_stopping", tc.early_stopping);
  tc.patience = m.get_size("train.patience", tc.patience);
  tc.use_class_weights = m.get_bool("train.class_weights", tc.use_class_weights);

  BagConfig& bc = c.bag;
  bc.n_members = m.get_size("ensemble.members", bc.n_members);
  bc.sample_fraction = m.get_double("ensemble.sample_fraction", bc.sample_fraction);
  bc.with_replacement = m.get_bool("ensemble.with_replacement", bc.with_replacement);
  bc.dropout = m.get_double("ensemble.dropout", bc.dropout);
  bc.temperature = m.get_double("ensemble.temperature", bc.temperature);
  bc.averaging = parse_averaging(m.get("ensemble.averaging", to_string(bc.averaging)));

  SmootherConfig& sc = c.schedule.smoother;
  sc.kind = parse_smoother_kind(m.get("smoother.kind", to_string(sc.kind)));
  sc.window = m.get_size("smoother.window", sc.window);
  sc.bandwidth = m.get_double("smoother.bandwidth", sc.bandwidth);
  sc.lowess_fraction = m.get_double("smoother.lowess_fraction", sc.lowess_fraction);
  sc.knots = m.get_size("smoother.knots", sc.knots);
  sc.lambda = m.get_double("smoother.lambda", sc.lambda);
  sc.update_interval = m.get_size("smoother.update_interval", sc.update_interval);
  sc.subinterval = m.get_size("smoother.subinterval", sc.subinterval);

  GammaSchedule& gs = c.schedule;
  gs.mode = parse_gamma_mode(m.get("gamma.mode", to_string(gs.mode)));
  gs.gamma = m.get_double("gamma.initial", gs.gamma);
  gs.decay_rate = m.get_double("gamma.decay_rate", gs.decay_rate);
  gs.delta_scale = m.get_double("gamma.delta_scale", gs.delta_scale);

  c.sources = split_list(m.get("transfer.sources", ""));
  for (const auto& w : split_list(m.get("transfer.source_weights", ""))) {
    try {
      c.source_weights.push_back(parse_double(w));
    } catch (const Error&) {
      throw ConfigError("transfer.source_weights: bad number '" + w + "'");
    }
  }
  c.weighting = m.get("transfer.weighting", "");
  if (!c.weighting.empty()) parse_source_weighting(c.weighting);
  c.temperature = m.get_double("transfer.temperature", c.temperature);
  c.baseline = parse_baseline_kind(m.get("transfer.baseline", to_string(c.baseline)));
  c.fewshot_fraction = m.get_double("transfer.fewshot_fraction", c.fewshot_fraction);
  c.fewshot_size = m.get_size("transfer.fewshot_size", c.fewshot_size);
  c.genre_min = m.get_size("transfer.genre_min", c.genre_min);
  c.compare_target_only = m.get_bool("transfer.compare_target_only", c.compare_target_only);

  c.synth = synth_from_map(m, c.synth);
  c.eval_model = m.get("eval.model", "");
  c.eval_ensemble = m.get("eval.ensemble", "");
  c.plot_curve = m.get("plot.curve", "");
  c.plot_out = m.get("plot.out", "");

  c.seed = m.get_u64("run.seed", c.seed);
  c.jobs = m.get_size("run.jobs", c.jobs);
  c.bag.jobs = c.jobs;
  const char* env_out = std::getenv("DROPPING_OUT_DIR");
  c.out_dir = m.get("run.out", env_out && *env_out ? env_out : "runs");
  if (m.has("synth.seed")) c.synth_seed = m.get_u64("synth.seed", 0);
  return c;
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> commands = {"train-single", "train-ensemble", "transfer-zero", "transfer-few",
                                                 "eval",         "plot",           "synth"};
  if (!commands.count(command)) throw ConfigError("unknown command '" + command + "'");
  if (out_dir.empty()) throw ConfigError("run.out: output directory must be set");
  if (jobs == 0) throw ConfigError("run.jobs must be at least 1");
  const bool needs_data = command != "plot" && command != "synth";
  if (needs_data) {
    if (data.empty()) throw ConfigError("data.path is required for " + command);
    if (!is_synth(data) && !fs::exists(data)) throw ConfigError("data.path: no such file '" + data + "'");
    if (!(train_fraction >= 0.0 && dev_fraction >= 0.0 && train_fraction + dev_fraction < 1.0)) {
      throw ConfigError("data fractions must be non-negative and leave room for a test split");
    }
    if (!(swap_rate >= 0.0 && swap_rate <= 1.0)) throw ConfigError("data.swap_rate must lie in [0, 1]");
    if (!vocab.empty() && !fs::exists(vocab)) throw ConfigError("data.vocab: no such file '" + vocab + "'");
    train.validate();
  }
  if (command == "train-single" || command == "train-ensemble") {
    ModelConfig probe = model;
    probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 2);
    probe.validate();
  }
  if (command == "train-ensemble") bag.validate();
  if (command == "transfer-zero" || command == "transfer-few") {
    if (sources.empty()) throw ConfigError("transfer.sources: at least one source run directory required");
    for (const auto& s : sources) {
      if (!fs::exists(fs::path(s) / "ensemble" / "manifest.txt")) {
        throw ConfigError("transfer.sources: '" + s + "' is not an ensemble run directory");
      }
    }
    if (!source_weights.empty() && source_weights.size() != sources.size()) {
      throw ConfigError("transfer.source_weights: one weight per source required");
    }
    for (double w : source_weights) {
      if (!(w >= 0.0)) throw ConfigError("transfer.source_weights must be non-negative");
    }
    if (!(temperature > 0.0)) throw ConfigError("transfer.temperature must be positive");
  }
  if (command == "transfer-few") {
    schedule.validate();
    if (fewshot_size == 0 && !(fewshot_fraction > 0.0 && fewshot_fraction < 1.0)) {
      throw ConfigError("transfer.fewshot_fraction must lie in (0, 1)");
    }
  }
  if (command == "eval") {
    if (eval_model.empty() == eval_ensemble.empty()) throw ConfigError("eval: set exactly one of eval.model, eval.ensemble");
    const std::string& p = eval_model.empty() ? eval_ensemble : eval_model;
    if (!fs::exists(p)) throw ConfigError("eval: no such path '" + p + "'");
  }
  if (command == "plot") {
    if (plot_curve.empty() || !fs::exists(plot_curve)) throw ConfigError("plot.curve: curve csv not found");
  }
}

ConfigMap config_to_map(const ExperimentConfig& c) {
  ConfigMap m;
  m.set("command", c.command);
  m.set("data.path", c.data);
  m.set("data.format", c.format == PairFormat::tsv ? "tsv" : "snli_jsonl");
  m.set("data.vocab", c.vocab);
  m.set("data.train_fraction", format_double(c.train_fraction));
  m.set("data.dev_fraction", format_double(c.dev_fraction));
  m.set("data.swap_rate", format_double(c.swap_rate));
  m.set("model.embed_dim", std::to_string(c.model.embed_dim));
  m.set("model.hidden", std::to_string(c.model.hidden_size));
  m.set("model.layers", std::to_string(c.model.layers));
  m.set("model.bidirectional", bool_text(c.model.bidirectional));
  m.set("model.attention", to_string(c.model.attention));
  m.set("model.fusion", to_string(c.model.fusion));
  m.set("model.tied", bool_text(c.model.tied));
  m.set("model.dropout", format_double(c.model.dropout));
  m.set("train.lr", format_double(c.train.learning_rate));
  m.set("train.batch", std::to_string(c.train.batch_size));
  m.set("train.epochs", std::to_string(c.train.max_epochs));
  m.set("train.eval_every", std::to_string(c.train.eval_every));
  m.set("train.early_stopping", bool_text(c.train.early_stopping));
  m.set("train.patience", std::to_string(c.train.patience));
  m.set("train.class_weights", bool_text(c.train.use_class_weights));
  m.set("ensemble.members", std::to_string(c.bag.n_members));
  m.set("ensemble.sample_fraction", format_double(c.bag.sample_fraction));
  m.set("ensemble.with_replacement", bool_text(c.bag.with_replacement));
  m.set("ensemble.dropout", format_double(c.bag.dropout));
  m.set("ensemble.temperature", format_double(c.bag.temperature));
  m.set("ensemble.averaging", to_string(c.bag.averaging));
  const SmootherConfig& sc = c.schedule.smoother;
  m.set("smoother.kind", to_string(sc.kind));
  m.set("smoother.window", std::to_string(sc.window));
  m.set("smoother.bandwidth", format_double(sc.bandwidth));
  m.set("smoother.lowess_fraction", format_double(sc.lowess_fraction));
  m.set("smoother.knots", std::to_string(sc.knots));
  m.set("smoother.lambda", format_double(sc.lambda));
  m.set("smoother.update_interval", std::to_string(sc.update_interval));
  m.set("smoother.subinterval", std::to_string(sc.subinterval));
  m.set("gamma.mode", to_string(c.schedule.mode));
  m.set("gamma.initial", format_double(c.schedule.gamma));
  m.set("gamma.decay_rate", format_double(c.schedule.decay_rate));
  m.set("gamma.delta_scale", format_double(c.schedule.delta_scale));
  m.set("transfer.sources", join_list(c.sources));
  std::vector<std::string> weights;
  for (double w : c.source_weights) weights.push_back(format_double(w));
  m.set("transfer.source_weights", join_list(weights));
  m.set("transfer.weighting", c.weighting);
  m.set("transfer.temperature", format_double(c.temperature));
  m.set("transfer.baseline", to_string(c.baseline));
  m.set("transfer.fewshot_fraction", format_double(c.fewshot_fraction));
  m.set("transfer.fewshot_size", std::to_string(c.fewshot_size));
  m.set("transfer.genre_min", std::to_string(c.genre_min));
  m.set("transfer.compare_target_only", bool_text(c.compare_target_only));
  m.set("synth.vocab", std::to_string(c.synth.vocab_size));
  m.set("synth.rule", to_string(c.synth.rule));
  m.set("synth.noise", format_double(c.synth.noise));
  m.set("synth.shift", format_double(c.synth.shift));
  m.set("synth.size", std::to_string(c.synth.size));
  m.set("synth.min_length", std::to_string(c.synth.min_length));
  m.set("synth.max_length", std::to_string(c.synth.max_length));
  m.set("synth.base_threshold", format_double(c.synth.base_threshold));
  m.set("synth.margin", format_double(c.synth.margin));
  if (c.synth_seed) m.set("synth.seed", std::to_string(*c.synth_seed));
  m.set("eval.model", c.eval_model);
  m.set("eval.ensemble", c.eval_ensemble);
  m.set("plot.curve", c.plot_curve);
  m.set("plot.out", c.plot_out);
  m.set("run.seed", std::to_string(c.seed));
  m.set("run.out", c.out_dir);
  m.set("run.jobs", std::to_string(c.jobs));
  return m;
}

// ---------------------------------------------------------------------------
// Metrics files

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path);
  os << "phase,split,accuracy,log_loss\n";
  for (const auto& r : rows) {
    os << csv_field(r.phase) << ',' << csv_field(r.split) << ',' << format_double(r.metrics.accuracy) << ','
       << format_double(r.metrics.log_loss) << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path);
  std::string line;
  if (!std::getline(is, line) || line != "phase,split,accuracy,log_loss") throw InputError(path + ": bad metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 4) throw InputError(path + ": malformed metrics row");
    rows.push_back({f[0], f[1], {parse_double(f[2]), parse_double(f[3])}});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Pipelines

namespace {

struct Prepared {
  PairDataset full;
  Vocabulary vocab;
  DataSplits splits;
  std::vector<EncodedPair> train, dev, test;
  ClassWeights weights;
};

PairDataset load_dataset(const ExperimentConfig& c) {
  if (!is_synth(c.data)) return load_pairs(c.data, c.format);
  ConfigMap over = synth_overrides(c.data);
  const SynthSpec spec = synth_from_map(over, c.synth);
  const std::uint64_t data_seed = over.has("synth.seed") ? over.get_u64("synth.seed", 0)
                                  : c.synth_seed        ? *c.synth_seed
                                                        : derive_seed(c.seed, "data");
  std::mt19937_64 rng(data_seed);
  return synth_task(spec, rng);
}

Prepared prepare(const ExperimentConfig& c, const Vocabulary* shared_vocab, std::ostream& log) {
  Prepared p;
  p.full = load_dataset(c);
  for (const auto& w : p.full.warnings) log << "warning: " << w << '\n';
  if (shared_vocab) {
    p.vocab = *shared_vocab;
  } else if (!c.vocab.empty()) {
    p.vocab = Vocabulary::load(c.vocab);
  } else {
    p.vocab = p.full.vocab;
  }
  std::mt19937_64 split_rng(derive_seed(c.seed, "split"));
  p.splits = split_dataset(p.full, c.train_fraction, c.dev_fraction, split_rng);
  if (c.swap_rate > 0.0) {
    std::mt19937_64 aug_rng(derive_seed(c.seed, "augment"));
    p.splits.train = pair_swap_augment(p.splits.train, aug_rng, c.swap_rate);
  }
  p.train = encode(p.splits.train, p.vocab);
  p.dev = encode(p.splits.dev, p.vocab);
  p.test = encode(p.splits.test, p.vocab);
  if (!p.train.empty()) p.weights = class_weights(p.splits.train);
  log << "data: " << p.full.size() << " pairs, " << p.full.classes() << " classes; split " << p.train.size() << '/'
      << p.dev.size() << '/' << p.test.size() << '\n';
  return p;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  for (const auto& l : lines) os << l << '\n';
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_report(const fs::path& path, const ExperimentConfig& c, const std::string& body,
                  const std::vector<MetricsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  os << "# config\n";
  const ConfigMap echo = config_to_map(c);
  for (const auto& [k, v] : echo.entries()) os << k << " = " << v << '\n';
  os << '\n' << body;
  os << "\n# metrics\n";
  for (const auto& r : rows) {
    os << r.phase << ' ' << r.split << " accuracy = " << format_double(r.metrics.accuracy)
       << " log_loss = " << format_double(r.metrics.log_loss) << '\n';
  }
}

void write_curve(const fs::path& path, const std::vector<CurveRow>& rows) {
  std::ofstream os(path);
  if (!os) throw InputError("cannot write " + path.string());
  write_curve_csv(os, rows);
}

std::vector<std::size_t> gold(std::span<const EncodedPair> data) {
  std::vector<std::size_t> g;
  for (const auto& p : data) g.push_back(p.label);
  return g;
}

void require_splits(const Prepared& p, bool need_dev) {
  if (p.train.empty() || p.test.empty()) throw ConfigError("data: train and test splits must be non-empty");
  if (need_dev && p.dev.empty()) throw ConfigError("data: dev split must be non-empty");
}

ModelConfig model_for(const ExperimentConfig& c, const Prepared& p) {
  ModelConfig mc = c.model;
  mc.vocab_size = p.vocab.size();
  mc.classes = p.full.classes();
  return mc;
}

int run_train_single(const ExperimentConfig& c, std::ostream& log) {
  const fs::path out(c.out_dir);
  Prepared p = prepare(c, nullptr, log);
  require_splits(p, true);
  std::mt19937_64 rng(derive_seed(c.seed, "model"));
  PairModel model(model_for(c, p), rng);
  GammaSchedule flat;
  flat.mode = GammaMode::constant;
  flat.gamma = 0.0;
  flat.smoother = c.schedule.smoother;
  GammaController curve(flat);
  const TrainResult r = train_model(model, p.train, p.dev, c.train, p.weights, rng, nullptr, nullptr, &curve);
  log << "trained " << r.iterations << " iterations over " << r.epochs << " epochs\n";
  save_model(model, (out / "model.ckpt").string());
  p.vocab.save((out / "vocab.tsv").string());
  write_lines(out / "labels.txt", p.full.label_names);
  write_curve(out / "curve.csv", curve.rows());
  const std::vector<MetricsRow> rows = {{"single", "train", evaluate_model(model, p.train)},
                                        {"single", "test", evaluate_model(model, p.test)}};
  write_metrics_csv((out / "metrics.csv").string(), rows);
  std::ostringstream body;
  body << "# training\niterations = " << r.iterations << "\nepochs = " << r.epochs
       << "\nbest_dev_loss = " << format_double(r.best_dev_loss) << "\nstopped_early = " << bool_text(r.stopped_early)
       << '\n';
  write_report(out / "report.txt", c, body.str(), rows);
  return 0;
}

int run_train_ensemble(const ExperimentConfig& c, std::ostream& log) {
  const fs::path out(c.out_dir);
  Prepared p = prepare(c, nullptr, log);
  require_splits(p, true);
  BagConfig bag = c.bag;
  bag.train = c.train;
  DroppingEnsemble ens =
      train_dropping_ensemble(p.train, p.dev, p.weights, model_for(c, p), bag, derive_seed(c.seed, "ensemble"));
  log << "ensemble: " << ens.size() << " members, " << ens.excluded.size() << " excluded\n";
  save_ensemble(ens, (out / "ensemble").string());
  p.vocab.save((out / "vocab.tsv").string());
  write_lines(out / "labels.txt", p.full.label_names);
  const std::vector<MetricsRow> rows = {
      {"ensemble", "train", evaluate(ensemble_predict(ens, p.train), gold(p.train))},
      {"ensemble", "test", evaluate(ensemble_predict(ens, p.test), gold(p.test))}};
  write_metrics_csv((out / "metrics.csv").string(), rows);
  std::ostringstream body;
  body << "# members\n";
  for (std::size_t i = 0; i < ens.size(); ++i) {
    body << "member " << i << " seed = " << ens.meta[i].seed << " dev_score = " << format_double(ens.meta[i].dev_score)
         << " alpha = " << format_double(ens.alpha[i]) << '\n';
  }
  for (const auto& m : ens.excluded) body << "excluded seed = " << m.seed << '\n';
  write_report(out / "report.txt", c, body.str(), rows);
  return 0;
}

struct LoadedSources {
  std::vector<DroppingEnsemble> ensembles;
  Vocabulary vocab;
  std::vector<std::string> labels;
};

LoadedSources load_sources(const ExperimentConfig& c) {
  LoadedSources s;
  for (std::size_t i = 0; i < c.sources.size(); ++i) {
    const fs::path dir(c.sources[i]);
    s.ensembles.push_back(load_ensemble((dir / "ensemble").string()));
    const Vocabulary v = Vocabulary::load((dir / "vocab.tsv").string());
    const auto labels = read_lines(dir / "labels.txt");
    if (i == 0) {
      s.vocab = v;
      s.labels = labels;
    } else {
      if (!(v == s.vocab)) throw ConfigError("transfer: source '" + c.sources[i] + "' uses a different vocabulary");
      if (labels.size() != s.labels.size()) throw ConfigError("transfer: sources disagree on class count");
    }
  }
  return s;
}

TransferPlan make_plan(const ExperimentConfig& c, const LoadedSources& src, const Prepared& p,
                       const std::string& default_weighting) {
  TransferPlan plan;
  for (std::size_t i = 0; i < src.ensembles.size(); ++i) {
    plan.sources.push_back({&src.ensembles[i], c.source_weights.empty() ? 1.0 : c.source_weights[i]});
  }
  plan.target = src.ensembles.front().members.front().config();
  plan.target.classes = p.full.classes();
  plan.target.dropout = c.model.dropout;
  plan.train = c.train;
  plan.schedule = c.schedule;
  plan.weighting = parse_source_weighting(c.weighting.empty() ? default_weighting : c.weighting);
  plan.temperature = c.temperature;
  plan.averaging = c.bag.averaging;
  plan.baseline = c.baseline;
  plan.seed = derive_seed(c.seed, "target");
  plan.jobs = c.jobs;
  return plan;
}

void check_target_labels(const LoadedSources& src, const Prepared& p) {
  if (src.labels.size() != p.full.classes()) {
    throw ConfigError("transfer: sources have " + std::to_string(src.labels.size()) + " classes, target data " +
                      std::to_string(p.full.classes()));
  }
}

int run_transfer_zero(const ExperimentConfig& c, std::ostream& log) {
  const fs::path out(c.out_dir);
  const LoadedSources src = load_sources(c);
  Prepared p = prepare(c, &src.vocab, log);
  require_splits(p, false);
  check_target_labels(src, p);
  const TransferPlan plan = make_plan(c, src, p, "ensemble");
  std::vector<MetricsRow> rows;
  if (plan.weighting == SourceWeighting::ensemble) {
    rows = {{"zero_shot", "train", zero_shot_eval(std::span(plan.sources), p.train)},
            {"zero_shot", "test", zero_shot_eval(std::span(plan.sources), p.test)}};
  } else {
    if (plan.weighting == SourceWeighting::softmax && p.dev.empty()) {
      throw ConfigError("transfer-zero: softmax weighting needs a target dev split");
    }
    const PooledVote vote = pool_sources(plan, p.dev);
    rows = {{"zero_shot", "train", evaluate(pooled_predict(vote, p.train, c.jobs), gold(p.train))},
            {"zero_shot", "test", evaluate(pooled_predict(vote, p.test, c.jobs), gold(p.test))}};
  }
  write_metrics_csv((out / "metrics.csv").string(), rows);
  std::ostringstream body;
  body << "# sources\n";
  const auto w = plan.source_weights();
  for (std::size_t i = 0; i < c.sources.size(); ++i) {
    body << "source " << i << " = " << c.sources[i] << " weight = " << format_double(w[i]) << '\n';
  }
  write_report(out / "report.txt", c, body.str(), rows);
  return 0;
}

int run_transfer_few(const ExperimentConfig& c, std::ostream& log) {
  const fs::path out(c.out_dir);
  const LoadedSources src = load_sources(c);
  Prepared p = prepare(c, &src.vocab, log);
  require_splits(p, true);
  check_target_labels(src, p);

  const double fraction = c.fewshot_size > 0
                              ? static_cast<double>(c.fewshot_size) / static_cast<double>(p.splits.train.size())
                              : c.fewshot_fraction;
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("transfer.fewshot_size must be below the training split size");
  std::mt19937_64 few_rng(derive_seed(c.seed, "fewshot"));
  auto [few, rest] = few_shot_sample(p.splits.train, fraction, c.genre_min, few_rng);
  (void)rest;
  const auto few_train = encode(few, p.vocab);
  const ClassWeights few_weights = class_weights(few);
  log << "few-shot set: " << few_train.size() << " pairs\n";

  const TransferPlan plan = make_plan(c, src, p, "softmax");
  std::ostringstream diagnostics;
  TransferOutcome outcome;
  try {
    outcome = few_shot_dropping_transfer(plan, few_train, p.dev, p.test, few_weights, &diagnostics);
  } catch (const NumericError&) {
    std::ofstream dump(out / "curve_diagnostic.csv");
    dump << diagnostics.str();
    log << "training diverged; curve written to " << (out / "curve_diagnostic.csv").string() << '\n';
    throw;
  }
  const TransferReport& rep = outcome.report;
  std::vector<MetricsRow> rows = {{to_string(plan.baseline), "train", rep.train},
                                  {to_string(plan.baseline), "test", rep.test}};
  if (plan.baseline == BaselineKind::dropping) {
    const PooledVote vote = pool_sources(plan, p.dev);
    rows.push_back({"zero_shot", "train", evaluate(pooled_predict(vote, few_train, c.jobs), gold(few_train))});
    rows.push_back({"zero_shot", "test", evaluate(pooled_predict(vote, p.test, c.jobs), gold(p.test))});
  }
  if (c.compare_target_only) {
    std::mt19937_64 rng(plan.seed);
    PairModel alone(plan.target, rng);
    train_model(alone, few_train, p.dev, plan.train, few_weights, rng);
    rows.push_back({"target_only", "train", evaluate_model(alone, few_train)});
    rows.push_back({"target_only", "test", evaluate_model(alone, p.test)});
  }
  save_model(outcome.target, (out / "target.ckpt").string());
  p.vocab.save((out / "vocab.tsv").string());
  write_lines(out / "labels.txt", p.full.label_names);
  write_curve(out / "curve.csv", rep.curve);
  write_metrics_csv((out / "metrics.csv").string(), rows);
  std::ostringstream body;
  write_transfer_report(body, plan, rep);
  write_report(out / "report.txt", c, body.str(), rows);
  log << to_string(plan.baseline) << " test accuracy " << format_double(rep.test.accuracy) << '\n';
  return 0;
}

int run_eval(const ExperimentConfig& c, std::ostream& log) {
  const fs::path out(c.out_dir);
  std::vector<MetricsRow> rows;
  if (!c.eval_model.empty()) {
    const PairModel model = load_model(c.eval_model);
    const fs::path vocab_path = c.vocab.empty() ? fs::path(c.eval_model).parent_path() / "vocab.tsv" : fs::path(c.vocab);
    const Vocabulary vocab = Vocabulary::load(vocab_path.string());
    Prepared p = prepare(c, &vocab, log);
    require_splits(p, false);
    if (model.config().classes != p.full.classes()) throw ConfigError("eval: model and data disagree on class count");
    rows = {{"eval", "train", evaluate_model(model, p.train)}, {"eval", "test", evaluate_model(model, p.test)}};
  } else {
    const fs::path dir(c.eval_ensemble);
    const DroppingEnsemble ens = load_ensemble((dir / "ensemble").string());
    const Vocabulary vocab = Vocabulary::load(c.vocab.empty() ? (dir / "vocab.tsv").string() : c.vocab);
    Prepared p = prepare(c, &vocab, log);
    require_splits(p, false);
    if (ens.members.front().config().classes != p.full.classes()) {
      throw ConfigError("eval: ensemble and data disagree on class count");
    }
    rows = {{"eval", "train", evaluate(ensemble_predict(ens, p.train), gold(p.train))},
            {"eval", "test", evaluate(ensemble_predict(ens, p.test), gold(p.test))}};
  }
  write_metrics_csv((out / "metrics.csv").string(), rows);
  write_report(out / "report.txt", c, "", rows);
  return 0;
}

int run_plot(const ExperimentConfig& c, std::ostream& log) {
  const std::string target = c.plot_out.empty() ? (fs::path(c.out_dir) / "curve.svg").string() : c.plot_out;
  emit_plot(c.plot_curve, target);
  log << "wrote " << target << '\n';
  return 0;
}

int run_synth(const ExperimentConfig& c, std::ostream& log) {
  ExperimentConfig d = c;
  if (!is_synth(d.data)) d.data = "synth";
  const PairDataset data = load_dataset(d);
  const fs::path target = fs::path(c.out_dir) / "pairs.tsv";
  save_pairs_tsv(data, target.string());
  log << "wrote " << data.size() << " pairs to " << target.string() << '\n';
  return 0;
}

}  // namespace

int run_experiment(const ExperimentConfig& config, std::ostream& log) {
  config.validate();
  fs::create_directories(config.out_dir);
  const std::string& cmd = config.command;
  if (cmd == "train-single") return run_train_single(config, log);
  if (cmd == "train-ensemble") return run_train_ensemble(config, log);
  if (cmd == "transfer-zero") return run_transfer_zero(config, log);
  if (cmd == "transfer-few") return run_transfer_few(config, log);
  if (cmd == "eval") return run_eval(config, log);
  if (cmd == "plot") return run_plot(config, log);
  return run_synth(config, log);
}

}  // namespace dropping
