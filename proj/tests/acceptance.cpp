// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "dropping/ensemble.hpp"
#include "dropping/errors.hpp"
#include "dropping/smoothing.hpp"
#include "dropping/transfer.hpp"
#include "gradient_suite.hpp"
#include "oracles.hpp"

using namespace dropping;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

bool on_simplex(const std::vector<double>& a) {
  double total = 0.0;
  for (double v : a) {
    if (!(v >= 0.0)) return false;
    total += v;
  }
  return std::fabs(total - 1.0) < 1e-10;
}

std::vector<std::size_t> gold(std::span<const EncodedPair> data) {
  std::vector<std::size_t> g;
  for (const auto& p : data) g.push_back(p.label);
  return g;
}

PairDataset synth(double shift, std::size_t size, std::uint64_t seed) {
  SynthSpec s;
  s.shift = shift;
  s.size = size;
  std::mt19937_64 rng(seed);
  return synth_task(s, rng);
}

// Analytic vs central-difference gradients for every primitive and the composite classifier loss.
Outcome gradients() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  auto take = [&](const std::vector<testing::GradCase>& list) {
    for (const auto& c : list) {
      ++cases;
      if (!(c.max_rel_error < 1e-4)) o.require(false, c.name + " error " + fmt(c.max_rel_error));
      if (c.max_rel_error > worst || !std::isfinite(c.max_rel_error)) {
        worst = c.max_rel_error;
        worst_name = c.name;
      }
    }
  };
  for (std::uint64_t seed : {1, 2, 3}) take(testing::primitive_gradient_cases(seed));
  take(testing::composite_gradient_cases());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.require(secs < 60.0, "took " + fmt(secs) + " s");
  o.detail = std::to_string(cases) + " cases, worst " + worst_name + " " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s" +
             (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// Weighted vote equals a brute-force computation; alpha stays on the simplex after every update.
Outcome vote_oracle() {
  Outcome o;
  double worst = 0.0;
  for (std::size_t classes : {2u, 3u}) {
    for (auto mode : {Averaging::arithmetic, Averaging::geometric}) {
      std::mt19937_64 rng(40 + classes);
      ModelConfig mc;
      mc.vocab_size = 9;
      mc.embed_dim = 4;
      mc.hidden_size = 4;
      mc.layers = 1;
      mc.classes = classes;
      DroppingEnsemble e;
      e.averaging = mode;
      for (int i = 0; i < 3; ++i) {
        e.members.emplace_back(mc, rng);
        for (auto& v : e.members.back().b_out().values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        e.meta.push_back({static_cast<std::uint64_t>(i), 0.0, 0.5 + 0.1 * i});
      }
      const double scores[] = {0.6, 0.7, 0.65};
      e.alpha = softmax_weights(scores, 0.05);
      o.require(on_simplex(e.alpha), "alpha off simplex after softmax");
      const std::vector<EncodedPair> batch{{{1, 2, 3}, {3, 4}, 0}, {{5}, {6, 7, 8}, 1}, {{2, 2}, {2}, 0}, {{8, 1}, {4, 5, 6}, 1}};
      const auto got = ensemble_predict(e, batch);
      for (std::size_t n = 0; n < batch.size(); ++n) {
        std::vector<oracle::Vec> outs;
        for (const auto& m : e.members) outs.push_back(predict_pair(batch[n].s1, batch[n].s2, m));
        const auto want = oracle::weighted_vote(outs, e.alpha, mode == Averaging::geometric);
        for (std::size_t c = 0; c < classes; ++c) worst = std::max(worst, std::fabs(got[n][c] - want[c]));
      }
      rescore_ensemble(e, batch, 0.05);
      o.require(on_simplex(e.alpha), "alpha off simplex after rescore");
      exclude_member(e, 1);
      o.require(on_simplex(e.alpha), "alpha off simplex after exclusion");
    }
  }
  // Trained ensemble, with and without a diverged member.
  const auto data = encode(synth(0.0, 200, 3));
  ModelConfig mc;
  mc.vocab_size = 31;
  mc.embed_dim = 4;
  mc.hidden_size = 4;
  mc.layers = 1;
  BagConfig bag;
  bag.n_members = 3;
  bag.train.max_epochs = 1;
  bag.train.batch_size = 16;
  const auto trained = train_dropping_ensemble(std::span(data).first(150), std::span(data).subspan(150),
                                               ClassWeights::uniform(2), mc, bag, 7);
  o.require(on_simplex(trained.alpha), "alpha off simplex after training");
  o.require(worst < 1e-12, "max deviation " + fmt(worst));
  o.detail = "max |ensemble - brute force| " + fmt(worst, 3) + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

struct SmallWorld {
  ModelConfig model;
  std::vector<EncodedPair> train, dev, test;
  DroppingEnsemble source;
};

SmallWorld small_world() {
  SmallWorld w;
  SynthSpec probe;
  w.model.vocab_size = probe.vocab_size + 1;
  w.model.embed_dim = 8;
  w.model.hidden_size = 8;
  w.model.layers = 2;
  w.model.dropout = 0.1;
  std::mt19937_64 rng(21);
  const auto src = split_dataset(synth(0.0, 1000, 22), 0.8, 0.1, rng);
  const auto tgt = split_dataset(synth(0.1, 600, 23), 0.2, 0.2, rng);
  w.train = encode(tgt.train);
  w.dev = encode(tgt.dev);
  w.test = encode(tgt.test);
  BagConfig bag;
  bag.n_members = 3;
  bag.dropout = 0.1;
  bag.train.max_epochs = 3;
  bag.train.batch_size = 16;
  bag.train.learning_rate = 0.01;
  w.source = train_dropping_ensemble(encode(src.train), encode(src.dev), ClassWeights::uniform(2), w.model, bag, 24);
  return w;
}

TransferPlan small_plan(const SmallWorld& w) {
  TransferPlan p;
  p.sources = {{&w.source, 1.0}};
  p.target = w.model;
  p.train.batch_size = 16;
  p.train.max_epochs = 4;
  p.train.learning_rate = 0.01;
  p.train.eval_every = 5;
  p.schedule.mode = GammaMode::constant;
  p.seed = 31;
  return p;
}

// gamma = 0 is target-only training; gamma = 1 is the zero-shot vote.
Outcome gamma_endpoints() {
  Outcome o;
  const SmallWorld w = small_world();
  const auto weights = ClassWeights::uniform(2);

  TransferPlan zero = small_plan(w);
  zero.schedule.gamma = 0.0;
  const auto blended = few_shot_dropping_transfer(zero, w.train, w.dev, w.test, weights);
  std::mt19937_64 rng(zero.seed);
  PairModel alone(zero.target, rng);
  const TrainResult r = train_model(alone, w.train, w.dev, zero.train, weights, rng);
  bool same = r.history.size() == blended.report.training.history.size();
  for (std::size_t i = 0; same && i < r.history.size(); ++i) {
    same = r.history[i].dev_loss == blended.report.training.history[i].dev_loss &&
           r.history[i].dev_error == blended.report.training.history[i].dev_error;
  }
  o.require(same, "gamma=0 dev trajectory differs from target-only");
  o.require(alone == blended.target, "gamma=0 parameters differ from target-only");
  const Metrics m = evaluate_model(alone, w.test);
  o.require(m.accuracy == blended.report.test.accuracy && m.log_loss == blended.report.test.log_loss,
            "gamma=0 test metrics differ");

  TransferPlan one = small_plan(w);
  one.schedule.gamma = 1.0;
  const auto src_only = few_shot_dropping_transfer(one, w.train, w.dev, w.test, weights);
  const Metrics zs = zero_shot_eval(pool_sources(one, w.dev), w.test);
  o.require(zs.accuracy == src_only.report.test.accuracy && zs.log_loss == src_only.report.test.log_loss,
            "gamma=1 metrics differ from zero-shot");
  o.detail = "gamma=0: " + std::to_string(r.history.size()) + " evaluations identical, test acc " + fmt(m.accuracy) +
             "; gamma=1: test acc " + fmt(zs.accuracy) + " = zero-shot" + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

std::pair<oracle::Vec, oracle::Vec> noisy_curve(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.02);
  oracle::Vec xs, ys;
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back(20.0 * static_cast<double>(i));
    ys.push_back(0.2 + 0.3 * std::exp(-xs.back() / 150.0) + noise(rng));
  }
  return {xs, ys};
}

// Spline coefficients vs a dense solve, affine reproduction, ridge monotonicity.
Outcome spline_oracle() {
  Outcome o;
  const auto [xs, ys] = noisy_curve(20, 4);
  const auto theta = fit_smoothing_spline(xs, ys, 6, 1.0).theta();
  const auto want = oracle::spline_theta(xs, ys, 6, 1.0);
  double dev = 0.0;
  for (std::size_t j = 0; j < want.size(); ++j) dev = std::max(dev, std::fabs(theta[j] - want[j]));
  o.require(theta.size() == want.size() && dev < 1e-8, "coefficient deviation " + fmt(dev));

  oracle::Vec lx, ly;
  for (int i = 0; i < 20; ++i) {
    lx.push_back(10.0 * i);
    ly.push_back(0.8 - 0.003 * lx.back());
  }
  const SplineFit affine = fit_smoothing_spline(lx, ly, 6, 0.0);
  double rss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) rss += std::pow(affine.value(lx[i]) - ly[i], 2);
  o.require(std::sqrt(rss) < 1e-8, "affine residual " + fmt(std::sqrt(rss)));

  double prev = INFINITY;
  for (double lambda : {0.0, 0.1, 1.0, 10.0, 100.0}) {
    double norm = 0.0;
    for (double t : fit_smoothing_spline(xs, ys, 6, lambda).theta()) norm += t * t;
    norm = std::sqrt(norm);
    o.require(norm <= prev + 1e-12, "norm rises at lambda " + fmt(lambda));
    prev = norm;
  }
  o.detail = "max |theta - dense| " + fmt(dev, 3) + ", affine residual " + fmt(std::sqrt(rss), 3) +
             (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

ErrorCurve curve_of(const oracle::Vec& xs, const oracle::Vec& ys) {
  ErrorCurve c;
  for (std::size_t i = 0; i < xs.size(); ++i) c.append(static_cast<std::size_t>(xs[i]), ys[i]);
  return c;
}

// LOWESS and moving-average slopes exact on affine curves; kernel smoother matches the direct sum.
Outcome smoother_exactness() {
  Outcome o;
  oracle::Vec xs, ys;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(20.0 * i + (i % 3));
    ys.push_back(0.6 - 0.0005 * xs.back());
  }
  double worst_slope = 0.0;
  for (auto kind : {SmootherKind::moving_average, SmootherKind::lowess}) {
    SmootherConfig c;
    c.kind = kind;
    worst_slope = std::max(worst_slope, std::fabs(smoothed_slope(curve_of(xs, ys), c) + 0.0005));
  }
  o.require(worst_slope < 1e-10, "affine slope error " + fmt(worst_slope));

  double worst_kernel = 0.0;
  const oracle::Vec kx{0, 1, 2}, ky{0, 1, 2};
  const auto s = gaussian_kernel_smooth(kx, ky, 0.5);
  for (std::size_t i = 0; i < 3; ++i) worst_kernel = std::max(worst_kernel, std::fabs(s[i] - oracle::kernel_point(kx, ky, 0.5, kx[i])));
  const double w1 = std::exp(-2.0), w2 = std::exp(-8.0);
  worst_kernel = std::max(worst_kernel, std::fabs(s[0] - (w1 + 2 * w2) / (1 + w1 + w2)));
  worst_kernel = std::max(worst_kernel, std::fabs(s[1] - 1.0));
  const auto [nx, ny] = noisy_curve(40, 2);
  const auto ns = gaussian_kernel_smooth(nx, ny, 40.0);
  for (std::size_t i = 0; i < nx.size(); ++i) worst_kernel = std::max(worst_kernel, std::fabs(ns[i] - oracle::kernel_point(nx, ny, 40.0, nx[i])));
  o.require(worst_kernel < 1e-10, "kernel deviation " + fmt(worst_kernel));
  o.detail = "affine slope error " + fmt(worst_slope, 3) + ", kernel deviation " + fmt(worst_kernel, 3) +
             (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

int dropnet(const std::string& args) {
  const std::string cmd = std::string(DROPNET_BIN) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    out[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return out;
}

// CLI runs shared by the gamma-schedule and checkpoint-immutability criteria.
struct CliRuns {
  fs::path root;
  bool source_ok = false;
  std::map<std::string, std::string> before;
  std::map<std::string, int> status;

  CliRuns() {
    root = fs::temp_directory_path() / ("dropnet_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    const std::string quick = " --model.embed_dim 8 --model.hidden 8 --train.batch 8 --train.lr 0.01";
    const fs::path src = root / "source";
    source_ok = dropnet("train-ensemble --data synth:size=800 --ensemble.members 2 --ensemble.dropout 0.1"
                        " --train.epochs 2 --seed 3 --out " + src.string() + quick) == 0;
    if (!source_ok) return;
    before = snapshot(src);
    const std::string target = " --data synth:shift=0.1,size=1200 --sources " + src.string();
    const std::string few = " --transfer.fewshot_size 160 --train.epochs 8 --train.eval_every 5"
                            " --train.early_stopping false --smoother.update_interval 20 --seed 4";
    status["slope_driven"] = dropnet("transfer-few" + target + few + " --gamma.mode slope_driven"
                                     " --gamma.delta_scale 200 --out " + (root / "slope_driven").string() + quick);
    status["fixed_decay"] = dropnet("transfer-few" + target + few + " --gamma.mode fixed_decay --gamma.decay_rate 0.9"
                                    " --out " + (root / "fixed_decay").string() + quick);
    status["hard_full"] = dropnet("transfer-few" + target + few + " --transfer.baseline hard_full --out " +
                                  (root / "hard_full").string() + quick);
    status["freeze_lower"] = dropnet("transfer-few" + target + few + " --transfer.baseline freeze_lower --out " +
                                     (root / "freeze_lower").string() + quick);
    status["transfer_zero"] = dropnet("transfer-zero" + target + " --out " + (root / "zero").string());
    status["eval"] = dropnet("eval --eval.ensemble " + src.string() + " --data synth:size=300 --out " +
                             (root / "eval").string());
  }
  ~CliRuns() { fs::remove_all(root); }
};

// Emitted gamma sequence in [0, 1] and non-increasing, read back from curve.csv.
Outcome gamma_schedule(const CliRuns& runs) {
  Outcome o;
  o.require(runs.source_ok, "source ensemble run failed");
  std::string detail;
  for (const char* mode : {"slope_driven", "fixed_decay"}) {
    if (!runs.source_ok) break;
    const auto it = runs.status.find(mode);
    if (it == runs.status.end() || it->second != 0) {
      o.require(false, std::string(mode) + " run failed");
      continue;
    }
    std::ifstream is(runs.root / mode / "curve.csv");
    const auto rows = read_curve_csv(is);
    double prev = 1.0;
    bool ok = !rows.empty();
    for (const auto& r : rows) {
      ok = ok && r.gamma >= 0.0 && r.gamma <= 1.0 && r.gamma <= prev;
      prev = r.gamma;
    }
    o.require(ok, std::string(mode) + " gamma out of range or increasing");
    o.require(!rows.empty() && rows.back().gamma < 1.0, std::string(mode) + " gamma never updated");
    detail += std::string(detail.empty() ? "" : ", ") + mode + " " + std::to_string(rows.size()) + " rows, final " +
              fmt(rows.empty() ? 1.0 : rows.back().gamma);
  }
  o.detail = detail + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// Source checkpoints byte-identical before and after every transfer run.
Outcome sources_immutable(const CliRuns& runs) {
  Outcome o;
  o.require(runs.source_ok, "source ensemble run failed");
  if (!runs.source_ok) return o;
  for (const auto& [name, code] : runs.status) o.require(code == 0, name + " exited " + std::to_string(code));
  const auto after = snapshot(runs.root / "source");
  o.require(after == runs.before, "source files changed");
  o.detail = std::to_string(runs.before.size()) + " source files compared across " + std::to_string(runs.status.size()) +
             " runs" + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// Desk-scale synthetic transfer: related source, distant source, 150-shot related target.
Outcome desk_transfer() {
  Outcome o;
  const auto src = synth(0.0, 5000, 11), dist = synth(0.8, 5000, 12), tgt = synth(0.1, 2400, 13);
  std::mt19937_64 rng(5);
  const auto ss = split_dataset(src, 0.8, 0.1, rng);
  const auto ds = split_dataset(dist, 0.8, 0.1, rng);
  const auto ts = split_dataset(tgt, 0.5, 0.0833, rng);
  auto [few, rest] = few_shot_sample(ts.train, 150.0 / static_cast<double>(ts.train.size()), 0, rng);
  (void)rest;
  ModelConfig mc;
  mc.vocab_size = src.vocab.size();
  mc.classes = 2;
  BagConfig bag;
  bag.n_members = 5;
  bag.train.max_epochs = 10;
  bag.train.batch_size = 32;
  const auto related = train_dropping_ensemble(encode(ss.train), encode(ss.dev), class_weights(ss.train), mc, bag, 100);
  const auto distant = train_dropping_ensemble(encode(ds.train), encode(ds.dev), class_weights(ds.train), mc, bag, 200);

  const auto train = encode(few), dev = encode(ts.dev), test = encode(ts.test);
  const ClassWeights weights = class_weights(few);
  TransferPlan plan;
  plan.target = mc;
  plan.train.batch_size = 16;
  plan.train.max_epochs = 60;
  plan.train.eval_every = 10;
  plan.train.patience = 10;
  plan.seed = 9;
  plan.schedule.delta_scale = 200.0;
  plan.schedule.smoother.update_interval = 50;

  std::mt19937_64 trng(plan.seed);
  PairModel alone(mc, trng);
  train_model(alone, train, dev, plan.train, weights, trng);
  const double target_only = evaluate_model(alone, test).accuracy;

  auto run = [&](SourceWeighting w, bool with_distant) {
    TransferPlan p = plan;
    p.weighting = w;
    p.sources = {{&related, 1.0}};
    if (with_distant) p.sources.push_back({&distant, 1.0});
    return few_shot_dropping_transfer(p, train, dev, test, weights).report.test.accuracy;
  };
  const double soft_rel = run(SourceWeighting::softmax, false), soft_both = run(SourceWeighting::softmax, true);
  const double uni_rel = run(SourceWeighting::uniform, false), uni_both = run(SourceWeighting::uniform, true);
  const double soft_cost = soft_rel - soft_both, uni_cost = uni_rel - uni_both;

  o.require(soft_rel >= target_only + 3.0, "(a) dropping " + fmt(soft_rel) + " < target-only " + fmt(target_only) + " + 3");
  o.require(soft_cost <= 1.0, "(b) distant source costs " + fmt(soft_cost) + " points under softmax");
  o.require(uni_cost > soft_cost, "(c) uniform cost " + fmt(uni_cost) + " not above softmax cost " + fmt(soft_cost));
  o.detail = "(a) dropping " + fmt(soft_rel) + " vs target-only " + fmt(target_only) + "; (b) softmax related " +
             fmt(soft_rel) + " -> +distant " + fmt(soft_both) + "; (c) uniform related " + fmt(uni_rel) + " -> +distant " +
             fmt(uni_both) + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();
  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " [" << o.detail << "] ("
              << fmt(secs, 3) << " s)" << std::endl;
  };

  report(1, "gradient correctness", gradients);
  report(2, "weighted vote matches brute force", vote_oracle);
  report(3, "gamma endpoints", gamma_endpoints);
  report(4, "smoothing spline oracle", spline_oracle);
  report(5, "smoother exactness", smoother_exactness);
  std::unique_ptr<CliRuns> runs;
  try {
    runs = std::make_unique<CliRuns>();
  } catch (const std::exception& e) {
    std::cerr << "cli setup failed: " << e.what() << '\n';
  }
  report(6, "gamma schedule bounded and non-increasing", [&] { return runs ? gamma_schedule(*runs) : Outcome{false, "no runs"}; });
  report(7, "desk-scale transfer", desk_transfer);
  report(8, "source checkpoints unchanged by transfer", [&] { return runs ? sources_immutable(*runs) : Outcome{false, "no runs"}; });
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << " in " << fmt(total, 4) << " s"
            << std::endl;
  return failures == 0 ? 0 : 1;
}
