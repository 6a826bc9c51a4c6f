// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "dropping/errors.hpp"
#include "dropping/experiment.hpp"
#include "dropping/plot.hpp"

namespace dropping {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dropnet_experiment_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int dropnet(const std::string& args) {
  const std::string cmd = std::string(DROPNET_BIN) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Every regular file under `dir` with its bytes.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

const std::string kQuick =
    " --model.embed_dim 8 --model.hidden 8 --model.layers 1 --train.batch 16 --train.lr 0.01 --train.eval_every 10";

TEST(ConfigMap, SectionsCommentsAndBareKeys) {
  std::istringstream is(
      "# comment\n"
      "seed_hint = 4\n"
      "[model]\n"
      "hidden = 16   \n"
      "; another comment\n"
      "[ train ]\n"
      "lr=0.01\n"
      "\n");
  const ConfigMap m = ConfigMap::parse(is);
  EXPECT_EQ(m.get("seed_hint", ""), "4");
  EXPECT_EQ(m.get_size("model.hidden", 0), 16u);
  EXPECT_DOUBLE_EQ(m.get_double("train.lr", 0.0), 0.01);
  EXPECT_EQ(m.get("missing", "fallback"), "fallback");
  EXPECT_EQ(m.entries().size(), 3u);
}

TEST(ConfigMap, MergeOverridesAndKeepsRest) {
  ConfigMap base, over;
  base.set("a", "1");
  base.set("b", "2");
  over.set("b", "3");
  over.set("c", "4");
  base.merge(over);
  EXPECT_EQ(base.get("a", ""), "1");
  EXPECT_EQ(base.get("b", ""), "3");
  EXPECT_EQ(base.get("c", ""), "4");
}

TEST(ConfigMap, MalformedInputNamesLine) {
  std::istringstream no_eq("[model]\nhidden 16\n");
  try {
    ConfigMap::parse(no_eq, "x.ini");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.ini:2"), std::string::npos) << e.what();
  }
  std::istringstream bad_section("[model\n");
  EXPECT_THROW(ConfigMap::parse(bad_section), ConfigError);
  ConfigMap m;
  m.set("train.lr", "fast");
  EXPECT_THROW(m.get_double("train.lr", 0.0), ConfigError);
  m.set("train.early_stopping", "maybe");
  EXPECT_THROW(m.get_bool("train.early_stopping", true), ConfigError);
}

TEST(ExperimentConfig, RoundTripThroughMap) {
  ConfigMap m;
  m.set("command", "transfer-few");
  m.set("data.path", "synth:shift=0.1");
  m.set("model.hidden", "12");
  m.set("gamma.mode", "fixed_decay");
  m.set("transfer.sources", "a,b");
  m.set("transfer.source_weights", "1,3");
  m.set("run.out", "somewhere");
  const ExperimentConfig c = config_from_map(m);
  EXPECT_EQ(c.model.hidden_size, 12u);
  EXPECT_EQ(c.schedule.mode, GammaMode::fixed_decay);
  EXPECT_EQ(c.sources, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(c.source_weights, (std::vector<double>{1.0, 3.0}));
  const ConfigMap back = config_to_map(c);
  EXPECT_EQ(config_to_map(config_from_map(back)).entries(), back.entries());
  // An unset synthetic-data seed stays unset.
  for (const auto& key : config_keys()) {
    if (std::string(key.name) != "synth.seed") EXPECT_TRUE(back.has(key.name)) << key.name;
  }
  EXPECT_FALSE(back.has("synth.seed"));
}

TEST(ExperimentConfig, UnknownKeyAndBadValuesAreConfigErrors) {
  ConfigMap m;
  m.set("command", "train-single");
  m.set("model.hiden", "12");
  EXPECT_THROW(config_from_map(m), ConfigError);
  ConfigMap bad;
  bad.set("command", "train-single");
  bad.set("model.attention", "sideways");
  EXPECT_THROW(config_from_map(bad), ConfigError);
  ConfigMap cmd;
  cmd.set("command", "dance");
  EXPECT_THROW(config_from_map(cmd).validate(), ConfigError);
}

TEST(ExperimentConfig, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, "model"), derive_seed(1, "ensemble"));
  EXPECT_NE(derive_seed(1, "model"), derive_seed(2, "model"));
  EXPECT_EQ(derive_seed(7, "fewshot"), derive_seed(7, "fewshot"));
}

TEST(MetricsCsv, RoundTrip) {
  const fs::path dir = scratch("metrics");
  const std::vector<MetricsRow> rows{{"single", "train", {75.5, 0.5123456789}}, {"single", "test", {50.0, 0.69}}};
  write_metrics_csv((dir / "m.csv").string(), rows);
  EXPECT_EQ(slurp(dir / "m.csv").rfind("phase,split,accuracy,log_loss\n", 0), 0u);
  const auto back = read_metrics_csv((dir / "m.csv").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].phase, "single");
  EXPECT_EQ(back[1].split, "test");
  EXPECT_EQ(back[0].metrics.accuracy, 75.5);
  EXPECT_EQ(back[0].metrics.log_loss, 0.5123456789);
}

// An untrained network is a random function of the input, so a single seed can land well
// away from chance; chance is what holds on average over initialisations.
TEST(Cli, ZeroEpochRunIsAtChance) {
  constexpr int kSeeds = 12;
  double accuracy = 0.0, log_loss = 0.0;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const fs::path out = scratch("zero" + std::to_string(seed));
    ASSERT_EQ(dropnet("train-single --data synth:size=2000 --train.epochs 0 --seed " + std::to_string(seed) + " --out " +
                      out.string() + kQuick),
              0);
    const auto rows = read_metrics_csv((out / "metrics.csv").string());
    ASSERT_EQ(rows.size(), 2u);
    std::set<std::string> seen;
    for (const auto& r : rows) {
      seen.insert(r.split);
      EXPECT_EQ(r.phase, "single");
    }
    EXPECT_EQ(seen, (std::set<std::string>{"train", "test"}));
    EXPECT_EQ(rows[1].split, "test");
    accuracy += rows[1].metrics.accuracy / kSeeds;
    log_loss += rows[1].metrics.log_loss / kSeeds;
    if (seed == 1) {
      for (const char* f : {"model.ckpt", "vocab.tsv", "labels.txt", "curve.csv", "report.txt"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
      }
    }
  }
  EXPECT_NEAR(accuracy, 50.0, 5.0);
  EXPECT_NEAR(log_loss, std::log(2.0), 0.05);
}

TEST(Cli, SameSeedGivesByteIdenticalMetrics) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  const std::string args = "train-single --data synth:size=400 --train.epochs 2 --seed 5" + kQuick;
  ASSERT_EQ(dropnet(args + " --out " + a.string()), 0);
  ASSERT_EQ(dropnet(args + " --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "curve.csv"), slurp(b / "curve.csv"));
}

TEST(Cli, ConfigFileThenFlags) {
  const fs::path dir = scratch("cfg");
  {
    std::ofstream ini(dir / "run.ini");
    ini << "[data]\npath = synth:size=300\n[train]\nepochs = 0\n[run]\nout = " << (dir / "from_file").string() << '\n';
  }
  ASSERT_EQ(dropnet("train-single --config " + (dir / "run.ini").string() + kQuick), 0);
  EXPECT_TRUE(fs::exists(dir / "from_file" / "metrics.csv"));
  ASSERT_EQ(dropnet("train-single --config " + (dir / "run.ini").string() + " --out " + (dir / "from_flag").string() +
                    kQuick),
            0);
  EXPECT_TRUE(fs::exists(dir / "from_flag" / "metrics.csv"));
}

TEST(Cli, InvalidConfigExitsBeforeTraining) {
  const fs::path out = scratch("invalid");
  EXPECT_EQ(dropnet("train-single --data synth:size=300 --model.layers 0 --out " + (out / "run").string()), 2);
  EXPECT_EQ(dropnet("train-single --data synth:size=300 --train.lr -1 --out " + (out / "run").string()), 2);
  EXPECT_EQ(dropnet("transfer-few --data synth:size=300 --out " + (out / "run").string()), 2);
  EXPECT_FALSE(fs::exists(out / "run"));
  EXPECT_NE(dropnet("no-such-command"), 0);
  EXPECT_NE(dropnet("train-single --data " + (out / "missing.tsv").string() + " --out " + (out / "m").string()), 0);
}

TEST(Cli, PipelineLeavesSourcesUntouched) {
  const fs::path root = scratch("pipeline");
  const fs::path src = root / "src", few = root / "few", zero = root / "zero", eval = root / "eval";
  ASSERT_EQ(dropnet("train-ensemble --data synth:size=600 --ensemble.members 2 --train.epochs 2 --ensemble.dropout 0.1"
                    " --seed 3 --out " + src.string() + kQuick),
            0);
  const auto before = snapshot(src);
  ASSERT_FALSE(before.empty());
  ASSERT_EQ(dropnet("transfer-few --data synth:shift=0.1,size=600 --sources " + src.string() +
                    " --transfer.fewshot_size 40 --train.epochs 2 --smoother.kind moving_average"
                    " --smoother.update_interval 10 --seed 4 --out " + few.string() + kQuick),
            0);
  ASSERT_EQ(dropnet("transfer-zero --data synth:shift=0.1,size=600 --sources " + src.string() + " --out " +
                    zero.string()),
            0);
  ASSERT_EQ(dropnet("eval --eval.ensemble " + src.string() + " --data synth:size=300 --out " + eval.string()), 0);
  EXPECT_EQ(snapshot(src), before);

  std::set<std::string> phases;
  for (const auto& r : read_metrics_csv((few / "metrics.csv").string())) phases.insert(r.phase + "/" + r.split);
  EXPECT_EQ(phases, (std::set<std::string>{"dropping/train", "dropping/test", "zero_shot/train", "zero_shot/test",
                                           "target_only/train", "target_only/test"}));
  const std::string report = slurp(few / "report.txt");
  EXPECT_NE(report.find("final_gamma"), std::string::npos);

  ASSERT_EQ(dropnet("plot --plot.curve " + (few / "curve.csv").string() + " --out " + few.string()), 0);
  EXPECT_NE(slurp(few / "curve.svg").find("series-gamma"), std::string::npos);
}

TEST(Cli, SynthWritesLoadableTsv) {
  const fs::path out = scratch("synth");
  ASSERT_EQ(dropnet("synth --data synth:size=120,shift=0.3 --out " + out.string()), 0);
  const PairDataset d = load_pairs((out / "pairs.tsv").string(), PairFormat::tsv);
  EXPECT_EQ(d.size(), 120u);
}

// Polyline points of one series as (x, y) pairs.
std::vector<std::pair<double, double>> polyline(const std::string& svg, const std::string& id) {
  const std::regex re("<polyline id=\"" + id + "\"[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  std::vector<std::pair<double, double>> pts;
  if (!std::regex_search(svg, m, re)) return pts;
  std::istringstream is(m[1].str());
  std::string tok;
  while (is >> tok) {
    const auto comma = tok.find(',');
    pts.emplace_back(std::stod(tok.substr(0, comma)), std::stod(tok.substr(comma + 1)));
  }
  return pts;
}

std::size_t count(const std::string& s, const std::string& what) {
  std::size_t n = 0;
  for (auto pos = s.find(what); pos != std::string::npos; pos = s.find(what, pos + 1)) ++n;
  return n;
}

TEST(Plot, TwoPointCurveHasOnePolylinePerSeries) {
  std::ostringstream os;
  emit_plot({{0, 0.5, 0.5, 0.0, 1.0}, {100, 0.4, 0.45, -0.001, 0.9}}, os);
  const std::string svg = os.str();
  EXPECT_EQ(count(svg, "<polyline"), 3u);
  for (const char* id : {"series-error", "series-smoothed", "series-gamma"}) {
    EXPECT_EQ(count(svg, std::string("id=\"") + id + "\""), 1u) << id;
    EXPECT_EQ(polyline(svg, id).size(), 2u) << id;
  }
  EXPECT_NE(svg.find("id=\"legend\""), std::string::npos);
  EXPECT_NE(svg.find("id=\"axes\""), std::string::npos);
}

TEST(Plot, ConstantUnitGammaIsFlatAtTop) {
  std::vector<CurveRow> rows;
  for (std::size_t i = 0; i < 10; ++i) rows.push_back({i * 20, 0.3, 0.3, 0.0, 1.0});
  std::ostringstream os;
  emit_plot(rows, os);
  const PlotFrame frame;
  for (const auto& [x, y] : polyline(os.str(), "series-gamma")) EXPECT_NEAR(y, frame.top, 1e-9);
}

TEST(Plot, LongCurveParsesBackMonotoneAndMatchesCsv) {
  const fs::path dir = scratch("plot");
  std::vector<CurveRow> rows;
  double gamma = 1.0;
  for (std::size_t i = 0; i < 200; ++i) {
    if (i % 7 == 6) gamma *= 0.93;
    rows.push_back({i * 10, 0.5 * std::exp(-0.01 * i), 0.5 * std::exp(-0.01 * i), 0.0, gamma});
  }
  {
    std::ofstream csv(dir / "curve.csv");
    write_curve_csv(csv, rows);
  }
  emit_plot((dir / "curve.csv").string(), (dir / "curve.svg").string());
  const auto pts = polyline(slurp(dir / "curve.svg"), "series-gamma");
  ASSERT_EQ(pts.size(), rows.size());
  const PlotScale scale = plot_scale(rows);
  // Coordinates are written to 0.01 px.
  const double x_tol = 0.006 * (scale.x_max - scale.x_min) / scale.frame.plot_width();
  const double y_tol = 0.006 / scale.frame.plot_height();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) EXPECT_GE(pts[i].second, pts[i - 1].second);  // SVG y grows downward
    EXPECT_NEAR(scale.iteration_at(pts[i].first), static_cast<double>(rows[i].iteration), x_tol);
    EXPECT_NEAR(scale.value_at(pts[i].second), rows[i].gamma, y_tol);
  }
}

TEST(Plot, EmptyCurveIsInputError) {
  const fs::path dir = scratch("plot_empty");
  {
    std::ofstream csv(dir / "curve.csv");
    write_curve_csv(csv, {});
  }
  EXPECT_THROW(emit_plot((dir / "curve.csv").string(), (dir / "x.svg").string()), InputError);
  std::ostringstream os;
  EXPECT_THROW(emit_plot(std::vector<CurveRow>{}, os), InputError);
}

}  // namespace
}  // namespace dropping
