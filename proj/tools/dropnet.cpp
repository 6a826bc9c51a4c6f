// SPDX-License-Identifier: Apache-2.0
// dropnet: experiment runner for dropping-network transfer.
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "dropping/errors.hpp"
#include "dropping/experiment.hpp"

namespace {

const std::map<std::string, std::string> kAliases = {
    {"data.path", "--data"}, {"run.out", "--out"}, {"run.seed", "--seed"}, {"run.jobs", "--jobs"},
    {"transfer.sources", "--sources"},
};

const std::pair<const char*, const char*> kCommands[] = {
    {"train-single", "train one pair classifier"},
    {"train-ensemble", "train a bagged, dropout-regularised ensemble"},
    {"transfer-zero", "evaluate source ensembles on target data without training"},
    {"transfer-few", "few-shot transfer from source ensembles"},
    {"eval", "evaluate a model checkpoint or ensemble directory"},
    {"plot", "render curve.csv as SVG"},
    {"synth", "write a synthetic pair task as TSV"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dropping-network transfer experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "key = value config file with [sections]")->check(CLI::ExistingFile);

  std::map<std::string, std::string> flags;
  for (const auto& key : dropping::config_keys()) {
    const std::string name = key.name;
    if (name == "command") continue;
    std::string names = "--" + name;
    if (const auto it = kAliases.find(name); it != kAliases.end()) names += "," + it->second;
    app.add_option_function<std::string>(names, [&flags, name](const std::string& v) { flags[name] = v; }, key.help);
  }
  for (const auto& [name, help] : kCommands) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);

  try {
    dropping::ConfigMap config;
    if (!config_path.empty()) config = dropping::ConfigMap::load(config_path);
    dropping::ConfigMap overrides;
    for (const auto& [k, v] : flags) overrides.set(k, v);
    config.merge(overrides);
    config.set("command", app.get_subcommands().front()->get_name());
    const dropping::ExperimentConfig ec = dropping::config_from_map(config);
    return dropping::run_experiment(ec, std::cerr);
  } catch (const dropping::ConfigError& e) {
    std::cerr << "dropnet: configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dropnet: " << e.what() << '\n';
    return 1;
  }
}
