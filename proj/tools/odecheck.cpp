// odecheck: sample ODE posteriors with a cheap solver, then check and correct
// the result against more accurate solvers.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "odecheck/cli.hpp"
#include "odecheck/errors.hpp"

int main(int argc, char** argv) {
  using odecheck::RunConfig;

  CLI::App app{"Bayesian ODE inference with solver reliability checks"};
  app.require_subcommand(1);

  struct Command {
    CLI::App* app;
    std::string config_file;
    std::map<std::string, std::string> values;
  };
  std::map<std::string, Command> commands;
  const std::map<std::string, std::string> descriptions = {
      {"simulate", "Simulate the TMDD dataset"},
      {"sample", "Run NUTS under the solver M"},
      {"check", "Refine M* along the ladder and give a verdict"},
      {"estimate", "Importance-weighted estimates from an accepted report"},
      {"print-config", "Print the effective configuration"},
  };
  for (const auto& [name, desc] : descriptions) {
    Command& cmd = commands[name];
    cmd.app = app.add_subcommand(name, desc);
    cmd.app->add_option("--config", cmd.config_file, "key = value config file; flags override it");
    for (const auto& key : RunConfig::keys()) cmd.app->add_option("--" + key, cmd.values[key]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : odecheck::kExitUsage;
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    RunConfig config;
    try {
      if (!cmd.config_file.empty()) config = RunConfig::load_file(cmd.config_file);
      for (const auto& key : RunConfig::keys())
        if (cmd.app->count("--" + key) > 0) config.set(key, cmd.values[key]);
    } catch (const odecheck::ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return odecheck::kExitUsage;
    }
    return odecheck::run_command(name, config, std::cout, std::cerr);
  }
  return odecheck::kExitUsage;
}
