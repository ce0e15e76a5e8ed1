#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "odecheck/models.hpp"
#include "odecheck/sampler.hpp"
#include "odecheck/workflow.hpp"

namespace odecheck {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitRuntime = 3, kExitResample = 10 };

/// Flat key/value run description shared by every command.
struct RunConfig {
  std::string model = "lotka-volterra";  // tmdd, lotka-volterra or a plugin .so path
  std::string data;                      // empty: bundled data (lotka-volterra only)
  int chains = 4;
  int iters = 4000;  // per chain, warmup included
  int warmup = -1;  // -1 ("auto"): half of iters
  double stepsize = 0.1;
  double adapt_delta = 0.8;
  int max_depth = 10;
  std::uint64_t seed = 1;
  std::string solver = "rk45:0.001";
  std::string ladder = "default";  // or comma-separated solver specs
  std::string out = "out";
  std::string draws;   // empty: same as out
  std::string report;  // empty: <out>/report.json
  int threads = 0;     // 0: ODECHECK_THREADS or hardware
  double delta_mae = 0.05;
  double delta_khat = 0.02;

  static const std::vector<std::string>& keys();
  /// Throws ConfigError naming the key on unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;

  /// `key = value` lines; '#' starts a comment.
  std::string to_text() const;
  static RunConfig parse_text(std::string_view text);
  static RunConfig parse_text(std::string_view text, RunConfig base);
  static RunConfig load_file(const std::string& path);

  SolverSpec solver_spec() const;
  MethodLadder method_ladder() const;
  SamplerConfig sampler_config() const;
  int effective_warmup() const { return warmup < 0 ? iters / 2 : warmup; }
  std::string draws_dir() const;
  std::string report_path() const;

  bool operator==(const RunConfig&) const = default;
};

/// Builds the posterior named by `config.model`. Plugins are shared objects
/// exporting `odecheck_create_model`, see plugin.hpp.
std::unique_ptr<PosteriorModel> load_model(const RunConfig& config);

int cmd_simulate(const RunConfig& config, std::ostream& out);
int cmd_sample(const RunConfig& config, std::ostream& out);
int cmd_check(const RunConfig& config, std::ostream& out);
int cmd_estimate(const RunConfig& config, std::ostream& out);
int cmd_print_config(const RunConfig& config, std::ostream& out);

/// Runs a command and maps exceptions to exit codes, reporting to `err`.
int run_command(std::string_view name, const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace odecheck
