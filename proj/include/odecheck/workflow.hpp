#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "odecheck/diagnostics.hpp"
#include "odecheck/models.hpp"
#include "odecheck/ode.hpp"
#include "odecheck/psis.hpp"
#include "odecheck/sampler.hpp"

namespace odecheck {

struct ConvergenceThresholds {
  double delta_mae = 0.05;  // relative
  double delta_khat = 0.02;
  double mae_floor = 1e-12;
};

/// Candidate M* solvers in order of increasing accuracy.
struct MethodLadder {
  std::vector<SolverSpec> rungs;
  ConvergenceThresholds thresholds;

  /// Throws ConfigError if two neighbouring rungs of the same family are not
  /// strictly increasing in accuracy. Across families the order is positional.
  void validate() const;
  std::string to_string() const;
  /// Comma-separated rung specs, e.g. "rk45:1e-06,rk45:1e-08".
  static MethodLadder parse(std::string_view text);
};

/// RK45: tolerances tol/10^i, i = 1..6, capped at 1e-12. Fixed step: K*2^i, i = 1..6.
MethodLadder default_ladder(const SolverSpec& m);

struct RungRecord {
  std::string method;
  double mae = 0.0;
  double max_log_ratio = 0.0;
  double max_ratio = 0.0;  // exp(max_log_ratio), may overflow to inf
  double khat = 0.0;
  double r_eff = 0.0;
  std::size_t failed_draws = 0;
  std::size_t mae_excluded = 0;
  double seconds = 0.0;
  std::uint64_t rhs_evals = 0;
};

enum class Verdict { Accept, Resample };
std::string_view verdict_name(Verdict v);

struct WorkflowReport {
  std::string sampling_method;
  std::vector<RungRecord> rungs;
  Verdict verdict = Verdict::Resample;
  std::optional<std::size_t> converged_rung;  // 0-based
  ConvergenceThresholds thresholds;
  std::string note;
  std::optional<std::string> suggested_method;  // on resample
  std::optional<PsisResult> psis;                // on accept

  std::uint64_t total_rhs_evals() const;

  nlohmann::json to_json() const;
  static WorkflowReport from_json(const nlohmann::json& j);
};

/// Max-norm difference over draws, times and components. Draws flagged in
/// `failed` are skipped; their count is written to `excluded` if given.
double compute_mae(std::span<const double> solutions_m, std::span<const double> solutions_star,
                   std::size_t solution_size, std::span<const char> failed = {},
                   std::size_t* excluded = nullptr);
double compute_mae(const std::vector<OdeSolution>& solutions_m,
                   const std::vector<OdeSolution>& solutions_star);

/// Walks the ladder until MAE and k-hat both settle, then gives the verdict.
WorkflowReport run_reliability_check(const Draws& draws, const PosteriorModel& model,
                                     const MethodLadder& ladder, int threads = 0);

struct Estimand {
  std::string name;
  ChainMatrix values;  // [chain][draw]
};

struct Estimate {
  std::string name;
  double mean = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
  double mcse = 0.0;
};

/// Posterior parameters on the constrained scale as estimands.
std::vector<Estimand> parameter_estimands(const Draws& draws);

/// Weighted means and quantiles with MCSE = weighted sd / sqrt(r_eff * ESS_mean).
/// Throws VerdictMismatch unless the report verdict is accept.
std::vector<Estimate> corrected_estimates(const WorkflowReport& report,
                                          const std::vector<Estimand>& estimands);
/// Same summaries with explicit weights and efficiency.
std::vector<Estimate> weighted_estimates(std::span<const double> weights, double r_eff,
                                         const std::vector<Estimand>& estimands);

}  // namespace odecheck
