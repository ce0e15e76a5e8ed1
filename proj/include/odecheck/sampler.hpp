#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "odecheck/models.hpp"
#include "odecheck/ode.hpp"

namespace odecheck {

/// Unnormalized log density on an unconstrained space.
class LogDensityTarget {
 public:
  virtual ~LogDensityTarget() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  virtual std::vector<double> initial_point() const = 0;
  /// Returns -inf log density on any failure.
  virtual PosteriorEvalResult evaluate(std::span<const double> q, bool want_gradient) const = 0;
  /// Unconstrained -> reported scale.
  virtual std::vector<double> constrain(std::span<const double> q) const {
    return {q.begin(), q.end()};
  }
};

/// A PosteriorModel evaluated under a fixed solver.
class ModelTarget final : public LogDensityTarget {
 public:
  ModelTarget(const PosteriorModel& model, SolverSpec spec) : model_(model), spec_(spec) {}

  std::size_t dim() const override { return model_.dim(); }
  std::vector<std::string> param_names() const override { return model_.param_names(); }
  std::vector<double> initial_point() const override { return transform(model_.initial_point()); }
  PosteriorEvalResult evaluate(std::span<const double> q, bool want_gradient) const override {
    return unnorm_log_posterior(model_, q, spec_, want_gradient);
  }
  std::vector<double> constrain(std::span<const double> q) const override {
    return inverse_transform(q).theta;
  }
  const SolverSpec& spec() const { return spec_; }

 private:
  const PosteriorModel& model_;
  SolverSpec spec_;
};

struct SamplerConfig {
  int chains = 4;
  int iterations = 4000;  // per chain, including warmup
  int warmup = 2000;
  double init_stepsize = 0.1;
  double target_accept = 0.8;
  int max_depth = 10;
  double max_energy_error = 1000.0;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: ODECHECK_THREADS or hardware concurrency
  /// Scales the adapted step size for the sampling phase (1 = as adapted).
  double stepsize_multiplier = 1.0;

  int draws_per_chain() const { return iterations - warmup; }
};

struct ChainDraws {
  std::vector<double> eta;  // draws x dim, unconstrained
  std::vector<double> log_density;
  std::vector<double> accept_stat;
  std::vector<double> stepsize;
  std::vector<int> treedepth;
  std::vector<int> n_leapfrog;
  std::vector<char> divergent;
  std::vector<double> solutions;  // draws x solution_size; empty without an ODE
};

struct Draws {
  std::vector<std::string> param_names;
  std::size_t dim = 0;
  std::size_t solution_size = 0;
  std::string method;  // text form of the solver used while sampling
  std::vector<ChainDraws> chains;

  std::size_t num_chains() const { return chains.size(); }
  std::size_t draws_per_chain() const { return chains.empty() ? 0 : chains[0].log_density.size(); }
  std::size_t total() const { return num_chains() * draws_per_chain(); }

  std::span<const double> eta(std::size_t chain, std::size_t draw) const {
    return std::span<const double>(chains[chain].eta).subspan(draw * dim, dim);
  }
  std::span<const double> solution(std::size_t chain, std::size_t draw) const {
    return std::span<const double>(chains[chain].solutions)
        .subspan(draw * solution_size, solution_size);
  }
  /// Per-parameter chains on the constrained scale: [param][chain][draw].
  std::vector<std::vector<std::vector<double>>> constrained_by_param() const;
};

struct ChainDiagnostics {
  double mean_accept_stat = 0.0;
  double stepsize = 0.0;
  double mean_treedepth = 0.0;
  double mean_leapfrog = 0.0;
  double divergent_fraction = 0.0;
  double seconds = 0.0;
  std::uint64_t rhs_evals = 0;       // all iterations, warmup included
  std::uint64_t gradient_evals = 0;  // all iterations, warmup included
  std::uint64_t total_leapfrog = 0;  // all iterations, warmup included
};

struct SamplerDiagnostics {
  std::vector<ChainDiagnostics> chains;
  std::uint64_t total_rhs_evals() const;
  std::uint64_t total_leapfrog() const;
  double divergent_fraction() const;
  double total_seconds() const;
};

struct SampleResult {
  Draws draws;
  SamplerDiagnostics diagnostics;
};

/// Multinomial NUTS with Stan-style windowed warmup. Chains run concurrently
/// with independent RNG streams derived from (seed, chain index).
SampleResult nuts_sample(const LogDensityTarget& target, const SamplerConfig& config);
SampleResult nuts_sample(const PosteriorModel& model, const SolverSpec& spec,
                         const SamplerConfig& config);

/// Position/momentum state for one leapfrog step. `gradient` is the gradient
/// of the log density at `position`.
struct PhasePoint {
  std::vector<double> position;
  std::vector<double> momentum;
  std::vector<double> gradient;
  double log_density = 0.0;
};

using GradientFn = std::function<PosteriorEvalResult(std::span<const double>)>;

/// One leapfrog step with diagonal inverse metric. Returns false (divergence
/// signal) if the new log density or gradient is not finite.
bool leapfrog(PhasePoint& z, double step_size, std::span<const double> inv_metric,
              const GradientFn& gradient_fn, PosteriorEvalResult* eval_out = nullptr);

/// Number of worker threads from an explicit request, ODECHECK_THREADS, or the hardware.
int resolve_threads(int requested);

/// Runs body(i) for i in [0, n) on up to `threads` threads.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace odecheck
