#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "odecheck/models.hpp"
#include "odecheck/ode.hpp"
#include "odecheck/sampler.hpp"

namespace odecheck {

/// log r_s = log p(theta_s | M*) - log p(theta_s | M), chain-major draw order.
struct LogRatios {
  std::vector<double> values;  // -inf where the M* evaluation failed
  std::vector<char> failed;
  std::string method;       // M
  std::string method_star;  // M*
  std::size_t solution_size = 0;
  std::vector<double> solutions_star;  // draws x solution_size, zeros for failed draws
  SolverStats cost;                    // summed over all M* re-solves

  std::size_t size() const { return values.size(); }
  std::size_t failed_count() const;
  std::span<const double> solution_star(std::size_t s) const {
    return std::span<const double>(solutions_star).subspan(s * solution_size, solution_size);
  }
};

struct GpdFit {
  double location = 0.0;  // u, on the ratio scale after max-shift
  double sigma = 0.0;
  double k = 0.0;
  std::size_t tail_count = 0;
};

struct PsisResult {
  std::vector<double> weights;  // normalized, zero for failed draws
  double khat = 0.0;            // -inf when the tail is degenerate
  double r_eff = 1.0;
  std::size_t tail_size = 0;
  std::size_t failed_draws = 0;
  bool smoothed = false;
};

/// Re-evaluates every stored draw under `spec_star`. Draws are processed in
/// parallel; the result does not depend on the thread count.
LogRatios compute_log_ratios(const Draws& draws, const PosteriorModel& model,
                             const SolverSpec& spec_star, int threads = 0);

double gpd_density(double x, double u, double sigma, double k);
double gpd_cdf(double x, double u, double sigma, double k);
/// Quantile of a GPD with location 0.
double gpd_quantile(double p, double sigma, double k);

/// Zhang-Stephens fit of GPD(0, sigma, k) to positive exceedances sorted
/// ascending. Returns the raw (unregularized) shape.
GpdFit fit_gpd(std::span<const double> sorted_exceedances);

std::size_t psis_tail_size(std::size_t draws);

/// Fit on the finite log ratios. Throws DegenerateTail when the tail has zero
/// range and DomainError with fewer than 25 finite ratios.
GpdFit fit_gpd_tail(const LogRatios& ratios);
GpdFit fit_gpd_tail(std::span<const double> log_ratios);

PsisResult pareto_smooth(const LogRatios& ratios);
PsisResult pareto_smooth(std::span<const double> log_ratios);

/// Self-normalized weighted mean. Throws AllZeroWeights / DomainError.
double snis_estimate(std::span<const double> values, std::span<const double> weights);
double snis_estimate(const Draws& draws, std::span<const double> weights,
                     const std::function<double(std::span<const double> theta)>& phi);

/// Smallest value whose cumulative normalized weight reaches p.
double weighted_quantile(std::span<const double> values, std::span<const double> weights, double p);

double relative_efficiency(std::span<const double> weights);

enum class KhatVerdict { Reliable, Unreliable };
constexpr double kKhatThreshold = 0.7;
KhatVerdict khat_verdict(double khat);

}  // namespace odecheck
