#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "odecheck/dual.hpp"

namespace odecheck {

/// Right-hand side f(y, t, p) of an ODE system. Implementations must be
/// deterministic and evaluable over both double and Dual scalars.
class OdeSystem {
 public:
  virtual ~OdeSystem() = default;

  virtual std::size_t dimension() const = 0;
  virtual std::size_t num_params() const = 0;

  virtual void rhs(std::span<const double> y, double t, std::span<const double> p,
                   std::span<double> dydt) const = 0;
  virtual void rhs(std::span<const Dual> y, double t, std::span<const Dual> p,
                   std::span<Dual> dydt) const = 0;
};

/// Adapts a generic callable `f(y, t, p, dydt)` (templated on the scalar) to OdeSystem.
template <class F>
class GenericOdeSystem final : public OdeSystem {
 public:
  GenericOdeSystem(std::size_t dimension, std::size_t num_params, F f)
      : dimension_(dimension), num_params_(num_params), f_(std::move(f)) {}

  std::size_t dimension() const override { return dimension_; }
  std::size_t num_params() const override { return num_params_; }

  void rhs(std::span<const double> y, double t, std::span<const double> p,
           std::span<double> dydt) const override {
    f_(y, t, p, dydt);
  }
  void rhs(std::span<const Dual> y, double t, std::span<const Dual> p,
           std::span<Dual> dydt) const override {
    f_(y, t, p, dydt);
  }

 private:
  std::size_t dimension_;
  std::size_t num_params_;
  F f_;
};

template <class F>
std::shared_ptr<const OdeSystem> make_ode_system(std::size_t dimension, std::size_t num_params,
                                                 F f) {
  return std::make_shared<GenericOdeSystem<F>>(dimension, num_params, std::move(f));
}

struct Ivp {
  std::shared_ptr<const OdeSystem> system;
  double t0 = 0.0;
  std::vector<double> y0;
  std::vector<double> params;
  /// Strictly increasing, all >= t0. An output time equal to t0 reports y0.
  std::vector<double> output_times;

  /// Throws DomainError if the problem is malformed.
  void validate() const;
};

enum class Method { Midpoint, Rk4, Rk45 };

std::string_view method_name(Method m);

struct SolverSpec {
  Method method = Method::Rk45;
  int steps_per_interval = 1;  // Midpoint / Rk4
  double tol_abs = 1e-6;       // Rk45
  double tol_rel = 1e-6;       // Rk45
  long max_steps_per_interval = 100000;
  double initial_step = 0.1;

  static SolverSpec midpoint(int steps);
  static SolverSpec rk4(int steps);
  static SolverSpec rk45(double tol);
  static SolverSpec rk45(double tol_abs, double tol_rel);

  bool fixed_step() const { return method != Method::Rk45; }

  /// Canonical text form, e.g. "midpoint:3", "rk4:20", "rk45:0.001" or
  /// "rk45:1e-06:1e-08" when the tolerances differ.
  std::string to_string() const;
  /// Inverse of to_string(). Throws ConfigError on malformed input.
  static SolverSpec parse(std::string_view text);

  bool operator==(const SolverSpec&) const = default;
};

/// True iff `a` is strictly more accurate than `b`. Only defined within one
/// method family; returns false across families.
bool more_accurate(const SolverSpec& a, const SolverSpec& b);

struct SolverStats {
  std::uint64_t steps = 0;     // attempted steps
  std::uint64_t rejected = 0;  // rejected steps (adaptive only)
  std::uint64_t rhs_evals = 0;

  SolverStats& operator+=(const SolverStats& o) {
    steps += o.steps;
    rejected += o.rejected;
    rhs_evals += o.rhs_evals;
    return *this;
  }
};

/// States on the output grid, row n = y(t_n).
struct OdeSolution {
  std::size_t num_times = 0;
  std::size_t dimension = 0;
  std::vector<double> states;
  SolverStats stats;

  double operator()(std::size_t n, std::size_t d) const { return states[n * dimension + d]; }
  std::span<const double> row(std::size_t n) const {
    return std::span<const double>(states).subspan(n * dimension, dimension);
  }
};

/// Entry (n, d, p) = d y_d(t_n) / d p_p.
struct SensitivityMatrix {
  std::size_t num_times = 0;
  std::size_t dimension = 0;
  std::size_t num_params = 0;
  std::vector<double> values;

  double operator()(std::size_t n, std::size_t d, std::size_t p) const {
    return values[(n * dimension + d) * num_params + p];
  }
  double& operator()(std::size_t n, std::size_t d, std::size_t p) {
    return values[(n * dimension + d) * num_params + p];
  }
};

/// One explicit Runge-Kutta step (Midpoint or Rk4). Adds the stage count to
/// `stats` when given. Throws SolverFailure on a non-finite result.
std::vector<double> step_explicit_rk(std::span<const double> y, double t, double h, Method method,
                                     const OdeSystem& system, std::span<const double> params,
                                     SolverStats* stats = nullptr);

/// K equal steps between consecutive output times, no interpolation.
OdeSolution solve_fixed(const Ivp& ivp, Method method, int steps_per_interval);

/// Eq. A.2-style max-norm of the embedded error estimate, scaled by tolerances.
double rk45_error_norm(std::span<const double> y_high, std::span<const double> y_low,
                       std::span<const double> y_cur, std::span<const double> f_cur, double h,
                       double tol_abs, double tol_rel);

struct StepDecision {
  bool accepted;
  double h_next;
};

/// Step size controller: shrink on v > 1, grow on v < 0.5, keep otherwise.
StepDecision rk45_adapt_step(double v, double h);

/// Dormand-Prince 4(5) with clamping to output times.
OdeSolution solve_rk45(const Ivp& ivp, const SolverSpec& spec);

/// Dispatches on spec.method.
OdeSolution solve(const Ivp& ivp, const SolverSpec& spec);

struct SensitivitySolution {
  OdeSolution solution;
  SensitivityMatrix sensitivities;
};

/// Solution plus parameter sensitivities. `dy0_dp` is D x P row-major.
/// Fixed-step methods differentiate the discrete recursion with Dual numbers;
/// Rk45 integrates the forward sensitivity system alongside the state.
SensitivitySolution solve_with_sensitivities(const Ivp& ivp, const SolverSpec& spec,
                                             std::span<const double> dy0_dp);

}  // namespace odecheck
