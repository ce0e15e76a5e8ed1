#include "odecheck/ode.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "odecheck/errors.hpp"
#include "odecheck/io.hpp"

namespace odecheck {

namespace {

bool is_finite(double x) { return std::isfinite(x); }
bool is_finite(const Dual& x) { return odecheck::isfinite(x); }

long parse_long(std::string_view s) {
  long x = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("malformed integer '" + std::string(s) + "'");
  return x;
}

// Scratch buffers for one explicit step, reused across steps of a solve.
template <class T>
struct RkWork {
  std::vector<T> k1, k2, k3, k4, tmp;
  explicit RkWork(std::size_t n) : k1(n), k2(n), k3(n), k4(n), tmp(n) {}
};

template <class T>
void rk_step(Method method, const OdeSystem& sys, std::span<const T> y, double t, double h,
             std::span<const T> p, std::span<T> out, RkWork<T>& w, SolverStats& stats) {
  const std::size_t n = y.size();
  if (method == Method::Midpoint) {
    sys.rhs(y, t, p, std::span<T>(w.k1));
    for (std::size_t i = 0; i < n; ++i) w.tmp[i] = y[i] + (0.5 * h) * w.k1[i];
    sys.rhs(std::span<const T>(w.tmp), t + 0.5 * h, p, std::span<T>(w.k2));
    for (std::size_t i = 0; i < n; ++i) out[i] = y[i] + h * w.k2[i];
    stats.rhs_evals += 2;
  } else {
    sys.rhs(y, t, p, std::span<T>(w.k1));
    for (std::size_t i = 0; i < n; ++i) w.tmp[i] = y[i] + (0.5 * h) * w.k1[i];
    sys.rhs(std::span<const T>(w.tmp), t + 0.5 * h, p, std::span<T>(w.k2));
    for (std::size_t i = 0; i < n; ++i) w.tmp[i] = y[i] + (0.5 * h) * w.k2[i];
    sys.rhs(std::span<const T>(w.tmp), t + 0.5 * h, p, std::span<T>(w.k3));
    for (std::size_t i = 0; i < n; ++i) w.tmp[i] = y[i] + h * w.k3[i];
    sys.rhs(std::span<const T>(w.tmp), t + h, p, std::span<T>(w.k4));
    for (std::size_t i = 0; i < n; ++i)
      out[i] = y[i] + h * ((1.0 / 6.0) * w.k1[i] + (1.0 / 3.0) * w.k2[i] +
                           (1.0 / 3.0) * w.k3[i] + (1.0 / 6.0) * w.k4[i]);
    stats.rhs_evals += 4;
  }
  stats.steps += 1;
  for (std::size_t i = 0; i < n; ++i)
    if (!is_finite(out[i])) throw SolverFailure("non-finite state in explicit RK step");
}

// Fixed-step recursion over scalar T; rows of `out` receive the states at each
// output time.
template <class T>
SolverStats fixed_recursion(const Ivp& ivp, Method method, int steps, std::span<const T> y0,
                            std::span<const T> p, std::vector<T>& out) {
  const OdeSystem& sys = *ivp.system;
  const std::size_t n = sys.dimension();
  std::vector<T> y(y0.begin(), y0.end());
  std::vector<T> next(n);
  RkWork<T> work(n);
  SolverStats stats;
  out.assign(ivp.output_times.size() * n, T{});

  double t_prev = ivp.t0;
  for (std::size_t row = 0; row < ivp.output_times.size(); ++row) {
    const double t_next = ivp.output_times[row];
    if (t_next > t_prev) {
      const double h = (t_next - t_prev) / steps;
      for (int k = 0; k < steps; ++k) {
        const double t = t_prev + k * h;
        rk_step<T>(method, sys, std::span<const T>(y), t, h, p, std::span<T>(next), work, stats);
        std::swap(y, next);
      }
    }
    std::copy(y.begin(), y.end(), out.begin() + row * n);
    t_prev = t_next;
  }
  return stats;
}

// Dormand-Prince 5(4) coefficients.
namespace dp {
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// Embedded fourth-order weights.
constexpr double e1 = 5179.0 / 57600, e3 = 7571.0 / 16695, e4 = 393.0 / 640,
                 e5 = -92097.0 / 339200, e6 = 187.0 / 2100, e7 = 1.0 / 40;
}  // namespace dp

// Adaptive driver over a plain double vector field `f(y, t, dydt)` of
// dimension n. Writes the states at the output times into `out`.
template <class F>
SolverStats rk45_integrate(const F& f, std::size_t n, const Ivp& ivp, const SolverSpec& spec,
                           std::span<const double> y0, std::vector<double>& out) {
  SolverStats stats;
  std::vector<double> y(y0.begin(), y0.end());
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  std::vector<double> tmp(n), y_high(n), y_low(n);
  out.assign(ivp.output_times.size() * n, 0.0);

  double t = ivp.t0;
  double h = spec.initial_step;
  f(y.data(), t, k1.data());
  stats.rhs_evals += 1;

  for (std::size_t row = 0; row < ivp.output_times.size(); ++row) {
    const double t_next = ivp.output_times[row];
    long steps_in_interval = 0;
    while (t < t_next) {
      if (steps_in_interval >= spec.max_steps_per_interval)
        throw MaxStepsExceeded("RK45 step budget exhausted before t = " + format_double(t_next));
      const bool clamped = t + h >= t_next;
      const double h_try = clamped ? t_next - t : h;

      for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h_try * dp::a21 * k1[i];
      f(tmp.data(), t + dp::c2 * h_try, k2.data());
      for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h_try * (dp::a31 * k1[i] + dp::a32 * k2[i]);
      f(tmp.data(), t + dp::c3 * h_try, k3.data());
      for (std::size_t i = 0; i < n; ++i)
        tmp[i] = y[i] + h_try * (dp::a41 * k1[i] + dp::a42 * k2[i] + dp::a43 * k3[i]);
      f(tmp.data(), t + dp::c4 * h_try, k4.data());
      for (std::size_t i = 0; i < n; ++i)
        tmp[i] = y[i] + h_try * (dp::a51 * k1[i] + dp::a52 * k2[i] + dp::a53 * k3[i] +
                                 dp::a54 * k4[i]);
      f(tmp.data(), t + dp::c5 * h_try, k5.data());
      for (std::size_t i = 0; i < n; ++i)
        tmp[i] = y[i] + h_try * (dp::a61 * k1[i] + dp::a62 * k2[i] + dp::a63 * k3[i] +
                                 dp::a64 * k4[i] + dp::a65 * k5[i]);
      f(tmp.data(), t + h_try, k6.data());
      for (std::size_t i = 0; i < n; ++i)
        y_high[i] = y[i] + h_try * (dp::b1 * k1[i] + dp::b3 * k3[i] + dp::b4 * k4[i] +
                                    dp::b5 * k5[i] + dp::b6 * k6[i]);
      f(y_high.data(), t + h_try, k7.data());
      for (std::size_t i = 0; i < n; ++i)
        y_low[i] = y[i] + h_try * (dp::e1 * k1[i] + dp::e3 * k3[i] + dp::e4 * k4[i] +
                                   dp::e5 * k5[i] + dp::e6 * k6[i] + dp::e7 * k7[i]);
      stats.rhs_evals += 6;
      stats.steps += 1;
      ++steps_in_interval;

      double v = rk45_error_norm(y_high, y_low, y, k1, h_try, spec.tol_abs, spec.tol_rel);
      if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
      const StepDecision decision = rk45_adapt_step(v, h_try);
      if (!decision.accepted) {
        stats.rejected += 1;
        h = decision.h_next;
        if (!(t + h > t)) throw SolverFailure("RK45 step size underflow at t = " + format_double(t));
        continue;
      }
      for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(y_high[i]) || !std::isfinite(k7[i]))
          throw SolverFailure("non-finite state in RK45 step");
      t = clamped ? t_next : t + h_try;
      std::swap(y, y_high);
      std::swap(k1, k7);
      if (!clamped) h = decision.h_next;
    }
    std::copy(y.begin(), y.end(), out.begin() + row * n);
  }
  return stats;
}

}  // namespace

void Ivp::validate() const {
  if (!system) throw DomainError("IVP has no ODE system");
  if (y0.size() != system->dimension())
    throw DomainError("initial state has " + std::to_string(y0.size()) + " components, system has " +
                      std::to_string(system->dimension()));
  if (params.size() != system->num_params())
    throw DomainError("parameter vector has wrong length");
  for (std::size_t i = 0; i < output_times.size(); ++i) {
    if (output_times[i] < t0) throw DomainError("output time before t0");
    if (i > 0 && !(output_times[i] > output_times[i - 1]))
      throw DomainError("output times must be strictly increasing");
  }
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Midpoint:
      return "midpoint";
    case Method::Rk4:
      return "rk4";
    case Method::Rk45:
      return "rk45";
  }
  return "?";
}

SolverSpec SolverSpec::midpoint(int steps) {
  SolverSpec s;
  s.method = Method::Midpoint;
  s.steps_per_interval = steps;
  return s;
}

SolverSpec SolverSpec::rk4(int steps) {
  SolverSpec s;
  s.method = Method::Rk4;
  s.steps_per_interval = steps;
  return s;
}

SolverSpec SolverSpec::rk45(double tol) { return rk45(tol, tol); }

SolverSpec SolverSpec::rk45(double tol_abs, double tol_rel) {
  SolverSpec s;
  s.method = Method::Rk45;
  s.tol_abs = tol_abs;
  s.tol_rel = tol_rel;
  return s;
}

std::string SolverSpec::to_string() const {
  std::string out(method_name(method));
  if (fixed_step()) return out + ":" + std::to_string(steps_per_interval);
  out += ":" + format_double(tol_abs);
  if (tol_rel != tol_abs) out += ":" + format_double(tol_rel);
  return out;
}

SolverSpec SolverSpec::parse(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(':', start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  const std::string_view name = parts[0];
  if (name == "midpoint" || name == "rk4") {
    if (parts.size() != 2) throw ConfigError("expected '" + std::string(name) + ":K'");
    const long k = parse_long(parts[1]);
    if (k < 1) throw ConfigError("steps per interval must be >= 1");
    return name == "midpoint" ? midpoint(static_cast<int>(k)) : rk4(static_cast<int>(k));
  }
  if (name == "rk45") {
    if (parts.size() != 2 && parts.size() != 3)
      throw ConfigError("expected 'rk45:tol' or 'rk45:abs:rel'");
    const double abs_tol = parse_double(parts[1]);
    const double rel_tol = parts.size() == 3 ? parse_double(parts[2]) : abs_tol;
    if (!(abs_tol > 0.0) || !(rel_tol >= 0.0)) throw ConfigError("rk45 tolerances must be positive");
    return rk45(abs_tol, rel_tol);
  }
  throw ConfigError("unknown solver '" + std::string(text) + "'");
}

bool more_accurate(const SolverSpec& a, const SolverSpec& b) {
  if (a.method != b.method) return false;
  if (a.fixed_step()) return a.steps_per_interval > b.steps_per_interval;
  return a.tol_abs <= b.tol_abs && a.tol_rel <= b.tol_rel &&
         (a.tol_abs < b.tol_abs || a.tol_rel < b.tol_rel);
}

std::vector<double> step_explicit_rk(std::span<const double> y, double t, double h, Method method,
                                     const OdeSystem& system, std::span<const double> params,
                                     SolverStats* stats) {
  if (method == Method::Rk45) throw DomainError("step_explicit_rk takes Midpoint or Rk4");
  if (!(h > 0.0)) throw DomainError("step size must be positive");
  std::vector<double> out(y.size());
  RkWork<double> work(y.size());
  SolverStats local;
  rk_step<double>(method, system, y, t, h, params, std::span<double>(out), work, local);
  if (stats) *stats += local;
  return out;
}

OdeSolution solve_fixed(const Ivp& ivp, Method method, int steps_per_interval) {
  if (method == Method::Rk45) throw DomainError("solve_fixed takes Midpoint or Rk4");
  if (steps_per_interval < 1) throw DomainError("steps per interval must be >= 1");
  ivp.validate();
  OdeSolution sol;
  sol.num_times = ivp.output_times.size();
  sol.dimension = ivp.system->dimension();
  sol.stats = fixed_recursion<double>(ivp, method, steps_per_interval, ivp.y0, ivp.params,
                                      sol.states);
  return sol;
}

double rk45_error_norm(std::span<const double> y_high, std::span<const double> y_low,
                       std::span<const double> y_cur, std::span<const double> f_cur, double h,
                       double tol_abs, double tol_rel) {
  double v = 0.0;
  for (std::size_t d = 0; d < y_high.size(); ++d) {
    const double diff = std::abs(y_high[d] - y_low[d]);
    const double scale = tol_abs + tol_rel * (std::abs(y_cur[d]) + h * std::abs(f_cur[d]));
    if (!(scale > 0.0)) {
      if (diff == 0.0) continue;
      throw DomainError("zero error scale: tol_abs must be positive");
    }
    v = std::max(v, diff / scale);
  }
  return v;
}

StepDecision rk45_adapt_step(double v, double h) {
  if (v > 1.0) return {false, h * std::max(0.9 * std::pow(v, -1.0 / 3.0), 1.0 / 5.0)};
  if (v < 0.5) return {true, h * std::min(0.9 * std::pow(v, -1.0 / 5.0), 5.0)};
  return {true, h};
}

OdeSolution solve_rk45(const Ivp& ivp, const SolverSpec& spec) {
  if (spec.method != Method::Rk45) throw DomainError("solve_rk45 needs an rk45 spec");
  if (!(spec.tol_abs > 0.0) || spec.tol_rel < 0.0) throw DomainError("rk45 tolerances must be positive");
  ivp.validate();
  const OdeSystem& sys = *ivp.system;
  const std::size_t n = sys.dimension();
  std::span<const double> p(ivp.params);
  auto f = [&](const double* y, double t, double* dydt) {
    sys.rhs(std::span<const double>(y, n), t, p, std::span<double>(dydt, n));
  };
  OdeSolution sol;
  sol.num_times = ivp.output_times.size();
  sol.dimension = n;
  sol.stats = rk45_integrate(f, n, ivp, spec, ivp.y0, sol.states);
  return sol;
}

OdeSolution solve(const Ivp& ivp, const SolverSpec& spec) {
  if (spec.fixed_step()) return solve_fixed(ivp, spec.method, spec.steps_per_interval);
  return solve_rk45(ivp, spec);
}

SensitivitySolution solve_with_sensitivities(const Ivp& ivp, const SolverSpec& spec,
                                             std::span<const double> dy0_dp) {
  ivp.validate();
  const OdeSystem& sys = *ivp.system;
  const std::size_t n = sys.dimension();
  const std::size_t np = sys.num_params();
  if (np > kMaxTangents) throw DomainError("too many parameters for forward sensitivities");
  if (dy0_dp.size() != n * np) throw ShapeMismatch("dy0/dp must be D x P");

  SensitivitySolution result;
  OdeSolution& sol = result.solution;
  SensitivityMatrix& sens = result.sensitivities;
  sol.num_times = sens.num_times = ivp.output_times.size();
  sol.dimension = sens.dimension = n;
  sens.num_params = np;
  sens.values.assign(sol.num_times * n * np, 0.0);

  if (spec.fixed_step()) {
    if (spec.steps_per_interval < 1) throw DomainError("steps per interval must be >= 1");
    std::vector<Dual> y0(n), p(np), out;
    for (std::size_t j = 0; j < np; ++j) p[j] = Dual::variable(ivp.params[j], j);
    for (std::size_t d = 0; d < n; ++d) {
      y0[d] = Dual(ivp.y0[d]);
      for (std::size_t j = 0; j < np; ++j) y0[d].tangent(j) = dy0_dp[d * np + j];
    }
    sol.stats = fixed_recursion<Dual>(ivp, spec.method, spec.steps_per_interval, y0, p, out);
    sol.states.resize(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      sol.states[i] = out[i].value();
      for (std::size_t j = 0; j < np; ++j) sens.values[i * np + j] = out[i].tangent(j);
    }
    return result;
  }

  if (!(spec.tol_abs > 0.0) || spec.tol_rel < 0.0) throw DomainError("rk45 tolerances must be positive");
  // Augmented state [y, S] with S stored row-major D x P. One Dual evaluation
  // per stage gives f and J_y S + J_p: the tangent lane j of y carries S[:, j]
  // and the tangent lane j of p is the unit vector e_j.
  const std::size_t n_aug = n * (np + 1);
  std::vector<Dual> p(np), y_d(n), f_d(n);
  for (std::size_t j = 0; j < np; ++j) p[j] = Dual::variable(ivp.params[j], j);
  auto f = [&](const double* y, double t, double* dydt) {
    for (std::size_t d = 0; d < n; ++d) {
      y_d[d] = Dual(y[d]);
      for (std::size_t j = 0; j < np; ++j) y_d[d].tangent(j) = y[n + d * np + j];
    }
    sys.rhs(std::span<const Dual>(y_d), t, std::span<const Dual>(p), std::span<Dual>(f_d));
    for (std::size_t d = 0; d < n; ++d) {
      dydt[d] = f_d[d].value();
      for (std::size_t j = 0; j < np; ++j) dydt[n + d * np + j] = f_d[d].tangent(j);
    }
  };
  std::vector<double> y0_aug(n_aug);
  std::copy(ivp.y0.begin(), ivp.y0.end(), y0_aug.begin());
  std::copy(dy0_dp.begin(), dy0_dp.end(), y0_aug.begin() + n);
  std::vector<double> out;
  sol.stats = rk45_integrate(f, n_aug, ivp, spec, y0_aug, out);
  sol.states.resize(sol.num_times * n);
  for (std::size_t row = 0; row < sol.num_times; ++row) {
    const double* r = out.data() + row * n_aug;
    std::copy(r, r + n, sol.states.begin() + row * n);
    std::copy(r + n, r + n_aug, sens.values.begin() + row * n * np);
  }
  return result;
}

}  // namespace odecheck
