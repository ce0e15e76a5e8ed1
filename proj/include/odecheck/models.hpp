#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "odecheck/dual.hpp"
#include "odecheck/ode.hpp"

namespace odecheck {

enum class ObservationScale { Linear, Log };

/// Observations on a time grid. Column c observes ODE state `observed_state[c]`.
struct Dataset {
  std::vector<double> times;
  std::vector<std::string> columns;
  std::vector<std::size_t> observed_state;
  ObservationScale scale = ObservationScale::Linear;
  std::vector<double> values;  // times.size() x columns.size(), row-major

  std::size_t num_rows() const { return times.size(); }
  std::size_t num_columns() const { return columns.size(); }
  double operator()(std::size_t row, std::size_t col) const {
    return values[row * columns.size() + col];
  }
};

/// CSV with header `time,<columns...>`. Throws ConfigError on malformed files.
Dataset read_dataset_csv(const std::string& path, const Dataset& layout);
void write_dataset_csv(const std::string& path, const Dataset& data);

namespace dist {

inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

template <class X, class M, class S>
auto normal_lpdf(const X& x, const M& mu, const S& sigma) {
  using std::log;
  const auto z = (x - mu) / sigma;
  return -0.5 * z * z - log(sigma) - kLogSqrtTwoPi;
}

/// Density of x whose log is Normal(mu, sigma^2).
template <class X, class M, class S>
auto lognormal_lpdf(const X& x, const M& mu, const S& sigma) {
  using std::log;
  const auto log_x = log(x);
  return normal_lpdf(log_x, mu, sigma) - log_x;
}

}  // namespace dist

/// An ODE-based posterior. Every component of theta is strictly positive and
/// sampled on the log scale, eta = log(theta).
class PosteriorModel {
 public:
  virtual ~PosteriorModel() = default;

  virtual std::string name() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  std::size_t dim() const { return param_names().size(); }

  virtual std::shared_ptr<const OdeSystem> system() const = 0;
  virtual double t0() const = 0;
  virtual const std::vector<double>& output_times() const = 0;
  /// Documented chain initialization, constrained scale.
  virtual std::vector<double> initial_point() const = 0;

  /// theta -> ODE parameter vector p (length system()->num_params()).
  virtual void ode_params(std::span<const double> theta, std::span<double> p) const = 0;
  virtual void ode_params(std::span<const Dual> theta, std::span<Dual> p) const = 0;

  /// p -> y0.
  virtual void initial_state(std::span<const double> p, std::span<double> y0) const = 0;
  virtual void initial_state(std::span<const Dual> p, std::span<Dual> y0) const = 0;

  /// Throws DomainError when a positivity constraint is violated.
  virtual double log_prior(std::span<const double> theta) const = 0;
  virtual Dual log_prior(std::span<const Dual> theta) const = 0;

  /// `states` is num_times x D row-major on output_times(). May return -inf.
  virtual double log_likelihood(std::span<const double> theta,
                                std::span<const double> states) const = 0;
  virtual Dual log_likelihood(std::span<const Dual> theta, std::span<const Dual> states) const = 0;

  /// Builds the IVP at theta.
  Ivp build_ivp(std::span<const double> theta) const;
};

/// CRTP helper: Derived supplies templated `ode_params_t`, `initial_state_t`,
/// `log_prior_t` and `log_likelihood_t`.
template <class Derived>
class OdeModelBase : public PosteriorModel {
 public:
  void ode_params(std::span<const double> theta, std::span<double> p) const override {
    self().ode_params_t(theta, p);
  }
  void ode_params(std::span<const Dual> theta, std::span<Dual> p) const override {
    self().ode_params_t(theta, p);
  }
  void initial_state(std::span<const double> p, std::span<double> y0) const override {
    self().initial_state_t(p, y0);
  }
  void initial_state(std::span<const Dual> p, std::span<Dual> y0) const override {
    self().initial_state_t(p, y0);
  }
  double log_prior(std::span<const double> theta) const override {
    return self().log_prior_t(theta);
  }
  Dual log_prior(std::span<const Dual> theta) const override { return self().log_prior_t(theta); }
  double log_likelihood(std::span<const double> theta,
                        std::span<const double> states) const override {
    return self().log_likelihood_t(theta, states);
  }
  Dual log_likelihood(std::span<const Dual> theta, std::span<const Dual> states) const override {
    return self().log_likelihood_t(theta, states);
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

/// Target-mediated drug disposition, three states, six rates plus sigma.
class TmddModel final : public OdeModelBase<TmddModel> {
 public:
  static constexpr double kInitialLigand = 10.0;
  static constexpr double kTrueSigma = 0.5;
  /// k_on, k_off, k_in, k_out, k_eL, k_eP used to simulate data.
  static std::vector<double> true_rates() { return {0.592, 0.900, 2.212, 0.823, 0.201, 0.024}; }
  static std::vector<double> observation_times();
  static Dataset layout();

  explicit TmddModel(Dataset data);

  std::string name() const override { return "tmdd"; }
  std::vector<std::string> param_names() const override {
    return {"k_on", "k_off", "k_in", "k_out", "k_eL", "k_eP", "sigma"};
  }
  std::shared_ptr<const OdeSystem> system() const override { return system_; }
  double t0() const override { return 0.0; }
  const std::vector<double>& output_times() const override { return data_.times; }
  std::vector<double> initial_point() const override { return std::vector<double>(7, 1.0); }
  const Dataset& data() const { return data_; }

  template <class T>
  static void rhs(std::span<const T> y, double /*t*/, std::span<const T> p, std::span<T> dydt) {
    const T& k_on = p[0];
    const T& k_off = p[1];
    const T& k_in = p[2];
    const T& k_out = p[3];
    const T& k_el = p[4];
    const T& k_ep = p[5];
    const T binding = k_on * y[0] * y[1] - k_off * y[2];
    dydt[0] = -(k_el * y[0]) - binding;
    dydt[1] = k_in - k_out * y[1] - binding;
    dydt[2] = binding - k_ep * y[2];
  }

  template <class T>
  void ode_params_t(std::span<const T> theta, std::span<T> p) const {
    for (std::size_t i = 0; i < 6; ++i) p[i] = theta[i];
  }
  template <class T>
  void initial_state_t(std::span<const T> p, std::span<T> y0) const {
    y0[0] = T(kInitialLigand);
    y0[1] = p[2] / p[3];
    y0[2] = T(0.0);
  }
  template <class T>
  T log_prior_t(std::span<const T> theta) const;
  template <class T>
  T log_likelihood_t(std::span<const T> theta, std::span<const T> states) const;

 private:
  Dataset data_;
  std::shared_ptr<const OdeSystem> system_;
};

/// Lotka-Volterra predator-prey model, y1 prey (hare), y2 predator (lynx).
/// theta = (psi1..psi4, sigma, y0_1, y0_2); ODE parameters p = (psi, y0).
class LotkaVolterraModel final : public OdeModelBase<LotkaVolterraModel> {
 public:
  static Dataset layout();

  explicit LotkaVolterraModel(Dataset data);

  std::string name() const override { return "lotka-volterra"; }
  std::vector<std::string> param_names() const override {
    return {"psi1", "psi2", "psi3", "psi4", "sigma", "y0_1", "y0_2"};
  }
  std::shared_ptr<const OdeSystem> system() const override { return system_; }
  double t0() const override { return data_.times.front(); }
  const std::vector<double>& output_times() const override { return data_.times; }
  std::vector<double> initial_point() const override;
  const Dataset& data() const { return data_; }

  template <class T>
  static void rhs(std::span<const T> y, double /*t*/, std::span<const T> p, std::span<T> dydt) {
    dydt[0] = p[0] * y[0] - p[1] * y[0] * y[1];
    dydt[1] = p[2] * y[0] * y[1] - p[3] * y[1];
  }

  template <class T>
  void ode_params_t(std::span<const T> theta, std::span<T> p) const {
    for (std::size_t i = 0; i < 4; ++i) p[i] = theta[i];
    p[4] = theta[5];
    p[5] = theta[6];
  }
  template <class T>
  void initial_state_t(std::span<const T> p, std::span<T> y0) const {
    y0[0] = p[4];
    y0[1] = p[5];
  }
  template <class T>
  T log_prior_t(std::span<const T> theta) const;
  template <class T>
  T log_likelihood_t(std::span<const T> theta, std::span<const T> states) const;

 private:
  Dataset data_;
  std::shared_ptr<const OdeSystem> system_;
};

/// Path of the bundled 1900-1920 lynx and hare pelts table.
std::string bundled_lynx_hare_path();
std::unique_ptr<LotkaVolterraModel> make_lotka_volterra_model(
    const std::string& path = bundled_lynx_hare_path());

/// Log density in eta = log(theta), with optional gradient and the solution
/// that produced it.
struct PosteriorEvalResult {
  double log_density = -std::numeric_limits<double>::infinity();
  std::vector<double> gradient;  // empty unless requested and finite
  OdeSolution solution;
  SolverStats stats;
  bool solver_failed = false;
  bool ok() const { return std::isfinite(log_density); }
};

struct Transformed {
  std::vector<double> theta;
  double log_jacobian = 0.0;
};

/// eta -> theta = exp(eta), log |d theta / d eta| = sum(eta).
Transformed inverse_transform(std::span<const double> eta);
/// theta -> eta = log(theta). Throws DomainError on non-positive theta.
std::vector<double> transform(std::span<const double> theta);

PosteriorEvalResult unnorm_log_posterior(const PosteriorModel& model, std::span<const double> eta,
                                         const SolverSpec& spec, bool want_gradient);

/// Simulated TMDD data at the true parameters with Normal(0, sigma^2) noise on
/// the complex. The reference solve uses RK45 at 1e-12.
Dataset simulate_tmdd_data(std::uint64_t seed, double sigma = TmddModel::kTrueSigma);
SolverSpec tmdd_reference_solver();

}  // namespace odecheck
