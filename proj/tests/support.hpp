#pragma once

#include <cmath>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "odecheck/io.hpp"
#include "odecheck/models.hpp"
#include "odecheck/ode.hpp"
#include "odecheck/sampler.hpp"

namespace testing {

inline const nlohmann::json& frozen() {
  static const nlohmann::json j = nlohmann::json::parse(odecheck::read_text_file(ODECHECK_ORACLE_FILE));
  return j;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("odecheck_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Independent normal target with analytic gradient.
class GaussianTarget final : public odecheck::LogDensityTarget {
 public:
  GaussianTarget(std::vector<double> mean, std::vector<double> sd) : mean_(std::move(mean)), sd_(std::move(sd)) {}
  std::size_t dim() const override { return mean_.size(); }
  std::vector<std::string> param_names() const override {
    std::vector<std::string> n;
    for (std::size_t i = 0; i < dim(); ++i) n.push_back("x" + std::to_string(i + 1));
    return n;
  }
  std::vector<double> initial_point() const override { return std::vector<double>(dim(), 0.5); }
  odecheck::PosteriorEvalResult evaluate(std::span<const double> q, bool want_gradient) const override {
    odecheck::PosteriorEvalResult r;
    r.log_density = 0.0;
    if (want_gradient) r.gradient.resize(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
      const double z = (q[i] - mean_[i]) / sd_[i];
      r.log_density -= 0.5 * z * z;
      if (want_gradient) r.gradient[i] = -z / sd_[i];
    }
    return r;
  }

 private:
  std::vector<double> mean_, sd_;
};

/// Posterior whose likelihood ignores the ODE: theta ~ LogNormal(0, 0.5) iid.
/// The state is a constant so every solver gives the same solution.
class PriorOnlyModel final : public odecheck::OdeModelBase<PriorOnlyModel> {
 public:
  PriorOnlyModel() : times_{1.0, 2.0, 3.0} {
    system_ = odecheck::make_ode_system(1, 2, [](auto, double, auto p, auto dydt) { dydt[0] = 0.0 * p[0]; });
  }
  std::string name() const override { return "prior-only"; }
  std::vector<std::string> param_names() const override { return {"a", "b"}; }
  std::shared_ptr<const odecheck::OdeSystem> system() const override { return system_; }
  double t0() const override { return 0.0; }
  const std::vector<double>& output_times() const override { return times_; }
  std::vector<double> initial_point() const override { return {1.0, 1.0}; }

  template <class T>
  void ode_params_t(std::span<const T> theta, std::span<T> p) const {
    p[0] = theta[0];
    p[1] = theta[1];
  }
  template <class T>
  void initial_state_t(std::span<const T>, std::span<T> y0) const {
    y0[0] = T(1.0);
  }
  template <class T>
  T log_prior_t(std::span<const T> theta) const {
    return odecheck::dist::lognormal_lpdf(theta[0], 0.0, 0.5) + odecheck::dist::lognormal_lpdf(theta[1], 0.0, 0.5);
  }
  template <class T>
  T log_likelihood_t(std::span<const T>, std::span<const T>) const {
    return T(0.0);
  }

 private:
  std::vector<double> times_;
  std::shared_ptr<const odecheck::OdeSystem> system_;
};

inline std::shared_ptr<const odecheck::OdeSystem> linear_system() {
  // y' = p0 * y
  return odecheck::make_ode_system(1, 1, [](auto y, double, auto p, auto dydt) { dydt[0] = p[0] * y[0]; });
}

inline std::shared_ptr<const odecheck::OdeSystem> zero_system(std::size_t dim) {
  return odecheck::make_ode_system(dim, 1, [](auto, double, auto p, auto dydt) {
    for (auto& v : dydt) v = 0.0 * p[0];
  });
}

inline std::shared_ptr<const odecheck::OdeSystem> lv_system() {
  return odecheck::make_ode_system(2, 4, [](auto y, double t, auto p, auto dydt) {
    using T = typename decltype(dydt)::value_type;
    odecheck::LotkaVolterraModel::rhs<T>(y, t, p, dydt);
  });
}

inline odecheck::Ivp make_ivp(std::shared_ptr<const odecheck::OdeSystem> sys, double t0, std::vector<double> y0,
                              std::vector<double> params, std::vector<double> times) {
  odecheck::Ivp ivp;
  ivp.system = std::move(sys);
  ivp.t0 = t0;
  ivp.y0 = std::move(y0);
  ivp.params = std::move(params);
  ivp.output_times = std::move(times);
  return ivp;
}

/// Draws scattered around `center` (unconstrained) and evaluated under
/// `spec`, as the sampler would have stored them.
inline odecheck::Draws make_draws(const odecheck::PosteriorModel& model, const odecheck::SolverSpec& spec,
                                  const std::vector<double>& center, double spread, std::size_t chains,
                                  std::size_t per_chain, std::uint64_t seed) {
  odecheck::Draws d;
  d.param_names = model.param_names();
  d.dim = model.dim();
  d.method = spec.to_string();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, spread);
  for (std::size_t c = 0; c < chains; ++c) {
    odecheck::ChainDraws ch;
    while (ch.log_density.size() < per_chain) {
      std::vector<double> eta = center;
      for (double& e : eta) e += n(rng);
      const auto r = odecheck::unnorm_log_posterior(model, eta, spec, false);
      if (!r.ok()) continue;
      ch.eta.insert(ch.eta.end(), eta.begin(), eta.end());
      ch.log_density.push_back(r.log_density);
      ch.solutions.insert(ch.solutions.end(), r.solution.states.begin(), r.solution.states.end());
      d.solution_size = r.solution.states.size();
    }
    d.chains.push_back(std::move(ch));
  }
  return d;
}

}  // namespace testing
