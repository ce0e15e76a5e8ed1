// Example plugin: first-order decay y' = -k y observed with Normal noise.
// Build with the project, then run e.g.
//   odecheck sample --model build/plugins/libodecheck_decay.so --data plugins/decay.csv

#include <memory>

#include "odecheck/errors.hpp"
#include "odecheck/plugin.hpp"

namespace {

using odecheck::Dataset;

class DecayModel final : public odecheck::OdeModelBase<DecayModel> {
 public:
  explicit DecayModel(Dataset data) : data_(std::move(data)) {
    system_ = odecheck::make_ode_system(1, 2, [](auto y, double, auto p, auto dydt) { dydt[0] = -p[0] * y[0]; });
  }

  std::string name() const override { return "decay"; }
  std::vector<std::string> param_names() const override { return {"k", "sigma", "y0"}; }
  std::shared_ptr<const odecheck::OdeSystem> system() const override { return system_; }
  double t0() const override { return 0.0; }
  const std::vector<double>& output_times() const override { return data_.times; }
  std::vector<double> initial_point() const override { return {1.0, 1.0, 5.0}; }

  template <class T>
  void ode_params_t(std::span<const T> theta, std::span<T> p) const {
    p[0] = theta[0];
    p[1] = theta[2];
  }
  template <class T>
  void initial_state_t(std::span<const T> p, std::span<T> y0) const {
    y0[0] = p[1];
  }
  template <class T>
  T log_prior_t(std::span<const T> theta) const {
    using odecheck::dist::lognormal_lpdf;
    for (const auto& v : theta)
      if (!(odecheck::value_of(v) > 0.0)) throw odecheck::DomainError("decay parameters must be positive");
    return lognormal_lpdf(theta[0], 0.0, 1.0) + lognormal_lpdf(theta[1], -1.0, 1.0) +
           lognormal_lpdf(theta[2], 1.5, 1.0);
  }
  template <class T>
  T log_likelihood_t(std::span<const T> theta, std::span<const T> states) const {
    T lp(0.0);
    for (std::size_t n = 0; n < data_.num_rows(); ++n)
      lp += odecheck::dist::normal_lpdf(data_(n, 0), states[n], theta[1]);
    return lp;
  }

 private:
  Dataset data_;
  std::shared_ptr<const odecheck::OdeSystem> system_;
};

}  // namespace

extern "C" odecheck::PosteriorModel* odecheck_create_model(const char* data_path) {
  Dataset layout;
  layout.columns = {"y"};
  layout.observed_state = {0};
  if (data_path == nullptr || *data_path == '\0') throw odecheck::ConfigError("data: the decay plugin needs a dataset");
  return new DecayModel(odecheck::read_dataset_csv(data_path, layout));
}
