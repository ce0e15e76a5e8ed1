#include "odecheck/models.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "odecheck/errors.hpp"
#include "odecheck/io.hpp"

#ifndef ODECHECK_DATA_DIR
#define ODECHECK_DATA_DIR "data"
#endif

namespace odecheck {

namespace {

template <class T>
void check_positive(std::span<const T> theta, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (!(value_of(theta[i]) > 0.0)) throw DomainError("parameter " + names[i] + " must be positive");
}

}  // namespace

Dataset read_dataset_csv(const std::string& path, const Dataset& layout) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset '" + path + "' is empty");
  const auto header = split_csv_line(line);
  if (header.size() != layout.columns.size() + 1 || header[0] != "time")
    throw ConfigError("dataset '" + path + "' must have header time," + [&] {
      std::string cols;
      for (std::size_t i = 0; i < layout.columns.size(); ++i)
        cols += (i ? "," : "") + layout.columns[i];
      return cols;
    }());
  // Column order in the file may differ from the layout.
  std::vector<std::size_t> file_to_layout(layout.columns.size());
  for (std::size_t c = 0; c < layout.columns.size(); ++c) {
    std::size_t found = layout.columns.size();
    for (std::size_t l = 0; l < layout.columns.size(); ++l)
      if (header[c + 1] == layout.columns[l]) found = l;
    if (found == layout.columns.size())
      throw ConfigError("dataset '" + path + "' has unexpected column '" + header[c + 1] + "'");
    file_to_layout[c] = found;
  }

  Dataset data = layout;
  data.times.clear();
  data.values.clear();
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": wrong number of fields");
    std::vector<double> row(header.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      char* end = nullptr;
      row[i] = std::strtod(cells[i].c_str(), &end);
      if (cells[i].empty() || *end != '\0')
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed number '" + cells[i] +
                          "'");
    }
    data.times.push_back(row[0]);
    std::vector<double> ordered(layout.columns.size());
    for (std::size_t c = 0; c < layout.columns.size(); ++c) ordered[file_to_layout[c]] = row[c + 1];
    data.values.insert(data.values.end(), ordered.begin(), ordered.end());
  }
  if (data.times.empty()) throw ConfigError("dataset '" + path + "' has no rows");
  for (std::size_t i = 1; i < data.times.size(); ++i)
    if (!(data.times[i] > data.times[i - 1]))
      throw ConfigError("dataset '" + path + "' times must be strictly increasing");
  return data;
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "time";
  for (const auto& c : data.columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < data.num_rows(); ++r) {
    out << format_double(data.times[r]);
    for (std::size_t c = 0; c < data.num_columns(); ++c) out << ',' << format_double(data(r, c));
    out << '\n';
  }
}

Ivp PosteriorModel::build_ivp(std::span<const double> theta) const {
  Ivp ivp;
  ivp.system = system();
  ivp.t0 = t0();
  ivp.params.resize(ivp.system->num_params());
  ode_params(theta, ivp.params);
  ivp.y0.resize(ivp.system->dimension());
  initial_state(std::span<const double>(ivp.params), ivp.y0);
  ivp.output_times = output_times();
  return ivp;
}

// ---------------------------------------------------------------------------
// TMDD

std::vector<double> TmddModel::observation_times() {
  return {0.1, 0.2, 0.4, 0.6, 0.8, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
}

Dataset TmddModel::layout() {
  Dataset d;
  d.columns = {"complex"};
  d.observed_state = {2};
  d.scale = ObservationScale::Linear;
  return d;
}

TmddModel::TmddModel(Dataset data) : data_(std::move(data)) {
  if (data_.num_columns() != 1) throw ConfigError("tmdd dataset needs exactly one column");
  if (data_.times.front() <= t0()) throw ConfigError("tmdd observations must be after t = 0");
  system_ = make_ode_system(3, 6, [](auto y, double t, auto p, auto dydt) {
    using T = typename decltype(dydt)::value_type;
    TmddModel::rhs<T>(y, t, p, dydt);
  });
}

template <class T>
T TmddModel::log_prior_t(std::span<const T> theta) const {
  check_positive(theta, param_names());
  using dist::lognormal_lpdf;
  return lognormal_lpdf(theta[0], -1.0, 0.3) + lognormal_lpdf(theta[1], 0.0, 0.3) +
         lognormal_lpdf(theta[2], 0.0, 0.3) + lognormal_lpdf(theta[3], 0.0, 0.3) +
         lognormal_lpdf(theta[4], -1.0, 0.3) + lognormal_lpdf(theta[5], -3.0, 0.3) +
         lognormal_lpdf(theta[6], 0.0, 0.3);
}

template <class T>
T TmddModel::log_likelihood_t(std::span<const T> theta, std::span<const T> states) const {
  const T& sigma = theta[6];
  T total(0.0);
  for (std::size_t n = 0; n < data_.num_rows(); ++n)
    total += dist::normal_lpdf(data_(n, 0), states[n * 3 + 2], sigma);
  return total;
}

template double TmddModel::log_prior_t<double>(std::span<const double>) const;
template Dual TmddModel::log_prior_t<Dual>(std::span<const Dual>) const;
template double TmddModel::log_likelihood_t<double>(std::span<const double>,
                                                    std::span<const double>) const;
template Dual TmddModel::log_likelihood_t<Dual>(std::span<const Dual>, std::span<const Dual>) const;

SolverSpec tmdd_reference_solver() { return SolverSpec::rk45(1e-12); }

Dataset simulate_tmdd_data(std::uint64_t seed, double sigma) {
  Dataset data = TmddModel::layout();
  data.times = TmddModel::observation_times();
  TmddModel model(data);
  std::vector<double> theta = TmddModel::true_rates();
  theta.push_back(sigma);
  const OdeSolution sol = solve(model.build_ivp(theta), tmdd_reference_solver());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  data.values.resize(data.times.size());
  for (std::size_t n = 0; n < data.times.size(); ++n)
    data.values[n] = sol(n, 2) + sigma * noise(rng);
  return data;
}

// ---------------------------------------------------------------------------
// Lotka-Volterra

Dataset LotkaVolterraModel::layout() {
  Dataset d;
  d.columns = {"lynx", "hare"};
  d.observed_state = {1, 0};
  d.scale = ObservationScale::Log;
  return d;
}

LotkaVolterraModel::LotkaVolterraModel(Dataset data) : data_(std::move(data)) {
  if (data_.num_columns() != 2) throw ConfigError("lotka-volterra dataset needs two columns");
  // p = (psi1..psi4, y0_1, y0_2); the right-hand side reads the first four.
  system_ = make_ode_system(2, 6, [](auto y, double t, auto p, auto dydt) {
    using T = typename decltype(dydt)::value_type;
    LotkaVolterraModel::rhs<T>(y, t, p, dydt);
  });
}

std::vector<double> LotkaVolterraModel::initial_point() const {
  // Rates at 1, interaction terms at 0.1, initial state at the first observation.
  std::vector<double> theta = {1.0, 0.1, 0.1, 1.0, 1.0, 0.0, 0.0};
  for (std::size_t c = 0; c < data_.num_columns(); ++c)
    theta[5 + data_.observed_state[c]] = data_(0, c);
  return theta;
}

template <class T>
T LotkaVolterraModel::log_prior_t(std::span<const T> theta) const {
  check_positive(theta, param_names());
  using dist::lognormal_lpdf;
  using dist::normal_lpdf;
  return normal_lpdf(theta[0], 1.0, 0.5) + normal_lpdf(theta[1], 0.05, 0.05) +
         normal_lpdf(theta[2], 0.05, 0.05) + normal_lpdf(theta[3], 1.0, 0.5) +
         lognormal_lpdf(theta[4], -1.0, 1.0) + lognormal_lpdf(theta[5], std::log(10.0), 1.0) +
         lognormal_lpdf(theta[6], std::log(10.0), 1.0);
}

template <class T>
T LotkaVolterraModel::log_likelihood_t(std::span<const T> theta, std::span<const T> states) const {
  using std::log;
  const T& sigma = theta[4];
  T total(0.0);
  for (std::size_t n = 0; n < data_.num_rows(); ++n) {
    for (std::size_t c = 0; c < data_.num_columns(); ++c) {
      const T& y = states[n * 2 + data_.observed_state[c]];
      if (!(value_of(y) > 0.0)) return T(-std::numeric_limits<double>::infinity());
      total += dist::lognormal_lpdf(data_(n, c), log(y), sigma);
    }
  }
  return total;
}

template double LotkaVolterraModel::log_prior_t<double>(std::span<const double>) const;
template Dual LotkaVolterraModel::log_prior_t<Dual>(std::span<const Dual>) const;
template double LotkaVolterraModel::log_likelihood_t<double>(std::span<const double>,
                                                             std::span<const double>) const;
template Dual LotkaVolterraModel::log_likelihood_t<Dual>(std::span<const Dual>,
                                                         std::span<const Dual>) const;

std::string bundled_lynx_hare_path() { return std::string(ODECHECK_DATA_DIR) + "/lynx_hare.csv"; }

std::unique_ptr<LotkaVolterraModel> make_lotka_volterra_model(const std::string& path) {
  return std::make_unique<LotkaVolterraModel>(
      read_dataset_csv(path, LotkaVolterraModel::layout()));
}

// ---------------------------------------------------------------------------
// Posterior evaluation

Transformed inverse_transform(std::span<const double> eta) {
  Transformed out;
  out.theta.resize(eta.size());
  for (std::size_t i = 0; i < eta.size(); ++i) {
    out.theta[i] = std::exp(eta[i]);
    out.log_jacobian += eta[i];
  }
  return out;
}

std::vector<double> transform(std::span<const double> theta) {
  std::vector<double> eta(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (!(theta[i] > 0.0)) throw DomainError("cannot log-transform a non-positive parameter");
    eta[i] = std::log(theta[i]);
  }
  return eta;
}

namespace {

// Shared by the value and gradient paths so both produce bit-identical values.
template <class T>
T combine_log_density(const PosteriorModel& model, std::span<const T> theta,
                      std::span<const T> states, std::span<const T> eta) {
  const T prior = model.log_prior(theta);
  const T likelihood = model.log_likelihood(theta, states);
  T log_jacobian(0.0);
  for (const T& e : eta) log_jacobian += e;
  return prior + likelihood + log_jacobian;
}

bool finite_eta(std::span<const double> eta) {
  for (double e : eta)
    if (!std::isfinite(e)) return false;
  return true;
}

}  // namespace

PosteriorEvalResult unnorm_log_posterior(const PosteriorModel& model, std::span<const double> eta,
                                         const SolverSpec& spec, bool want_gradient) {
  PosteriorEvalResult result;
  const std::size_t k = model.dim();
  if (eta.size() != k) throw ShapeMismatch("eta has wrong dimension");
  if (k > kMaxTangents) throw DomainError("model dimension exceeds the dual-number lane count");
  if (!finite_eta(eta)) return result;

  const Transformed tr = inverse_transform(eta);
  for (double th : tr.theta)
    if (!(th > 0.0) || !std::isfinite(th)) return result;

  Ivp ivp = model.build_ivp(tr.theta);
  const std::size_t n = ivp.system->dimension();
  const std::size_t np = ivp.system->num_params();

  // dy0/dp via one Dual pass over the initial-state map.
  auto initial_state_jacobian = [&] {
    std::vector<Dual> p_d(np), y0_d(n);
    for (std::size_t j = 0; j < np; ++j) p_d[j] = Dual::variable(ivp.params[j], j);
    model.initial_state(std::span<const Dual>(p_d), std::span<Dual>(y0_d));
    std::vector<double> jac(n * np);
    for (std::size_t d = 0; d < n; ++d)
      for (std::size_t j = 0; j < np; ++j) jac[d * np + j] = y0_d[d].tangent(j);
    return jac;
  };

  SensitivitySolution sens;
  try {
    if (!want_gradient && spec.fixed_step()) {
      sens.solution = solve(ivp, spec);
    } else {
      // RK45 values always come from the augmented solve so that the density
      // does not depend on whether a gradient was requested.
      sens = solve_with_sensitivities(ivp, spec, initial_state_jacobian());
    }
  } catch (const SolverFailure&) {
    result.solver_failed = true;
    return result;
  }
  result.stats = sens.solution.stats;

  if (!want_gradient) {
    result.log_density = combine_log_density<double>(model, tr.theta, sens.solution.states, eta);
    if (std::isnan(result.log_density)) result.log_density = -std::numeric_limits<double>::infinity();
    result.solution = std::move(sens.solution);
    return result;
  }

  std::vector<Dual> theta_d(k), eta_d(k), p_d(np);
  for (std::size_t i = 0; i < k; ++i) {
    eta_d[i] = Dual::variable(eta[i], i);
    theta_d[i] = Dual(tr.theta[i]);
    theta_d[i].tangent(i) = tr.theta[i];
  }
  model.ode_params(std::span<const Dual>(theta_d), std::span<Dual>(p_d));

  const SensitivityMatrix& s = sens.sensitivities;
  const std::vector<double>& states = sens.solution.states;
  std::vector<Dual> states_d(states.size());
  for (std::size_t row = 0; row < s.num_times; ++row) {
    for (std::size_t d = 0; d < n; ++d) {
      Dual& y = states_d[row * n + d];
      y = Dual(states[row * n + d]);
      for (std::size_t j = 0; j < np; ++j) {
        const double sj = s(row, d, j);
        if (sj == 0.0) continue;
        for (std::size_t l = 0; l < k; ++l) y.tangent(l) += sj * p_d[j].tangent(l);
      }
    }
  }

  const Dual lp = combine_log_density<Dual>(model, theta_d, states_d, eta_d);
  result.log_density = lp.value();
  result.gradient.assign(lp.tangents().begin(), lp.tangents().begin() + k);
  bool finite = std::isfinite(result.log_density);
  for (double g : result.gradient) finite = finite && std::isfinite(g);
  if (!finite) {
    result.log_density = -std::numeric_limits<double>::infinity();
    result.gradient.clear();
  }
  result.solution = std::move(sens.solution);
  return result;
}

}  // namespace odecheck
