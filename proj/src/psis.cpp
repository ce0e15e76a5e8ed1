#include "odecheck/psis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "odecheck/errors.hpp"

namespace odecheck {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kMinFiniteRatios = 25;

bool all_equal(std::span<const double> w) {
  return std::adjacent_find(w.begin(), w.end(), std::not_equal_to<>()) == w.end();
}

struct Tail {
  std::vector<double> shifted;      // finite log ratios minus their max
  std::vector<std::size_t> index;   // position of each finite ratio in the input
  std::vector<std::size_t> order;   // indices into `shifted`, ascending
  std::size_t tail_len = 0;
  double cutoff = 0.0;
  bool degenerate = false;
};

Tail prepare_tail(std::span<const double> log_ratios) {
  Tail t;
  double max = kNegInf;
  for (std::size_t i = 0; i < log_ratios.size(); ++i) {
    const double v = log_ratios[i];
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw DomainError("log ratios must be finite or -inf");
    if (v == kNegInf) continue;
    t.index.push_back(i);
    t.shifted.push_back(v);
    max = std::max(max, v);
  }
  if (t.shifted.size() < kMinFiniteRatios)
    throw DomainError("tail fit needs at least 25 finite ratios, got " +
                      std::to_string(t.shifted.size()));
  for (double& v : t.shifted) v -= max;
  const std::size_t s = t.shifted.size();
  t.order.resize(s);
  std::iota(t.order.begin(), t.order.end(), 0);
  std::stable_sort(t.order.begin(), t.order.end(),
                   [&](std::size_t a, std::size_t b) { return t.shifted[a] < t.shifted[b]; });
  t.tail_len = psis_tail_size(s);
  t.cutoff = t.shifted[t.order[s - t.tail_len - 1]];
  const double lo = t.shifted[t.order[s - t.tail_len]];
  const double hi = t.shifted[t.order[s - 1]];
  t.degenerate = std::abs(hi - lo) < std::numeric_limits<double>::epsilon() / 100.0;
  return t;
}

std::vector<double> exceedances(const Tail& t) {
  const std::size_t s = t.shifted.size();
  const double exp_cutoff = std::exp(t.cutoff);
  std::vector<double> x(t.tail_len);
  for (std::size_t i = 0; i < t.tail_len; ++i)
    x[i] = std::exp(t.shifted[t.order[s - t.tail_len + i]]) - exp_cutoff;
  return x;
}

GpdFit fit_prepared(const Tail& t) {
  if (t.degenerate) throw DegenerateTail("tail log ratios have zero range");
  const std::vector<double> x = exceedances(t);
  GpdFit fit = fit_gpd(x);
  const double n = static_cast<double>(t.tail_len);
  fit.k = (n * fit.k + 5.0) / (n + 10.0);
  if (std::isnan(fit.k)) fit.k = std::numeric_limits<double>::infinity();
  fit.location = std::exp(t.cutoff);
  return fit;
}

}  // namespace

std::size_t LogRatios::failed_count() const {
  return static_cast<std::size_t>(std::count(failed.begin(), failed.end(), char{1}));
}

LogRatios compute_log_ratios(const Draws& draws, const PosteriorModel& model,
                             const SolverSpec& spec_star, int threads) {
  LogRatios out;
  const std::size_t per_chain = draws.draws_per_chain();
  const std::size_t total = draws.total();
  out.method = draws.method;
  out.method_star = spec_star.to_string();
  out.solution_size = draws.solution_size;
  out.values.assign(total, kNegInf);
  out.failed.assign(total, 0);
  out.solutions_star.assign(total * draws.solution_size, 0.0);
  std::vector<SolverStats> costs(total);

  parallel_for(total, resolve_threads(threads), [&](std::size_t s) {
    const std::size_t c = s / per_chain;
    const std::size_t d = s % per_chain;
    PosteriorEvalResult eval;
    try {
      eval = unnorm_log_posterior(model, draws.eta(c, d), spec_star, false);
    } catch (const SolverFailure&) {
      eval.solver_failed = true;
    }
    costs[s] = eval.stats;
    if (!eval.ok()) {
      out.failed[s] = 1;
      return;
    }
    out.values[s] = eval.log_density - draws.chains[c].log_density[d];
    if (eval.solution.states.size() == draws.solution_size)
      std::copy(eval.solution.states.begin(), eval.solution.states.end(),
                out.solutions_star.begin() + static_cast<std::ptrdiff_t>(s * draws.solution_size));
  });
  for (const auto& c : costs) out.cost += c;
  return out;
}

double gpd_density(double x, double u, double sigma, double k) {
  if (!(sigma > 0.0)) throw DomainError("GPD scale must be positive");
  if (!(x >= u)) throw DomainError("x below the GPD location");
  const double z = (x - u) / sigma;
  if (k == 0.0) return std::exp(-z) / sigma;
  if (k < 0.0 && x > u - sigma / k) throw DomainError("x above the GPD upper bound");
  return std::pow(1.0 + k * z, -1.0 / k - 1.0) / sigma;
}

double gpd_cdf(double x, double u, double sigma, double k) {
  if (x <= u) return 0.0;
  const double z = (x - u) / sigma;
  if (k == 0.0) return -std::expm1(-z);
  if (k < 0.0 && z >= -1.0 / k) return 1.0;
  return -std::expm1(-std::log1p(k * z) / k);
}

double gpd_quantile(double p, double sigma, double k) {
  if (!(sigma > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  if (k == 0.0) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

GpdFit fit_gpd(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 5) throw DomainError("GPD fit needs at least 5 exceedances");
  constexpr double prior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const double xstar = x[static_cast<std::size_t>(std::floor(static_cast<double>(n) / 4.0 + 0.5)) - 1];
  const double nd = static_cast<double>(n);

  std::vector<double> theta(m), ltheta(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x[n - 1] +
               (1.0 - std::sqrt(static_cast<double>(m) / (static_cast<double>(j + 1) - 0.5))) / prior / xstar;
    // Profile log likelihood.
    const double a = -theta[j];
    double kk = 0.0;
    for (double xi : x) kk += std::log1p(a * xi);
    kk /= nd;
    ltheta[j] = nd * (std::log(a / kk) - kk - 1.0);
  }
  const double lmax = *std::max_element(ltheta.begin(), ltheta.end());
  double wsum = 0.0;
  for (double l : ltheta) wsum += std::exp(l - lmax);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) theta_hat += theta[j] * std::exp(ltheta[j] - lmax) / wsum;

  double k = 0.0;
  for (double xi : x) k += std::log1p(-theta_hat * xi);
  k /= nd;
  GpdFit fit;
  fit.k = k;
  fit.sigma = -k / theta_hat;
  fit.tail_count = n;
  return fit;
}

std::size_t psis_tail_size(std::size_t draws) {
  const double s = static_cast<double>(draws);
  return static_cast<std::size_t>(std::min(std::ceil(0.2 * s), std::ceil(3.0 * std::sqrt(s))));
}

GpdFit fit_gpd_tail(std::span<const double> log_ratios) { return fit_prepared(prepare_tail(log_ratios)); }

GpdFit fit_gpd_tail(const LogRatios& ratios) { return fit_gpd_tail(ratios.values); }

PsisResult pareto_smooth(std::span<const double> log_ratios) {
  const Tail t = prepare_tail(log_ratios);
  PsisResult res;
  res.failed_draws = log_ratios.size() - t.shifted.size();
  res.tail_size = t.tail_len;
  std::vector<double> lw = t.shifted;
  const std::size_t s = lw.size();
  if (t.degenerate) {
    res.khat = kNegInf;
  } else {
    const GpdFit fit = fit_prepared(t);
    res.khat = fit.k;
    if (std::isfinite(fit.k)) {
      for (std::size_t z = 0; z < t.tail_len; ++z) {
        const double p = (static_cast<double>(z) + 0.5) / static_cast<double>(t.tail_len);
        lw[t.order[s - t.tail_len + z]] = std::log(gpd_quantile(p, fit.sigma, fit.k) + fit.location);
      }
      res.smoothed = true;
    }
  }
  for (double& v : lw) v = std::min(v, 0.0);

  res.weights.assign(log_ratios.size(), 0.0);
  double sum = 0.0;
  for (double v : lw) sum += std::exp(v);
  for (std::size_t i = 0; i < s; ++i) res.weights[t.index[i]] = std::exp(lw[i]) / sum;
  res.r_eff = relative_efficiency(res.weights);
  return res;
}

PsisResult pareto_smooth(const LogRatios& ratios) { return pareto_smooth(std::span<const double>(ratios.values)); }

double snis_estimate(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size()) throw ShapeMismatch("values and weights differ in length");
  if (values.empty()) throw DomainError("no draws");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be finite and nonnegative");
    wsum += w;
  }
  if (wsum == 0.0) throw AllZeroWeights("all importance weights are zero");
  // Equal weights reduce to the plain average.
  if (all_equal(weights))
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (weights[i] > 0.0) acc += weights[i] * values[i];
  return acc / wsum;
}

double snis_estimate(const Draws& draws, std::span<const double> weights,
                     const std::function<double(std::span<const double>)>& phi) {
  std::vector<double> values;
  values.reserve(draws.total());
  for (std::size_t c = 0; c < draws.num_chains(); ++c)
    for (std::size_t d = 0; d < draws.draws_per_chain(); ++d) {
      const std::vector<double> theta = inverse_transform(draws.eta(c, d)).theta;
      values.push_back(phi(theta));
    }
  return snis_estimate(values, weights);
}

double weighted_quantile(std::span<const double> values, std::span<const double> weights, double p) {
  if (values.size() != weights.size()) throw ShapeMismatch("values and weights differ in length");
  if (values.empty()) throw DomainError("no draws");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  const double n = static_cast<double>(values.size());
  if (all_equal(weights)) {
    if (weights[0] == 0.0) throw AllZeroWeights("all importance weights are zero");
    const auto idx = static_cast<std::size_t>(std::max(1.0, std::ceil(p * n))) - 1;
    return values[order[idx]];
  }
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (wsum == 0.0) throw AllZeroWeights("all importance weights are zero");
  double cum = 0.0;
  for (std::size_t i : order) {
    if (weights[i] == 0.0) continue;
    cum += weights[i];
    if (cum >= p * wsum) return values[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (weights[*it] > 0.0) return values[*it];
  return values[order.back()];
}

double relative_efficiency(std::span<const double> weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(wsum > 0.0)) throw AllZeroWeights("all importance weights are zero");
  if (all_equal(weights)) return 1.0;
  double sq = 0.0;
  for (double w : weights) sq += (w / wsum) * (w / wsum);
  return std::min(1.0, 1.0 / (static_cast<double>(weights.size()) * sq));
}

KhatVerdict khat_verdict(double khat) {
  return khat < kKhatThreshold ? KhatVerdict::Reliable : KhatVerdict::Unreliable;
}

}  // namespace odecheck
