#include "odecheck/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "odecheck/errors.hpp"

namespace odecheck {

namespace {

std::size_t total_size(const ChainMatrix& x) {
  std::size_t n = 0;
  for (const auto& c : x) n += c.size();
  return n;
}

std::vector<double> pooled(const ChainMatrix& x) {
  std::vector<double> out;
  out.reserve(total_size(x));
  for (const auto& c : x) out.insert(out.end(), c.begin(), c.end());
  return out;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

// Type-7 sample quantile.
double quantile(std::vector<double> v, double prob) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Biased autocovariance of one chain at a given lag.
double autocovariance(const std::vector<double>& x, double mean, std::size_t lag) {
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
  return s / static_cast<double>(n);
}

bool is_constant(const ChainMatrix& x) {
  const double first = x.front().front();
  for (const auto& c : x)
    for (double v : c)
      if (v != first) return false;
  return true;
}

}  // namespace

ChainMatrix split_chains(const ChainMatrix& x) {
  ChainMatrix out;
  for (const auto& c : x) {
    const std::size_t n = c.size();
    const std::size_t half = n / 2;
    // Odd length: drop the middle draw.
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half), c.end());
  }
  return out;
}

ChainMatrix rank_normalize(const ChainMatrix& x) {
  const std::vector<double> all = pooled(x);
  const std::size_t s = all.size();
  std::vector<std::size_t> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return all[a] < all[b]; });
  std::vector<double> ranks(s);
  for (std::size_t i = 0; i < s;) {
    std::size_t j = i;
    while (j + 1 < s && all[order[j + 1]] == all[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  const boost::math::normal_distribution<double> standard;
  ChainMatrix out = x;
  std::size_t idx = 0;
  for (auto& c : out)
    for (double& v : c) {
      const double u = (ranks[idx++] - 0.375) / (static_cast<double>(s) + 0.25);
      v = boost::math::quantile(standard, u);
    }
  return out;
}

double rhat_basic(const ChainMatrix& split) {
  const std::size_t m = split.size();
  const double n = static_cast<double>(split.front().size());
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = mean_of(split[c]);
    vars[c] = var_of(split[c]);
  }
  const double between = n * var_of(means);
  const double within = mean_of(vars);
  return std::sqrt((between / within + n - 1.0) / n);
}

double ess_basic(const ChainMatrix& split) {
  const std::size_t m = split.size();
  const std::size_t n = split.front().size();
  if (n < 4) return std::numeric_limits<double>::quiet_NaN();

  std::vector<double> chain_mean(m), chain_var(m);
  for (std::size_t c = 0; c < m; ++c) {
    chain_mean[c] = mean_of(split[c]);
    chain_var[c] = autocovariance(split[c], chain_mean[c], 0) * static_cast<double>(n) /
                   static_cast<double>(n - 1);
  }
  const double mean_var = mean_of(chain_var);
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) var_plus += var_of(chain_mean);
  if (!(var_plus > 0.0)) return std::numeric_limits<double>::quiet_NaN();

  // Lagged autocorrelation pooled over chains, computed on demand.
  auto rho_at = [&](std::size_t lag) {
    double acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) acov += autocovariance(split[c], chain_mean[c], lag);
    acov /= static_cast<double>(m);
    return 1.0 - (mean_var - acov) / var_plus;
  };

  std::vector<double> rho(n, 0.0);
  std::size_t t = 0;
  double rho_even = 1.0;
  double rho_odd = rho_at(1);
  rho[0] = rho_even;
  rho[1] = rho_odd;
  while (t + 5 < n && !std::isnan(rho_even + rho_odd) && rho_even + rho_odd > 0.0) {
    t += 2;
    rho_even = rho_at(t);
    rho_odd = rho_at(t + 1);
    if (rho_even + rho_odd >= 0.0) {
      rho[t] = rho_even;
      rho[t + 1] = rho_odd;
    }
  }
  const std::size_t max_t = t;
  if (rho_even > 0.0) rho[max_t] = rho_even;

  // Geyer's initial monotone sequence.
  t = 0;
  while (t + 4 <= max_t) {
    t += 2;
    if (rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1]) {
      rho[t] = 0.5 * (rho[t - 2] + rho[t - 1]);
      rho[t + 1] = rho[t];
    }
  }
  const double total = static_cast<double>(m * n);
  double tau = -1.0 + rho[max_t];
  for (std::size_t i = 0; i < max_t; ++i) tau += 2.0 * rho[i];
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double rhat_rank(const ChainMatrix& x) {
  const double bulk = rhat_basic(rank_normalize(split_chains(x)));
  const double med = quantile(pooled(x), 0.5);
  ChainMatrix folded = x;
  for (auto& c : folded)
    for (double& v : c) v = std::abs(v - med);
  const double tail = rhat_basic(rank_normalize(split_chains(folded)));
  return std::max(bulk, tail);
}

double ess_bulk(const ChainMatrix& x) { return ess_basic(rank_normalize(split_chains(x))); }

double ess_mean(const ChainMatrix& x) { return ess_basic(split_chains(x)); }

double ess_tail(const ChainMatrix& x) {
  const std::vector<double> all = pooled(x);
  double result = std::numeric_limits<double>::infinity();
  for (double prob : {0.05, 0.95}) {
    const double q = quantile(all, prob);
    ChainMatrix indicator = x;
    for (auto& c : indicator)
      for (double& v : c) v = v <= q ? 1.0 : 0.0;
    result = std::min(result, ess_basic(split_chains(indicator)));
  }
  return result;
}

ParamSummary summarize_param(const std::string& name, const ChainMatrix& x) {
  if (x.size() < 2) throw DegenerateChains("need at least 2 chains");
  for (const auto& c : x)
    if (c.size() < 100) throw DegenerateChains("need at least 100 draws per chain");
  if (is_constant(x)) throw DegenerateChains("parameter " + name + " is constant across all draws");
  ParamSummary s;
  s.name = name;
  const std::vector<double> all = pooled(x);
  s.mean = mean_of(all);
  s.sd = std::sqrt(var_of(all));
  s.rhat = rhat_rank(x);
  s.ess_bulk = ess_bulk(x);
  s.ess_tail = ess_tail(x);
  s.ess_mean = ess_mean(x);
  s.mcse_mean = s.sd / std::sqrt(s.ess_mean);
  return s;
}

ConvergenceSummary convergence_summary(const Draws& draws) {
  ConvergenceSummary out;
  const auto by_param = draws.constrained_by_param();
  out.max_rhat = -std::numeric_limits<double>::infinity();
  out.min_ess_bulk = out.min_ess_tail = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < draws.dim; ++i) {
    ParamSummary s = summarize_param(draws.param_names[i], by_param[i]);
    out.max_rhat = std::max(out.max_rhat, s.rhat);
    out.min_ess_bulk = std::min(out.min_ess_bulk, s.ess_bulk);
    out.min_ess_tail = std::min(out.min_ess_tail, s.ess_tail);
    out.params.push_back(std::move(s));
  }
  return out;
}

}  // namespace odecheck
