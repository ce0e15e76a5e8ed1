#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "odecheck/errors.hpp"
#include "odecheck/psis.hpp"
#include "support.hpp"

using namespace odecheck;

namespace {

std::vector<double> gpd_sample(std::size_t n, double k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = gpd_quantile(u(rng), 1.0, k);
  return x;
}

std::vector<double> logs(std::vector<double> x) {
  for (double& v : x) v = std::log(v);
  return x;
}

std::vector<double> lv_center() {
  return transform(std::vector<double>{0.55, 0.028, 0.024, 0.80, 0.25, 33.0, 6.0});
}

}  // namespace

TEST_CASE("pareto smoothing matches the reference implementation") {
  for (const auto& c : testing::frozen().at("psis").at("psis")) {
    CAPTURE(c.at("name").get<std::string>());
    const auto lr = c.at("log_ratios").get<std::vector<double>>();
    const auto res = pareto_smooth(lr);
    CHECK(res.tail_size == c.at("tail_len").get<std::size_t>());
    CHECK(res.khat == doctest::Approx(c.at("khat").get<double>()).epsilon(1e-8));
    CHECK(res.r_eff == doctest::Approx(c.at("r_eff").get<double>()).epsilon(1e-8));
    const auto fit = fit_gpd_tail(lr);
    CHECK(fit.sigma == doctest::Approx(c.at("sigma").get<double>()).epsilon(1e-8));
    CHECK(fit.tail_count == res.tail_size);
    const auto w = c.at("weights").get<std::vector<double>>();
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(res.weights[i] == doctest::Approx(w[i]).epsilon(1e-8));
  }
}

TEST_CASE("Zhang-Stephens fit matches the reference implementation") {
  for (const auto& c : testing::frozen().at("psis").at("gpdfit")) {
    CAPTURE(c.at("k_true").get<double>());
    const auto x = c.at("x").get<std::vector<double>>();
    const auto fit = fit_gpd(x);
    CHECK(fit.k == doctest::Approx(c.at("k_raw").get<double>()).epsilon(1e-9));
    CHECK(fit.sigma == doctest::Approx(c.at("sigma").get<double>()).epsilon(1e-9));
    CHECK(fit.tail_count == x.size());
  }
  CHECK_THROWS_AS(fit_gpd(std::vector<double>{0.1, 0.2, 0.3, 0.4}), DomainError);
}

TEST_CASE("gpd density") {
  for (const auto& c : testing::frozen().at("psis").at("density"))
    CHECK(gpd_density(c.at("x"), c.at("u"), c.at("sigma"), c.at("k")) ==
          doctest::Approx(c.at("density").get<double>()).epsilon(1e-13));
  for (double k : {-0.4, 0.0, 0.3, 1.2}) CHECK(gpd_density(2.0, 2.0, 0.8, k) == doctest::Approx(1.0 / 0.8));
  CHECK(gpd_density(1.0, 0.0, 1.0, 0.0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(gpd_density(1.0, 0.0, 1.0, 0.5) == doctest::Approx(8.0 / 27.0).epsilon(1e-15));
  CHECK_THROWS_AS(gpd_density(-0.1, 0.0, 1.0, 0.2), DomainError);
  CHECK_THROWS_AS(gpd_density(4.0, 0.0, 1.0, -0.5), DomainError);
  CHECK_THROWS_AS(gpd_density(1.0, 0.0, 0.0, 0.2), DomainError);
}

TEST_CASE("gpd density integrates to one") {
  for (double k : {-0.3, 0.0, 0.5}) {
    CAPTURE(k);
    const double sigma = 1.3, u = 0.4;
    const double upper = k < 0 ? u - sigma / k : u + gpd_quantile(1.0 - 1e-12, sigma, k);
    // Midpoint rule in t with x = u + sigma * (e^t - 1), which spreads nodes over the tail.
    const double t_max = std::log1p((upper - u) / sigma);
    const int n = 1000000;
    const double h = t_max / n;
    double integral = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t = (i + 0.5) * h;
      const double x = std::min(u + sigma * std::expm1(t), upper);
      integral += gpd_density(x, u, sigma, k) * sigma * std::exp(t) * h;
    }
    const double beyond = k < 0 ? 0.0 : 1e-12;
    CHECK(std::abs(integral + beyond - 1.0) < 1e-6);
    CHECK(gpd_cdf(upper, u, sigma, k) == doctest::Approx(1.0 - beyond).epsilon(1e-12));
  }
}

TEST_CASE("gpd quantile inverts the cdf") {
  for (double k : {-0.3, 0.0, 0.4, 1.1})
    for (double p : {0.01, 0.3, 0.5, 0.9, 0.999})
      CHECK(gpd_cdf(gpd_quantile(p, 2.0, k), 0.0, 2.0, k) == doctest::Approx(p).epsilon(1e-12));
}

TEST_CASE("tail fit recovers the shape") {
  // A 135-draw tail leaves a sampling spread of 0.07 to 0.14 in k, so the
  // property is checked over replicates rather than on one sample.
  for (double k : {-0.2, 0.0, 0.3, 0.7}) {
    CAPTURE(k);
    const int reps = 200;
    double sum = 0.0;
    int close = 0;
    for (int r = 0; r < reps; ++r) {
      const auto fit = fit_gpd_tail(logs(gpd_sample(2000, k, 500 + r)));
      CHECK(fit.tail_count == psis_tail_size(2000));
      CHECK(fit.sigma > 0.0);
      sum += fit.k;
      close += std::abs(fit.k - k) < 0.15;
    }
    // The regularization pulls the estimate toward 0.5.
    const double n = static_cast<double>(psis_tail_size(2000));
    CHECK(std::abs(sum / reps - (n * k + 5) / (n + 10)) < 0.05);
    CHECK(close >= reps * 6 / 10);
  }
}

TEST_CASE("tail size rule") {
  CHECK(psis_tail_size(100) == 20);
  CHECK(psis_tail_size(1000) == 95);
  CHECK(psis_tail_size(2000) == 135);
  CHECK(psis_tail_size(4000) == 190);
  CHECK(psis_tail_size(25) == 5);
}

TEST_CASE("fitted quantiles track the exceedances") {
  auto x = gpd_sample(400, 0.3, 7);
  std::sort(x.begin(), x.end());
  const auto fit = fit_gpd(x);
  double ks = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = gpd_cdf(x[i], 0.0, fit.sigma, fit.k);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / 400), std::abs(f - static_cast<double>(i + 1) / 400)});
  }
  CHECK(ks < 0.1);
}

TEST_CASE("degenerate tails") {
  const std::vector<double> flat(100, -3.2);
  CHECK_THROWS_AS(fit_gpd_tail(flat), DegenerateTail);
  const auto res = pareto_smooth(flat);
  CHECK(res.khat == -std::numeric_limits<double>::infinity());
  CHECK_FALSE(res.smoothed);
  CHECK(res.r_eff == 1.0);
  for (double w : res.weights) CHECK(w == 0.01);
  CHECK(khat_verdict(res.khat) == KhatVerdict::Reliable);
  CHECK_THROWS_AS(fit_gpd_tail(std::vector<double>(24, 1.0)), DomainError);
}

TEST_CASE("shift invariance") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.5);
  std::vector<double> lr(800), shifted(800), phi(800);
  for (std::size_t i = 0; i < lr.size(); ++i) {
    lr[i] = n(rng);
    shifted[i] = lr[i] + 250.0;
    phi[i] = std::sin(static_cast<double>(i));
  }
  const auto a = pareto_smooth(lr), b = pareto_smooth(shifted);
  CHECK(a.khat == doctest::Approx(b.khat).epsilon(1e-10));
  for (std::size_t i = 0; i < lr.size(); ++i) CHECK(a.weights[i] == doctest::Approx(b.weights[i]).epsilon(1e-10));
  CHECK(snis_estimate(phi, a.weights) == doctest::Approx(snis_estimate(phi, b.weights)).epsilon(1e-10));
}

TEST_CASE("smoothing preserves order and caps the tail") {
  std::mt19937_64 rng(13);
  std::student_t_distribution<double> t(2.0);
  std::vector<double> lr(1000);
  for (double& v : lr) v = std::abs(t(rng));
  const auto res = pareto_smooth(lr);
  REQUIRE(res.smoothed);
  std::vector<std::size_t> idx(lr.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return lr[i] < lr[j]; });
  const double raw_max = std::exp(lr[idx.back()]);
  for (std::size_t r = 1; r < idx.size(); ++r) CHECK(res.weights[idx[r - 1]] <= res.weights[idx[r]]);
  // No weight exceeds the weight of the raw maximum relative to the smallest draw.
  for (double w : res.weights)
    CHECK(w / res.weights[idx.front()] <= raw_max / std::exp(lr[idx.front()]) * (1 + 1e-12));
}

TEST_CASE("an extreme outlier is tamed") {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<double> lr(500);
  for (double& v : lr) v = n(rng);
  lr[123] = std::log(1e6);
  const auto res = pareto_smooth(lr);
  double sum = 0.0;
  for (double v : lr) sum += std::exp(v);
  const double raw_max_weight = 1e6 / sum;
  CHECK(*std::max_element(res.weights.begin(), res.weights.end()) < raw_max_weight);
  CHECK(res.weights[123] == *std::max_element(res.weights.begin(), res.weights.end()));
}

TEST_CASE("weights are normalized and failed draws get zero weight") {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> lr(300);
  for (double& v : lr) v = n(rng);
  lr[5] = lr[77] = -std::numeric_limits<double>::infinity();
  const auto res = pareto_smooth(lr);
  CHECK(res.failed_draws == 2);
  CHECK(res.weights[5] == 0.0);
  CHECK(res.weights[77] == 0.0);
  CHECK(std::accumulate(res.weights.begin(), res.weights.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
  // The fit ignores the failed draws entirely.
  std::vector<double> finite;
  for (double v : lr)
    if (std::isfinite(v)) finite.push_back(v);
  CHECK(res.khat == pareto_smooth(finite).khat);
}

TEST_CASE("self-normalized estimates") {
  const std::vector<double> v = {1.0, 4.0, -2.0, 7.5};
  CHECK(snis_estimate(v, std::vector<double>(4, 0.25)) == (1.0 + 4.0 - 2.0 + 7.5) / 4);
  CHECK(snis_estimate(v, std::vector<double>{0, 0, 3.0, 0}) == -2.0);
  CHECK(snis_estimate(std::vector<double>(4, 3.25), std::vector<double>{0.1, 5, 0, 2}) == doctest::Approx(3.25));
  CHECK_THROWS_AS(snis_estimate(v, std::vector<double>(4, 0.0)), AllZeroWeights);
  CHECK_THROWS_AS(snis_estimate(v, std::vector<double>(3, 1.0)), ShapeMismatch);
  CHECK_THROWS_AS(snis_estimate(v, std::vector<double>{1, -1, 1, 1}), DomainError);
}

TEST_CASE("snis recovers a shifted normal mean") {
  std::mt19937_64 rng(16);
  std::normal_distribution<double> q(0.0, 1.0);
  const std::size_t s = 10000;
  std::vector<double> x(s), w(s);
  for (std::size_t i = 0; i < s; ++i) {
    x[i] = q(rng);
    w[i] = std::exp(0.5 * x[i] - 0.125);  // N(0.5, 1) / N(0, 1)
  }
  const double est = snis_estimate(x, w);
  double wsum = 0.0, w2 = 0.0;
  for (double v : w) wsum += v;
  std::vector<double> wn(s);
  double var = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    wn[i] = w[i] / wsum;
    w2 += wn[i] * wn[i];
    var += wn[i] * wn[i] * (x[i] - est) * (x[i] - est);
  }
  const double se = std::sqrt(var);
  CHECK(std::abs(est - 0.5) < 3 * se);
  CHECK(relative_efficiency(wn) == doctest::Approx(1.0 / (s * w2)));
}

TEST_CASE("relative efficiency") {
  CHECK(relative_efficiency(std::vector<double>(10, 0.1)) == 1.0);
  CHECK(relative_efficiency(std::vector<double>{0, 0, 1, 0, 0}) == doctest::Approx(0.2));
  CHECK(relative_efficiency(std::vector<double>{0.5, 0, 0.5, 0}) == doctest::Approx(0.5));
}

TEST_CASE("khat verdicts") {
  CHECK(khat_verdict(0.3) == KhatVerdict::Reliable);
  CHECK(khat_verdict(0.6999) == KhatVerdict::Reliable);
  CHECK(khat_verdict(0.7) == KhatVerdict::Unreliable);
  CHECK(khat_verdict(-std::numeric_limits<double>::infinity()) == KhatVerdict::Reliable);
  CHECK(khat_verdict(std::numeric_limits<double>::infinity()) == KhatVerdict::Unreliable);
  CHECK(khat_verdict(std::numeric_limits<double>::quiet_NaN()) == KhatVerdict::Unreliable);
}

TEST_CASE("weighted quantiles") {
  const std::vector<double> v = {5, 1, 3, 2, 4};
  const std::vector<double> u(5, 1.0);
  CHECK(weighted_quantile(v, u, 0.5) == 3);
  CHECK(weighted_quantile(v, u, 0.05) == 1);
  CHECK(weighted_quantile(v, u, 0.95) == 5);
  CHECK(weighted_quantile(v, u, 0.4) == 2);
  CHECK(weighted_quantile(v, std::vector<double>{0, 0, 0, 0, 1}, 0.01) == 4);
}

TEST_CASE("log ratios for an equal method are zero") {
  const auto lv = make_lotka_volterra_model();
  for (const char* s : {"rk4:2", "rk45:0.001"}) {
    const auto spec = SolverSpec::parse(s);
    const auto d = testing::make_draws(*lv, spec, lv_center(), 0.05, 2, 40, 3);
    const auto r = compute_log_ratios(d, *lv, spec);
    REQUIRE(r.size() == 80);
    CHECK(r.failed_count() == 0);
    CHECK(r.method == s);
    CHECK(r.method_star == s);
    for (double v : r.values) CHECK(v == 0.0);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const auto a = r.solution_star(i), b = d.solution(i / 40, i % 40);
      CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
  }
}

TEST_CASE("log ratios vanish without ODE dependence") {
  const testing::PriorOnlyModel model;
  const auto d = testing::make_draws(model, SolverSpec::midpoint(1), {0.0, 0.0}, 0.5, 2, 50, 4);
  for (const char* s : {"rk4:8", "rk45:1e-09"})
    for (double v : compute_log_ratios(d, model, SolverSpec::parse(s)).values) CHECK(v == 0.0);
}

TEST_CASE("log ratios settle as the reference tightens") {
  const auto lv = make_lotka_volterra_model();
  const auto d = testing::make_draws(*lv, SolverSpec::rk45(1e-3), lv_center(), 0.03, 2, 50, 5);
  double prev_change = std::numeric_limits<double>::infinity();
  std::vector<double> prev = compute_log_ratios(d, *lv, SolverSpec::rk45(1e-6)).values;
  for (double tol : {1e-8, 1e-10}) {
    const auto cur = compute_log_ratios(d, *lv, SolverSpec::rk45(tol)).values;
    double change = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) change = std::max(change, std::abs(cur[i] - prev[i]));
    CHECK(change < prev_change);
    prev_change = change;
    prev = cur;
  }
  CHECK(prev_change < 1e-4);
}

TEST_CASE("log ratios record reference failures") {
  const auto lv = make_lotka_volterra_model();
  const auto d = testing::make_draws(*lv, SolverSpec::rk4(2), lv_center(), 0.05, 1, 30, 6);
  SolverSpec starved = SolverSpec::rk45(1e-10);
  starved.max_steps_per_interval = 2;
  const auto r = compute_log_ratios(d, *lv, starved);
  CHECK(r.failed_count() == 30);
  for (std::size_t i = 0; i < r.size(); ++i) {
    CHECK(r.failed[i]);
    CHECK(r.values[i] == -std::numeric_limits<double>::infinity());
  }
}

TEST_CASE("log ratios do not depend on the thread count") {
  const auto lv = make_lotka_volterra_model();
  const auto d = testing::make_draws(*lv, SolverSpec::midpoint(3), lv_center(), 0.05, 2, 30, 8);
  const auto a = compute_log_ratios(d, *lv, SolverSpec::rk4(6), 1);
  const auto b = compute_log_ratios(d, *lv, SolverSpec::rk4(6), 4);
  CHECK(a.values == b.values);
  CHECK(a.solutions_star == b.solutions_star);
  CHECK(a.cost.rhs_evals == b.cost.rhs_evals);
  CHECK(a.cost.rhs_evals > 0);
}

TEST_CASE("snis over draws uses the constrained scale") {
  const testing::PriorOnlyModel model;
  const auto d = testing::make_draws(model, SolverSpec::midpoint(1), {0.0, 0.0}, 0.5, 2, 10, 9);
  std::vector<double> w(20, 0.0);
  w[13] = 1.0;
  const double a = snis_estimate(d, w, [](std::span<const double> theta) { return theta[0]; });
  CHECK(a == doctest::Approx(std::exp(d.eta(1, 3)[0])).epsilon(1e-15));
}
