#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <random>
#include <thread>

#include "odecheck/errors.hpp"
#include "odecheck/sampler.hpp"

namespace odecheck {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void add_to(std::vector<double>& acc, const std::vector<double>& x) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

// Dual averaging of log step size toward a target acceptance statistic.
class StepsizeAdaptation {
 public:
  explicit StepsizeAdaptation(double delta) : delta_(delta) {}

  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  void learn(double& epsilon, double adapt_stat) {
    ++counter_;
    adapt_stat = std::min(1.0, adapt_stat);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - adapt_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / gamma_;
    const double x_eta = std::pow(static_cast<double>(counter_), -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    epsilon = std::exp(x);
  }
  void complete(double& epsilon) const { epsilon = std::exp(x_bar_); }

 private:
  double delta_;
  double mu_ = 0.0;
  double gamma_ = 0.05;
  double kappa_ = 0.75;
  double t0_ = 10.0;
  long counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

// Diagonal metric estimation over expanding windows (75 / 25... / 50 layout).
class VarianceAdaptation {
 public:
  VarianceAdaptation(std::size_t dim, long num_warmup) : num_warmup_(num_warmup), mean_(dim), m2_(dim) {
    if (num_warmup < 20) {
      enabled_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > num_warmup) {
      init_buffer_ = static_cast<long>(0.15 * num_warmup);
      term_buffer_ = static_cast<long>(0.1 * num_warmup);
      base_window_ = num_warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  // Returns true when a window closed and `inv_metric` was updated.
  bool learn(std::vector<double>& inv_metric, const std::vector<double>& q) {
    if (!enabled_) return false;
    if (in_window()) add_sample(q);
    if (end_of_window()) {
      compute_next_window();
      const double n = static_cast<double>(samples_);
      for (std::size_t i = 0; i < inv_metric.size(); ++i) {
        const double var = m2_[i] / (n - 1.0);
        inv_metric[i] = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0));
      }
      samples_ = 0;
      std::fill(mean_.begin(), mean_.end(), 0.0);
      std::fill(m2_.begin(), m2_.end(), 0.0);
      ++counter_;
      return true;
    }
    ++counter_;
    return false;
  }

 private:
  bool in_window() const {
    return counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ &&
           counter_ != num_warmup_;
  }
  bool end_of_window() const { return counter_ == next_window_ && counter_ != num_warmup_; }
  void compute_next_window() {
    const long last = num_warmup_ - term_buffer_ - 1;
    if (next_window_ == last) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != last && next_window_ + 2 * window_size_ >= num_warmup_ - term_buffer_)
      next_window_ = last;
  }
  void add_sample(const std::vector<double>& q) {
    ++samples_;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double delta = q[i] - mean_[i];
      mean_[i] += delta / static_cast<double>(samples_);
      m2_[i] += delta * (q[i] - mean_[i]);
    }
  }

  bool enabled_ = true;
  long num_warmup_;
  long init_buffer_ = 75;
  long term_buffer_ = 50;
  long base_window_ = 25;
  long window_size_ = 0;
  long next_window_ = 0;
  long counter_ = 0;
  long samples_ = 0;
  std::vector<double> mean_, m2_;
};

struct Point {
  std::vector<double> q, p, grad;
  double lp = kNegInf;
  std::vector<double> solution;
};

std::mt19937_64 make_rng(std::uint64_t seed, std::size_t chain) {
  const auto c = static_cast<std::uint64_t>(chain);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
  return std::mt19937_64(seq);
}

struct Transition {
  double accept_stat = 0.0;
  int depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
};

class NutsChain {
 public:
  NutsChain(const LogDensityTarget& target, const SamplerConfig& config, std::size_t chain)
      : target_(target),
        config_(config),
        rng_(make_rng(config.seed, chain)),
        inv_metric_(target.dim(), 1.0),
        epsilon_(config.init_stepsize) {}

  ChainDraws run(ChainDiagnostics& diag) {
    const auto start = std::chrono::steady_clock::now();
    initialize();
    const long warmup = config_.warmup;
    StepsizeAdaptation stepsize(config_.target_accept);
    VarianceAdaptation variance(target_.dim(), warmup);
    if (warmup > 0) {
      init_stepsize();
      stepsize.set_mu(std::log(10.0 * epsilon_));
      stepsize.restart();
    }

    ChainDraws out;
    const std::size_t draws = static_cast<std::size_t>(std::max(0, config_.draws_per_chain()));
    out.eta.reserve(draws * target_.dim());
    double sum_accept = 0.0, sum_depth = 0.0, sum_leapfrog = 0.0, divergences = 0.0;
    for (long iter = 0; iter < config_.iterations; ++iter) {
      const Transition t = transition();
      diag_.total_leapfrog += static_cast<std::uint64_t>(t.n_leapfrog);
      if (iter < warmup) {
        stepsize.learn(epsilon_, t.accept_stat);
        if (variance.learn(inv_metric_, z_.q)) {
          init_stepsize();
          stepsize.set_mu(std::log(10.0 * epsilon_));
          stepsize.restart();
        }
        if (iter == warmup - 1) {
          stepsize.complete(epsilon_);
          epsilon_ *= config_.stepsize_multiplier;
        }
        continue;
      }
      out.eta.insert(out.eta.end(), z_.q.begin(), z_.q.end());
      out.log_density.push_back(z_.lp);
      out.accept_stat.push_back(t.accept_stat);
      out.stepsize.push_back(epsilon_);
      out.treedepth.push_back(t.depth);
      out.n_leapfrog.push_back(t.n_leapfrog);
      out.divergent.push_back(t.divergent ? 1 : 0);
      out.solutions.insert(out.solutions.end(), z_.solution.begin(), z_.solution.end());
      sum_accept += t.accept_stat;
      sum_depth += t.depth;
      sum_leapfrog += t.n_leapfrog;
      divergences += t.divergent ? 1.0 : 0.0;
    }
    const double s = draws > 0 ? static_cast<double>(draws) : 1.0;
    diag = diag_;
    diag.mean_accept_stat = sum_accept / s;
    diag.mean_treedepth = sum_depth / s;
    diag.mean_leapfrog = sum_leapfrog / s;
    diag.divergent_fraction = divergences / s;
    diag.stepsize = epsilon_;
    diag.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

 private:
  void evaluate(Point& z) {
    PosteriorEvalResult r = target_.evaluate(z.q, true);
    diag_.rhs_evals += r.stats.rhs_evals;
    diag_.gradient_evals += 1;
    if (r.ok() && r.gradient.size() == z.q.size()) {
      z.lp = r.log_density;
      z.grad = std::move(r.gradient);
      z.solution = std::move(r.solution.states);
    } else {
      z.lp = kNegInf;
      std::fill(z.grad.begin(), z.grad.end(), 0.0);
      z.solution.clear();
    }
  }

  void initialize() {
    const std::size_t dim = target_.dim();
    const std::vector<double> start = target_.initial_point();
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    z_.q = start;
    z_.p.assign(dim, 0.0);
    z_.grad.assign(dim, 0.0);
    for (int attempt = 0; attempt <= 100; ++attempt) {
      if (attempt > 0)
        for (std::size_t i = 0; i < dim; ++i) z_.q[i] = start[i] + jitter(rng_);
      evaluate(z_);
      if (std::isfinite(z_.lp)) return;
    }
    throw InitializationFailure("no finite log density at the initial point after 100 retries");
  }

  double kinetic(const std::vector<double>& p) const {
    double k = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) k += p[i] * p[i] * inv_metric_[i];
    return 0.5 * k;
  }
  double hamiltonian(const Point& z) const {
    const double h = -z.lp + kinetic(z.p);
    return std::isnan(h) ? std::numeric_limits<double>::infinity() : h;
  }
  std::vector<double> p_sharp(const Point& z) const {
    std::vector<double> out(z.p.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_metric_[i] * z.p[i];
    return out;
  }
  void sample_momentum(Point& z) {
    for (std::size_t i = 0; i < z.p.size(); ++i) z.p[i] = normal_(rng_) / std::sqrt(inv_metric_[i]);
  }
  double uniform() { return uniform_(rng_); }

  void evolve(Point& z, double eps) {
    const std::size_t n = z.q.size();
    for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * eps * z.grad[i];
    for (std::size_t i = 0; i < n; ++i) z.q[i] += eps * inv_metric_[i] * z.p[i];
    evaluate(z);
    for (std::size_t i = 0; i < n; ++i) z.p[i] += 0.5 * eps * z.grad[i];
  }

  void init_stepsize() {
    const Point z_init = z_;
    if (epsilon_ == 0.0 || epsilon_ > 1e7 || std::isnan(epsilon_)) return;
    sample_momentum(z_);
    double h0 = hamiltonian(z_);
    evolve(z_, epsilon_);
    double delta_h = h0 - hamiltonian(z_);
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    while (true) {
      z_ = z_init;
      sample_momentum(z_);
      h0 = hamiltonian(z_);
      evolve(z_, epsilon_);
      delta_h = h0 - hamiltonian(z_);
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && !(delta_h < std::log(0.8))) break;
      epsilon_ = direction == 1 ? 2.0 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7 || epsilon_ == 0.0) break;
    }
    z_ = z_init;
  }

  static bool compute_criterion(const std::vector<double>& p_sharp_minus,
                                const std::vector<double>& p_sharp_plus,
                                const std::vector<double>& rho) {
    return dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0;
  }

  Transition transition() {
    const std::size_t dim = z_.q.size();
    sample_momentum(z_);
    Point z_fwd = z_, z_bck = z_, z_sample = z_, z_propose = z_;

    std::vector<double> p_fwd_fwd = z_.p, p_sharp_fwd_fwd = p_sharp(z_);
    std::vector<double> p_fwd_bck = z_.p, p_sharp_fwd_bck = p_sharp_fwd_fwd;
    std::vector<double> p_bck_fwd = z_.p, p_sharp_bck_fwd = p_sharp_fwd_fwd;
    std::vector<double> p_bck_bck = z_.p, p_sharp_bck_bck = p_sharp_fwd_fwd;
    std::vector<double> rho = z_.p;

    double log_sum_weight = 0.0;
    const double h0 = hamiltonian(z_);
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;
    int depth = 0;
    divergent_ = false;

    while (depth < config_.max_depth) {
      std::vector<double> rho_fwd(dim, 0.0), rho_bck(dim, 0.0);
      bool valid_subtree = false;
      double log_sum_weight_subtree = kNegInf;

      if (uniform() > 0.5) {
        z_ = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        p_sharp_bck_fwd = p_sharp_fwd_bck;
        valid_subtree = build_tree(depth, z_propose, p_sharp_fwd_bck, p_sharp_fwd_fwd, rho_fwd,
                                   p_fwd_bck, p_fwd_fwd, h0, 1.0, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_fwd = z_;
      } else {
        z_ = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        p_sharp_fwd_bck = p_sharp_bck_fwd;
        valid_subtree = build_tree(depth, z_propose, p_sharp_bck_fwd, p_sharp_bck_bck, rho_bck,
                                   p_bck_fwd, p_bck_bck, h0, -1.0, n_leapfrog,
                                   log_sum_weight_subtree, sum_metro_prob);
        z_bck = z_;
      }
      if (!valid_subtree) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck;
      add_to(rho, rho_fwd);
      bool persist = compute_criterion(p_sharp_bck_bck, p_sharp_fwd_fwd, rho);
      std::vector<double> rho_extended = rho_bck;
      add_to(rho_extended, p_fwd_bck);
      persist = persist && compute_criterion(p_sharp_bck_bck, p_sharp_fwd_bck, rho_extended);
      rho_extended = rho_fwd;
      add_to(rho_extended, p_bck_fwd);
      persist = persist && compute_criterion(p_sharp_bck_fwd, p_sharp_fwd_fwd, rho_extended);
      if (!persist) break;
    }

    Transition t;
    t.n_leapfrog = n_leapfrog;
    t.depth = depth;
    t.divergent = divergent_;
    t.accept_stat = n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
    z_ = std::move(z_sample);
    return t;
  }

  bool build_tree(int depth, Point& z_propose, std::vector<double>& p_sharp_beg,
                  std::vector<double>& p_sharp_end, std::vector<double>& rho,
                  std::vector<double>& p_beg, std::vector<double>& p_end, double h0, double sign,
                  int& n_leapfrog, double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      evolve(z_, sign * epsilon_);
      ++n_leapfrog;
      const double h = hamiltonian(z_);
      if (h - h0 > config_.max_energy_error) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, h0 - h);
      sum_metro_prob += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      z_propose = z_;
      p_sharp_beg = p_sharp(z_);
      p_sharp_end = p_sharp_beg;
      add_to(rho, z_.p);
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    const std::size_t dim = z_.q.size();
    double log_sum_weight_init = kNegInf;
    std::vector<double> p_init_end(dim), p_sharp_init_end(dim), rho_init(dim, 0.0);
    const bool valid_init =
        build_tree(depth - 1, z_propose, p_sharp_beg, p_sharp_init_end, rho_init, p_beg,
                   p_init_end, h0, sign, n_leapfrog, log_sum_weight_init, sum_metro_prob);
    if (!valid_init) return false;

    Point z_propose_final = z_;
    double log_sum_weight_final = kNegInf;
    std::vector<double> p_final_beg(dim), p_sharp_final_beg(dim), rho_final(dim, 0.0);
    const bool valid_final =
        build_tree(depth - 1, z_propose_final, p_sharp_final_beg, p_sharp_end, rho_final,
                   p_final_beg, p_end, h0, sign, n_leapfrog, log_sum_weight_final, sum_metro_prob);
    if (!valid_final) return false;

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = std::move(z_propose_final);
    } else if (uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = std::move(z_propose_final);
    }

    std::vector<double> rho_subtree = rho_init;
    add_to(rho_subtree, rho_final);
    add_to(rho, rho_subtree);

    bool persist = compute_criterion(p_sharp_beg, p_sharp_end, rho_subtree);
    std::vector<double> rho_extended = rho_init;
    add_to(rho_extended, p_final_beg);
    persist = persist && compute_criterion(p_sharp_beg, p_sharp_final_beg, rho_extended);
    rho_extended = rho_final;
    add_to(rho_extended, p_init_end);
    persist = persist && compute_criterion(p_sharp_init_end, p_sharp_end, rho_extended);
    return persist;
  }

  const LogDensityTarget& target_;
  const SamplerConfig& config_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::vector<double> inv_metric_;
  double epsilon_;
  Point z_;
  bool divergent_ = false;
  ChainDiagnostics diag_;
};

}  // namespace

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ODECHECK_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

bool leapfrog(PhasePoint& z, double step_size, std::span<const double> inv_metric,
              const GradientFn& gradient_fn, PosteriorEvalResult* eval_out) {
  const std::size_t n = z.position.size();
  for (std::size_t i = 0; i < n; ++i) z.momentum[i] += 0.5 * step_size * z.gradient[i];
  for (std::size_t i = 0; i < n; ++i) z.position[i] += step_size * inv_metric[i] * z.momentum[i];
  PosteriorEvalResult r = gradient_fn(z.position);
  const bool ok = r.ok() && r.gradient.size() == n &&
                  std::all_of(r.gradient.begin(), r.gradient.end(),
                              [](double g) { return std::isfinite(g); });
  z.log_density = r.log_density;
  if (ok) {
    z.gradient = r.gradient;
    for (std::size_t i = 0; i < n; ++i) z.momentum[i] += 0.5 * step_size * z.gradient[i];
  }
  if (eval_out) *eval_out = std::move(r);
  return ok;
}

std::vector<std::vector<std::vector<double>>> Draws::constrained_by_param() const {
  std::vector<std::vector<std::vector<double>>> out(
      dim, std::vector<std::vector<double>>(num_chains(), std::vector<double>(draws_per_chain())));
  for (std::size_t c = 0; c < num_chains(); ++c)
    for (std::size_t s = 0; s < draws_per_chain(); ++s) {
      const auto theta = inverse_transform(eta(c, s)).theta;
      for (std::size_t i = 0; i < dim; ++i) out[i][c][s] = theta[i];
    }
  return out;
}

std::uint64_t SamplerDiagnostics::total_rhs_evals() const {
  std::uint64_t total = 0;
  for (const auto& c : chains) total += c.rhs_evals;
  return total;
}

std::uint64_t SamplerDiagnostics::total_leapfrog() const {
  std::uint64_t total = 0;
  for (const auto& c : chains) total += c.total_leapfrog;
  return total;
}

double SamplerDiagnostics::divergent_fraction() const {
  if (chains.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : chains) total += c.divergent_fraction;
  return total / static_cast<double>(chains.size());
}

double SamplerDiagnostics::total_seconds() const {
  double total = 0.0;
  for (const auto& c : chains) total += c.seconds;
  return total;
}

SampleResult nuts_sample(const LogDensityTarget& target, const SamplerConfig& config) {
  if (config.chains < 1 || config.iterations < 1 || config.warmup < 0 ||
      config.warmup > config.iterations)
    throw ConfigError("invalid sampler configuration");
  if (target.dim() == 0) throw ConfigError("target has no parameters");

  SampleResult result;
  result.draws.param_names = target.param_names();
  result.draws.dim = target.dim();
  result.draws.chains.resize(static_cast<std::size_t>(config.chains));
  result.diagnostics.chains.resize(static_cast<std::size_t>(config.chains));

  parallel_for(static_cast<std::size_t>(config.chains), resolve_threads(config.threads),
               [&](std::size_t c) {
                 NutsChain chain(target, config, c);
                 result.draws.chains[c] = chain.run(result.diagnostics.chains[c]);
               });

  const std::size_t s = result.draws.draws_per_chain();
  result.draws.solution_size = s > 0 ? result.draws.chains[0].solutions.size() / s : 0;
  return result;
}

SampleResult nuts_sample(const PosteriorModel& model, const SolverSpec& spec,
                         const SamplerConfig& config) {
  ModelTarget target(model, spec);
  SampleResult result = nuts_sample(target, config);
  result.draws.method = spec.to_string();
  return result;
}

}  // namespace odecheck
