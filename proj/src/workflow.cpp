#include "odecheck/workflow.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "odecheck/errors.hpp"

namespace odecheck {

namespace {

// JSON has no infinities; non-finite numbers travel as strings.
nlohmann::json num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double num(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw ConfigError("bad number in report: " + s);
  }
  return j.get<double>();
}

bool settled(double prev, double cur, double tol) {
  if (prev == cur) return true;  // also covers equal infinities
  return std::abs(cur - prev) < tol;
}

// Reliability-weighted sd: with equal weights this is the usual sample sd.
double weighted_sd(std::span<const double> x, std::span<const double> w, double mean) {
  double wsum = 0.0, w2sum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w[i] == 0.0) continue;
    wsum += w[i];
    w2sum += w[i] * w[i];
    acc += w[i] * (x[i] - mean) * (x[i] - mean);
  }
  const double denom = wsum - w2sum / wsum;
  return denom > 0.0 ? std::sqrt(acc / denom) : 0.0;
}

}  // namespace

void MethodLadder::validate() const {
  for (std::size_t i = 1; i < rungs.size(); ++i) {
    const auto& a = rungs[i - 1];
    const auto& b = rungs[i];
    if (a.method == b.method && !more_accurate(b, a))
      throw ConfigError("ladder rung " + b.to_string() + " is not more accurate than " + a.to_string());
  }
}

std::string MethodLadder::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    if (i) out += ',';
    out += rungs[i].to_string();
  }
  return out;
}

MethodLadder MethodLadder::parse(std::string_view text) {
  MethodLadder ladder;
  if (text.empty()) throw ConfigError("empty ladder");
  while (!text.empty()) {
    const auto comma = text.find(',');
    auto item = text.substr(0, comma);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (item.empty()) throw ConfigError("empty ladder entry");
    ladder.rungs.push_back(SolverSpec::parse(item));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  ladder.validate();
  return ladder;
}

MethodLadder default_ladder(const SolverSpec& m) {
  MethodLadder ladder;
  for (int i = 1; i <= 6; ++i) {
    SolverSpec s = m;
    if (m.fixed_step()) {
      s.steps_per_interval = m.steps_per_interval << i;
    } else {
      const double f = std::pow(10.0, i);
      s.tol_abs = std::max(m.tol_abs / f, 1e-12);
      s.tol_rel = std::max(m.tol_rel / f, 1e-12);
      const SolverSpec& last = ladder.rungs.empty() ? m : ladder.rungs.back();
      if (!more_accurate(s, last)) break;
    }
    ladder.rungs.push_back(s);
  }
  return ladder;
}

std::string_view verdict_name(Verdict v) { return v == Verdict::Accept ? "accept" : "resample"; }

std::uint64_t WorkflowReport::total_rhs_evals() const {
  std::uint64_t n = 0;
  for (const auto& r : rungs) n += r.rhs_evals;
  return n;
}

nlohmann::json WorkflowReport::to_json() const {
  nlohmann::json j;
  j["sampling_method"] = sampling_method;
  j["rungs"] = nlohmann::json::array();
  for (const auto& r : rungs) {
    j["rungs"].push_back({{"method", r.method},
                          {"mae", num(r.mae)},
                          {"max_ratio", num(r.max_ratio)},
                          {"max_log_ratio", num(r.max_log_ratio)},
                          {"khat", num(r.khat)},
                          {"r_eff", num(r.r_eff)},
                          {"failed_draws", r.failed_draws},
                          {"mae_excluded", r.mae_excluded},
                          {"seconds", r.seconds},
                          {"rhs_evals", r.rhs_evals}});
  }
  j["verdict"] = std::string(verdict_name(verdict));
  j["converged_rung"] = converged_rung ? nlohmann::json(*converged_rung) : nlohmann::json(nullptr);
  j["thresholds"] = {{"delta_mae", thresholds.delta_mae},
                     {"delta_khat", thresholds.delta_khat},
                     {"mae_floor", thresholds.mae_floor},
                     {"khat", kKhatThreshold}};
  j["note"] = note;
  j["suggested_method"] = suggested_method ? nlohmann::json(*suggested_method) : nlohmann::json(nullptr);
  j["r_eff_formula"] = "1/(S*sum(w^2))";
  if (psis) {
    j["psis"] = {{"khat", num(psis->khat)},
                 {"r_eff", psis->r_eff},
                 {"tail_size", psis->tail_size},
                 {"failed_draws", psis->failed_draws},
                 {"smoothed", psis->smoothed},
                 {"weights", psis->weights}};
  }
  return j;
}

WorkflowReport WorkflowReport::from_json(const nlohmann::json& j) {
  try {
    WorkflowReport r;
    r.sampling_method = j.at("sampling_method").get<std::string>();
    for (const auto& x : j.at("rungs")) {
      RungRecord rr;
      rr.method = x.at("method").get<std::string>();
      rr.mae = num(x.at("mae"));
      rr.max_ratio = num(x.at("max_ratio"));
      rr.max_log_ratio = num(x.at("max_log_ratio"));
      rr.khat = num(x.at("khat"));
      rr.r_eff = num(x.at("r_eff"));
      rr.failed_draws = x.at("failed_draws").get<std::size_t>();
      rr.mae_excluded = x.at("mae_excluded").get<std::size_t>();
      rr.seconds = x.at("seconds").get<double>();
      rr.rhs_evals = x.at("rhs_evals").get<std::uint64_t>();
      r.rungs.push_back(rr);
    }
    const auto v = j.at("verdict").get<std::string>();
    if (v == "accept") r.verdict = Verdict::Accept;
    else if (v == "resample") r.verdict = Verdict::Resample;
    else throw ConfigError("unknown verdict: " + v);
    if (!j.at("converged_rung").is_null()) r.converged_rung = j["converged_rung"].get<std::size_t>();
    const auto& t = j.at("thresholds");
    r.thresholds.delta_mae = t.at("delta_mae").get<double>();
    r.thresholds.delta_khat = t.at("delta_khat").get<double>();
    r.thresholds.mae_floor = t.at("mae_floor").get<double>();
    r.note = j.value("note", "");
    if (j.contains("suggested_method") && !j["suggested_method"].is_null())
      r.suggested_method = j["suggested_method"].get<std::string>();
    if (j.contains("psis")) {
      const auto& p = j["psis"];
      PsisResult res;
      res.khat = num(p.at("khat"));
      res.r_eff = p.at("r_eff").get<double>();
      res.tail_size = p.at("tail_size").get<std::size_t>();
      res.failed_draws = p.at("failed_draws").get<std::size_t>();
      res.smoothed = p.at("smoothed").get<bool>();
      res.weights = p.at("weights").get<std::vector<double>>();
      r.psis = std::move(res);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
}

double compute_mae(std::span<const double> solutions_m, std::span<const double> solutions_star,
                   std::size_t solution_size, std::span<const char> failed, std::size_t* excluded) {
  if (solutions_m.size() != solutions_star.size())
    throw ShapeMismatch("M and M* solution sets differ in size");
  if (solution_size == 0) {
    if (!solutions_m.empty()) throw ShapeMismatch("zero solution size with nonempty solutions");
    if (excluded) *excluded = 0;
    return 0.0;
  }
  if (solutions_m.size() % solution_size != 0)
    throw ShapeMismatch("solution array is not a whole number of draws");
  const std::size_t draws = solutions_m.size() / solution_size;
  if (!failed.empty() && failed.size() != draws) throw ShapeMismatch("failure flags do not match draws");
  double mae = 0.0;
  std::size_t skipped = 0;
  for (std::size_t s = 0; s < draws; ++s) {
    if (!failed.empty() && failed[s]) {
      ++skipped;
      continue;
    }
    for (std::size_t i = s * solution_size; i < (s + 1) * solution_size; ++i)
      mae = std::max(mae, std::abs(solutions_m[i] - solutions_star[i]));
  }
  if (excluded) *excluded = skipped;
  return mae;
}

double compute_mae(const std::vector<OdeSolution>& solutions_m, const std::vector<OdeSolution>& solutions_star) {
  if (solutions_m.size() != solutions_star.size()) throw ShapeMismatch("draw counts differ");
  double mae = 0.0;
  for (std::size_t s = 0; s < solutions_m.size(); ++s) {
    const auto& a = solutions_m[s];
    const auto& b = solutions_star[s];
    if (a.num_times != b.num_times || a.dimension != b.dimension || a.states.size() != b.states.size())
      throw ShapeMismatch("solution grids differ at draw " + std::to_string(s));
    mae = std::max(mae, compute_mae(a.states, b.states, a.states.size()));
  }
  return mae;
}

WorkflowReport run_reliability_check(const Draws& draws, const PosteriorModel& model,
                                     const MethodLadder& ladder, int threads) {
  if (ladder.rungs.size() < 2)
    throw LadderTooShort("ladder needs at least 2 rungs, got " + std::to_string(ladder.rungs.size()));
  ladder.validate();
  const SolverSpec m = SolverSpec::parse(draws.method);

  WorkflowReport report;
  report.sampling_method = draws.method;
  report.thresholds = ladder.thresholds;
  const auto& th = ladder.thresholds;

  std::vector<double> solutions_m;
  solutions_m.reserve(draws.total() * draws.solution_size);
  for (const auto& c : draws.chains) solutions_m.insert(solutions_m.end(), c.solutions.begin(), c.solutions.end());

  std::optional<PsisResult> last_psis;
  for (std::size_t i = 0; i < ladder.rungs.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    const LogRatios ratios = compute_log_ratios(draws, model, ladder.rungs[i], threads);
    RungRecord rec;
    rec.method = ratios.method_star;
    rec.failed_draws = ratios.failed_count();
    rec.rhs_evals = ratios.cost.rhs_evals;
    rec.mae = compute_mae(solutions_m, ratios.solutions_star, draws.solution_size, ratios.failed, &rec.mae_excluded);
    rec.max_log_ratio = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < ratios.size(); ++s)
      if (!ratios.failed[s]) rec.max_log_ratio = std::max(rec.max_log_ratio, ratios.values[s]);
    rec.max_ratio = std::exp(rec.max_log_ratio);
    try {
      last_psis = pareto_smooth(ratios);
      rec.khat = last_psis->khat;
      rec.r_eff = last_psis->r_eff;
    } catch (const DomainError&) {
      // Too few usable draws to fit a tail.
      last_psis.reset();
      rec.khat = std::numeric_limits<double>::infinity();
      rec.r_eff = 0.0;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.rungs.push_back(rec);

    if (i == 0) continue;
    const auto& prev = report.rungs[i - 1];
    const double rel_mae = std::abs(rec.mae - prev.mae) / std::max(rec.mae, th.mae_floor);
    if (rel_mae < th.delta_mae && settled(prev.khat, rec.khat, th.delta_khat)) {
      report.converged_rung = i;
      break;
    }
  }

  if (report.converged_rung && last_psis && khat_verdict(last_psis->khat) == KhatVerdict::Reliable) {
    report.verdict = Verdict::Accept;
    report.psis = std::move(last_psis);
    report.note = "MAE and khat converged at rung " + std::to_string(*report.converged_rung + 1);
  } else {
    report.verdict = Verdict::Resample;
    if (report.converged_rung)
      report.note = "khat converged at or above " + std::to_string(kKhatThreshold) + "; increase the accuracy of M";
    else
      report.note = "ladder exhausted before MAE and khat converged";
    const MethodLadder finer = default_ladder(m);
    if (!finer.rungs.empty()) report.suggested_method = finer.rungs.front().to_string();
  }
  return report;
}

std::vector<Estimand> parameter_estimands(const Draws& draws) {
  const auto by_param = draws.constrained_by_param();
  std::vector<Estimand> out;
  for (std::size_t i = 0; i < draws.dim; ++i) out.push_back({draws.param_names[i], by_param[i]});
  return out;
}

std::vector<Estimate> weighted_estimates(std::span<const double> weights, double r_eff,
                                         const std::vector<Estimand>& estimands) {
  std::vector<Estimate> out;
  for (const auto& e : estimands) {
    std::vector<double> flat;
    for (const auto& c : e.values) flat.insert(flat.end(), c.begin(), c.end());
    if (flat.size() != weights.size()) throw ShapeMismatch("estimand " + e.name + " does not match the weights");
    Estimate est;
    est.name = e.name;
    est.mean = snis_estimate(flat, weights);
    est.q05 = weighted_quantile(flat, weights, 0.05);
    est.q50 = weighted_quantile(flat, weights, 0.50);
    est.q95 = weighted_quantile(flat, weights, 0.95);
    const double sd = weighted_sd(flat, weights, est.mean);
    const bool constant = std::adjacent_find(flat.begin(), flat.end(), std::not_equal_to<>()) == flat.end();
    est.mcse = (sd == 0.0 || constant) ? 0.0 : sd / std::sqrt(r_eff * ess_mean(e.values));
    out.push_back(est);
  }
  return out;
}

std::vector<Estimate> corrected_estimates(const WorkflowReport& report, const std::vector<Estimand>& estimands) {
  if (report.verdict != Verdict::Accept || !report.psis)
    throw VerdictMismatch("corrected estimates need an accepted report");
  return weighted_estimates(report.psis->weights, report.psis->r_eff, estimands);
}

}  // namespace odecheck
