#include "odecheck/cli.hpp"

#include <dlfcn.h>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "odecheck/diagnostics.hpp"
#include "odecheck/errors.hpp"
#include "odecheck/io.hpp"
#include "odecheck/plugin.hpp"
#include "odecheck/psis.hpp"

namespace odecheck {

namespace fs = std::filesystem;

namespace {

template <class Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int x{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  return x;
}

double parse_real(std::string_view key, std::string_view v) {
  try {
    return parse_double(v);
  } catch (const ConfigError&) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string path_in(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

std::string resolved_data_path(const RunConfig& c) {
  if (c.data.empty()) return c.model == "lotka-volterra" ? bundled_lynx_hare_path() : std::string();
  return c.data;
}

nlohmann::json sampler_diagnostics_json(const SamplerDiagnostics& d) {
  nlohmann::json chains = nlohmann::json::array();
  for (const auto& c : d.chains)
    chains.push_back({{"accept_stat", c.mean_accept_stat},
                      {"stepsize", c.stepsize},
                      {"treedepth", c.mean_treedepth},
                      {"n_leapfrog", c.mean_leapfrog},
                      {"divergent", c.divergent_fraction},
                      {"seconds", c.seconds},
                      {"rhs_evals", c.rhs_evals}});
  return {{"chains", chains},
          {"total_rhs_evals", d.total_rhs_evals()},
          {"total_leapfrog", d.total_leapfrog()},
          {"divergent_fraction", d.divergent_fraction()},
          {"seconds", d.total_seconds()}};
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {"model",  "data",   "chains",    "iters",      "warmup",
                                             "stepsize", "adapt_delta", "max_depth", "seed", "solver",
                                             "ladder", "out",    "draws",     "report",     "threads",
                                             "delta_mae", "delta_khat"};
  return k;
}

void RunConfig::set(std::string_view key, std::string_view raw) {
  const std::string v = trim(raw);
  if (key == "model") {
    if (v.empty()) throw ConfigError("model: must not be empty");
    model = v;
  } else if (key == "data") data = v;
  else if (key == "chains") chains = parse_int<int>(key, v);
  else if (key == "iters") iters = parse_int<int>(key, v);
  else if (key == "warmup") {
    warmup = v == "auto" ? -1 : parse_int<int>(key, v);
    if (warmup < -1) throw ConfigError("warmup: must be >= 0 or auto");
  }
  else if (key == "stepsize") stepsize = parse_real(key, v);
  else if (key == "adapt_delta") adapt_delta = parse_real(key, v);
  else if (key == "max_depth") max_depth = parse_int<int>(key, v);
  else if (key == "seed") seed = parse_int<std::uint64_t>(key, v);
  else if (key == "solver") {
    try {
      solver = SolverSpec::parse(v).to_string();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("solver: ") + e.what());
    }
  } else if (key == "ladder") {
    if (v == "default") {
      ladder = v;
    } else {
      try {
        ladder = MethodLadder::parse(v).to_string();
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("ladder: ") + e.what());
      }
    }
  } else if (key == "out") out = v;
  else if (key == "draws") draws = v;
  else if (key == "report") report = v;
  else if (key == "threads") threads = parse_int<int>(key, v);
  else if (key == "delta_mae") delta_mae = parse_real(key, v);
  else if (key == "delta_khat") delta_khat = parse_real(key, v);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string RunConfig::get(std::string_view key) const {
  if (key == "model") return model;
  if (key == "data") return data;
  if (key == "chains") return std::to_string(chains);
  if (key == "iters") return std::to_string(iters);
  if (key == "warmup") return warmup < 0 ? "auto" : std::to_string(warmup);
  if (key == "stepsize") return format_double(stepsize);
  if (key == "adapt_delta") return format_double(adapt_delta);
  if (key == "max_depth") return std::to_string(max_depth);
  if (key == "seed") return std::to_string(seed);
  if (key == "solver") return solver;
  if (key == "ladder") return ladder;
  if (key == "out") return out;
  if (key == "draws") return draws;
  if (key == "report") return report;
  if (key == "threads") return std::to_string(threads);
  if (key == "delta_mae") return format_double(delta_mae);
  if (key == "delta_khat") return format_double(delta_khat);
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

RunConfig RunConfig::parse_text(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    base.set(trim(std::string_view(line).substr(0, eq)), std::string_view(line).substr(eq + 1));
  }
  return base;
}

RunConfig RunConfig::parse_text(std::string_view text) { return parse_text(text, RunConfig{}); }

RunConfig RunConfig::load_file(const std::string& path) { return parse_text(read_text_file(path)); }

SolverSpec RunConfig::solver_spec() const { return SolverSpec::parse(solver); }

MethodLadder RunConfig::method_ladder() const {
  MethodLadder l = ladder == "default" ? default_ladder(solver_spec()) : MethodLadder::parse(ladder);
  l.thresholds.delta_mae = delta_mae;
  l.thresholds.delta_khat = delta_khat;
  return l;
}

SamplerConfig RunConfig::sampler_config() const {
  if (chains < 1) throw ConfigError("chains: must be >= 1");
  if (iters <= effective_warmup()) throw ConfigError("iters: must exceed warmup");
  if (!(stepsize > 0.0)) throw ConfigError("stepsize: must be positive");
  if (!(adapt_delta > 0.0 && adapt_delta < 1.0)) throw ConfigError("adapt_delta: must be in (0, 1)");
  if (max_depth < 1) throw ConfigError("max_depth: must be >= 1");
  if (threads < 0) throw ConfigError("threads: must be >= 0");
  SamplerConfig s;
  s.chains = chains;
  s.iterations = iters;
  s.warmup = effective_warmup();
  s.init_stepsize = stepsize;
  s.target_accept = adapt_delta;
  s.max_depth = max_depth;
  s.seed = seed;
  s.threads = threads;
  return s;
}

std::string RunConfig::draws_dir() const { return draws.empty() ? out : draws; }

std::string RunConfig::report_path() const { return report.empty() ? path_in(out, "report.json") : report; }

std::unique_ptr<PosteriorModel> load_model(const RunConfig& c) {
  if (!c.data.empty() && !fs::exists(c.data)) throw ConfigError("data: no such file '" + c.data + "'");
  if (c.model == "lotka-volterra") return make_lotka_volterra_model(resolved_data_path(c));
  if (c.model == "tmdd") {
    if (c.data.empty()) throw ConfigError("data: the tmdd model needs a dataset (see `simulate`)");
    return std::make_unique<TmddModel>(read_dataset_csv(c.data, TmddModel::layout()));
  }
  if (fs::path(c.model).extension() == ".so") {
    // The handle stays open for the life of the process.
    void* handle = dlopen(c.model.c_str(), RTLD_NOW | RTLD_LOCAL);
    if (!handle) throw ConfigError("model: cannot load plugin: " + std::string(dlerror()));
    auto factory = reinterpret_cast<PluginFactory>(dlsym(handle, ODECHECK_PLUGIN_ENTRY));
    if (!factory) throw ConfigError("model: plugin lacks " ODECHECK_PLUGIN_ENTRY);
    std::unique_ptr<PosteriorModel> m(factory(c.data.c_str()));
    if (!m) throw ConfigError("model: plugin returned no model");
    return m;
  }
  throw ConfigError("model: unknown model '" + c.model + "' (tmdd, lotka-volterra or a plugin .so)");
}

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  if (c.model != "tmdd")
    throw ConfigError("model: no simulator for '" + c.model + "'; bundled dataset at " + bundled_lynx_hare_path());
  const Dataset data = simulate_tmdd_data(c.seed);
  std::string path = c.out;
  if (fs::path(path).extension() != ".csv") {
    fs::create_directories(path);
    path = path_in(path, "tmdd.csv");
  } else if (fs::path(path).has_parent_path()) {
    fs::create_directories(fs::path(path).parent_path());
  }
  write_dataset_csv(path, data);
  out << "wrote " << path << " (" << data.num_rows() << " rows)\n"
      << "reference solver: " << tmdd_reference_solver().to_string() << "\n";
  return kExitOk;
}

int cmd_sample(const RunConfig& c, std::ostream& out) {
  const SamplerConfig sc = c.sampler_config();
  const SolverSpec spec = c.solver_spec();
  const auto model = load_model(c);
  const SampleResult res = nuts_sample(*model, spec, sc);

  nlohmann::json meta;
  meta["model"] = c.model;
  meta["data"] = resolved_data_path(c);
  meta["seed"] = c.seed;
  meta["config"] = c.to_text();
  meta["sampler"] = sampler_diagnostics_json(res.diagnostics);
  save_draws(c.out, res, meta);
  write_text_file(path_in(c.out, "sampler.csv"), sampler_table_csv(res.diagnostics));

  char line[256];
  out << "method " << spec.to_string() << ", " << sc.chains << " chains x " << sc.draws_per_chain() << " draws\n";
  out << "chain accept_stat stepsize treedepth n_leapfrog divergent\n";
  for (std::size_t i = 0; i < res.diagnostics.chains.size(); ++i) {
    const auto& ch = res.diagnostics.chains[i];
    std::snprintf(line, sizeof line, "%5zu %11.3f %8.4f %9.2f %10.1f %9.4f\n", i + 1, ch.mean_accept_stat,
                  ch.stepsize, ch.mean_treedepth, ch.mean_leapfrog, ch.divergent_fraction);
    out << line;
  }
  out << "runtime " << fmt("%.2f", res.diagnostics.total_seconds()) << " s, rhs evaluations "
      << res.diagnostics.total_rhs_evals() << "\n";

  try {
    const ConvergenceSummary cs = convergence_summary(res.draws);
    write_text_file(path_in(c.out, "summary.csv"), convergence_table_csv(cs));
    out << "param        mean        sd    rhat  ess_bulk  ess_tail\n";
    for (const auto& p : cs.params) {
      std::snprintf(line, sizeof line, "%-8s %9.4g %9.4g %7.4f %9.1f %9.1f\n", p.name.c_str(), p.mean, p.sd, p.rhat,
                    p.ess_bulk, p.ess_tail);
      out << line;
    }
    std::snprintf(line, sizeof line, "max_rhat %.4f  min_ess_bulk %.1f  min_ess_tail %.1f\n", cs.max_rhat,
                  cs.min_ess_bulk, cs.min_ess_tail);
    out << line;
  } catch (const DegenerateChains& e) {
    out << "convergence summary skipped: " << e.what() << "\n";
  }
  return kExitOk;
}

int cmd_check(const RunConfig& c, std::ostream& out) {
  const LoadedDraws loaded = load_draws(c.draws_dir());
  const std::string recorded_model = loaded.meta.value("model", "");
  if (recorded_model != c.model)
    throw ConfigError("model: draws were sampled with '" + recorded_model + "', config says '" + c.model + "'");
  if (loaded.draws.method != c.solver)
    throw ConfigError("solver: draws were sampled with " + loaded.draws.method + ", config says " + c.solver);
  const auto model = load_model(c);
  if (model->dim() != loaded.draws.dim) throw ConfigError("model: parameter count differs from the draws");

  const MethodLadder ladder = c.method_ladder();
  const WorkflowReport report = run_reliability_check(loaded.draws, *model, ladder, c.threads);

  fs::create_directories(c.out);
  const std::string report_path = c.report_path();
  if (fs::path(report_path).has_parent_path()) fs::create_directories(fs::path(report_path).parent_path());
  write_text_file(report_path, report.to_json().dump(2) + "\n");
  std::ostringstream rungs;
  rungs << "method,mae,max_ratio,khat,r_eff,failed_draws\n";
  for (const auto& r : report.rungs)
    rungs << r.method << ',' << format_double(r.mae) << ',' << format_double(r.max_ratio) << ','
          << format_double(r.khat) << ',' << format_double(r.r_eff) << ',' << r.failed_draws << '\n';
  write_text_file(path_in(c.out, "rungs.csv"), rungs.str());

  char line[256];
  out << "M = " << report.sampling_method << "\n";
  out << "M*                       mae   max_ratio     khat   r_eff  failed\n";
  for (const auto& r : report.rungs) {
    std::snprintf(line, sizeof line, "%-18s %10.3e %11.4g %8.3f %7.3f %7zu\n", r.method.c_str(), r.mae, r.max_ratio,
                  r.khat, r.r_eff, r.failed_draws);
    out << line;
  }
  out << "verdict: " << verdict_name(report.verdict) << " (" << report.note << ")\n";
  if (report.suggested_method) out << "suggested M: " << *report.suggested_method << "\n";
  out << "workflow rhs evaluations " << report.total_rhs_evals() << "\n";
  return report.verdict == Verdict::Accept ? kExitOk : kExitResample;
}

int cmd_estimate(const RunConfig& c, std::ostream& out) {
  WorkflowReport report;
  try {
    report = WorkflowReport::from_json(nlohmann::json::parse(read_text_file(c.report_path())));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report: " + std::string(e.what()));
  }
  if (report.verdict != Verdict::Accept) {
    out << "report verdict is resample: " << report.note << "\n";
    if (report.suggested_method) out << "suggested M: " << *report.suggested_method << "\n";
    return kExitResample;
  }
  const LoadedDraws loaded = load_draws(c.draws_dir());
  if (loaded.draws.method != report.sampling_method)
    throw ConfigError("draws: sampled with " + loaded.draws.method + " but the report is for " +
                      report.sampling_method);
  if (!report.psis || report.psis->weights.size() != loaded.draws.total())
    throw ConfigError("report: weights do not match the draws");
  const auto est = corrected_estimates(report, parameter_estimands(loaded.draws));

  std::ostringstream csv;
  csv << "param,mean,q5,q50,q95,mcse\n";
  char line[256];
  out << "param        mean        q5       q50       q95      mcse\n";
  for (const auto& e : est) {
    csv << e.name << ',' << format_double(e.mean) << ',' << format_double(e.q05) << ',' << format_double(e.q50)
        << ',' << format_double(e.q95) << ',' << format_double(e.mcse) << '\n';
    std::snprintf(line, sizeof line, "%-8s %9.4g %9.4g %9.4g %9.4g %9.2g\n", e.name.c_str(), e.mean, e.q05, e.q50,
                  e.q95, e.mcse);
    out << line;
  }
  fs::create_directories(c.out);
  write_text_file(path_in(c.out, "estimates.csv"), csv.str());
  return kExitOk;
}

int cmd_print_config(const RunConfig& c, std::ostream& out) {
  out << c.to_text();
  return kExitOk;
}

int run_command(std::string_view name, const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    if (name == "simulate") return cmd_simulate(config, out);
    if (name == "sample") return cmd_sample(config, out);
    if (name == "check") return cmd_check(config, out);
    if (name == "estimate") return cmd_estimate(config, out);
    if (name == "print-config") return cmd_print_config(config, out);
    err << "error: unknown command '" << name << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LadderTooShort& e) {
    err << "error: LadderTooShort: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace odecheck
