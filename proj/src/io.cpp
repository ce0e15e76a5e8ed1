#include "odecheck/io.hpp"

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "odecheck/errors.hpp"

namespace odecheck {

namespace fs = std::filesystem;

std::string format_double(double x) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

double parse_double(std::string_view s) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("malformed number '" + std::string(s) + "'");
  return x;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    auto cell = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.emplace_back(b == std::string_view::npos ? std::string_view() : cell.substr(b, e - b + 1));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

std::string chain_file(const std::string& dir, const char* stem, std::size_t chain) {
  return (fs::path(dir) / (std::string(stem) + std::to_string(chain + 1) + ".csv")).string();
}

}  // namespace

void save_draws(const std::string& dir, const SampleResult& result, const nlohmann::json& meta) {
  fs::create_directories(dir);
  const Draws& d = result.draws;
  for (std::size_t c = 0; c < d.num_chains(); ++c) {
    const ChainDraws& ch = d.chains[c];
    std::ostringstream pub;
    pub << "chain,iter";
    for (const auto& n : d.param_names) pub << ',' << n;
    pub << ",lp__,accept_stat,stepsize,treedepth,n_leapfrog,divergent\n";
    std::ostringstream internal;
    internal << "iter";
    for (const auto& n : d.param_names) internal << ",eta." << n;
    internal << ",lp__";
    for (std::size_t k = 0; k < d.solution_size; ++k) internal << ",y." << k;
    internal << '\n';

    for (std::size_t s = 0; s < d.draws_per_chain(); ++s) {
      const auto eta = d.eta(c, s);
      const std::vector<double> theta = inverse_transform(eta).theta;
      pub << c + 1 << ',' << s + 1;
      for (double v : theta) pub << ',' << format_double(v);
      pub << ',' << format_double(ch.log_density[s]) << ',' << format_double(ch.accept_stat[s]) << ','
          << format_double(ch.stepsize[s]) << ',' << ch.treedepth[s] << ',' << ch.n_leapfrog[s] << ','
          << int(ch.divergent[s]) << '\n';

      internal << s + 1;
      for (double v : eta) internal << ',' << format_double(v);
      internal << ',' << format_double(ch.log_density[s]);
      for (double v : d.solution(c, s)) internal << ',' << format_double(v);
      internal << '\n';
    }
    write_text_file(chain_file(dir, "draws_chain", c), pub.str());
    write_text_file(chain_file(dir, "internal_chain", c), internal.str());
  }

  nlohmann::json run = meta;
  run["method"] = d.method;
  run["param_names"] = d.param_names;
  run["chains"] = d.num_chains();
  run["draws_per_chain"] = d.draws_per_chain();
  run["solution_size"] = d.solution_size;
  write_text_file((fs::path(dir) / "run.json").string(), run.dump(2) + "\n");
}

LoadedDraws load_draws(const std::string& dir) {
  LoadedDraws out;
  const std::string run_path = (fs::path(dir) / "run.json").string();
  try {
    out.meta = nlohmann::json::parse(read_text_file(run_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed '" + run_path + "': " + e.what());
  }
  Draws& d = out.draws;
  std::size_t chains = 0, per_chain = 0;
  try {
    d.method = out.meta.at("method").get<std::string>();
    d.param_names = out.meta.at("param_names").get<std::vector<std::string>>();
    chains = out.meta.at("chains").get<std::size_t>();
    per_chain = out.meta.at("draws_per_chain").get<std::size_t>();
    d.solution_size = out.meta.at("solution_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + run_path + "' lacks draw metadata: " + e.what());
  }
  d.dim = d.param_names.size();
  const std::size_t width = 1 + d.dim + 1 + d.solution_size;

  for (std::size_t c = 0; c < chains; ++c) {
    const std::string path = chain_file(dir, "internal_chain", c);
    std::istringstream in(read_text_file(path));
    std::string line;
    std::getline(in, line);
    if (split_csv_line(line).size() != width) throw ConfigError("'" + path + "' header does not match run.json");
    ChainDraws ch;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != width) throw ConfigError("'" + path + "' has a short row");
      for (std::size_t i = 1; i <= d.dim; ++i) ch.eta.push_back(parse_double(cells[i]));
      ch.log_density.push_back(parse_double(cells[d.dim + 1]));
      for (std::size_t i = d.dim + 2; i < width; ++i) ch.solutions.push_back(parse_double(cells[i]));
    }
    if (ch.log_density.size() != per_chain)
      throw ConfigError("'" + path + "' has " + std::to_string(ch.log_density.size()) + " draws, expected " +
                        std::to_string(per_chain));
    const std::size_t n = ch.log_density.size();
    ch.accept_stat.assign(n, 0.0);
    ch.stepsize.assign(n, 0.0);
    ch.treedepth.assign(n, 0);
    ch.n_leapfrog.assign(n, 0);
    ch.divergent.assign(n, 0);
    d.chains.push_back(std::move(ch));
  }
  return out;
}

std::string convergence_table_csv(const ConvergenceSummary& s) {
  std::ostringstream out;
  out << "param,mean,sd,rhat,ess_bulk,ess_tail,mcse_mean\n";
  for (const auto& p : s.params)
    out << p.name << ',' << format_double(p.mean) << ',' << format_double(p.sd) << ',' << format_double(p.rhat)
        << ',' << format_double(p.ess_bulk) << ',' << format_double(p.ess_tail) << ','
        << format_double(p.mcse_mean) << '\n';
  return out.str();
}

std::string sampler_table_csv(const SamplerDiagnostics& diag) {
  std::ostringstream out;
  out << "chain,accept_stat,stepsize,treedepth,n_leapfrog,divergent,rhs_evals\n";
  for (std::size_t c = 0; c < diag.chains.size(); ++c) {
    const auto& ch = diag.chains[c];
    out << c + 1 << ',' << format_double(ch.mean_accept_stat) << ',' << format_double(ch.stepsize) << ','
        << format_double(ch.mean_treedepth) << ',' << format_double(ch.mean_leapfrog) << ','
        << format_double(ch.divergent_fraction) << ',' << ch.rhs_evals << '\n';
  }
  return out.str();
}

}  // namespace odecheck
