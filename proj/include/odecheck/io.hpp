#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "odecheck/diagnostics.hpp"
#include "odecheck/sampler.hpp"

namespace odecheck {

/// Shortest text that parses back to the same double.
std::string format_double(double x);
/// Accepts anything from_chars does, including inf and nan. Throws ConfigError.
double parse_double(std::string_view s);
/// Splits on commas and trims blanks around each cell.
std::vector<std::string> split_csv_line(std::string_view line);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

/// Writes draws_chainN.csv (constrained, human-facing), internal_chainN.csv
/// (unconstrained draws, log density and stored solutions at full precision)
/// and run.json with `meta` merged in.
void save_draws(const std::string& dir, const SampleResult& result, const nlohmann::json& meta);

struct LoadedDraws {
  Draws draws;
  nlohmann::json meta;
};
/// Inverse of save_draws for the parts needed downstream. Throws ConfigError.
LoadedDraws load_draws(const std::string& dir);

std::string convergence_table_csv(const ConvergenceSummary& summary);
std::string sampler_table_csv(const SamplerDiagnostics& diagnostics);

}  // namespace odecheck
