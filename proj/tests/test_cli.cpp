#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <sstream>

#include "odecheck/cli.hpp"
#include "odecheck/errors.hpp"
#include "support.hpp"

using namespace odecheck;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run odecheck_cli(const std::string& args) {
  const std::string cmd = std::string(ODECHECK_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) { return read_text_file(p.string()); }

nlohmann::json without_timing(nlohmann::json j) {
  if (j.contains("rungs"))
    for (auto& r : j.at("rungs")) r.erase("seconds");
  if (j.contains("sampler")) {
    auto& s = j.at("sampler");
    s.erase("seconds");
    for (auto& c : s.at("chains")) c.erase("seconds");
  }
  j.erase("seconds");
  j.erase("sampler_seconds");
  // The echoed config differs only in the output directory.
  j.erase("config");
  return j;
}

}  // namespace

TEST_CASE("config defaults and text round trip") {
  RunConfig c;
  CHECK(c.chains == 4);
  CHECK(c.iters == 4000);
  CHECK(c.effective_warmup() == 2000);
  CHECK(c.stepsize == 0.1);
  CHECK(c.adapt_delta == 0.8);
  CHECK(c.max_depth == 10);
  CHECK(RunConfig::parse_text(c.to_text()) == c);

  c.set("model", "tmdd");
  c.set("chains", "3");
  c.set("warmup", "150");
  c.set("solver", "rk4:2");
  c.set("ladder", "rk4:4, rk4:8");
  c.set("seed", "18446744073709551615");
  c.set("delta_khat", "0.01");
  const auto back = RunConfig::parse_text(c.to_text());
  CHECK(back == c);
  CHECK(back.ladder == "rk4:4,rk4:8");
  CHECK(back.seed == 18446744073709551615ull);
  for (const auto& key : RunConfig::keys()) CHECK(back.get(key) == c.get(key));
}

TEST_CASE("config parsing errors name the key") {
  RunConfig c;
  auto message = [&](std::string_view key, std::string_view value) {
    try {
      c.set(key, value);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("chians", "4").find("chians") != std::string::npos);
  CHECK(message("chains", "four").find("chains") != std::string::npos);
  CHECK(message("solver", "euler:3").find("solver") != std::string::npos);
  CHECK(message("ladder", "rk4:8,rk4:4").find("ladder") != std::string::npos);
  CHECK(message("stepsize", "0.1x").find("stepsize") != std::string::npos);
  CHECK_THROWS_AS(RunConfig::parse_text("chains = 2\nnonsense = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_text("chains 2\n"), ConfigError);
  const auto parsed = RunConfig::parse_text("# comment\n\nchains = 2  # trailing\n  seed=7\n");
  CHECK(parsed.chains == 2);
  CHECK(parsed.seed == 7);
}

TEST_CASE("sampler config validation") {
  RunConfig c;
  c.iters = 100;
  c.warmup = 100;
  CHECK_THROWS_AS(c.sampler_config(), ConfigError);
  c.warmup = -1;
  CHECK(c.sampler_config().warmup == 50);
  c.adapt_delta = 1.0;
  CHECK_THROWS_AS(c.sampler_config(), ConfigError);
}

TEST_CASE("print-config output re-parses") {
  const auto r = odecheck_cli("print-config --chains 3 --solver rk4:2 --seed 9 --ladder rk4:4,rk4:8");
  REQUIRE(r.code == 0);
  RunConfig expected;
  expected.set("chains", "3");
  expected.set("solver", "rk4:2");
  expected.set("seed", "9");
  expected.set("ladder", "rk4:4,rk4:8");
  CHECK(RunConfig::parse_text(r.output) == expected);

  // A config file with flag overrides.
  const auto dir = testing::scratch_dir("cli_config");
  write_text_file((dir / "run.cfg").string(), "chains = 2\nseed = 5\n");
  const auto f = odecheck_cli("print-config --config " + (dir / "run.cfg").string() + " --seed 6");
  REQUIRE(f.code == 0);
  const auto cfg = RunConfig::parse_text(f.output);
  CHECK(cfg.chains == 2);
  CHECK(cfg.seed == 6);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(odecheck_cli("").code == 2);
  CHECK(odecheck_cli("frobnicate").code == 2);
  CHECK(odecheck_cli("sample --no-such-flag 1").code == 2);
  const auto bad = odecheck_cli("sample --chains zero");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("chains") != std::string::npos);
  const auto missing = odecheck_cli("sample --model tmdd --data /nonexistent/tmdd.csv");
  CHECK(missing.code == 2);
  CHECK(missing.output.find("data") != std::string::npos);
  const auto no_data = odecheck_cli("sample --model tmdd");
  CHECK(no_data.code == 2);
  CHECK(no_data.output.find("data") != std::string::npos);
  CHECK(odecheck_cli("print-config --help").code == 0);
}

TEST_CASE("simulate writes the tmdd dataset deterministically") {
  const auto dir = testing::scratch_dir("cli_simulate");
  const auto a = odecheck_cli("simulate --model tmdd --seed 1 --out " + (dir / "a").string());
  const auto b = odecheck_cli("simulate --model tmdd --seed 1 --out " + (dir / "b.csv").string());
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.output.find("rk45:1e-12") != std::string::npos);
  const std::string text = slurp(dir / "a" / "tmdd.csv");
  CHECK(text == slurp(dir / "b.csv"));
  std::istringstream lines(text);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "time,complex");
  int rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 15);
  const auto c = odecheck_cli("simulate --model tmdd --seed 2 --out " + (dir / "c.csv").string());
  REQUIRE(c.code == 0);
  CHECK(slurp(dir / "c.csv") != text);

  const auto lv = odecheck_cli("simulate --model lotka-volterra --out " + dir.string());
  CHECK(lv.code == 2);
  CHECK(lv.output.find("no simulator") != std::string::npos);
  CHECK(lv.output.find("bundled dataset at") != std::string::npos);
}

TEST_CASE("smoke sample run") {
  const auto dir = testing::scratch_dir("cli_smoke");
  const auto start = std::chrono::steady_clock::now();
  const auto r = odecheck_cli("sample --chains 1 --iters 200 --out " + dir.string());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(r.code == 0);
  CHECK(seconds < 60.0);
  CHECK(std::filesystem::exists(dir / "draws_chain1.csv"));
  CHECK(std::filesystem::exists(dir / "sampler.csv"));
  CHECK(slurp(dir / "draws_chain1.csv")
            .rfind("chain,iter,psi1,psi2,psi3,psi4,sigma,y0_1,y0_2,lp__,accept_stat,stepsize,treedepth,n_leapfrog,"
                   "divergent\n",
                   0) == 0);
}

TEST_CASE("full pipeline is reproducible and gated by exit codes") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  auto pipeline = [&](const std::string& name) {
    const std::string out = (dir / name).string();
    const std::string common = " --chains 2 --iters 600 --solver rk4:2 --seed 3 --out " + out;
    CHECK(odecheck_cli("sample" + common).code == 0);
    CHECK(odecheck_cli("check" + common).code == 0);
    CHECK(odecheck_cli("estimate" + common).code == 0);
    return out;
  };
  const auto a = pipeline("a"), b = pipeline("b");
  for (const char* f : {"draws_chain1.csv", "draws_chain2.csv", "internal_chain1.csv", "summary.csv", "rungs.csv",
                        "estimates.csv"}) {
    CAPTURE(f);
    CHECK(slurp(std::filesystem::path(a) / f) == slurp(std::filesystem::path(b) / f));
  }
  const auto ra = nlohmann::json::parse(slurp(std::filesystem::path(a) / "report.json"));
  const auto rb = nlohmann::json::parse(slurp(std::filesystem::path(b) / "report.json"));
  CHECK(without_timing(ra) == without_timing(rb));
  CHECK(ra.at("verdict") == "accept");
  const auto ja = nlohmann::json::parse(slurp(std::filesystem::path(a) / "run.json"));
  const auto jb = nlohmann::json::parse(slurp(std::filesystem::path(b) / "run.json"));
  CHECK(without_timing(ja) == without_timing(jb));
  CHECK(slurp(std::filesystem::path(a) / "rungs.csv").rfind("method,mae,max_ratio,khat,r_eff", 0) == 0);
  CHECK(slurp(std::filesystem::path(a) / "estimates.csv").rfind("param,mean,q5,q50,q95,mcse\n", 0) == 0);

  // A ladder of one rung, a mismatched M, and an equal-spec rung.
  const std::string common = " --chains 2 --iters 600 --seed 3 --out " + a;
  const auto short_ladder = odecheck_cli("check --solver rk4:2 --ladder rk4:4" + common);
  CHECK(short_ladder.code == 2);
  CHECK(short_ladder.output.find("LadderTooShort") != std::string::npos);
  CHECK(odecheck_cli("check --solver rk4:3" + common).code == 2);
  CHECK(odecheck_cli("check --model tmdd --data " + (dir / "none.csv").string() + common).code == 2);
  REQUIRE(odecheck_cli("check --solver rk4:2 --ladder rk4:2,rk4:4,rk4:8,rk4:16" + common).code == 0);
  std::istringstream rows(slurp(std::filesystem::path(a) / "rungs.csv"));
  std::string header, first;
  std::getline(rows, header);
  std::getline(rows, first);
  CHECK(first.rfind("rk4:2,0,1,", 0) == 0);
}

TEST_CASE("estimate refuses a resample report") {
  const auto dir = testing::scratch_dir("cli_resample");
  const std::string common = " --chains 2 --iters 1000 --solver midpoint:1 --seed 1 --out " + dir.string();
  REQUIRE(odecheck_cli("sample" + common).code == 0);
  const auto check = odecheck_cli("check" + common);
  CHECK(check.code == 10);
  CHECK(check.output.find("suggested M: midpoint:2") != std::string::npos);
  const auto est = odecheck_cli("estimate" + common);
  CHECK(est.code == 10);
  CHECK_FALSE(std::filesystem::exists(dir / "estimates.csv"));
}

TEST_CASE("uniform-weight estimates match the draw files") {
  // M* equal to M gives equal weights; estimates must equal plain summaries.
  const auto dir = testing::scratch_dir("cli_uniform");
  const std::string common = " --chains 2 --iters 600 --solver rk4:2 --seed 4 --out " + dir.string();
  REQUIRE(odecheck_cli("sample" + common).code == 0);
  REQUIRE(odecheck_cli("check --ladder rk4:2,rk4:2:1" + common).code != 0);  // not a valid ladder
  // Hand-build an accepted uniform report.
  const auto loaded = load_draws(dir.string());
  WorkflowReport report;
  report.sampling_method = loaded.draws.method;
  report.verdict = Verdict::Accept;
  report.converged_rung = 1;
  PsisResult psis;
  psis.weights.assign(loaded.draws.total(), 1.0 / static_cast<double>(loaded.draws.total()));
  psis.khat = -std::numeric_limits<double>::infinity();
  report.psis = psis;
  report.rungs.resize(2);
  write_text_file((dir / "report.json").string(), report.to_json().dump(2));
  REQUIRE(odecheck_cli("estimate" + common).code == 0);

  std::istringstream csv(slurp(dir / "estimates.csv"));
  std::string line;
  std::getline(csv, line);
  const auto by_param = loaded.draws.constrained_by_param();
  for (std::size_t p = 0; p < by_param.size(); ++p) {
    REQUIRE(std::getline(csv, line));
    const auto cells = split_csv_line(line);
    CHECK(cells[0] == loaded.draws.param_names[p]);
    double sum = 0.0;
    for (const auto& chain : by_param[p])
      for (double v : chain) sum += v;
    CHECK(parse_double(cells[1]) == sum / static_cast<double>(loaded.draws.total()));
    const auto s = summarize_param(cells[0], by_param[p]);
    CHECK(parse_double(cells[5]) == doctest::Approx(s.mcse_mean).epsilon(1e-12));
  }
}

TEST_CASE("plugin models run through the pipeline") {
  const auto dir = testing::scratch_dir("cli_plugin");
  const std::string common = std::string(" --model ") + ODECHECK_PLUGIN_PATH + " --data " + ODECHECK_PLUGIN_DATA +
                             " --chains 2 --iters 600 --solver rk4:2 --seed 2 --out " + dir.string();
  const auto s = odecheck_cli("sample" + common);
  REQUIRE(s.code == 0);
  const auto c = odecheck_cli("check" + common);
  CHECK((c.code == 0 || c.code == 10));
  CHECK(std::filesystem::exists(dir / "rungs.csv"));

  RunConfig config;
  config.model = ODECHECK_PLUGIN_PATH;
  config.data = ODECHECK_PLUGIN_DATA;
  const auto model = load_model(config);
  CHECK(model->name() == "decay");
  config.data.clear();
  CHECK_THROWS(load_model(config));
  config.model = "/nonexistent/libnothing.so";
  CHECK_THROWS_AS(load_model(config), ConfigError);
}

TEST_CASE("thread count comes from the environment") {
  CHECK(resolve_threads(3) == 3);
  setenv("ODECHECK_THREADS", "2", 1);
  CHECK(resolve_threads(0) == 2);
  unsetenv("ODECHECK_THREADS");
  CHECK(resolve_threads(0) >= 1);
}
