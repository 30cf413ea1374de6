#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <sys/wait.h>

#include <fmt/format.h>
#include <json.hpp>

#include "carbon/digest.hpp"
#include "carbon/errors.hpp"
#include "carbon/pipeline.hpp"
#include "support.hpp"

using namespace carbon;
using testing::read_text;
using testing::TempDir;
using testing::write_text;

namespace {

using Table = std::vector<std::vector<std::string>>;

// Plain comma split; the files compared here never quote fields.
Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  Table rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(fields);
  }
  return rows;
}

void check_tables_close(const fs::path& actual, const fs::path& expected) {
  const auto a = read_csv(actual);
  const auto e = read_csv(expected);
  REQUIRE(a.size() == e.size());
  for (std::size_t r = 0; r < a.size(); ++r) {
    REQUIRE(a[r].size() == e[r].size());
    for (std::size_t c = 0; c < a[r].size(); ++c) {
      char* end_a = nullptr;
      char* end_e = nullptr;
      const double x = std::strtod(a[r][c].c_str(), &end_a);
      const double y = std::strtod(e[r][c].c_str(), &end_e);
      const bool numeric = !e[r][c].empty() && *end_e == '\0' && *end_a == '\0';
      if (numeric) {
        INFO(expected.filename().string(), " row ", r, " col ", c);
        CHECK(x == doctest::Approx(y).epsilon(1e-8).scale(1e-10));
      } else {
        CHECK(a[r][c] == e[r][c]);
      }
    }
  }
}

RunConfig small_synthetic_config(const fs::path& out) {
  const auto text = fmt::format(R"({{"seed": 17, "output_dir": "{}",
    "synthetic": {{"assets": 40, "months": 48}},
    "betas": {{"estimate_variances": false}}}})",
                                out.generic_string());
  return parse_run_config(text, out.parent_path());
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CARBON_MV_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("configuration parsing") {
  SUBCASE("unknown keys are rejected at any level") {
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"optimise": {}})", "."), doctest::Contains("optimise"),
                         ValidationError);
    CHECK_THROWS_WITH_AS(parse_run_config(R"({"factor": {"moed": "carima"}})", "."), doctest::Contains("moed"),
                         ValidationError);
  }
  SUBCASE("wrong types and values") {
    CHECK_THROWS_AS(parse_run_config(R"({"seed": "abc"})", "."), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"factor": {"rebalance": "weekly"}})", "."), ValidationError);
    CHECK_THROWS_AS(parse_run_config(R"({"betas": {"prior_mean": [0, 1]}})", "."), ValidationError);
    CHECK_THROWS_AS(parse_run_config("{not json", "."), ValidationError);
  }
  SUBCASE("settings land in the right fields") {
    const auto c = parse_run_config(R"({"seed": 5, "factor": {"mode": "intensity", "rebalance": "annual"},
      "optimize": {"beta_caps": [null, -0.3], "waci_caps": [80], "exclusion_rule": "literal",
                   "idio_var": "from-ols", "factor_vols": [0.05, 0.04]}})",
                                    "/base");
    CHECK(c.seed == 5);
    CHECK(c.factor.score.mode == ScoreMode::single_metric);
    CHECK(c.factor.score.metric == "carbon_intensity");
    CHECK(c.factor.rebalance == Rebalance::annual);
    CHECK(c.optimize.beta_caps.size() == 2);
    CHECK_FALSE(c.optimize.beta_caps[0].has_value());
    CHECK(*c.optimize.beta_caps[1] == -0.3);
    CHECK(c.optimize.exclusion_rule == ExclusionRule::literal);
    CHECK(c.optimize.idio == IdioSource::ols);
    CHECK(c.optimize.factor_vols->first == 0.05);
    CHECK(c.resolve("x.csv") == fs::path("/base/x.csv"));
  }
  SUBCASE("the resolved configuration parses back to itself") {
    const auto c = parse_run_config(R"({"seed": 9, "synthetic": {"assets": 60}})", "/base");
    const auto once = resolved_config_json(c);
    const auto twice = resolved_config_json(parse_run_config(once, "/base"));
    CHECK(once == twice);
  }
}

TEST_CASE("scenario list") {
  const auto s = pipeline_scenarios(OptimizeConfig{});
  REQUIRE(s.size() == 13);
  CHECK(s[0].label == "gmv");
  CHECK_FALSE(s[0].constraints.ci_exclusion.has_value());
  CHECK(s[1].label == "beta_none");
  CHECK(s[2].label == "beta_-0.1");
  CHECK(s[5].label == "waci_500");
  CHECK(s[9].label == "beta_-0.2_waci_500");
  CHECK(s[9].overlap_with == "waci_500");
  CHECK(*s[12].constraints.waci_cap == 50.0);
  CHECK(*s[12].constraints.beta_cap == -0.2);
}

TEST_CASE("a run without inputs fails validation before writing anything") {
  TempDir dir;
  const auto c = parse_run_config(fmt::format(R"({{"output_dir": "{}"}})", (dir / "out").generic_string()), dir.path());
  CHECK_THROWS_WITH_AS(run_pipeline(c), doctest::Contains("returns"), ValidationError);
  CHECK_FALSE(fs::exists(dir / "out"));

  const auto missing = parse_run_config(
      R"({"inputs": {"returns": "nope.csv", "attributes": "nope.csv", "factors": "nope.csv"}})", dir.path());
  CHECK_THROWS_AS(run_pipeline(missing), ValidationError);
}

TEST_CASE("the demo configuration reproduces the golden outputs") {
  TempDir dir;
  auto c = load_run_config(fs::path(CARBON_SOURCE_DIR) / "configs" / "demo.json");
  c.output_dir = (dir / "out").string();
  const auto result = run_pipeline(c);
  CHECK(result.manifest.complete);
  const fs::path golden = fs::path(CARBON_SOURCE_DIR) / "tests" / "golden" / "demo";
  check_tables_close(result.output_dir / "portfolios" / "summary.csv", golden / "summary.csv");
  check_tables_close(result.output_dir / "bmg_factor.csv", golden / "bmg_factor.csv");
  check_tables_close(result.output_dir / "beta_recovery.csv", golden / "beta_recovery.csv");
  check_tables_close(result.output_dir / "risk" / "regional_rcr.csv", golden / "regional_rcr.csv");
}

TEST_CASE("runs are deterministic and their outputs reload") {
  TempDir dir;
  const auto a = run_pipeline(small_synthetic_config(dir / "a"));
  const auto b = run_pipeline(small_synthetic_config(dir / "b"));
  CHECK(a.manifest.outputs == b.manifest.outputs);
  CHECK(a.manifest.config_digest != "");
  for (const auto& [name, digest] : a.manifest.outputs) {
    CHECK(sha256_file(a.output_dir / name) == digest);
  }
  REQUIRE(a.manifest.stages.size() == 5);
  for (const auto& s : a.manifest.stages) CHECK(s.status == "ok");

  const auto manifest = nlohmann::json::parse(read_text(a.output_dir / "manifest.json"));
  CHECK(manifest["complete"] == true);
  CHECK(manifest["seed"] == 17);
  CHECK(manifest["outputs"].size() == a.manifest.outputs.size());

  const auto betas = load_betas(a.output_dir / "betas.csv");
  const auto panel = load_returns(a.output_dir / "data" / "returns.csv");
  CHECK(betas.size() > panel.num_assets());
  const auto summary = read_csv(a.output_dir / "portfolios" / "summary.csv");
  CHECK(summary.size() == 14);
  const auto weights = read_csv(a.output_dir / "portfolios" / "portfolio_gmv.csv");
  double total = 0.0;
  for (std::size_t r = 1; r < weights.size(); ++r) total += std::stod(weights[r][1]);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("beta recovery matches a direct recomputation") {
  TempDir dir;
  const auto run = run_pipeline(small_synthetic_config(dir / "out"));
  std::map<std::string, std::vector<double>> truth;
  const auto t = read_csv(run.output_dir / "data" / "truth_betas.csv");
  for (std::size_t r = 1; r < t.size(); ++r) {
    truth[t[r][0] + "|" + t[r][1]] = {std::stod(t[r][2]), std::stod(t[r][3]), std::stod(t[r][4])};
  }
  const auto e = read_csv(run.output_dir / "betas.csv");
  double sse[3] = {0, 0, 0};
  std::size_t count = 0;
  for (std::size_t r = 1; r < e.size(); ++r) {
    const auto it = truth.find(e[r][0] + "|" + e[r][1]);
    if (it == truth.end()) continue;
    for (int k = 0; k < 3; ++k) sse[k] += std::pow(std::stod(e[r][2 + k]) - it->second[k], 2);
    ++count;
  }
  std::map<std::string, double> reported;
  for (const auto& row : read_csv(run.output_dir / "beta_recovery.csv")) {
    if (row[0] != "metric") reported[row[0]] = std::stod(row[1]);
  }
  CHECK(reported["count"] == static_cast<double>(count));
  CHECK(reported["rmse_alpha"] == doctest::Approx(std::sqrt(sse[0] / count)).epsilon(1e-12));
  CHECK(reported["rmse_beta_mkt"] == doctest::Approx(std::sqrt(sse[1] / count)).epsilon(1e-12));
  CHECK(reported["rmse_beta_bmg"] == doctest::Approx(std::sqrt(sse[2] / count)).epsilon(1e-12));
}

TEST_CASE("input digests follow the bytes of the inputs") {
  TempDir dir;
  SyntheticWorldSpec spec;
  spec.assets = 30;
  spec.months = 40;
  write_synthetic(generate_synthetic(spec, 4), dir / "data");
  const auto text = fmt::format(
      R"({{"inputs": {{"returns": "data/returns.csv", "attributes": "data/attributes.csv",
                      "factors": "data/factors.csv"}},
          "output_dir": "{}", "betas": {{"estimate_variances": false}}}})",
      (dir / "out").generic_string());
  const auto first = run_pipeline(parse_run_config(text, dir.path())).manifest;
  const auto again = run_pipeline(parse_run_config(text, dir.path())).manifest;
  CHECK(first.inputs == again.inputs);
  CHECK(first.inputs.size() == 3);

  // change one byte of one intensity value
  auto attrs = read_text(dir / "data" / "attributes.csv");
  const auto line_end = attrs.find('\n', attrs.find('\n') + 1);
  const auto pos = attrs.find_last_of("123456789", line_end);
  attrs[pos] = attrs[pos] == '1' ? '2' : '1';
  write_text(dir / "data" / "attributes.csv", attrs);
  const auto changed = run_pipeline(parse_run_config(text, dir.path())).manifest;
  for (const auto& [path, digest] : first.inputs) {
    if (path.find("attributes") != std::string::npos) {
      CHECK(changed.inputs.at(path) != digest);
    } else {
      CHECK(changed.inputs.at(path) == digest);
    }
  }
}

TEST_CASE("a failing stage leaves an incomplete manifest") {
  TempDir dir;
  auto c = small_synthetic_config(dir / "out");
  c.optimize.waci_caps = {0.0};
  try {
    run_pipeline(c);
    FAIL("expected the optimize stage to fail");
  } catch (const Error& e) {
    CHECK(e.code() == ExitCode::infeasible);
    CHECK(std::string(e.what()).find("optimize") != std::string::npos);
  }
  const auto manifest = nlohmann::json::parse(read_text(dir / "out" / "manifest.json"));
  CHECK(manifest["complete"] == false);
  const auto& last = manifest["stages"].back();
  CHECK(last["name"] == "optimize");
  CHECK(last["status"] == "failed");
  CHECK(fs::exists(dir / "out" / "portfolios" / "summary.csv"));
}

TEST_CASE("command-line exit codes") {
  TempDir dir;
  CHECK(run_cli("--version") == 0);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("run --config " + (dir / "missing.json").string()) == 2);
  CHECK(run_cli("build-factor --returns " + (dir / "none.csv").string() + " --attributes x --factors y --out z") == 2);

  CHECK(run_cli("simulate --seed 3 --assets 40 --months 48 --out-dir " + (dir / "sim").string()) == 0);
  const auto sim = dir / "sim";
  CHECK(run_cli(fmt::format("build-factor --returns {0}/returns.csv --attributes {0}/attributes.csv "
                            "--factors {0}/factors.csv --out {0}/bmg.csv",
                            sim.string())) == 0);
  CHECK(run_cli(fmt::format("estimate-betas --factors {0}/bmg.csv --returns {0}/returns.csv "
                            "--variances 1e-6,1e-3,1e-3,0.005 --out {0}/betas.csv",
                            sim.string())) == 0);
  CHECK(run_cli(fmt::format("optimize --betas {0}/betas.csv --attributes {0}/attributes.csv "
                            "--factors {0}/bmg.csv --long-only --waci-cap 0 --out {0}/w.csv",
                            sim.string())) == 4);
  CHECK(run_cli(fmt::format("optimize --betas {0}/betas.csv --attributes {0}/attributes.csv "
                            "--factors {0}/bmg.csv --beta-cap -0.1 --out {0}/w.csv",
                            sim.string())) == 0);
  CHECK(fs::exists(sim / "w.csv"));
}
