#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "carbon/stages.hpp"

namespace carbon {

inline constexpr std::string_view kVersion = "1.0.0";

ScoreMode parse_score_mode(std::string_view text, std::string& metric);  // carima|intensity|custom-metric
Rebalance parse_rebalance(std::string_view text);                        // static|annual
WeightRefresh parse_weight_refresh(std::string_view text);               // monthly|frozen
IdioSource parse_idio_source(std::string_view text);                     // from-filter|from-ols
ExclusionRule parse_exclusion_rule(std::string_view text);               // high-intensity|literal

struct OptimizeConfig {
  IdioSource idio = IdioSource::filter;
  std::optional<std::pair<double, double>> factor_vols;  // default: sample vols of the factor file
  bool long_only = true;
  std::optional<double> ci_exclusion = 4000.0;  // applied to the capped scenarios only
  ExclusionRule exclusion_rule = ExclusionRule::high_intensity;
  std::vector<std::optional<double>> beta_caps{std::nullopt, -0.1, -0.2, -0.4};
  std::vector<double> waci_caps{500.0, 250.0, 100.0, 50.0};
  std::optional<double> combined_beta_cap = -0.2;
};

/// gmv (no carbon constraint), beta_<cap> for every carbon-beta cap,
/// waci_<cap> for every WACI cap, and beta_<b>_waci_<cap> combining the
/// combined beta cap with each WACI cap; the last group reports its overlap
/// with the matching WACI-only portfolio.
std::vector<Scenario> pipeline_scenarios(const OptimizeConfig& config);

struct RunConfig {
  fs::path base_dir;  // relative paths resolve against it
  std::uint64_t seed = 0;
  std::string output_dir = "output";
  std::string returns, attributes, factors;  // user inputs; unused with a synthetic block
  std::optional<SyntheticWorldSpec> synthetic;

  FactorBuildConfig factor;
  AlignOptions align;
  PanelEstimationOptions betas;
  bool betas_use_input_factor = false;  // estimate against the input r_bmg instead of the built one
  std::size_t risk_min_obs = 3;
  OptimizeConfig optimize;

  fs::path resolve(const std::string& path) const;
  /// Throws ValidationError naming the first problem found.
  void validate() const;
};

/// Parses the JSON run configuration. Unknown keys are rejected.
RunConfig parse_run_config(std::string_view text, const fs::path& base_dir);
RunConfig load_run_config(const fs::path& path);

/// Every setting after defaults, as pretty-printed JSON.
std::string resolved_config_json(const RunConfig& config);

struct StageRecord {
  std::string name;
  std::string status;  // ok, failed, skipped
  double seconds = 0.0;
  std::string error;
};

struct RunManifest {
  std::string version{kVersion};
  std::uint64_t seed = 0;
  std::string config_digest;
  bool complete = false;
  std::vector<StageRecord> stages;
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::map<std::string, std::string> outputs;
};

std::string manifest_json(const RunManifest& manifest);

struct RunResult {
  fs::path output_dir;
  RunManifest manifest;
};

/// simulate (synthetic configs only), build-factor, estimate-betas,
/// report-risk, optimize. Writes resolved_config.json and manifest.json into
/// the output directory. A failing stage halts the run; the manifest is still
/// written, marked incomplete, and the error is rethrown with the stage name.
RunResult run_pipeline(const RunConfig& config);

}  // namespace carbon
