#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "carbon/beta_estimator.hpp"
#include "carbon/core_data.hpp"
#include "carbon/factor_builder.hpp"
#include "carbon/mv_optimizer.hpp"
#include "carbon/synthetic.hpp"

namespace carbon {

namespace fs = std::filesystem;

/// Files a stage read and wrote, for the run manifest.
struct StageFiles {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
};

StageFiles simulate_stage(const SyntheticWorldSpec& spec, std::uint64_t seed, const fs::path& out_dir);

struct BuildFactorOptions {
  fs::path returns;
  fs::path attributes;
  fs::path factors;  // needs r_mkt; an r_bmg column is ignored
  fs::path out;      // date,r_mkt,r_bmg over the aligned months
  FactorBuildConfig config;
  AlignOptions align;
};

StageFiles build_factor_stage(const BuildFactorOptions& options);

struct EstimateBetasOptions {
  fs::path factors;  // date,r_mkt,r_bmg
  fs::path returns;
  fs::path out;
  std::optional<fs::path> params_out;  // default: params_path_for(out)
  PanelEstimationOptions estimation;
  AlignOptions align;
};

/// Writes the filtered path of every asset (date-major, assets sorted) and a
/// per-asset sidecar with the variances, log-likelihood and OLS residual
/// variance. The loglik column of the path file is cumulative up to the row's
/// date.
StageFiles estimate_betas_stage(const EstimateBetasOptions& options);

/// Sidecar next to a betas file: "betas.csv" -> "betas_params.csv".
fs::path params_path_for(const fs::path& betas);

struct BetaRecord {
  Month date;
  std::string asset;
  double alpha = 0, beta_mkt = 0, beta_bmg = 0;
  double var_alpha = 0, var_mkt = 0, var_bmg = 0;
  double loglik = 0;
};

struct BetaParams {
  std::string asset;
  double var_eps = 0, var_alpha = 0, var_mkt = 0, var_bmg = 0;
  double loglik = 0;
  bool converged = true;
  std::size_t observations = 0;
  double ols_residual_var = 0;
};

std::vector<BetaRecord> load_betas(const fs::path& path);
std::vector<BetaParams> load_beta_params(const fs::path& path);

struct ReportRiskOptions {
  fs::path betas;
  fs::path attributes;
  fs::path out_dir;
  std::optional<Month> date;  // cross-section date; default the last one
  std::size_t min_obs = 3;
};

/// regional_rcr.csv and regional_acr.csv hold the last date of every year,
/// one column per region after WD; sector_quantiles.csv and ci_beta_corr.csv
/// describe the cross-section date.
StageFiles report_risk_stage(const ReportRiskOptions& options);

enum class IdioSource { filter, ols };

struct Scenario {
  std::string label;
  PortfolioConstraints constraints;
  std::string overlap_with;  // label of an earlier scenario, or empty
};

struct OptimizeOptions {
  fs::path betas;
  std::optional<fs::path> params;  // default: params_path_for(betas)
  std::optional<fs::path> attributes;
  std::optional<fs::path> factors;  // sample factor vols when factor_vols is unset
  std::optional<std::pair<double, double>> factor_vols;
  IdioSource idio = IdioSource::filter;
  std::optional<Month> date;  // default the last date in the betas file
  std::vector<Scenario> scenarios;
  std::optional<fs::path> overlap_ref;  // asset_id,weight
  fs::path out;                         // scenario "base" goes here, others next to it
  std::optional<fs::path> summary;      // default: summary.csv next to `out`
};

struct ScenarioResult {
  std::string label;
  OptimizedPortfolio portfolio;
  double overlap = std::numeric_limits<double>::quiet_NaN();
  fs::path file;
};

struct OptimizeResult {
  std::vector<std::string> assets;
  std::vector<ScenarioResult> scenarios;
  StageFiles files;
};

/// Solves every scenario on the factor model at the chosen date. Throws
/// InfeasibleError after writing the summary when any scenario is infeasible.
OptimizeResult optimize_stage(const OptimizeOptions& options);

fs::path scenario_file(const fs::path& out, const std::string& label);
std::string format_cap(const std::optional<double>& cap);

/// Root-mean-square error of the estimated states against a truth file over
/// every (date, asset) pair present in both.
struct RecoveryStats {
  std::size_t count = 0;
  double rmse_alpha = 0, rmse_beta_mkt = 0, rmse_beta_bmg = 0;
};

RecoveryStats beta_recovery(const fs::path& betas, const fs::path& truth);
StageFiles beta_recovery_stage(const fs::path& betas, const fs::path& truth, const fs::path& out);

}  // namespace carbon
