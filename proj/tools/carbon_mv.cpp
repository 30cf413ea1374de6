#include <charconv>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "carbon/errors.hpp"
#include "carbon/pipeline.hpp"

namespace {

using namespace carbon;

double parse_double(const std::string& text, const std::string& flag) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ValidationError(fmt::format("{}: '{}' is not a number", flag, text));
  return v;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<double> parse_list(const std::string& text, std::size_t expected, const std::string& flag) {
  std::vector<double> out;
  for (const auto& s : split(text, ',')) out.push_back(parse_double(s, flag));
  if (out.size() != expected) throw ValidationError(fmt::format("{} expects {} comma-separated numbers", flag, expected));
  return out;
}

std::optional<double> parse_cap(const std::string& text, const std::string& flag) {
  if (text == "none") return std::nullopt;
  return parse_double(text, flag);
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  RunConfig load() const {
    if (config.empty()) return RunConfig{};
    return load_run_config(config);
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration supplying defaults");
  sub->add_option("--seed", c.seed, "random seed");
}

std::string pick(const std::string& flag, const RunConfig& cfg, const std::string& from_config, const char* name) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return cfg.resolve(from_config).string();
  throw ValidationError(fmt::format("--{} is required", name));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Carbon risk factor, dynamic carbon betas and carbon-constrained minimum-variance portfolios",
               "carbon-mv"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  // build-factor
  Common bf_common;
  std::string bf_returns, bf_attrs, bf_factors, bf_out = "factors.csv", bf_mode, bf_metric, bf_colors, bf_rebalance,
                                                bf_weights;
  std::optional<double> bf_size;
  std::optional<std::size_t> bf_min_months;
  bool bf_scale = false;
  auto* bf = app.add_subcommand("build-factor", "build the brown-minus-green factor");
  add_common(bf, bf_common);
  bf->add_option("--returns", bf_returns, "returns.csv (date,asset_id,return)");
  bf->add_option("--attributes", bf_attrs, "attributes.csv");
  bf->add_option("--factors", bf_factors, "market factor file (date,r_mkt)");
  bf->add_option("--mode", bf_mode, "carima|intensity|custom-metric");
  bf->add_option("--metric", bf_metric, "attribute column for custom-metric mode");
  bf->add_option("--size-breakpoint", bf_size, "fraction of assets classified small");
  bf->add_option("--color-breakpoints", bf_colors, "lo,hi score quantiles");
  bf->add_option("--rebalance", bf_rebalance, "static|annual");
  bf->add_option("--weights", bf_weights, "monthly|frozen value weights");
  bf->add_flag("--scale-to-market", bf_scale, "rescale to the market volatility");
  bf->add_option("--min-months", bf_min_months, "minimum observed months per asset");
  bf->add_option("--out", bf_out, "output factor file");

  // estimate-betas
  Common eb_common;
  std::string eb_factors, eb_returns, eb_out = "betas.csv", eb_params, eb_variances;
  bool eb_estimate = false;
  std::optional<unsigned> eb_threads;
  std::optional<std::size_t> eb_min_months;
  auto* eb = app.add_subcommand("estimate-betas", "filter dynamic carbon betas per asset");
  add_common(eb, eb_common);
  eb->add_option("--factors", eb_factors, "factor file with r_mkt and r_bmg");
  eb->add_option("--returns", eb_returns, "returns.csv");
  auto* est_flag = eb->add_flag("--estimate-variances", eb_estimate, "maximum-likelihood state and noise variances");
  eb->add_option("--variances", eb_variances, "fixed variances alpha,mkt,bmg,eps")->excludes(est_flag);
  eb->add_option("--threads", eb_threads, "worker threads (0: all cores)");
  eb->add_option("--min-months", eb_min_months, "minimum observed months per asset");
  eb->add_option("--out", eb_out, "output betas file");
  eb->add_option("--params-out", eb_params, "per-asset parameter file (default <out>_params.csv)");

  // report-risk
  Common rr_common;
  std::string rr_betas, rr_attrs, rr_out = ".", rr_date;
  std::optional<std::size_t> rr_min_obs;
  auto* rr = app.add_subcommand("report-risk", "regional, sector and correlation tables of carbon risk");
  add_common(rr, rr_common);
  rr->add_option("--betas", rr_betas, "betas.csv");
  rr->add_option("--attributes", rr_attrs, "attributes.csv");
  rr->add_option("--date", rr_date, "cross-section date (default: last)");
  rr->add_option("--min-obs", rr_min_obs, "minimum assets per correlation cell");
  rr->add_option("--out-dir", rr_out, "output directory");

  // optimize
  Common op_common;
  std::string op_betas, op_params, op_attrs, op_factors, op_idio, op_vols, op_beta_cap, op_waci_cap, op_ci, op_rule,
      op_sweep, op_ref, op_date, op_out = "portfolio.csv", op_summary;
  bool op_long_only = false;
  auto* op = app.add_subcommand("optimize", "minimum-variance portfolios under carbon constraints");
  add_common(op, op_common);
  op->add_option("--betas", op_betas, "betas.csv");
  op->add_option("--params", op_params, "per-asset parameter file (default <betas>_params.csv)");
  op->add_option("--attributes", op_attrs, "attributes.csv with carbon intensities");
  op->add_option("--factors", op_factors, "factor file used for factor volatilities");
  op->add_option("--idio-var", op_idio, "from-filter|from-ols");
  op->add_option("--factor-vols", op_vols, "market and carbon factor volatilities m,b");
  op->add_flag("--long-only", op_long_only, "forbid short positions");
  op->add_option("--beta-cap", op_beta_cap, "carbon beta cap");
  op->add_option("--waci-cap", op_waci_cap, "weighted average carbon intensity cap");
  op->add_option("--ci-exclude", op_ci, "carbon intensity exclusion level");
  op->add_option("--exclusion-rule", op_rule, "high-intensity|literal");
  op->add_option("--sweep", op_sweep, "beta-cap=v1,v2,... or waci-cap=v1,v2,... (none allowed)");
  op->add_option("--overlap-ref", op_ref, "reference portfolio (asset_id,weight) for weight overlap");
  op->add_option("--date", op_date, "optimisation date (default: last)");
  op->add_option("--out", op_out, "portfolio file");
  op->add_option("--summary", op_summary, "summary file (default summary.csv next to --out)");

  // simulate
  Common sim_common;
  std::string sim_out = "synthetic";
  std::optional<std::size_t> sim_assets, sim_months;
  std::optional<double> sim_corr;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic world with known betas");
  add_common(sim, sim_common);
  sim->add_option("--assets", sim_assets, "number of assets");
  sim->add_option("--months", sim_months, "number of months");
  sim->add_option("--ci-beta-corr", sim_corr, "target correlation of carbon intensity and carbon beta");
  sim->add_option("--out-dir", sim_out, "output directory");

  // run
  Common run_common;
  std::string run_out;
  auto* run = app.add_subcommand("run", "full pipeline from a configuration file");
  add_common(run, run_common);
  run->add_option("--output-dir", run_out, "override the configured output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::validation);
  }

  try {
    if (*bf) {
      const auto cfg = bf_common.load();
      BuildFactorOptions o;
      o.returns = pick(bf_returns, cfg, cfg.returns, "returns");
      o.attributes = pick(bf_attrs, cfg, cfg.attributes, "attributes");
      o.factors = pick(bf_factors, cfg, cfg.factors, "factors");
      o.out = bf_out;
      o.config = cfg.factor;
      o.align = cfg.align;
      if (!bf_metric.empty()) o.config.score.metric = bf_metric;
      if (!bf_mode.empty()) o.config.score.mode = parse_score_mode(bf_mode, o.config.score.metric);
      if (bf_size) o.config.breakpoints.size = *bf_size;
      if (!bf_colors.empty()) {
        const auto v = parse_list(bf_colors, 2, "--color-breakpoints");
        o.config.breakpoints.color_lo = v[0];
        o.config.breakpoints.color_hi = v[1];
      }
      if (!bf_rebalance.empty()) o.config.rebalance = parse_rebalance(bf_rebalance);
      if (!bf_weights.empty()) o.config.weights = parse_weight_refresh(bf_weights);
      if (bf_scale) o.config.scale_to_market = true;
      if (bf_min_months) o.align.min_membership_months = *bf_min_months;
      build_factor_stage(o);
    } else if (*eb) {
      const auto cfg = eb_common.load();
      EstimateBetasOptions o;
      o.factors = pick(eb_factors, cfg, "", "factors");
      o.returns = pick(eb_returns, cfg, cfg.returns, "returns");
      o.out = eb_out;
      if (!eb_params.empty()) o.params_out = eb_params;
      o.estimation = cfg.betas;
      o.align = cfg.align;
      if (eb_estimate) o.estimation.estimate_variances = true;
      if (!eb_variances.empty()) {
        const auto v = parse_list(eb_variances, 4, "--variances");
        o.estimation.estimate_variances = false;
        o.estimation.base.state_var = Eigen::Vector3d(v[0], v[1], v[2]);
        o.estimation.base.measurement_var = v[3];
      }
      if (eb_threads) o.estimation.threads = *eb_threads;
      if (eb_min_months) o.align.min_membership_months = *eb_min_months;
      estimate_betas_stage(o);
    } else if (*rr) {
      const auto cfg = rr_common.load();
      ReportRiskOptions o;
      o.betas = pick(rr_betas, cfg, "", "betas");
      o.attributes = pick(rr_attrs, cfg, cfg.attributes, "attributes");
      o.out_dir = rr_out;
      o.min_obs = rr_min_obs.value_or(cfg.risk_min_obs);
      if (!rr_date.empty()) o.date = Month::parse(rr_date);
      report_risk_stage(o);
    } else if (*op) {
      const auto cfg = op_common.load();
      const auto& oc = cfg.optimize;
      OptimizeOptions o;
      o.betas = pick(op_betas, cfg, "", "betas");
      if (!op_params.empty()) o.params = op_params;
      if (!op_attrs.empty()) {
        o.attributes = op_attrs;
      } else if (!cfg.attributes.empty()) {
        o.attributes = cfg.resolve(cfg.attributes);
      }
      if (!op_factors.empty()) o.factors = op_factors;
      o.idio = op_idio.empty() ? oc.idio : parse_idio_source(op_idio);
      o.factor_vols = oc.factor_vols;
      if (!op_vols.empty()) {
        const auto v = parse_list(op_vols, 2, "--factor-vols");
        o.factor_vols = std::pair{v[0], v[1]};
      }
      if (!op_date.empty()) o.date = Month::parse(op_date);
      if (!op_ref.empty()) o.overlap_ref = op_ref;
      o.out = op_out;
      if (!op_summary.empty()) o.summary = op_summary;

      PortfolioConstraints base;
      base.long_only = op_long_only || (!op_common.config.empty() && oc.long_only);
      if (!op_beta_cap.empty()) base.beta_cap = parse_cap(op_beta_cap, "--beta-cap");
      if (!op_waci_cap.empty()) base.waci_cap = parse_cap(op_waci_cap, "--waci-cap");
      if (!op_ci.empty()) base.ci_exclusion = parse_cap(op_ci, "--ci-exclude");
      base.exclusion_rule = op_rule.empty() ? oc.exclusion_rule : parse_exclusion_rule(op_rule);
      if (op_sweep.empty()) {
        o.scenarios.push_back({"base", base, ""});
      } else {
        const auto eq = op_sweep.find('=');
        const auto kind = op_sweep.substr(0, eq);
        if (eq == std::string::npos || (kind != "beta-cap" && kind != "waci-cap")) {
          throw ValidationError("--sweep expects beta-cap=v1,v2,... or waci-cap=v1,v2,...");
        }
        for (const auto& v : split(op_sweep.substr(eq + 1), ',')) {
          auto c = base;
          const auto cap = parse_cap(v, "--sweep");
          (kind == "beta-cap" ? c.beta_cap : c.waci_cap) = cap;
          o.scenarios.push_back({(kind == "beta-cap" ? "beta_cap_" : "waci_cap_") + format_cap(cap), c, ""});
        }
      }
      optimize_stage(o);
    } else if (*sim) {
      const auto cfg = sim_common.load();
      auto spec = cfg.synthetic.value_or(SyntheticWorldSpec{});
      if (sim_assets) spec.assets = *sim_assets;
      if (sim_months) spec.months = *sim_months;
      if (sim_corr) spec.ci_beta_correlation = *sim_corr;
      simulate_stage(spec, sim_common.seed.value_or(cfg.seed), sim_out);
    } else if (*run) {
      if (run_common.config.empty()) throw ValidationError("run needs --config");
      auto cfg = run_common.load();
      if (run_common.seed) cfg.seed = *run_common.seed;
      if (!run_out.empty()) cfg.output_dir = std::filesystem::absolute(run_out).string();
      const auto result = run_pipeline(cfg);
      std::cout << "run complete: " << result.output_dir.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::failure);
  }
  return 0;
}
