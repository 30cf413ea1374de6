#include "carbon/stages.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "carbon/csv.hpp"
#include "carbon/errors.hpp"
#include "carbon/risk_metrics.hpp"

namespace carbon {

namespace {

std::string num(double v) { return csv::format_number(v); }

double require_number(const csv::Table& t, std::size_t r, std::size_t c) {
  auto v = csv::parse_number(t, r, c);
  if (!v) throw ParseError(t.path.string(), t.line_numbers[r], fmt::format("empty {}", t.header[c]));
  return *v;
}

std::string_view status_name(CellStatus s) {
  switch (s) {
    case CellStatus::ok: return "ok";
    case CellStatus::insufficient: return "insufficient";
    case CellStatus::undefined: return "undefined";
  }
  return "";
}

double sample_var(const Eigen::VectorXd& v) {
  if (v.size() < 2) throw ValidationError("factor volatility needs at least two months");
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace

StageFiles simulate_stage(const SyntheticWorldSpec& spec, std::uint64_t seed, const fs::path& out_dir) {
  const auto world = generate_synthetic(spec, seed);
  write_synthetic(world, out_dir);
  StageFiles files;
  for (auto name : {"returns.csv", "attributes.csv", "factors.csv", "truth_betas.csv", "truth_params.csv"}) {
    files.outputs.push_back(out_dir / name);
  }
  return files;
}

StageFiles build_factor_stage(const BuildFactorOptions& o) {
  const auto panel = load_returns(o.returns);
  const auto attrs = load_attributes(o.attributes);
  auto factors = load_factors(o.factors);
  factors.r_bmg.reset();
  const auto data = align(panel, attrs, factors, o.align);
  const auto result = build_bmg_factor(data, o.config);

  FactorSeries out{result.dates, data.factors.r_mkt, result.r_bmg};
  write_factors(out, o.out);
  return {{o.returns, o.attributes, o.factors}, {o.out}};
}

fs::path params_path_for(const fs::path& betas) {
  auto p = betas;
  p.replace_filename(betas.stem().string() + "_params" + betas.extension().string());
  return p;
}

StageFiles estimate_betas_stage(const EstimateBetasOptions& o) {
  const auto panel = load_returns(o.returns);
  const auto factors = load_factors(o.factors);
  factors.bmg();
  const auto data = align(panel, FirmAttributes{}, factors, o.align);
  const auto& p = data.panel;
  const auto estimates = estimate_panel_betas(p, data.factors, o.estimation);

  struct Row {
    std::size_t t;
    std::size_t asset;
    std::size_t k;
    double cumulative;
  };
  std::vector<Row> rows;
  for (std::size_t a = 0; a < estimates.size(); ++a) {
    const auto& path = estimates[a].path;
    double cum = 0.0;
    for (std::size_t k = 0; k < path.size(); ++k) {
      cum += path.step_loglik(static_cast<Eigen::Index>(k));
      rows.push_back({estimates[a].first + k, a, k, cum});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) { return x.t < y.t; });

  std::string out = "date,asset_id,alpha,beta_mkt,beta_bmg,var_alpha,var_mkt,var_bmg,loglik\n";
  for (const auto& r : rows) {
    const auto& path = estimates[r.asset].path;
    const auto k = static_cast<Eigen::Index>(r.k);
    const auto& P = path.covariances[r.k];
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", p.dates[r.t].to_string(), estimates[r.asset].asset,
                       num(path.means(k, 0)), num(path.means(k, 1)), num(path.means(k, 2)), num(P(0, 0)),
                       num(P(1, 1)), num(P(2, 2)), num(r.cumulative));
  }
  csv::write_file(o.out, out);

  std::string params = "asset_id,var_eps,var_alpha,var_mkt,var_bmg,loglik,converged,observations,ols_residual_var\n";
  for (const auto& e : estimates) {
    const auto len = static_cast<Eigen::Index>(e.path.size());
    const auto first = static_cast<Eigen::Index>(e.first);
    const auto col = static_cast<Eigen::Index>(*p.find_asset(e.asset));
    double ols_var = kMissing;
    try {
      ols_var = static_ols(p.returns.col(col).segment(first, len), data.factors.r_mkt.segment(first, len),
                           data.factors.bmg().segment(first, len))
                    .residual_var;
    } catch (const Error&) {
      // too few observations or collinear factors: left empty
    }
    params += fmt::format("{},{},{},{},{},{},{},{},{}\n", e.asset, num(e.spec.measurement_var), num(e.spec.state_var(0)),
                          num(e.spec.state_var(1)), num(e.spec.state_var(2)), num(e.path.loglik),
                          e.converged ? 1 : 0, e.observations, num(ols_var));
  }
  const auto params_out = o.params_out.value_or(params_path_for(o.out));
  csv::write_file(params_out, params);
  return {{o.returns, o.factors}, {o.out, params_out}};
}

std::vector<BetaRecord> load_betas(const fs::path& path) {
  const auto t = csv::read(path);
  const std::size_t c[] = {t.require_column("date"),      t.require_column("asset_id"),  t.require_column("alpha"),
                           t.require_column("beta_mkt"),  t.require_column("beta_bmg"),  t.require_column("var_alpha"),
                           t.require_column("var_mkt"),   t.require_column("var_bmg"),   t.require_column("loglik")};
  std::vector<BetaRecord> out;
  std::set<std::pair<Month, std::string>> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    BetaRecord b;
    try {
      b.date = Month::parse(t.rows[r][c[0]]);
    } catch (const ValidationError& e) {
      throw ParseError(path.string(), t.line_numbers[r], e.what());
    }
    b.asset = t.rows[r][c[1]];
    if (b.asset.empty()) throw ParseError(path.string(), t.line_numbers[r], "empty asset_id");
    if (!seen.insert({b.date, b.asset}).second) {
      throw ParseError(path.string(), t.line_numbers[r], fmt::format("duplicate row for {}", b.asset));
    }
    double* fields[] = {&b.alpha, &b.beta_mkt, &b.beta_bmg, &b.var_alpha, &b.var_mkt, &b.var_bmg, &b.loglik};
    for (std::size_t k = 0; k < 7; ++k) *fields[k] = require_number(t, r, c[k + 2]);
    out.push_back(std::move(b));
  }
  if (out.empty()) throw ValidationError(fmt::format("{}: no data rows", path.string()));
  return out;
}

std::vector<BetaParams> load_beta_params(const fs::path& path) {
  const auto t = csv::read(path);
  const auto c_asset = t.require_column("asset_id");
  const std::size_t c[] = {t.require_column("var_eps"), t.require_column("var_alpha"), t.require_column("var_mkt"),
                           t.require_column("var_bmg"), t.require_column("loglik")};
  const auto c_conv = t.column("converged");
  const auto c_obs = t.column("observations");
  const auto c_ols = t.column("ols_residual_var");
  std::vector<BetaParams> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    BetaParams b;
    b.asset = t.rows[r][c_asset];
    double* fields[] = {&b.var_eps, &b.var_alpha, &b.var_mkt, &b.var_bmg, &b.loglik};
    for (std::size_t k = 0; k < 5; ++k) *fields[k] = require_number(t, r, c[k]);
    if (c_conv) b.converged = t.rows[r][*c_conv] != "0";
    if (c_obs) b.observations = static_cast<std::size_t>(csv::parse_number(t, r, *c_obs).value_or(0.0));
    b.ols_residual_var = c_ols ? csv::parse_number(t, r, *c_ols).value_or(kMissing) : kMissing;
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

struct Cross {
  std::vector<std::string> assets;
  std::vector<const BetaRecord*> rows;
};

Cross cross_section(const std::vector<BetaRecord>& betas, Month date) {
  Cross c;
  for (const auto& b : betas) {
    if (b.date != date) continue;
    c.rows.push_back(&b);
  }
  std::sort(c.rows.begin(), c.rows.end(), [](auto* x, auto* y) { return x->asset < y->asset; });
  for (auto* r : c.rows) c.assets.push_back(r->asset);
  return c;
}

Month pick_date(const std::vector<BetaRecord>& betas, const std::optional<Month>& date) {
  Month last = betas.front().date;
  for (const auto& b : betas) last = std::max(last, b.date);
  if (!date) return last;
  for (const auto& b : betas) {
    if (b.date == *date) return *date;
  }
  throw ValidationError(fmt::format("no betas on {}", date->to_string()));
}

std::size_t attribute_index(const FirmAttributes& attrs, const std::string& asset) {
  auto k = attrs.find_asset(asset);
  if (!k) throw ValidationError(fmt::format("asset {} has no firm attributes", asset));
  return *k;
}

CarbonRiskSnapshot snapshot_at(const std::vector<BetaRecord>& betas, const FirmAttributes& attrs, Month date) {
  const auto c = cross_section(betas, date);
  std::vector<double> rcr;
  std::vector<std::string> sector, region;
  for (auto* r : c.rows) {
    const auto k = attribute_index(attrs, r->asset);
    rcr.push_back(r->beta_bmg);
    sector.push_back(attrs.sector[k]);
    region.push_back(attrs.region[k]);
  }
  return make_snapshot(date, c.assets, std::move(rcr), std::move(sector), std::move(region));
}

}  // namespace

StageFiles report_risk_stage(const ReportRiskOptions& o) {
  const auto betas = load_betas(o.betas);
  const auto attrs = load_attributes(o.attributes);
  const Month date = pick_date(betas, o.date);

  std::set<Month> all_dates;
  for (const auto& b : betas) all_dates.insert(b.date);
  std::map<int, Month> year_end;
  for (auto m : all_dates) year_end[m.year] = m;

  std::set<std::string> regions;
  for (const auto& b : betas) regions.insert(attrs.region[attribute_index(attrs, b.asset)]);

  std::string header = "date," + std::string(kWorldRegion);
  for (const auto& r : regions) header += "," + r;
  std::string rcr_csv = header + "\n", acr_csv = header + "\n";
  for (const auto& [year, m] : year_end) {
    const auto snap = snapshot_at(betas, attrs, m);
    std::string rcr_line = m.to_string(), acr_line = m.to_string();
    auto add = [&](std::string_view region) {
      const bool any = region == kWorldRegion || std::find(snap.region.begin(), snap.region.end(), region) != snap.region.end();
      rcr_line += "," + (any ? num(regional_average_beta(snap, region)) : std::string());
      acr_line += "," + (any ? num(regional_average_acr(snap, region)) : std::string());
    };
    add(kWorldRegion);
    for (const auto& r : regions) add(r);
    rcr_csv += rcr_line + "\n";
    acr_csv += acr_line + "\n";
  }

  const auto snap = snapshot_at(betas, attrs, date);
  std::string q_csv = "date,group_by,measure,group,count,q05,q25,q50,q75,q95\n";
  for (auto group_by : {GroupBy::sector, GroupBy::region}) {
    for (auto measure : {RiskMeasure::relative, RiskMeasure::absolute}) {
      for (const auto& s : boxplot_stats(snap, group_by, measure)) {
        q_csv += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", date.to_string(),
                             group_by == GroupBy::sector ? "sector" : "region",
                             measure == RiskMeasure::relative ? "rcr" : "acr", s.group, s.count, num(s.q05),
                             num(s.q25), num(s.q50), num(s.q75), num(s.q95));
      }
    }
  }

  std::vector<double> ci;
  for (const auto& a : snap.assets) {
    const auto k = attribute_index(attrs, a);
    const auto rec = attrs.record_as_of(attrs.carbon_intensity, k, date);
    ci.push_back(rec ? attrs.carbon_intensity(static_cast<Eigen::Index>(*rec), static_cast<Eigen::Index>(k)) : kMissing);
  }
  std::string corr_csv = "date,sector,region,count,status,value\n";
  for (const auto& cell : ci_beta_correlation(snap, ci, o.min_obs)) {
    corr_csv += fmt::format("{},{},{},{},{},{}\n", date.to_string(), cell.sector, cell.region, cell.count,
                            status_name(cell.status), cell.status == CellStatus::ok ? num(cell.value) : "");
  }

  StageFiles files{{o.betas, o.attributes}, {}};
  const std::pair<const char*, const std::string*> outputs[] = {{"regional_rcr.csv", &rcr_csv},
                                                                 {"regional_acr.csv", &acr_csv},
                                                                 {"sector_quantiles.csv", &q_csv},
                                                                 {"ci_beta_corr.csv", &corr_csv}};
  for (const auto& [name, content] : outputs) {
    csv::write_file(o.out_dir / name, *content);
    files.outputs.push_back(o.out_dir / name);
  }
  return files;
}

fs::path scenario_file(const fs::path& out, const std::string& label) {
  if (label == "base") return out;
  auto p = out;
  p.replace_filename(out.stem().string() + "_" + label + out.extension().string());
  return p;
}

std::string format_cap(const std::optional<double>& cap) { return cap ? num(*cap) : "none"; }

OptimizeResult optimize_stage(const OptimizeOptions& o) {
  if (o.scenarios.empty()) throw ValidationError("optimize: no scenario to solve");
  const auto betas = load_betas(o.betas);
  const auto params_path = o.params.value_or(params_path_for(o.betas));
  const auto params = load_beta_params(params_path);
  const Month date = pick_date(betas, o.date);
  const auto cross = cross_section(betas, date);
  const auto n = static_cast<Eigen::Index>(cross.rows.size());

  StageFiles files{{o.betas, params_path}, {}};

  std::unordered_map<std::string, const BetaParams*> by_asset;
  for (const auto& p : params) by_asset[p.asset] = &p;

  FactorCovarianceModel model;
  model.beta_mkt.resize(n);
  model.beta_bmg.resize(n);
  model.idio_var.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto* r = cross.rows[static_cast<std::size_t>(i)];
    auto it = by_asset.find(r->asset);
    if (it == by_asset.end()) throw ValidationError(fmt::format("{}: no parameters for {}", params_path.string(), r->asset));
    model.beta_mkt(i) = r->beta_mkt;
    model.beta_bmg(i) = r->beta_bmg;
    model.idio_var(i) = o.idio == IdioSource::filter ? it->second->var_eps : it->second->ols_residual_var;
    if (std::isnan(model.idio_var(i))) {
      throw ValidationError(fmt::format("no {} idiosyncratic variance for {}",
                                        o.idio == IdioSource::filter ? "filter" : "OLS", r->asset));
    }
  }

  if (o.factor_vols) {
    model.var_mkt = o.factor_vols->first * o.factor_vols->first;
    model.var_bmg = o.factor_vols->second * o.factor_vols->second;
  } else if (o.factors) {
    const auto f = load_factors(*o.factors);
    std::size_t len = 0;
    while (len < f.size() && f.dates[len] <= date) ++len;
    const auto l = static_cast<Eigen::Index>(len);
    model.var_mkt = sample_var(f.r_mkt.head(l));
    model.var_bmg = sample_var(f.bmg().head(l));
    files.inputs.push_back(*o.factors);
  } else {
    throw ValidationError("optimize: factor volatilities need --factor-vols or a factors file");
  }

  Eigen::VectorXd ci = Eigen::VectorXd::Constant(n, kMissing);
  if (o.attributes) {
    const auto attrs = load_attributes(*o.attributes);
    files.inputs.push_back(*o.attributes);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& asset = cross.assets[static_cast<std::size_t>(i)];
      const auto k = attrs.find_asset(asset);
      if (!k) continue;
      if (const auto rec = attrs.record_as_of(attrs.carbon_intensity, *k, date)) {
        ci(i) = attrs.carbon_intensity(static_cast<Eigen::Index>(*rec), static_cast<Eigen::Index>(*k));
      }
    }
  }

  std::optional<Eigen::VectorXd> reference;
  if (o.overlap_ref) {
    const auto t = csv::read(*o.overlap_ref);
    const auto c_asset = t.require_column("asset_id");
    const auto c_w = t.require_column("weight");
    reference = Eigen::VectorXd::Zero(n);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto it = std::lower_bound(cross.assets.begin(), cross.assets.end(), t.rows[r][c_asset]);
      if (it == cross.assets.end() || *it != t.rows[r][c_asset]) continue;
      (*reference)(it - cross.assets.begin()) = require_number(t, r, c_w);
    }
    files.inputs.push_back(*o.overlap_ref);
  }

  OptimizeResult result;
  result.assets = cross.assets;
  std::vector<std::string> failures;
  std::string summary =
      "label,beta_cap,waci_cap,ci_exclusion,status,variance,beta_bmg,beta_mkt,waci,n,wo,threshold_mkt,threshold_bmg\n";
  std::map<std::string, std::size_t> solved;
  for (const auto& sc : o.scenarios) {
    const auto& c = sc.constraints;
    const std::string caps =
        fmt::format("{},{},{},{}", sc.label, format_cap(c.beta_cap), format_cap(c.waci_cap), format_cap(c.ci_exclusion));
    if ((c.waci_cap || c.ci_exclusion) && !ci.allFinite()) {
      throw ValidationError(fmt::format("scenario {}: carbon-intensity constraints need an intensity for every asset",
                                        sc.label));
    }
    ScenarioResult sr;
    sr.label = sc.label;
    try {
      sr.portfolio = minimum_variance(model, ci, c);
    } catch (const InfeasibleError& e) {
      failures.push_back(fmt::format("{}: {}", sc.label, e.what()));
      summary += caps + ",infeasible,,,,,,,,\n";
      continue;
    }
    const Eigen::VectorXd* ref = nullptr;
    if (!sc.overlap_with.empty()) {
      auto it = solved.find(sc.overlap_with);
      if (it == solved.end()) {
        throw ValidationError(fmt::format("scenario {}: overlap reference '{}' is not an earlier solved scenario",
                                          sc.label, sc.overlap_with));
      }
      ref = &result.scenarios[it->second].portfolio.weights;
    } else if (reference) {
      ref = &*reference;
    }
    if (ref) sr.overlap = weight_overlap(sr.portfolio.weights, *ref);

    std::string weights = "asset_id,weight\n";
    for (Eigen::Index i = 0; i < n; ++i) {
      weights += cross.assets[static_cast<std::size_t>(i)] + "," + num(sr.portfolio.weights(i)) + "\n";
    }
    sr.file = scenario_file(o.out, sc.label);
    csv::write_file(sr.file, weights);
    files.outputs.push_back(sr.file);

    const auto& p = sr.portfolio;
    summary += fmt::format("{},ok,{},{},{},{},{},{},{},{}\n", caps, num(p.variance), num(p.beta_bmg), num(p.beta_mkt),
                           num(p.waci), p.support, num(sr.overlap),
                           p.thresholds ? num(p.thresholds->beta_mkt) : "", p.thresholds ? num(p.thresholds->beta_bmg) : "");
    solved[sc.label] = result.scenarios.size();
    result.scenarios.push_back(std::move(sr));
  }
  auto summary_path = o.summary.value_or(o.out.parent_path() / "summary.csv");
  csv::write_file(summary_path, summary);
  files.outputs.push_back(summary_path);
  result.files = files;
  if (!failures.empty()) {
    std::string msg = "infeasible scenarios:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw InfeasibleError(msg);
  }
  return result;
}

RecoveryStats beta_recovery(const fs::path& betas_path, const fs::path& truth_path) {
  const auto betas = load_betas(betas_path);
  const auto t = csv::read(truth_path);
  const auto c_date = t.require_column("date");
  const auto c_asset = t.require_column("asset_id");
  const std::size_t c[] = {t.require_column("alpha"), t.require_column("beta_mkt"), t.require_column("beta_bmg")};
  std::map<std::pair<Month, std::string>, std::array<double, 3>> truth;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    truth[{Month::parse(t.rows[r][c_date]), t.rows[r][c_asset]}] = {require_number(t, r, c[0]),
                                                                   require_number(t, r, c[1]),
                                                                   require_number(t, r, c[2])};
  }
  RecoveryStats s;
  double sa = 0, sm = 0, sb = 0;
  for (const auto& b : betas) {
    auto it = truth.find({b.date, b.asset});
    if (it == truth.end()) continue;
    const auto& v = it->second;
    sa += (b.alpha - v[0]) * (b.alpha - v[0]);
    sm += (b.beta_mkt - v[1]) * (b.beta_mkt - v[1]);
    sb += (b.beta_bmg - v[2]) * (b.beta_bmg - v[2]);
    ++s.count;
  }
  if (s.count == 0) throw ValidationError("beta recovery: estimates and truth share no (date, asset) pair");
  const double n = static_cast<double>(s.count);
  s.rmse_alpha = std::sqrt(sa / n);
  s.rmse_beta_mkt = std::sqrt(sm / n);
  s.rmse_beta_bmg = std::sqrt(sb / n);
  return s;
}

StageFiles beta_recovery_stage(const fs::path& betas, const fs::path& truth, const fs::path& out) {
  const auto s = beta_recovery(betas, truth);
  csv::write_file(out, fmt::format("metric,value\ncount,{}\nrmse_alpha,{}\nrmse_beta_mkt,{}\nrmse_beta_bmg,{}\n",
                                   s.count, num(s.rmse_alpha), num(s.rmse_beta_mkt), num(s.rmse_beta_bmg)));
  return {{betas, truth}, {out}};
}

}  // namespace carbon
