#include "carbon/pipeline.hpp"

#include <chrono>
#include <functional>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "carbon/csv.hpp"
#include "carbon/digest.hpp"
#include "carbon/errors.hpp"

namespace carbon {

using json = nlohmann::ordered_json;

ScoreMode parse_score_mode(std::string_view text, std::string& metric) {
  if (text == "carima") return ScoreMode::carima;
  if (text == "intensity") {
    metric = "carbon_intensity";
    return ScoreMode::single_metric;
  }
  if (text == "custom-metric") return ScoreMode::single_metric;
  throw ValidationError(fmt::format("unknown score mode '{}' (carima, intensity, custom-metric)", text));
}

Rebalance parse_rebalance(std::string_view text) {
  if (text == "static") return Rebalance::static_average;
  if (text == "annual") return Rebalance::annual;
  throw ValidationError(fmt::format("unknown rebalance '{}' (static, annual)", text));
}

WeightRefresh parse_weight_refresh(std::string_view text) {
  if (text == "monthly") return WeightRefresh::monthly;
  if (text == "frozen") return WeightRefresh::frozen;
  throw ValidationError(fmt::format("unknown weight refresh '{}' (monthly, frozen)", text));
}

IdioSource parse_idio_source(std::string_view text) {
  if (text == "from-filter") return IdioSource::filter;
  if (text == "from-ols") return IdioSource::ols;
  throw ValidationError(fmt::format("unknown idiosyncratic variance source '{}' (from-filter, from-ols)", text));
}

ExclusionRule parse_exclusion_rule(std::string_view text) {
  if (text == "high-intensity") return ExclusionRule::high_intensity;
  if (text == "literal") return ExclusionRule::literal;
  throw ValidationError(fmt::format("unknown exclusion rule '{}' (high-intensity, literal)", text));
}

namespace {

std::string_view mode_name(const ScoreConfig& s) {
  if (s.mode == ScoreMode::carima) return "carima";
  return s.metric == "carbon_intensity" ? "intensity" : "custom-metric";
}

/// Reads the keys of one JSON object and rejects the ones nobody asked for.
class Block {
 public:
  Block(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(fmt::format("config: {} must be an object", where_));
  }

  bool has(const char* key) {
    used_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(fmt::format("config: {}.{} has the wrong type", where_, key));
    }
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  const json& at(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string where(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ValidationError(fmt::format("config: unknown key {}.{}", where_, key));
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

struct DoubleField {
  const char* key;
  double SyntheticWorldSpec::*member;
};

constexpr DoubleField kSyntheticFields[] = {
    {"beta_bmg_dispersion", &SyntheticWorldSpec::beta_bmg_dispersion},
    {"beta_mkt_mean", &SyntheticWorldSpec::beta_mkt_mean},
    {"beta_mkt_dispersion", &SyntheticWorldSpec::beta_mkt_dispersion},
    {"beta_bmg_step", &SyntheticWorldSpec::beta_bmg_step},
    {"beta_mkt_step", &SyntheticWorldSpec::beta_mkt_step},
    {"alpha_step", &SyntheticWorldSpec::alpha_step},
    {"idio_vol", &SyntheticWorldSpec::idio_vol},
    {"idio_vol_log_sd", &SyntheticWorldSpec::idio_vol_log_sd},
    {"market_mean", &SyntheticWorldSpec::market_mean},
    {"market_vol", &SyntheticWorldSpec::market_vol},
    {"bmg_mean", &SyntheticWorldSpec::bmg_mean},
    {"bmg_vol", &SyntheticWorldSpec::bmg_vol},
    {"ci_median", &SyntheticWorldSpec::ci_median},
    {"ci_log_sd", &SyntheticWorldSpec::ci_log_sd},
    {"ci_beta_correlation", &SyntheticWorldSpec::ci_beta_correlation},
    {"cap_median", &SyntheticWorldSpec::cap_median},
    {"cap_log_sd", &SyntheticWorldSpec::cap_log_sd},
    {"late_entry_fraction", &SyntheticWorldSpec::late_entry_fraction},
    {"early_exit_fraction", &SyntheticWorldSpec::early_exit_fraction},
};

SyntheticWorldSpec parse_synthetic(const json& j) {
  Block b(j, "synthetic");
  SyntheticWorldSpec s;
  b.get("assets", s.assets);
  b.get("months", s.months);
  if (b.has("start")) {
    std::string start;
    b.get("start", start);
    s.start = Month::parse(start);
  }
  for (const auto& f : kSyntheticFields) b.get(f.key, s.*f.member);
  if (b.has("regions")) {
    const auto& arr = b.at("regions");
    if (!arr.is_array()) throw ValidationError("config: synthetic.regions must be an array");
    for (const auto& r : arr) {
      Block rb(r, "synthetic.regions[]");
      RegionSpec spec;
      rb.get("name", spec.name);
      rb.get("share", spec.share);
      rb.get("beta_bmg_mean", spec.beta_bmg_mean);
      rb.finish();
      s.regions.push_back(spec);
    }
  }
  if (b.has("sectors")) {
    const auto& arr = b.at("sectors");
    if (!arr.is_array()) throw ValidationError("config: synthetic.sectors must be an array");
    for (const auto& r : arr) {
      Block rb(r, "synthetic.sectors[]");
      SectorSpec spec;
      rb.get("name", spec.name);
      rb.get("share", spec.share);
      rb.finish();
      s.sectors.push_back(spec);
    }
  }
  b.finish();
  return s;
}

template <std::size_t N>
std::array<double, N> fixed_array(Block& b, const char* key) {
  std::vector<double> v;
  b.get(key, v);
  if (v.size() != N) throw ValidationError(fmt::format("config: {} needs {} numbers", b.where(key), N));
  std::array<double, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

json to_json(const SyntheticWorldSpec& s) {
  json j;
  j["assets"] = s.assets;
  j["months"] = s.months;
  j["start"] = fmt::format("{:04}-{:02}", s.start.year, s.start.month);
  for (const auto& f : kSyntheticFields) j[f.key] = s.*f.member;
  j["regions"] = json::array();
  for (const auto& r : s.regions) j["regions"].push_back({{"name", r.name}, {"share", r.share}, {"beta_bmg_mean", r.beta_bmg_mean}});
  j["sectors"] = json::array();
  for (const auto& r : s.sectors) j["sectors"].push_back({{"name", r.name}, {"share", r.share}});
  return j;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<Scenario> pipeline_scenarios(const OptimizeConfig& c) {
  std::vector<Scenario> out;
  PortfolioConstraints base;
  base.long_only = c.long_only;
  out.push_back({"gmv", base, ""});
  PortfolioConstraints capped = base;
  capped.ci_exclusion = c.ci_exclusion;
  capped.exclusion_rule = c.exclusion_rule;
  for (const auto& b : c.beta_caps) {
    auto k = capped;
    k.beta_cap = b;
    out.push_back({"beta_" + format_cap(b), k, ""});
  }
  for (double w : c.waci_caps) {
    auto k = capped;
    k.waci_cap = w;
    out.push_back({"waci_" + format_cap(w), k, ""});
  }
  if (c.combined_beta_cap) {
    for (double w : c.waci_caps) {
      auto k = capped;
      k.beta_cap = c.combined_beta_cap;
      k.waci_cap = w;
      out.push_back({"beta_" + format_cap(c.combined_beta_cap) + "_waci_" + format_cap(w), k, "waci_" + format_cap(w)});
    }
  }
  return out;
}

fs::path RunConfig::resolve(const std::string& path) const {
  fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

void RunConfig::validate() const {
  if (output_dir.empty()) throw ValidationError("config: output_dir is empty");
  if (synthetic) {
    auto s = *synthetic;
    s.resolve();
  } else {
    const std::pair<const char*, const std::string*> inputs[] = {
        {"returns", &returns}, {"attributes", &attributes}, {"factors", &factors}};
    for (const auto& [name, path] : inputs) {
      if (path->empty()) {
        throw ValidationError(fmt::format("config: inputs.{} is required when there is no synthetic block", name));
      }
      if (!fs::exists(resolve(*path))) {
        throw ValidationError(fmt::format("config: inputs.{} '{}' does not exist", name, resolve(*path).string()));
      }
    }
  }
  factor.breakpoints.validate();
  betas.base.validate();
  if (betas.search.lower <= 0.0 || betas.search.upper <= betas.search.lower) {
    throw ValidationError("config: betas.search bounds must satisfy 0 < lower < upper");
  }
  const auto& o = optimize;
  if (o.factor_vols && (!(o.factor_vols->first >= 0.0) || !(o.factor_vols->second >= 0.0))) {
    throw ValidationError("config: optimize.factor_vols must be >= 0");
  }
}

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(fmt::format("config: {}", e.what()));
  }
  RunConfig c;
  c.base_dir = base_dir;
  Block b(root, "config");
  b.get("seed", c.seed);
  b.get("output_dir", c.output_dir);
  if (b.has("inputs")) {
    Block in(b.at("inputs"), "inputs");
    in.get("returns", c.returns);
    in.get("attributes", c.attributes);
    in.get("factors", c.factors);
    in.finish();
  }
  if (b.has("synthetic")) c.synthetic = parse_synthetic(b.at("synthetic"));
  if (b.has("factor")) {
    Block f(b.at("factor"), "factor");
    if (f.has("metric")) f.get("metric", c.factor.score.metric);
    if (f.has("mode")) {
      std::string mode;
      f.get("mode", mode);
      c.factor.score.mode = parse_score_mode(mode, c.factor.score.metric);
    }
    f.get("size_breakpoint", c.factor.breakpoints.size);
    if (f.has("color_breakpoints")) {
      const auto lohi = fixed_array<2>(f, "color_breakpoints");
      c.factor.breakpoints.color_lo = lohi[0];
      c.factor.breakpoints.color_hi = lohi[1];
    }
    if (f.has("rebalance")) {
      std::string v;
      f.get("rebalance", v);
      c.factor.rebalance = parse_rebalance(v);
    }
    if (f.has("weights")) {
      std::string v;
      f.get("weights", v);
      c.factor.weights = parse_weight_refresh(v);
    }
    f.get("scale_to_market", c.factor.scale_to_market);
    f.get("min_membership_months", c.align.min_membership_months);
    f.finish();
  }
  if (b.has("betas")) {
    Block e(b.at("betas"), "betas");
    e.get("estimate_variances", c.betas.estimate_variances);
    if (e.has("variances")) {
      Block v(e.at("variances"), "betas.variances");
      v.get("alpha", c.betas.base.state_var(0));
      v.get("mkt", c.betas.base.state_var(1));
      v.get("bmg", c.betas.base.state_var(2));
      v.get("eps", c.betas.base.measurement_var);
      v.finish();
    }
    if (e.has("prior_mean")) {
      const auto m = fixed_array<3>(e, "prior_mean");
      c.betas.base.prior_mean = Eigen::Vector3d(m[0], m[1], m[2]);
    }
    if (e.has("prior_cov")) {
      const auto m = fixed_array<9>(e, "prior_cov");
      for (int r = 0; r < 3; ++r)
        for (int k = 0; k < 3; ++k) c.betas.base.prior_cov(r, k) = m[static_cast<std::size_t>(3 * r + k)];
    }
    if (e.has("search")) {
      Block s(e.at("search"), "betas.search");
      s.get("lower", c.betas.search.lower);
      s.get("upper", c.betas.search.upper);
      s.get("max_iterations", c.betas.search.max_iterations);
      s.get("size_tolerance", c.betas.search.size_tolerance);
      s.get("initial_step", c.betas.search.initial_step);
      s.finish();
    }
    e.get("threads", c.betas.threads);
    if (e.has("factor")) {
      std::string v;
      e.get("factor", v);
      if (v != "built" && v != "input") throw ValidationError("config: betas.factor must be 'built' or 'input'");
      c.betas_use_input_factor = v == "input";
    }
    e.finish();
  }
  if (b.has("risk")) {
    Block r(b.at("risk"), "risk");
    r.get("min_obs", c.risk_min_obs);
    r.finish();
  }
  if (b.has("optimize")) {
    Block o(b.at("optimize"), "optimize");
    auto& oc = c.optimize;
    if (o.has("idio_var")) {
      std::string v;
      o.get("idio_var", v);
      oc.idio = parse_idio_source(v);
    }
    if (o.has("factor_vols")) {
      const auto v = fixed_array<2>(o, "factor_vols");
      oc.factor_vols = std::pair{v[0], v[1]};
    } else {
      oc.factor_vols.reset();
    }
    o.get("long_only", oc.long_only);
    o.get("ci_exclusion", oc.ci_exclusion);
    if (o.has("exclusion_rule")) {
      std::string v;
      o.get("exclusion_rule", v);
      oc.exclusion_rule = parse_exclusion_rule(v);
    }
    if (o.has("beta_caps")) {
      oc.beta_caps.clear();
      const auto& arr = o.at("beta_caps");
      if (!arr.is_array()) throw ValidationError("config: optimize.beta_caps must be an array");
      for (const auto& v : arr) {
        if (v.is_null()) {
          oc.beta_caps.emplace_back();
        } else if (v.is_number()) {
          oc.beta_caps.emplace_back(v.get<double>());
        } else {
          throw ValidationError("config: optimize.beta_caps holds numbers or null");
        }
      }
    }
    o.get("waci_caps", oc.waci_caps);
    o.get("combined_beta_cap", oc.combined_beta_cap);
    o.finish();
  }
  b.finish();
  if (c.synthetic) c.synthetic->resolve();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string resolved_config_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  if (c.synthetic) {
    j["synthetic"] = to_json(*c.synthetic);
  } else {
    j["inputs"] = {{"returns", c.returns}, {"attributes", c.attributes}, {"factors", c.factors}};
  }
  const auto& f = c.factor;
  j["factor"] = {{"mode", mode_name(f.score)},
                 {"metric", f.score.metric},
                 {"size_breakpoint", f.breakpoints.size},
                 {"color_breakpoints", {f.breakpoints.color_lo, f.breakpoints.color_hi}},
                 {"rebalance", f.rebalance == Rebalance::annual ? "annual" : "static"},
                 {"weights", f.weights == WeightRefresh::frozen ? "frozen" : "monthly"},
                 {"scale_to_market", f.scale_to_market},
                 {"min_membership_months", c.align.min_membership_months}};
  const auto& s = c.betas.base;
  json cov = json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) cov.push_back(s.prior_cov(r, k));
  j["betas"] = {{"estimate_variances", c.betas.estimate_variances},
                {"variances",
                 {{"alpha", s.state_var(0)}, {"mkt", s.state_var(1)}, {"bmg", s.state_var(2)}, {"eps", s.measurement_var}}},
                {"prior_mean", {s.prior_mean(0), s.prior_mean(1), s.prior_mean(2)}},
                {"prior_cov", cov},
                {"search",
                 {{"lower", c.betas.search.lower},
                  {"upper", c.betas.search.upper},
                  {"max_iterations", c.betas.search.max_iterations},
                  {"size_tolerance", c.betas.search.size_tolerance},
                  {"initial_step", c.betas.search.initial_step}}},
                {"threads", c.betas.threads},
                {"factor", c.betas_use_input_factor ? "input" : "built"}};
  j["risk"] = {{"min_obs", c.risk_min_obs}};
  const auto& o = c.optimize;
  json caps = json::array();
  for (const auto& b : o.beta_caps) caps.push_back(optional_number(b));
  j["optimize"] = {{"idio_var", o.idio == IdioSource::ols ? "from-ols" : "from-filter"},
                   {"factor_vols", o.factor_vols ? json{o.factor_vols->first, o.factor_vols->second} : json(nullptr)},
                   {"long_only", o.long_only},
                   {"ci_exclusion", optional_number(o.ci_exclusion)},
                   {"exclusion_rule", o.exclusion_rule == ExclusionRule::literal ? "literal" : "high-intensity"},
                   {"beta_caps", caps},
                   {"waci_caps", o.waci_caps},
                   {"combined_beta_cap", optional_number(o.combined_beta_cap)}};
  return j.dump(2) + "\n";
}

std::string manifest_json(const RunManifest& m) {
  json j;
  j["tool"] = "carbon-mv";
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["config_digest"] = m.config_digest;
  j["complete"] = m.complete;
  j["stages"] = json::array();
  for (const auto& s : m.stages) {
    json st{{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}};
    if (!s.error.empty()) st["error"] = s.error;
    j["stages"].push_back(st);
  }
  j["inputs"] = json::object();
  for (const auto& [k, v] : m.inputs) j["inputs"][k] = v;
  j["outputs"] = json::object();
  for (const auto& [k, v] : m.outputs) j["outputs"][k] = v;
  return j.dump(2) + "\n";
}

RunResult run_pipeline(const RunConfig& config) {
  config.validate();
  RunResult result;
  const fs::path out = config.resolve(config.output_dir);
  result.output_dir = out;
  fs::create_directories(out);

  auto& m = result.manifest;
  m.seed = config.seed;
  const auto resolved = resolved_config_json(config);
  m.config_digest = sha256_hex(resolved);
  csv::write_file(out / "resolved_config.json", resolved);

  auto label = [&](const fs::path& p) {
    const auto rel = p.lexically_normal().lexically_relative(out.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.lexically_normal().generic_string();
  };
  std::set<std::string> produced;
  auto record = [&](const StageFiles& files) {
    for (const auto& p : files.inputs) {
      const auto key = label(p);
      if (!produced.count(key)) m.inputs[key] = sha256_file(p);
    }
    for (const auto& p : files.outputs) {
      const auto key = label(p);
      produced.insert(key);
      m.outputs[key] = sha256_file(p);
    }
  };

  fs::path returns, attributes, factors, truth;
  if (config.synthetic) {
    const auto data = out / "data";
    returns = data / "returns.csv";
    attributes = data / "attributes.csv";
    factors = data / "factors.csv";
    truth = data / "truth_betas.csv";
  } else {
    returns = config.resolve(config.returns);
    attributes = config.resolve(config.attributes);
    factors = config.resolve(config.factors);
  }
  const fs::path bmg = out / "bmg_factor.csv";
  const fs::path betas = out / "betas.csv";
  const fs::path beta_factor = config.betas_use_input_factor ? factors : bmg;

  using Step = std::pair<std::string, std::function<void()>>;
  std::vector<Step> steps;
  if (config.synthetic) {
    steps.emplace_back("simulate", [&] { record(simulate_stage(*config.synthetic, config.seed, out / "data")); });
  }
  steps.emplace_back("build-factor", [&] {
    record(build_factor_stage({returns, attributes, factors, bmg, config.factor, config.align}));
  });
  steps.emplace_back("estimate-betas", [&] {
    record(estimate_betas_stage({beta_factor, returns, betas, std::nullopt, config.betas, config.align}));
    if (config.synthetic) record(beta_recovery_stage(betas, truth, out / "beta_recovery.csv"));
  });
  steps.emplace_back("report-risk", [&] {
    record(report_risk_stage({betas, attributes, out / "risk", std::nullopt, config.risk_min_obs}));
  });
  steps.emplace_back("optimize", [&] {
    OptimizeOptions o;
    o.betas = betas;
    o.attributes = attributes;
    o.factors = beta_factor;
    o.factor_vols = config.optimize.factor_vols;
    o.idio = config.optimize.idio;
    o.scenarios = pipeline_scenarios(config.optimize);
    o.out = out / "portfolios" / "portfolio.csv";
    record(optimize_stage(o).files);
  });

  for (const auto& s : steps) m.stages.push_back({s.first, "skipped", 0.0, ""});
  auto write_manifest = [&] { csv::write_file(out / "manifest.json", manifest_json(m)); };

  for (std::size_t k = 0; k < steps.size(); ++k) {
    auto& rec = m.stages[k];
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&](const char* status, std::string error) {
      rec.status = status;
      rec.error = std::move(error);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    try {
      steps[k].second();
      finish("ok", "");
    } catch (const Error& e) {
      finish("failed", e.what());
      write_manifest();
      throw Error(e.code(), fmt::format("stage '{}' failed: {}", rec.name, e.what()));
    } catch (const std::exception& e) {
      finish("failed", e.what());
      write_manifest();
      throw Error(ExitCode::failure, fmt::format("stage '{}' failed: {}", rec.name, e.what()));
    }
  }
  m.complete = true;
  write_manifest();
  return result;
}

}  // namespace carbon
