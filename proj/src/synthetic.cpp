#include "carbon/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <gsl/gsl_cdf.h>

#include "carbon/csv.hpp"
#include "carbon/errors.hpp"

namespace carbon {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double normal_cdf(double x) { return gsl_cdf_ugaussian_P(x); }

template <class Spec>
std::size_t pick_by_share(const std::vector<Spec>& specs, double u) {
  double cum = 0.0;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    cum += specs[k].share;
    if (u < cum) return k;
  }
  return specs.size() - 1;
}

template <class Spec>
void normalise_shares(std::vector<Spec>& specs, std::string_view what) {
  if (specs.empty()) throw ValidationError(fmt::format("synthetic spec: no {}", what));
  std::set<std::string> names;
  double total = 0.0;
  for (const auto& s : specs) {
    if (s.name.empty() || s.name.find(',') != std::string::npos) {
      throw ValidationError(fmt::format("synthetic spec: invalid {} name '{}'", what, s.name));
    }
    if (!names.insert(s.name).second) throw ValidationError(fmt::format("synthetic spec: duplicate {} '{}'", what, s.name));
    if (!(s.share >= 0.0) || !std::isfinite(s.share)) {
      throw ValidationError(fmt::format("synthetic spec: {} '{}' has a negative share", what, s.name));
    }
    total += s.share;
  }
  if (!(total > 0.0)) throw ValidationError(fmt::format("synthetic spec: {} shares sum to zero", what));
  // shares already summing to one are kept as given so a resolved spec resolves to itself
  if (std::abs(total - 1.0) > 1e-12) {
    for (auto& s : specs) s.share /= total;
  }
}

/// Normal scores of the ranks of `values` (ties by position).
Eigen::VectorXd normal_scores(const Eigen::VectorXd& values) {
  const auto n = values.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values(a) < values(b); });
  Eigen::VectorXd out(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    out(order[static_cast<std::size_t>(r)]) =
        gsl_cdf_ugaussian_Pinv((static_cast<double>(r) + 0.5) / static_cast<double>(n));
  }
  return out;
}

}  // namespace

std::mt19937_64 RandomStreams::stream(std::string_view tag, std::uint64_t index) const {
  const std::uint64_t key = splitmix64(splitmix64(seed_ ^ fnv1a(tag)) ^ splitmix64(index));
  return std::mt19937_64(key);
}

double uniform01(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double standard_normal(std::mt19937_64& rng) { return gsl_cdf_ugaussian_Pinv(uniform01(rng)); }

std::vector<RegionSpec> default_regions() {
  return {{"NA", 0.60, 0.12}, {"EMU", 0.12, -0.20}, {"EU", 0.13, 0.05}, {"JP", 0.15, -0.03}};
}

std::vector<SectorSpec> default_sectors() {
  return {{"Energy", 0.06},
          {"Materials", 0.05},
          {"Utilities", 0.03},
          {"Industrials", 0.11},
          {"Consumer Discretionary", 0.11},
          {"Consumer Staples", 0.08},
          {"Health Care", 0.13},
          {"Financials", 0.16},
          {"Information Technology", 0.18},
          {"Communication Services", 0.09}};
}

void SyntheticWorldSpec::resolve() {
  if (regions.empty()) regions = default_regions();
  if (sectors.empty()) sectors = default_sectors();
  if (assets < 6) throw ValidationError("synthetic spec: at least 6 assets are required");
  if (months < 2) throw ValidationError("synthetic spec: at least 2 months are required");
  if (start.month < 1 || start.month > 12) throw ValidationError("synthetic spec: invalid start month");
  if (!(ci_beta_correlation > -1.0 && ci_beta_correlation < 1.0)) {
    throw ValidationError("synthetic spec: correlation target must lie in (-1, 1)");
  }
  const double nonneg[] = {beta_bmg_dispersion, beta_mkt_dispersion, beta_bmg_step, beta_mkt_step, alpha_step,
                           idio_vol_log_sd,     market_vol,          bmg_vol,       ci_log_sd,     cap_log_sd};
  for (double v : nonneg) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("synthetic spec: dispersions and vols must be >= 0");
  }
  if (!(idio_vol > 0.0) || !(ci_median > 0.0) || !(cap_median > 0.0)) {
    throw ValidationError("synthetic spec: idio_vol, ci_median and cap_median must be > 0");
  }
  for (double f : {late_entry_fraction, early_exit_fraction}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("synthetic spec: entry/exit fractions must lie in [0, 1]");
  }
  if (!std::isfinite(beta_mkt_mean) || !std::isfinite(market_mean) || !std::isfinite(bmg_mean)) {
    throw ValidationError("synthetic spec: non-finite mean");
  }
  normalise_shares(regions, "region");
  normalise_shares(sectors, "sector");
  for (const auto& r : regions) {
    if (r.name == "WD") throw ValidationError("synthetic spec: 'WD' is reserved for the all-regions aggregate");
  }
}

SyntheticWorld generate_synthetic(SyntheticWorldSpec spec, std::uint64_t seed) {
  spec.resolve();
  const auto n = static_cast<Eigen::Index>(spec.assets);
  const auto T = static_cast<Eigen::Index>(spec.months);

  // Lognormal intensity: corr(Z, exp(sW)) = rho s / sqrt(exp(s^2) - 1) for
  // standard normals Z, W with correlation rho.
  double latent_corr = 0.0;
  if (spec.ci_beta_correlation != 0.0) {
    const double s = spec.ci_log_sd;
    const double attainable = s > 0.0 ? s / std::sqrt(std::expm1(s * s)) : 0.0;
    latent_corr = attainable > 0.0 ? spec.ci_beta_correlation / attainable : std::numeric_limits<double>::infinity();
    if (!(std::abs(latent_corr) < 1.0)) {
      throw ValidationError(fmt::format(
          "synthetic spec: correlation target {} is infeasible with ci_log_sd {} (largest attainable magnitude {})",
          spec.ci_beta_correlation, s, attainable));
    }
  }

  const RandomStreams rs(seed);
  SyntheticWorld w;
  w.spec = spec;

  DateIndex dates;
  Month m = spec.start;
  for (Eigen::Index t = 0; t < T; ++t, m = m.next()) dates.push_back(m);

  const int width = std::max(4, static_cast<int>(std::to_string(spec.assets).size()));
  std::vector<std::string> ids;
  std::vector<std::string> region(spec.assets), sector(spec.assets);
  std::vector<std::size_t> region_idx(spec.assets);
  for (std::size_t i = 0; i < spec.assets; ++i) {
    ids.push_back(fmt::format("A{:0{}}", i + 1, width));
    region_idx[i] = pick_by_share(spec.regions, (static_cast<double>(i) + 0.5) / static_cast<double>(spec.assets));
    region[i] = spec.regions[region_idx[i]].name;
    auto rng = rs.stream("sector", i);
    sector[i] = spec.sectors[pick_by_share(spec.sectors, uniform01(rng))].name;
  }

  // Factors.
  Eigen::VectorXd r_mkt(T), r_bmg(T);
  {
    auto rng = rs.stream("factors", 0);
    for (Eigen::Index t = 0; t < T; ++t) {
      r_mkt(t) = spec.market_mean + spec.market_vol * standard_normal(rng);
      r_bmg(t) = spec.bmg_mean + spec.bmg_vol * standard_normal(rng);
    }
  }

  auto& truth = w.truth;
  truth.alpha.resize(T, n);
  truth.beta_mkt.resize(T, n);
  truth.beta_bmg.resize(T, n);
  truth.idio_var.resize(n);
  Eigen::MatrixXd returns(T, n);
  BoolMatrix member(T, n);
  Eigen::MatrixXd caps(T, n);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    auto state = rs.stream("state", iu);
    double a = 0.0;
    double bm = spec.beta_mkt_mean + spec.beta_mkt_dispersion * standard_normal(state);
    double bb = spec.regions[region_idx[iu]].beta_bmg_mean + spec.beta_bmg_dispersion * standard_normal(state);
    for (Eigen::Index t = 0; t < T; ++t) {
      if (t > 0) {
        a += spec.alpha_step * standard_normal(state);
        bm += spec.beta_mkt_step * standard_normal(state);
        bb += spec.beta_bmg_step * standard_normal(state);
      }
      truth.alpha(t, i) = a;
      truth.beta_mkt(t, i) = bm;
      truth.beta_bmg(t, i) = bb;
    }

    auto idio = rs.stream("idio", iu);
    const double vol = spec.idio_vol * std::exp(spec.idio_vol_log_sd * standard_normal(idio));
    truth.idio_var(i) = vol * vol;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double r = truth.alpha(t, i) + truth.beta_mkt(t, i) * r_mkt(t) + truth.beta_bmg(t, i) * r_bmg(t) +
                       vol * standard_normal(idio);
      returns(t, i) = std::max(r, -0.95);
    }

    auto mem = rs.stream("membership", iu);
    Eigen::Index first = 0, last = T - 1;
    const Eigen::Index window = T / 3;
    const double u_entry = uniform01(mem), u_entry_at = uniform01(mem);
    const double u_exit = uniform01(mem), u_exit_at = uniform01(mem);
    if (window > 0 && u_entry < spec.late_entry_fraction) {
      first = 1 + static_cast<Eigen::Index>(u_entry_at * static_cast<double>(window));
    }
    if (window > 0 && u_exit < spec.early_exit_fraction) {
      last = T - 2 - static_cast<Eigen::Index>(u_exit_at * static_cast<double>(window));
    }
    last = std::max(last, first);
    for (Eigen::Index t = 0; t < T; ++t) member(t, i) = t >= first && t <= last;

    auto cap_rng = rs.stream("cap", iu);
    double cap = spec.cap_median * std::exp(spec.cap_log_sd * standard_normal(cap_rng));
    for (Eigen::Index t = 0; t < T; ++t) {
      cap *= 1.0 + returns(t, i);
      caps(t, i) = cap;
    }
  }

  const Eigen::VectorXd terminal_scores = normal_scores(truth.beta_bmg.row(T - 1).transpose());
  const Eigen::VectorXd initial_scores = normal_scores(truth.beta_bmg.row(0).transpose());

  auto& attrs = w.attributes;
  attrs.dates = dates;
  attrs.assets = ids;
  attrs.sector = sector;
  attrs.region = region;
  for (auto* mat : {&attrs.vc, &attrs.pp, &attrs.na, &attrs.carbon_intensity, &attrs.market_cap}) {
    mat->setConstant(T, n, kMissing);
  }
  attrs.present = member;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    auto ci_rng = rs.stream("ci", iu);
    const double z = latent_corr * terminal_scores(i) + std::sqrt(1.0 - latent_corr * latent_corr) * standard_normal(ci_rng);
    const double ci = spec.ci_median * std::exp(spec.ci_log_sd * z);

    auto score_rng = rs.stream("score", iu);
    const double L = initial_scores(i);
    const double vc = normal_cdf(L + 0.5 * standard_normal(score_rng));
    const double pp = normal_cdf(0.8 * L + 0.6 * standard_normal(score_rng));
    const double na = normal_cdf(0.5 * L + 0.9 * standard_normal(score_rng));

    for (Eigen::Index t = 0; t < T; ++t) {
      if (!member(t, i)) continue;
      attrs.vc(t, i) = vc;
      attrs.pp(t, i) = pp;
      attrs.na(t, i) = na;
      attrs.carbon_intensity(t, i) = ci;
      attrs.market_cap(t, i) = caps(t, i);
    }
  }

  w.panel.dates = dates;
  w.panel.assets = ids;
  w.panel.returns = returns;
  w.panel.membership = member;
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index i = 0; i < n; ++i)
      if (!member(t, i)) w.panel.returns(t, i) = kMissing;

  w.factors.dates = dates;
  w.factors.r_mkt = r_mkt;
  w.factors.r_bmg = r_bmg;

  w.panel.validate();
  w.attributes.validate();
  w.factors.validate();
  return w;
}

std::string format_truth_betas(const SyntheticWorld& w) {
  std::string out = "date,asset_id,alpha,beta_mkt,beta_bmg\n";
  const auto& tr = w.truth;
  for (std::size_t t = 0; t < w.panel.dates.size(); ++t) {
    const auto date = w.panel.dates[t].to_string();
    const auto ti = static_cast<Eigen::Index>(t);
    for (std::size_t a = 0; a < w.panel.assets.size(); ++a) {
      const auto ai = static_cast<Eigen::Index>(a);
      out += fmt::format("{},{},{},{},{}\n", date, w.panel.assets[a], csv::format_number(tr.alpha(ti, ai)),
                         csv::format_number(tr.beta_mkt(ti, ai)), csv::format_number(tr.beta_bmg(ti, ai)));
    }
  }
  return out;
}

std::string format_truth_params(const SyntheticWorld& w) {
  std::string out = "asset_id,region,sector,idio_var,step_var_alpha,step_var_mkt,step_var_bmg\n";
  const auto& s = w.spec;
  for (std::size_t a = 0; a < w.panel.assets.size(); ++a) {
    out += fmt::format("{},{},{},{},{},{},{}\n", w.panel.assets[a], w.attributes.region[a], w.attributes.sector[a],
                       csv::format_number(w.truth.idio_var(static_cast<Eigen::Index>(a))),
                       csv::format_number(s.alpha_step * s.alpha_step),
                       csv::format_number(s.beta_mkt_step * s.beta_mkt_step),
                       csv::format_number(s.beta_bmg_step * s.beta_bmg_step));
  }
  return out;
}

void write_synthetic(const SyntheticWorld& world, const std::filesystem::path& dir) {
  write_returns(world.panel, dir / "returns.csv");
  write_attributes(world.attributes, dir / "attributes.csv");
  write_factors(world.factors, dir / "factors.csv");
  csv::write_file(dir / "truth_betas.csv", format_truth_betas(world));
  csv::write_file(dir / "truth_params.csv", format_truth_params(world));
}

}  // namespace carbon
