#include "carbon/factor_builder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "carbon/errors.hpp"

namespace carbon {

namespace {

std::size_t rounded_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 0.5 + 1e-9));
}

double sample_std(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  return std::sqrt((x.array() - mean).square().sum() / static_cast<double>(x.size() - 1));
}

}  // namespace

double brown_green_score(double vc, double pp, double na) noexcept {
  const double exposure = 0.7 * vc + 0.3 * pp;
  return (2.0 / 3.0) * exposure + (na / 3.0) * exposure;
}

std::string_view to_string(Bucket b) noexcept {
  static constexpr std::string_view names[] = {"SG", "SN", "SB", "BG", "BN", "BB"};
  return names[static_cast<std::size_t>(b)];
}

ScoreTable compute_bgs(const FirmAttributes& attrs, const ScoreConfig& config) {
  ScoreTable table{attrs.dates, attrs.assets, Eigen::MatrixXd::Constant(attrs.present.rows(), attrs.present.cols(),
                                                                        kMissing)};
  const auto T = attrs.present.rows();
  const auto N = attrs.present.cols();
  if (config.mode == ScoreMode::carima) {
    for (Eigen::Index t = 0; t < T; ++t) {
      for (Eigen::Index a = 0; a < N; ++a) {
        if (!attrs.present(t, a)) continue;
        for (auto [m, name] : {std::pair{&attrs.vc, "vc"}, std::pair{&attrs.pp, "pp"}, std::pair{&attrs.na, "na"}}) {
          if (std::isnan((*m)(t, a))) {
            throw ValidationError(fmt::format("compute_bgs: asset {} has no '{}' on {}", attrs.assets[a], name,
                                              attrs.dates[t].to_string()));
          }
        }
        table.scores(t, a) = brown_green_score(attrs.vc(t, a), attrs.pp(t, a), attrs.na(t, a));
      }
    }
    return table;
  }

  const Eigen::MatrixXd& metric = attrs.metric(config.metric);
  std::vector<std::pair<double, Eigen::Index>> cross;
  for (Eigen::Index t = 0; t < T; ++t) {
    cross.clear();
    for (Eigen::Index a = 0; a < N; ++a) {
      if (!attrs.present(t, a)) continue;
      if (std::isnan(metric(t, a))) {
        throw ValidationError(fmt::format("compute_bgs: asset {} has no '{}' on {}", attrs.assets[a], config.metric,
                                          attrs.dates[t].to_string()));
      }
      cross.emplace_back(metric(t, a), a);
    }
    if (cross.empty()) continue;
    std::sort(cross.begin(), cross.end());
    const double denom = cross.size() > 1 ? static_cast<double>(cross.size() - 1) : 0.0;
    for (std::size_t i = 0; i < cross.size();) {
      std::size_t j = i;
      while (j + 1 < cross.size() && cross[j + 1].first == cross[i].first) ++j;
      const double avg_rank = 0.5 * static_cast<double>(i + j);
      for (std::size_t k = i; k <= j; ++k) table.scores(t, cross[k].second) = denom > 0.0 ? avg_rank / denom : 0.5;
      i = j + 1;
    }
  }
  return table;
}

std::vector<double> average_bgs(const ScoreTable& table) {
  if (table.assets.empty()) throw ValidationError("average_bgs: empty score table");
  std::vector<double> out(table.assets.size());
  for (std::size_t a = 0; a < table.assets.size(); ++a) {
    double sum = 0.0;
    std::size_t count = 0;
    for (Eigen::Index t = 0; t < table.scores.rows(); ++t) {
      const double s = table.scores(t, static_cast<Eigen::Index>(a));
      if (std::isnan(s)) continue;
      sum += s;
      ++count;
    }
    if (count == 0) throw ValidationError(fmt::format("average_bgs: asset {} has no score", table.assets[a]));
    out[a] = sum / static_cast<double>(count);
  }
  return out;
}

void Breakpoints::validate() const {
  if (!(size > 0.0 && size < 1.0)) throw ValidationError("size breakpoint must lie in (0,1)");
  if (!(color_lo > 0.0 && color_lo < color_hi && color_hi < 1.0)) {
    throw ValidationError("color breakpoints must satisfy 0 < lo < hi < 1");
  }
}

BucketSet form_buckets(std::span<const std::string> asset_ids, std::span<const double> scores,
                       std::span<const double> market_caps, const Breakpoints& breakpoints) {
  breakpoints.validate();
  if (asset_ids.size() != scores.size() || scores.size() != market_caps.size()) {
    throw ValidationError("form_buckets: ids, scores and caps differ in length");
  }
  std::vector<std::size_t> universe;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i])) continue;
    if (!(market_caps[i] > 0.0) || !std::isfinite(market_caps[i])) {
      throw ValidationError(fmt::format("form_buckets: asset {} has no positive market cap", asset_ids[i]));
    }
    universe.push_back(i);
  }
  const std::size_t n = universe.size();
  if (n < 6) throw ValidationError(fmt::format("form_buckets: {} scored assets, fewer than the 6 buckets", n));

  const auto [lo, hi] = std::minmax_element(universe.begin(), universe.end(),
                                            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  if (scores[*lo] == scores[*hi]) throw ValidationError("form_buckets: degenerate color breakpoints (all scores equal)");

  auto by = [&](std::span<const double> key) {
    auto order = universe;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (key[a] != key[b]) return key[a] < key[b];
      return asset_ids[a] < asset_ids[b];
    });
    return order;
  };
  const auto size_order = by(market_caps);
  const auto color_order = by(scores);
  const std::size_t n_small = rounded_count(n, breakpoints.size);
  const std::size_t n_green = rounded_count(n, breakpoints.color_lo);
  const std::size_t n_brown = rounded_count(n, 1.0 - breakpoints.color_hi);
  if (n_small == 0 || n_small == n || n_green == 0 || n_brown == 0 || n_green + n_brown >= n) {
    throw ValidationError(fmt::format("form_buckets: breakpoints leave an empty size or color group for {} assets", n));
  }

  std::vector<int> is_big(scores.size(), 0), color(scores.size(), 1);
  for (std::size_t k = n_small; k < n; ++k) is_big[size_order[k]] = 1;
  for (std::size_t k = 0; k < n_green; ++k) color[color_order[k]] = 0;
  for (std::size_t k = n - n_brown; k < n; ++k) color[color_order[k]] = 2;

  BucketSet buckets;
  for (std::size_t b = 0; b < 6; ++b) buckets[b].label = static_cast<Bucket>(b);
  for (auto i : universe) buckets[static_cast<std::size_t>(is_big[i] * 3 + color[i])].members.push_back(i);
  reweight(buckets, market_caps);
  return buckets;
}

void reweight(BucketSet& buckets, std::span<const double> market_caps) {
  for (auto& bucket : buckets) {
    bucket.weights.assign(bucket.members.size(), 0.0);
    double total = 0.0;
    for (auto i : bucket.members) total += market_caps[i];
    if (bucket.members.empty()) continue;
    if (!(total > 0.0)) throw ValidationError("reweight: bucket with non-positive total market cap");
    for (std::size_t k = 0; k < bucket.members.size(); ++k) bucket.weights[k] = market_caps[bucket.members[k]] / total;
  }
}

double bucket_return(const PortfolioBucket& bucket, const ReturnsPanel& panel, std::size_t date) {
  double weighted = 0.0;
  double mass = 0.0;
  for (std::size_t k = 0; k < bucket.members.size(); ++k) {
    const auto a = bucket.members[k];
    if (!panel.has_return(date, a)) continue;
    weighted += bucket.weights[k] * panel.returns(static_cast<Eigen::Index>(date), static_cast<Eigen::Index>(a));
    mass += bucket.weights[k];
  }
  return mass > 0.0 ? weighted / mass : kMissing;
}

double bmg_return(const BucketSet& buckets, const ReturnsPanel& panel, std::size_t date) {
  auto leg = [&](Bucket b) {
    const double r = bucket_return(buckets[static_cast<std::size_t>(b)], panel, date);
    if (std::isnan(r)) {
      throw ValidationError(fmt::format("bmg_return: bucket {} has no member with a return on {}", to_string(b),
                                        panel.dates[date].to_string()));
    }
    return r;
  };
  const double sb = leg(Bucket::SB), bb = leg(Bucket::BB), sg = leg(Bucket::SG), bg = leg(Bucket::BG);
  return 0.5 * (sb + bb) - 0.5 * (sg + bg);
}

ScaledSeries scale_to_market_vol(const Eigen::VectorXd& r_bmg, const Eigen::VectorXd& r_mkt) {
  if (r_bmg.size() != r_mkt.size()) throw ValidationError("scale_to_market_vol: series lengths differ");
  if (r_bmg.size() < 2) throw ValidationError("scale_to_market_vol: need at least two observations");
  const double sd_bmg = sample_std(r_bmg);
  const double sd_mkt = sample_std(r_mkt);
  if (!(sd_bmg > 0.0) || !(sd_mkt > 0.0)) throw ValidationError("scale_to_market_vol: zero-variance series");
  const double c = sd_mkt / sd_bmg;
  return {r_bmg * c, c};
}

BmgFactorResult build_bmg_factor(const AlignedDataset& data, const FactorBuildConfig& config) {
  const auto& panel = data.panel;
  const auto& attrs = data.attributes;
  if (attrs.empty()) throw ValidationError("build_bmg_factor: firm attributes are required");
  config.breakpoints.validate();

  const ScoreTable scores = compute_bgs(attrs, config.score);
  const std::size_t N = panel.num_assets();
  std::vector<std::optional<std::size_t>> attr_index(N);
  for (std::size_t a = 0; a < N; ++a) attr_index[a] = attrs.find_asset(panel.assets[a]);

  auto caps_as_of = [&](Month m) {
    std::vector<double> caps(N, kMissing);
    for (std::size_t a = 0; a < N; ++a) {
      if (!attr_index[a]) continue;
      if (auto r = attrs.record_as_of(attrs.market_cap, *attr_index[a], m)) {
        caps[a] = attrs.market_cap(static_cast<Eigen::Index>(*r), static_cast<Eigen::Index>(*attr_index[a]));
      }
    }
    return caps;
  };

  BmgFactorResult result;
  result.dates = panel.dates;
  if (config.rebalance == Rebalance::static_average) {
    // Period-average score; assets without any score stay out of the sort.
    std::vector<double> per_asset(N, kMissing);
    for (std::size_t a = 0; a < N; ++a) {
      if (!attr_index[a]) continue;
      double sum = 0.0;
      std::size_t count = 0;
      for (Eigen::Index t = 0; t < scores.scores.rows(); ++t) {
        const double s = scores.scores(t, static_cast<Eigen::Index>(*attr_index[a]));
        if (std::isnan(s)) continue;
        sum += s;
        ++count;
      }
      if (count > 0) per_asset[a] = sum / static_cast<double>(count);
    }
    const Month first = panel.dates.front();
    result.formations.push_back({first, form_buckets(panel.assets, per_asset, caps_as_of(first), config.breakpoints)});
  } else {
    for (std::size_t t = 0; t < panel.num_dates(); ++t) {
      const Month m = panel.dates[t];
      if (t != 0 && m.month != 1) continue;
      std::vector<double> point(N, kMissing);
      for (std::size_t a = 0; a < N; ++a) {
        if (!attr_index[a]) continue;
        if (auto r = attrs.record_as_of(scores.scores, *attr_index[a], m)) {
          point[a] = scores.scores(static_cast<Eigen::Index>(*r), static_cast<Eigen::Index>(*attr_index[a]));
        }
      }
      result.formations.push_back({m, form_buckets(panel.assets, point, caps_as_of(m), config.breakpoints)});
    }
  }

  result.r_bmg_raw.resize(static_cast<Eigen::Index>(panel.num_dates()));
  std::size_t current = 0;
  for (std::size_t t = 0; t < panel.num_dates(); ++t) {
    while (current + 1 < result.formations.size() && result.formations[current + 1].date <= panel.dates[t]) ++current;
    BucketSet buckets = result.formations[current].buckets;
    if (config.weights == WeightRefresh::monthly) {
      const Month prior = Month::from_ordinal(panel.dates[t].ordinal() - 1);
      auto caps = caps_as_of(prior);
      for (auto& bucket : buckets) {
        for (auto i : bucket.members) {
          if (std::isnan(caps[i])) throw ValidationError(fmt::format("no market cap for {}", panel.assets[i]));
        }
      }
      reweight(buckets, caps);
    }
    result.r_bmg_raw(static_cast<Eigen::Index>(t)) = bmg_return(buckets, panel, t);
  }

  result.r_bmg = result.r_bmg_raw;
  if (config.scale_to_market) {
    auto scaled = scale_to_market_vol(result.r_bmg_raw, data.factors.r_mkt);
    result.r_bmg = std::move(scaled.series);
    result.scaling = scaled.coefficient;
  }
  return result;
}

}  // namespace carbon
