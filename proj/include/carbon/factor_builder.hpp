#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "carbon/core_data.hpp"

namespace carbon {

/// Brown-green score from the value-chain, public-perception and
/// non-adaptability dimensions, each in [0,1]. Higher is browner.
///   BGS = 2/3 (0.7 VC + 0.3 PP) + NA/3 (0.7 VC + 0.3 PP)
double brown_green_score(double vc, double pp, double na) noexcept;

enum class ScoreMode { carima, single_metric };

struct ScoreConfig {
  ScoreMode mode = ScoreMode::carima;
  /// Attribute column ranked in single-metric mode; larger values are browner.
  std::string metric = "carbon_intensity";
};

/// Scores per (attribute date, asset); NaN where the asset has no record.
struct ScoreTable {
  DateIndex dates;
  std::vector<std::string> assets;
  Eigen::MatrixXd scores;
};

/// carima mode evaluates the brown-green score on every record; single-metric
/// mode ranks the metric cross-sectionally at each date (ties share the
/// average rank) and rescales ranks to [0,1].
ScoreTable compute_bgs(const FirmAttributes& attrs, const ScoreConfig& config);

/// Per-asset mean over the dates where a score exists. Throws when an asset
/// has no score at all.
std::vector<double> average_bgs(const ScoreTable& table);

/// Six size x color portfolios: (S)mall/(B)ig x (G)reen/(N)eutral/(B)rown.
enum class Bucket : std::size_t { SG = 0, SN, SB, BG, BN, BB };
std::string_view to_string(Bucket b) noexcept;

struct PortfolioBucket {
  Bucket label = Bucket::SG;
  std::vector<std::size_t> members;  // indices into the universe passed to form_buckets
  std::vector<double> weights;       // value weights, sum to 1 when nonempty
};

using BucketSet = std::array<PortfolioBucket, 6>;

struct Breakpoints {
  double size = 0.5;  // fraction of assets classified small
  double color_lo = 0.3;
  double color_hi = 0.7;
  void validate() const;
};

/// Independent size and color sorts. Assets with a NaN score are left out.
/// Ties are broken by asset id, so the split is a deterministic rank split:
/// round(n * size) small assets, round(n * color_lo) green and
/// round(n * (1 - color_hi)) brown.
BucketSet form_buckets(std::span<const std::string> asset_ids, std::span<const double> scores,
                       std::span<const double> market_caps, const Breakpoints& breakpoints = {});

/// Recomputes value weights inside every bucket from `market_caps`.
void reweight(BucketSet& buckets, std::span<const double> market_caps);

/// Value-weighted return of one bucket at a panel date, with weights
/// renormalised over members that have a return. NaN if none does.
double bucket_return(const PortfolioBucket& bucket, const ReturnsPanel& panel, std::size_t date);

/// R_bmg = 1/2 (R_SB + R_BB) - 1/2 (R_SG + R_BG). Neutral buckets only serve
/// the sort. Bucket member indices must index `panel.assets`.
double bmg_return(const BucketSet& buckets, const ReturnsPanel& panel, std::size_t date);

struct ScaledSeries {
  Eigen::VectorXd series;
  double coefficient = 1.0;
};

/// Rescales r_bmg so that its sample standard deviation equals r_mkt's over
/// the full common period.
ScaledSeries scale_to_market_vol(const Eigen::VectorXd& r_bmg, const Eigen::VectorXd& r_mkt);

enum class Rebalance { static_average, annual };
enum class WeightRefresh { monthly, frozen };

struct FactorBuildConfig {
  ScoreConfig score;
  Breakpoints breakpoints;
  Rebalance rebalance = Rebalance::static_average;
  WeightRefresh weights = WeightRefresh::monthly;
  bool scale_to_market = false;
};

struct Formation {
  Month date;
  BucketSet buckets;
};

struct BmgFactorResult {
  DateIndex dates;
  Eigen::VectorXd r_bmg;  // after scaling when requested
  Eigen::VectorXd r_bmg_raw;
  std::vector<Formation> formations;
  double scaling = 1.0;
};

/// Builds the brown-minus-green factor on an aligned dataset.
///  - static_average: one formation at the first month from period-average
///    scores and the market caps as of that month.
///  - annual: a formation at the first month of every calendar year from the
///    latest scores at or before it.
/// With monthly weight refresh, weights at month t use the latest market cap
/// dated strictly before t.
BmgFactorResult build_bmg_factor(const AlignedDataset& data, const FactorBuildConfig& config);

}  // namespace carbon
