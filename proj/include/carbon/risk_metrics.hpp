#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "carbon/dates.hpp"

namespace carbon {

/// Cross-section of carbon betas at one date. Relative carbon risk is the
/// signed carbon beta, absolute carbon risk its magnitude.
struct CarbonRiskSnapshot {
  Month date;
  std::vector<std::string> assets;
  std::vector<double> rcr;
  std::vector<double> acr;  // |rcr|, filled by make_snapshot
  std::vector<std::string> sector;
  std::vector<std::string> region;

  std::size_t size() const noexcept { return assets.size(); }
};

CarbonRiskSnapshot make_snapshot(Month date, std::vector<std::string> assets, std::vector<double> carbon_betas,
                                 std::vector<std::string> sector, std::vector<std::string> region);

/// Label of the all-assets aggregate. Selecting it takes every asset.
inline constexpr std::string_view kWorldRegion = "WD";

/// Equal-weighted mean carbon beta over the assets of `region`.
double regional_average_beta(const CarbonRiskSnapshot& snapshot, std::string_view region);
/// Equal-weighted mean |carbon beta| over the assets of `region`.
double regional_average_acr(const CarbonRiskSnapshot& snapshot, std::string_view region);

/// Sample quantile with linear interpolation between order statistics:
/// h = (n - 1) p, q = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
double quantile_linear(std::span<const double> sorted, double p);

enum class GroupBy { sector, region };
enum class RiskMeasure { relative, absolute };

struct QuantileSummary {
  std::string group;
  std::size_t count = 0;
  double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;
};

/// Box-plot quantiles per group, groups in lexicographic order.
std::vector<QuantileSummary> boxplot_stats(const CarbonRiskSnapshot& snapshot, GroupBy group_by,
                                           RiskMeasure measure = RiskMeasure::relative);

/// Pearson correlation; NaN when either input has zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

enum class CellStatus { ok, insufficient, undefined };

struct CorrelationCell {
  std::string sector;  // "All sectors" for the aggregate row
  std::string region;  // kWorldRegion for the all-regions column
  std::size_t count = 0;
  CellStatus status = CellStatus::ok;
  double value = 0.0;  // meaningful only when status == ok
};

inline constexpr std::string_view kAllSectors = "All sectors";

/// Correlation between carbon intensity and carbon beta per (sector, region)
/// cell, plus an "All sectors" row and a WD column. Cells with fewer than
/// `min_obs` assets are insufficient; zero variance makes a cell undefined.
/// Assets whose intensity is NaN are ignored.
std::vector<CorrelationCell> ci_beta_correlation(const CarbonRiskSnapshot& snapshot,
                                                 std::span<const double> carbon_intensity, std::size_t min_obs = 3);

}  // namespace carbon
