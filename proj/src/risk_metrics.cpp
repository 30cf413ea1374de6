#include "carbon/risk_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

#include "carbon/errors.hpp"

namespace carbon {

namespace {

bool in_region(const CarbonRiskSnapshot& s, std::size_t i, std::string_view region) {
  return region == kWorldRegion || s.region[i] == region;
}

double regional_mean(const CarbonRiskSnapshot& s, std::string_view region, const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!in_region(s, i, region)) continue;
    sum += values[i];
    ++count;
  }
  if (count == 0) throw ValidationError(fmt::format("region '{}' has no assets on {}", region, s.date.to_string()));
  return sum / static_cast<double>(count);
}

}  // namespace

CarbonRiskSnapshot make_snapshot(Month date, std::vector<std::string> assets, std::vector<double> carbon_betas,
                                 std::vector<std::string> sector, std::vector<std::string> region) {
  if (carbon_betas.size() != assets.size() || sector.size() != assets.size() || region.size() != assets.size()) {
    throw ValidationError("make_snapshot: inconsistent lengths");
  }
  CarbonRiskSnapshot s{date, std::move(assets), std::move(carbon_betas), {}, std::move(sector), std::move(region)};
  s.acr.reserve(s.rcr.size());
  for (double b : s.rcr) s.acr.push_back(std::abs(b));
  return s;
}

double regional_average_beta(const CarbonRiskSnapshot& snapshot, std::string_view region) {
  return regional_mean(snapshot, region, snapshot.rcr);
}

double regional_average_acr(const CarbonRiskSnapshot& snapshot, std::string_view region) {
  return regional_mean(snapshot, region, snapshot.acr);
}

double quantile_linear(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<QuantileSummary> boxplot_stats(const CarbonRiskSnapshot& snapshot, GroupBy group_by,
                                           RiskMeasure measure) {
  const auto& labels = group_by == GroupBy::sector ? snapshot.sector : snapshot.region;
  const auto& values = measure == RiskMeasure::relative ? snapshot.rcr : snapshot.acr;
  std::map<std::string, std::vector<double>> groups;
  for (std::size_t i = 0; i < snapshot.size(); ++i) groups[labels[i]].push_back(values[i]);
  std::vector<QuantileSummary> out;
  for (auto& [name, v] : groups) {
    std::sort(v.begin(), v.end());
    out.push_back({name, v.size(), quantile_linear(v, 0.05), quantile_linear(v, 0.25), quantile_linear(v, 0.50),
                   quantile_linear(v, 0.75), quantile_linear(v, 0.95)});
  }
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw ValidationError("pearson: inputs differ in length or are empty");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

std::vector<CorrelationCell> ci_beta_correlation(const CarbonRiskSnapshot& snapshot,
                                                 std::span<const double> carbon_intensity, std::size_t min_obs) {
  if (carbon_intensity.size() != snapshot.size()) throw ValidationError("ci_beta_correlation: length mismatch");
  std::set<std::string> sectors(snapshot.sector.begin(), snapshot.sector.end());
  std::set<std::string> regions(snapshot.region.begin(), snapshot.region.end());
  regions.erase(std::string(kWorldRegion));

  std::vector<std::string> columns{std::string(kWorldRegion)};
  columns.insert(columns.end(), regions.begin(), regions.end());
  std::vector<std::string> rows(sectors.begin(), sectors.end());
  rows.emplace_back(kAllSectors);

  std::vector<CorrelationCell> out;
  std::vector<double> x, y;
  for (const auto& sector : rows) {
    for (const auto& region : columns) {
      x.clear();
      y.clear();
      for (std::size_t i = 0; i < snapshot.size(); ++i) {
        if (sector != kAllSectors && snapshot.sector[i] != sector) continue;
        if (!in_region(snapshot, i, region)) continue;
        if (std::isnan(carbon_intensity[i])) continue;
        x.push_back(carbon_intensity[i]);
        y.push_back(snapshot.rcr[i]);
      }
      CorrelationCell cell{sector, region, x.size(), CellStatus::ok, 0.0};
      if (x.size() < std::max<std::size_t>(min_obs, 2)) {
        cell.status = CellStatus::insufficient;
      } else {
        cell.value = pearson(x, y);
        if (std::isnan(cell.value)) cell.status = CellStatus::undefined;
      }
      out.push_back(std::move(cell));
    }
  }
  return out;
}

}  // namespace carbon
