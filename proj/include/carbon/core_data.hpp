#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "carbon/dates.hpp"

namespace carbon {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Monthly simple returns, dates x assets. Missing cells hold NaN and are never
/// imputed; membership marks the months an asset belongs to the universe.
struct ReturnsPanel {
  DateIndex dates;
  std::vector<std::string> assets;
  Eigen::MatrixXd returns;  // |dates| x |assets|
  BoolMatrix membership;    // |dates| x |assets|

  std::size_t num_dates() const noexcept { return dates.size(); }
  std::size_t num_assets() const noexcept { return assets.size(); }
  bool has_return(std::size_t t, std::size_t a) const { return !std::isnan(returns(t, a)); }
  std::optional<std::size_t> find_asset(std::string_view id) const;
  std::optional<std::size_t> find_date(Month m) const;

  /// Throws ValidationError when any invariant is broken.
  void validate() const;
};

/// Per asset, per date firm data. Absent numeric values are NaN; `present`
/// marks which (date, asset) records exist in the source.
struct FirmAttributes {
  DateIndex dates;
  std::vector<std::string> assets;
  Eigen::MatrixXd vc, pp, na;  // brown-green sub-scores in [0,1]
  Eigen::MatrixXd carbon_intensity;
  Eigen::MatrixXd market_cap;
  BoolMatrix present;
  std::vector<std::string> sector;  // per asset, from its latest record
  std::vector<std::string> region;

  bool empty() const noexcept { return assets.empty(); }
  std::optional<std::size_t> find_asset(std::string_view id) const;

  /// Named numeric column: vc, pp, na, carbon_intensity or market_cap.
  const Eigen::MatrixXd& metric(std::string_view name) const;

  /// Latest record of `asset` dated at or before `m`; falls back to the
  /// earliest record when none precedes `m`. nullopt if the asset has no
  /// record with a finite value of `values`.
  std::optional<std::size_t> record_as_of(const Eigen::MatrixXd& values, std::size_t asset, Month m) const;

  void validate() const;
};

/// Aligned market and brown-minus-green factor returns.
struct FactorSeries {
  DateIndex dates;
  Eigen::VectorXd r_mkt;
  std::optional<Eigen::VectorXd> r_bmg;

  std::size_t size() const noexcept { return dates.size(); }
  const Eigen::VectorXd& bmg() const;  // throws ValidationError when absent
  void validate() const;
};

ReturnsPanel load_returns(const std::filesystem::path& path);
FirmAttributes load_attributes(const std::filesystem::path& path);
FactorSeries load_factors(const std::filesystem::path& path);

std::string format_returns(const ReturnsPanel& panel);
std::string format_attributes(const FirmAttributes& attrs);
std::string format_factors(const FactorSeries& factors);
void write_returns(const ReturnsPanel& panel, const std::filesystem::path& path);
void write_attributes(const FirmAttributes& attrs, const std::filesystem::path& path);
void write_factors(const FactorSeries& factors, const std::filesystem::path& path);

struct AlignmentReport {
  std::size_t input_assets = 0;
  std::vector<std::string> dropped_assets;
  std::vector<std::string> retained_assets;
};

struct AlignedDataset {
  ReturnsPanel panel;
  FirmAttributes attributes;  // empty when none were supplied
  FactorSeries factors;
  AlignmentReport report;
};

struct AlignOptions {
  std::size_t min_membership_months = 36;
};

/// Restricts returns and factors to their common months, drops assets with
/// fewer than `min_membership_months` observed months, and keeps attribute
/// records that fall inside the common window for the retained assets.
AlignedDataset align(const ReturnsPanel& panel, const FirmAttributes& attrs, const FactorSeries& factors,
                     const AlignOptions& options = {});
AlignedDataset align(const AlignedDataset& data, const AlignOptions& options = {});

}  // namespace carbon
