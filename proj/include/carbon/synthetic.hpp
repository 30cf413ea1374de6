#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "carbon/core_data.hpp"

namespace carbon {

/// Independent random streams keyed by (seed, tag, index). A stream's draws do
/// not depend on which other streams were used or in what order.
class RandomStreams {
 public:
  explicit RandomStreams(std::uint64_t seed) : seed_(seed) {}
  std::mt19937_64 stream(std::string_view tag, std::uint64_t index) const;
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
};

/// Uniform on (0,1) and standard normal (inverse-CDF) draws from a stream.
double uniform01(std::mt19937_64& rng);
double standard_normal(std::mt19937_64& rng);

struct RegionSpec {
  std::string name;
  double share = 0.0;
  double beta_bmg_mean = 0.0;
};

struct SectorSpec {
  std::string name;
  double share = 0.0;
};

struct SyntheticWorldSpec {
  std::size_t assets = 200;
  std::size_t months = 108;
  Month start{2010, 1};
  std::vector<RegionSpec> regions;  // empty: default world
  std::vector<SectorSpec> sectors;  // empty: default sectors

  double beta_bmg_dispersion = 0.25;
  double beta_mkt_mean = 1.02;
  double beta_mkt_dispersion = 0.25;
  double beta_bmg_step = 0.0624;  // monthly random-walk step std
  double beta_mkt_step = 0.0545;
  double alpha_step = 0.001;

  double idio_vol = 0.07;  // median monthly residual std
  double idio_vol_log_sd = 0.3;

  double market_mean = 0.008;
  double market_vol = 0.045;
  double bmg_mean = 0.0;
  double bmg_vol = 0.045;

  double ci_median = 300.0;
  double ci_log_sd = 1.2;
  double ci_beta_correlation = 0.2;  // Pearson target against terminal beta_bmg

  double cap_median = 1e4;
  double cap_log_sd = 1.0;
  double late_entry_fraction = 0.1;
  double early_exit_fraction = 0.05;

  /// Fills default regions and sectors when empty, normalises shares and
  /// throws ValidationError on an invalid spec.
  void resolve();
};

std::vector<RegionSpec> default_regions();
std::vector<SectorSpec> default_sectors();

/// True model parameters behind a synthetic world.
struct SyntheticTruth {
  Eigen::MatrixXd alpha;  // dates x assets
  Eigen::MatrixXd beta_mkt;
  Eigen::MatrixXd beta_bmg;
  Eigen::VectorXd idio_var;
};

struct SyntheticWorld {
  SyntheticWorldSpec spec;  // resolved
  ReturnsPanel panel;
  FirmAttributes attributes;
  FactorSeries factors;  // market and true brown-minus-green factor
  SyntheticTruth truth;
};

/// Simulates the random-walk two-factor model. Returns below -95% are clamped
/// there. Carbon intensity is lognormal and linked to the terminal carbon beta
/// through a Gaussian copula sized so that the Pearson correlation matches the
/// target; throws ValidationError when the target is out of reach for the
/// lognormal dispersion. Brown-green sub-scores follow the initial carbon beta.
SyntheticWorld generate_synthetic(SyntheticWorldSpec spec, std::uint64_t seed);

std::string format_truth_betas(const SyntheticWorld& world);
std::string format_truth_params(const SyntheticWorld& world);

/// Writes returns.csv, attributes.csv, factors.csv, truth_betas.csv and
/// truth_params.csv into `dir`.
void write_synthetic(const SyntheticWorld& world, const std::filesystem::path& dir);

}  // namespace carbon
