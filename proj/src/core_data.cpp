#include "carbon/core_data.hpp"

#include <algorithm>
#include <map>
#include <set>

#include <fmt/format.h>

#include "carbon/csv.hpp"
#include "carbon/errors.hpp"

namespace carbon {

namespace {

std::optional<std::size_t> index_of(const std::vector<std::string>& ids, std::string_view id) {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it != ids.end() && *it == id) return static_cast<std::size_t>(it - ids.begin());
  // Asset lists are sorted on load but callers may build unsorted ones.
  it = std::find(ids.begin(), ids.end(), id);
  if (it != ids.end()) return static_cast<std::size_t>(it - ids.begin());
  return std::nullopt;
}

Month parse_date(const csv::Table& table, std::size_t row, std::size_t col) {
  try {
    return Month::parse(table.rows[row][col]);
  } catch (const ValidationError& e) {
    throw ParseError(table.path.string(), table.line_numbers[row], e.what());
  }
}

void check_unit_interval(const Eigen::MatrixXd& m, std::string_view name) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double v = m.data()[i];
    if (!std::isnan(v) && (v < 0.0 || v > 1.0)) {
      throw ValidationError(fmt::format("attribute '{}' outside [0,1]: {}", name, v));
    }
  }
}

}  // namespace

std::optional<std::size_t> ReturnsPanel::find_asset(std::string_view id) const { return index_of(assets, id); }

std::optional<std::size_t> ReturnsPanel::find_date(Month m) const {
  auto it = std::lower_bound(dates.begin(), dates.end(), m);
  if (it != dates.end() && *it == m) return static_cast<std::size_t>(it - dates.begin());
  return std::nullopt;
}

void ReturnsPanel::validate() const {
  validate_date_index(dates, "returns panel");
  const auto rows = static_cast<Eigen::Index>(dates.size());
  const auto cols = static_cast<Eigen::Index>(assets.size());
  if (returns.rows() != rows || returns.cols() != cols || membership.rows() != rows || membership.cols() != cols) {
    throw ValidationError("returns panel: matrix dimensions do not match dates x assets");
  }
  std::set<std::string_view> seen;
  for (const auto& a : assets) {
    if (!seen.insert(a).second) throw ValidationError(fmt::format("returns panel: duplicate asset '{}'", a));
  }
  for (Eigen::Index t = 0; t < rows; ++t) {
    for (Eigen::Index a = 0; a < cols; ++a) {
      const double r = returns(t, a);
      if (std::isnan(r)) continue;
      if (!membership(t, a)) {
        throw ValidationError(fmt::format("returns panel: {} has a return on {} but is not a member",
                                          assets[a], dates[t].to_string()));
      }
      if (!(r > -1.0) || !std::isfinite(r)) {
        throw ValidationError(
            fmt::format("returns panel: return {} for {} on {} is not > -1", r, assets[a], dates[t].to_string()));
      }
    }
  }
}

std::optional<std::size_t> FirmAttributes::find_asset(std::string_view id) const { return index_of(assets, id); }

const Eigen::MatrixXd& FirmAttributes::metric(std::string_view name) const {
  if (name == "vc") return vc;
  if (name == "pp") return pp;
  if (name == "na") return na;
  if (name == "carbon_intensity") return carbon_intensity;
  if (name == "market_cap") return market_cap;
  throw ValidationError(fmt::format("unknown attribute metric '{}'", name));
}

std::optional<std::size_t> FirmAttributes::record_as_of(const Eigen::MatrixXd& values, std::size_t asset,
                                                        Month m) const {
  std::optional<std::size_t> best;
  std::optional<std::size_t> earliest;
  for (std::size_t t = 0; t < dates.size(); ++t) {
    if (!present(t, asset) || std::isnan(values(t, asset))) continue;
    if (!earliest) earliest = t;
    if (dates[t] <= m) best = t;
  }
  return best ? best : earliest;
}

void FirmAttributes::validate() const {
  validate_date_index(dates, "attributes");
  const auto rows = static_cast<Eigen::Index>(dates.size());
  const auto cols = static_cast<Eigen::Index>(assets.size());
  for (const Eigen::MatrixXd* m : {&vc, &pp, &na, &carbon_intensity, &market_cap}) {
    if (m->rows() != rows || m->cols() != cols) throw ValidationError("attributes: matrix dimensions mismatch");
  }
  if (present.rows() != rows || present.cols() != cols) throw ValidationError("attributes: presence mask mismatch");
  if (sector.size() != assets.size() || region.size() != assets.size()) {
    throw ValidationError("attributes: sector/region labels missing");
  }
  check_unit_interval(vc, "vc");
  check_unit_interval(pp, "pp");
  check_unit_interval(na, "na");
  for (Eigen::Index t = 0; t < rows; ++t) {
    for (Eigen::Index a = 0; a < cols; ++a) {
      const double ci = carbon_intensity(t, a);
      const double cap = market_cap(t, a);
      if (!std::isnan(ci) && ci < 0.0) {
        throw ValidationError(fmt::format("attributes: negative carbon intensity for {}", assets[a]));
      }
      if (present(t, a) && !(cap > 0.0)) {
        throw ValidationError(fmt::format("attributes: market cap must be > 0 for {} on {}", assets[a],
                                          dates[t].to_string()));
      }
    }
  }
}

const Eigen::VectorXd& FactorSeries::bmg() const {
  if (!r_bmg) throw ValidationError("factor series has no r_bmg column");
  return *r_bmg;
}

void FactorSeries::validate() const {
  validate_date_index(dates, "factors");
  const auto n = static_cast<Eigen::Index>(dates.size());
  if (r_mkt.size() != n || (r_bmg && r_bmg->size() != n)) throw ValidationError("factors: series lengths differ");
  if (!r_mkt.allFinite() || (r_bmg && !r_bmg->allFinite())) throw ValidationError("factors: missing entries");
}

ReturnsPanel load_returns(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_date = table.require_column("date");
  const auto c_asset = table.require_column("asset_id");
  const auto c_ret = table.require_column("return");
  if (table.rows.empty()) throw ValidationError(fmt::format("{}: no data rows", path.string()));

  struct Cell {
    std::size_t date;
    std::string asset;
    std::optional<double> value;
  };
  std::vector<Cell> cells;
  cells.reserve(table.rows.size());
  ReturnsPanel panel;
  std::set<std::string> asset_set;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const Month m = parse_date(table, r, c_date);
    if (panel.dates.empty() || panel.dates.back() < m) {
      panel.dates.push_back(m);
    } else if (m < panel.dates.back()) {
      throw ParseError(path.string(), table.line_numbers[r],
                       fmt::format("dates not monotone: {} after {}", m.to_string(), panel.dates.back().to_string()));
    }
    const auto& asset = table.rows[r][c_asset];
    if (asset.empty()) throw ParseError(path.string(), table.line_numbers[r], "empty asset_id");
    const auto value = csv::parse_number(table, r, c_ret);
    if (value && !(*value > -1.0)) {
      throw ParseError(path.string(), table.line_numbers[r], fmt::format("return {} is not > -1", *value));
    }
    asset_set.insert(asset);
    cells.push_back({panel.dates.size() - 1, asset, value});
  }

  panel.assets.assign(asset_set.begin(), asset_set.end());
  const auto T = static_cast<Eigen::Index>(panel.dates.size());
  const auto N = static_cast<Eigen::Index>(panel.assets.size());
  panel.returns = Eigen::MatrixXd::Constant(T, N, kMissing);
  panel.membership = BoolMatrix::Constant(T, N, false);
  BoolMatrix seen = BoolMatrix::Constant(T, N, false);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const auto a = static_cast<Eigen::Index>(*panel.find_asset(cells[r].asset));
    const auto t = static_cast<Eigen::Index>(cells[r].date);
    if (seen(t, a)) {
      throw ParseError(path.string(), table.line_numbers[r],
                       fmt::format("duplicate row for ({}, {})", panel.dates[t].to_string(), cells[r].asset));
    }
    seen(t, a) = true;
    if (cells[r].value) {
      panel.returns(t, a) = *cells[r].value;
      panel.membership(t, a) = true;
    }
  }
  panel.validate();
  return panel;
}

FirmAttributes load_attributes(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_date = table.require_column("date");
  const auto c_asset = table.require_column("asset_id");
  const auto c_ci = table.require_column("carbon_intensity");
  const auto c_cap = table.require_column("market_cap");
  const auto c_sector = table.require_column("sector");
  const auto c_region = table.require_column("region");
  const auto c_vc = table.column("vc");
  const auto c_pp = table.column("pp");
  const auto c_na = table.column("na");
  if (table.rows.empty()) throw ValidationError(fmt::format("{}: no data rows", path.string()));

  std::set<Month> date_set;
  std::set<std::string> asset_set;
  std::vector<Month> row_dates(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    row_dates[r] = parse_date(table, r, c_date);
    date_set.insert(row_dates[r]);
    if (table.rows[r][c_asset].empty()) throw ParseError(path.string(), table.line_numbers[r], "empty asset_id");
    asset_set.insert(table.rows[r][c_asset]);
  }
  FirmAttributes attrs;
  attrs.dates.assign(date_set.begin(), date_set.end());
  attrs.assets.assign(asset_set.begin(), asset_set.end());
  const auto T = static_cast<Eigen::Index>(attrs.dates.size());
  const auto N = static_cast<Eigen::Index>(attrs.assets.size());
  for (Eigen::MatrixXd* m : {&attrs.vc, &attrs.pp, &attrs.na, &attrs.carbon_intensity, &attrs.market_cap}) {
    *m = Eigen::MatrixXd::Constant(T, N, kMissing);
  }
  attrs.present = BoolMatrix::Constant(T, N, false);
  attrs.sector.assign(attrs.assets.size(), "");
  attrs.region.assign(attrs.assets.size(), "");
  std::vector<int> label_date(attrs.assets.size(), -1);

  auto optional_cell = [&](std::optional<std::size_t> col, std::size_t r) -> double {
    if (!col) return kMissing;
    return csv::parse_number(table, r, *col).value_or(kMissing);
  };
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto t = static_cast<Eigen::Index>(
        std::lower_bound(attrs.dates.begin(), attrs.dates.end(), row_dates[r]) - attrs.dates.begin());
    const auto a = static_cast<Eigen::Index>(*attrs.find_asset(table.rows[r][c_asset]));
    const auto line = table.line_numbers[r];
    if (attrs.present(t, a)) {
      throw ParseError(path.string(), line,
                       fmt::format("duplicate row for ({}, {})", row_dates[r].to_string(), attrs.assets[a]));
    }
    attrs.present(t, a) = true;
    attrs.vc(t, a) = optional_cell(c_vc, r);
    attrs.pp(t, a) = optional_cell(c_pp, r);
    attrs.na(t, a) = optional_cell(c_na, r);
    for (auto [col, name] : {std::pair{c_vc, "vc"}, std::pair{c_pp, "pp"}, std::pair{c_na, "na"}}) {
      if (!col) continue;
      const double v = optional_cell(col, r);
      if (!std::isnan(v) && (v < 0.0 || v > 1.0)) {
        throw ParseError(path.string(), line, fmt::format("{} = {} outside [0,1]", name, v));
      }
    }
    attrs.carbon_intensity(t, a) = optional_cell(c_ci, r);
    if (attrs.carbon_intensity(t, a) < 0.0) throw ParseError(path.string(), line, "carbon_intensity < 0");
    const auto cap = csv::parse_number(table, r, c_cap);
    if (!cap || !(*cap > 0.0)) throw ParseError(path.string(), line, "market_cap must be present and > 0");
    attrs.market_cap(t, a) = *cap;
    if (t >= label_date[a]) {
      attrs.sector[a] = table.rows[r][c_sector];
      attrs.region[a] = table.rows[r][c_region];
      label_date[a] = static_cast<int>(t);
    }
  }
  attrs.validate();
  return attrs;
}

FactorSeries load_factors(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_date = table.require_column("date");
  const auto c_mkt = table.require_column("r_mkt");
  const auto c_bmg = table.column("r_bmg");
  if (table.rows.empty()) throw ValidationError(fmt::format("{}: no data rows", path.string()));
  FactorSeries f;
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  f.r_mkt.resize(n);
  if (c_bmg) f.r_bmg = Eigen::VectorXd(n);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const Month m = parse_date(table, r, c_date);
    if (!f.dates.empty() && !(f.dates.back() < m)) {
      throw ParseError(path.string(), table.line_numbers[r], "factor dates must be strictly increasing");
    }
    f.dates.push_back(m);
    const auto mkt = csv::parse_number(table, r, c_mkt);
    if (!mkt) throw ParseError(path.string(), table.line_numbers[r], "missing r_mkt");
    f.r_mkt(static_cast<Eigen::Index>(r)) = *mkt;
    if (c_bmg) {
      const auto bmg = csv::parse_number(table, r, *c_bmg);
      if (!bmg) throw ParseError(path.string(), table.line_numbers[r], "missing r_bmg");
      (*f.r_bmg)(static_cast<Eigen::Index>(r)) = *bmg;
    }
  }
  f.validate();
  return f;
}

std::string format_returns(const ReturnsPanel& panel) {
  std::string out = "date,asset_id,return\n";
  for (std::size_t t = 0; t < panel.num_dates(); ++t) {
    const auto date = panel.dates[t].to_string();
    for (std::size_t a = 0; a < panel.num_assets(); ++a) {
      out += fmt::format("{},{},{}\n", date, panel.assets[a], csv::format_number(panel.returns(t, a)));
    }
  }
  return out;
}

std::string format_attributes(const FirmAttributes& attrs) {
  std::string out = "date,asset_id,vc,pp,na,carbon_intensity,market_cap,sector,region\n";
  for (std::size_t t = 0; t < attrs.dates.size(); ++t) {
    const auto date = attrs.dates[t].to_string();
    for (std::size_t a = 0; a < attrs.assets.size(); ++a) {
      if (!attrs.present(t, a)) continue;
      out += fmt::format("{},{},{},{},{},{},{},{},{}\n", date, attrs.assets[a], csv::format_number(attrs.vc(t, a)),
                         csv::format_number(attrs.pp(t, a)), csv::format_number(attrs.na(t, a)),
                         csv::format_number(attrs.carbon_intensity(t, a)), csv::format_number(attrs.market_cap(t, a)),
                         attrs.sector[a], attrs.region[a]);
    }
  }
  return out;
}

std::string format_factors(const FactorSeries& factors) {
  std::string out = factors.r_bmg ? "date,r_mkt,r_bmg\n" : "date,r_mkt\n";
  for (std::size_t t = 0; t < factors.size(); ++t) {
    const auto i = static_cast<Eigen::Index>(t);
    out += factors.dates[t].to_string() + "," + csv::format_number(factors.r_mkt(i));
    if (factors.r_bmg) out += "," + csv::format_number((*factors.r_bmg)(i));
    out += "\n";
  }
  return out;
}

void write_returns(const ReturnsPanel& panel, const std::filesystem::path& path) {
  csv::write_file(path, format_returns(panel));
}
void write_attributes(const FirmAttributes& attrs, const std::filesystem::path& path) {
  csv::write_file(path, format_attributes(attrs));
}
void write_factors(const FactorSeries& factors, const std::filesystem::path& path) {
  csv::write_file(path, format_factors(factors));
}

AlignedDataset align(const ReturnsPanel& panel, const FirmAttributes& attrs, const FactorSeries& factors,
                     const AlignOptions& options) {
  panel.validate();
  factors.validate();

  // Months shared by the panel and the factor series, with their positions.
  std::vector<std::size_t> panel_rows, factor_rows;
  for (std::size_t i = 0, j = 0; i < panel.dates.size() && j < factors.dates.size();) {
    if (panel.dates[i] < factors.dates[j]) {
      ++i;
    } else if (factors.dates[j] < panel.dates[i]) {
      ++j;
    } else {
      panel_rows.push_back(i++);
      factor_rows.push_back(j++);
    }
  }
  if (panel_rows.empty()) throw ValidationError("align: returns and factors share no dates");

  AlignedDataset out;
  out.report.input_assets = panel.num_assets();
  std::vector<std::size_t> keep;
  for (std::size_t a = 0; a < panel.num_assets(); ++a) {
    std::size_t months = 0;
    for (auto t : panel_rows) months += panel.membership(static_cast<Eigen::Index>(t), a) ? 1 : 0;
    if (months >= options.min_membership_months) {
      keep.push_back(a);
      out.report.retained_assets.push_back(panel.assets[a]);
    } else {
      out.report.dropped_assets.push_back(panel.assets[a]);
    }
  }

  const auto T = static_cast<Eigen::Index>(panel_rows.size());
  const auto N = static_cast<Eigen::Index>(keep.size());
  auto& p = out.panel;
  p.assets = out.report.retained_assets;
  p.returns.resize(T, N);
  p.membership.resize(T, N);
  for (Eigen::Index t = 0; t < T; ++t) {
    p.dates.push_back(panel.dates[panel_rows[t]]);
    for (Eigen::Index a = 0; a < N; ++a) {
      p.returns(t, a) = panel.returns(static_cast<Eigen::Index>(panel_rows[t]), static_cast<Eigen::Index>(keep[a]));
      p.membership(t, a) =
          panel.membership(static_cast<Eigen::Index>(panel_rows[t]), static_cast<Eigen::Index>(keep[a]));
    }
  }

  auto& f = out.factors;
  f.r_mkt.resize(T);
  if (factors.r_bmg) f.r_bmg = Eigen::VectorXd(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto j = static_cast<Eigen::Index>(factor_rows[t]);
    f.dates.push_back(factors.dates[j]);
    f.r_mkt(t) = factors.r_mkt(j);
    if (factors.r_bmg) (*f.r_bmg)(t) = (*factors.r_bmg)(j);
  }

  if (!attrs.empty()) {
    attrs.validate();
    const Month first = p.dates.front();
    const Month last = p.dates.back();
    std::vector<std::size_t> rows, cols;
    for (std::size_t t = 0; t < attrs.dates.size(); ++t) {
      if (first <= attrs.dates[t] && attrs.dates[t] <= last) rows.push_back(t);
    }
    for (std::size_t a = 0; a < attrs.assets.size(); ++a) {
      if (p.find_asset(attrs.assets[a])) cols.push_back(a);
    }
    auto& q = out.attributes;
    const auto R = static_cast<Eigen::Index>(rows.size());
    const auto C = static_cast<Eigen::Index>(cols.size());
    auto take = [&](const Eigen::MatrixXd& m) {
      Eigen::MatrixXd sub(R, C);
      for (Eigen::Index i = 0; i < R; ++i)
        for (Eigen::Index j = 0; j < C; ++j)
          sub(i, j) = m(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
      return sub;
    };
    for (auto t : rows) q.dates.push_back(attrs.dates[t]);
    for (auto a : cols) {
      q.assets.push_back(attrs.assets[a]);
      q.sector.push_back(attrs.sector[a]);
      q.region.push_back(attrs.region[a]);
    }
    q.vc = take(attrs.vc);
    q.pp = take(attrs.pp);
    q.na = take(attrs.na);
    q.carbon_intensity = take(attrs.carbon_intensity);
    q.market_cap = take(attrs.market_cap);
    q.present.resize(R, C);
    for (Eigen::Index i = 0; i < R; ++i)
      for (Eigen::Index j = 0; j < C; ++j)
        q.present(i, j) = attrs.present(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
    if (!q.present.any()) throw ValidationError("align: no attribute records inside the common date range");
  }
  return out;
}

AlignedDataset align(const AlignedDataset& data, const AlignOptions& options) {
  auto out = align(data.panel, data.attributes, data.factors, options);
  return out;
}

}  // namespace carbon
