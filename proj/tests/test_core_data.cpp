#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "carbon/core_data.hpp"
#include "carbon/errors.hpp"
#include "support.hpp"

using namespace carbon;
using testing::TempDir;
using testing::write_text;

namespace {

std::string monthly_returns(const std::vector<std::pair<std::string, int>>& asset_months, int start_year = 2010) {
  std::string out = "date,asset_id,return\n";
  int longest = 0;
  for (const auto& am : asset_months) longest = std::max(longest, am.second);
  Month m{start_year, 1};
  for (int k = 0; k < longest; ++k, m = m.next()) {
    for (const auto& [asset, months] : asset_months) {
      if (k < months) out += m.to_string() + "," + asset + ",0.01\n";
    }
  }
  return out;
}

std::string monthly_factors(int months, int start_year = 2010) {
  std::string out = "date,r_mkt,r_bmg\n";
  Month m{start_year, 1};
  for (int k = 0; k < months; ++k, m = m.next()) out += m.to_string() + ",0.005,-0.002\n";
  return out;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

TEST_CASE("dates parse to their month and print as month end") {
  CHECK(Month::parse("2018-02-14") == Month{2018, 2});
  CHECK(Month::parse("2018-02") == Month{2018, 2});
  CHECK(Month::parse("2016-02-29T13:45:00Z") == Month{2016, 2});
  CHECK(Month{2016, 2}.to_string() == "2016-02-29");
  CHECK(Month{2018, 12}.next() == Month{2019, 1});
  CHECK_THROWS_AS(Month::parse("2018-13-01"), ValidationError);
  CHECK_THROWS_AS(Month::parse("yesterday"), ValidationError);
  CHECK_THROWS_AS(validate_date_index({Month{2010, 2}, Month{2010, 2}}, "x"), ValidationError);
}

TEST_CASE("two assets over two months with one missing cell") {
  TempDir dir;
  write_text(dir / "r.csv", "date,asset_id,return\n2010-01-31,A,0.01\n2010-01-31,B,-0.02\n2010-02-28,A,0.03\n");
  const auto p = load_returns(dir / "r.csv");
  REQUIRE(p.num_dates() == 2);
  REQUIRE(p.num_assets() == 2);
  CHECK(p.returns(1, 0) == 0.03);
  CHECK(std::isnan(p.returns(1, 1)));
  CHECK_FALSE(p.membership(1, 1));
  CHECK(p.membership(0, 1));
}

TEST_CASE("returns loader rejects bad files") {
  TempDir dir;
  SUBCASE("empty file") {
    write_text(dir / "r.csv", "");
    CHECK_THROWS_WITH_AS(load_returns(dir / "r.csv"), doctest::Contains("no data rows"), ValidationError);
  }
  SUBCASE("header only") {
    write_text(dir / "r.csv", "date,asset_id,return\n");
    CHECK_THROWS_WITH_AS(load_returns(dir / "r.csv"), doctest::Contains("no data rows"), ValidationError);
  }
  SUBCASE("return below -100%") {
    write_text(dir / "r.csv", "date,asset_id,return\n2010-01-31,A,-1.5\n");
    CHECK_THROWS_AS(load_returns(dir / "r.csv"), ValidationError);
  }
  SUBCASE("malformed row names its line") {
    write_text(dir / "r.csv", "date,asset_id,return\n2010-01-31,A,0.1\n2010-02-28,A\n");
    try {
      load_returns(dir / "r.csv");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("non-numeric value") {
    write_text(dir / "r.csv", "date,asset_id,return\n2010-01-31,A,abc\n");
    CHECK_THROWS_AS(load_returns(dir / "r.csv"), ParseError);
  }
  SUBCASE("duplicate (date, asset)") {
    write_text(dir / "r.csv", "date,asset_id,return\n2010-01-31,A,0.1\n2010-01-15,A,0.2\n");
    CHECK_THROWS_AS(load_returns(dir / "r.csv"), ValidationError);
  }
  SUBCASE("non-monotone dates") {
    write_text(dir / "r.csv", "date,asset_id,return\n2010-02-28,A,0.1\n2010-01-31,A,0.2\n");
    CHECK_THROWS_AS(load_returns(dir / "r.csv"), ValidationError);
  }
}

TEST_CASE("returns round trip is exact") {
  testing::Rng rng(7);
  ReturnsPanel p;
  Month m{2011, 5};
  for (int t = 0; t < 30; ++t, m = m.next()) p.dates.push_back(m);
  p.assets = {"A", "B", "C", "D"};
  p.returns.resize(30, 4);
  p.membership.resize(30, 4);
  for (int t = 0; t < 30; ++t)
    for (int a = 0; a < 4; ++a) {
      const bool miss = rng.uniform() < 0.15;
      p.returns(t, a) = miss ? kMissing : rng.normal(0.0, 0.08);
      p.membership(t, a) = !miss;
    }
  TempDir dir;
  write_returns(p, dir / "r.csv");
  const auto q = load_returns(dir / "r.csv");
  REQUIRE(q.dates == p.dates);
  REQUIRE(q.assets == p.assets);
  for (int t = 0; t < 30; ++t)
    for (int a = 0; a < 4; ++a) {
      CHECK(q.membership(t, a) == p.membership(t, a));
      if (p.membership(t, a)) CHECK(same_bits(q.returns(t, a), p.returns(t, a)));
    }
}

TEST_CASE("attributes loader enforces ranges and accepts missing sub-score columns") {
  TempDir dir;
  write_text(dir / "a.csv",
             "date,asset_id,carbon_intensity,market_cap,sector,region\n2010-01-31,A,12.5,100,Energy,NA\n");
  const auto a = load_attributes(dir / "a.csv");
  CHECK(a.carbon_intensity(0, 0) == 12.5);
  CHECK(std::isnan(a.vc(0, 0)));
  CHECK(a.sector[0] == "Energy");

  write_text(dir / "b.csv",
             "date,asset_id,vc,pp,na,carbon_intensity,market_cap,sector,region\n"
             "2010-01-31,A,1.2,0.5,0.5,10,100,Energy,NA\n");
  CHECK_THROWS_AS(load_attributes(dir / "b.csv"), ValidationError);
  write_text(dir / "c.csv",
             "date,asset_id,carbon_intensity,market_cap,sector,region\n2010-01-31,A,10,0,Energy,NA\n");
  CHECK_THROWS_AS(load_attributes(dir / "c.csv"), ValidationError);
  write_text(dir / "d.csv",
             "date,asset_id,carbon_intensity,market_cap,sector,region\n2010-01-31,A,-1,5,Energy,NA\n");
  CHECK_THROWS_AS(load_attributes(dir / "d.csv"), ValidationError);
}

TEST_CASE("factor loader requires complete series") {
  TempDir dir;
  write_text(dir / "f.csv", "date,r_mkt,r_bmg\n2010-01-31,0.01,\n");
  CHECK_THROWS_AS(load_factors(dir / "f.csv"), ValidationError);
  write_text(dir / "g.csv", "date,r_mkt\n2010-01-31,0.01\n2010-02-28,0.02\n");
  const auto f = load_factors(dir / "g.csv");
  CHECK_FALSE(f.r_bmg.has_value());
  CHECK_THROWS_AS(f.bmg(), ValidationError);
}

TEST_CASE("alignment drops short-lived assets and intersects dates") {
  TempDir dir;
  write_text(dir / "r.csv", monthly_returns({{"LONG", 48}, {"SHORT", 24}}));
  write_text(dir / "f.csv", monthly_factors(60, 2009));
  const auto panel = load_returns(dir / "r.csv");
  const auto factors = load_factors(dir / "f.csv");
  const auto d = align(panel, FirmAttributes{}, factors);
  CHECK(d.report.dropped_assets == std::vector<std::string>{"SHORT"});
  CHECK(d.report.retained_assets == std::vector<std::string>{"LONG"});
  CHECK(d.report.dropped_assets.size() + d.report.retained_assets.size() == d.report.input_assets);
  // factors cover 2009-01..2013-12, the panel 2010-01..2013-12
  CHECK(d.factors.dates.front() == Month{2010, 1});
  CHECK(d.factors.dates == d.panel.dates);
  CHECK(d.panel.num_dates() == 48);

  const auto again = align(d);
  CHECK(again.panel.dates == d.panel.dates);
  CHECK(again.panel.assets == d.panel.assets);
  CHECK((again.panel.returns.array() == d.panel.returns.array()).all());
  CHECK(again.factors.r_mkt == d.factors.r_mkt);
}

TEST_CASE("alignment of a complete panel is the identity") {
  TempDir dir;
  write_text(dir / "r.csv", monthly_returns({{"A", 40}, {"B", 40}}));
  write_text(dir / "f.csv", monthly_factors(40));
  const auto panel = load_returns(dir / "r.csv");
  const auto d = align(panel, FirmAttributes{}, load_factors(dir / "f.csv"));
  CHECK(d.panel.dates == panel.dates);
  CHECK(d.panel.assets == panel.assets);
  CHECK(d.report.dropped_assets.empty());
}

TEST_CASE("alignment fails without common dates") {
  TempDir dir;
  write_text(dir / "r.csv", monthly_returns({{"A", 40}}, 2010));
  write_text(dir / "f.csv", monthly_factors(12, 2001));
  CHECK_THROWS_AS(align(load_returns(dir / "r.csv"), FirmAttributes{}, load_factors(dir / "f.csv")),
                  ValidationError);
}
