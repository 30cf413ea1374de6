#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

namespace carbon {

/// Calendar month. All data in the library lives at monthly granularity and is
/// stamped with the month-end date when written out.
struct Month {
  int year = 1970;
  int month = 1;  // 1..12

  /// Months since year 0; consecutive months differ by one.
  int ordinal() const noexcept { return year * 12 + (month - 1); }
  static Month from_ordinal(int ordinal) noexcept { return {ordinal / 12, ordinal % 12 + 1}; }

  Month next() const noexcept { return from_ordinal(ordinal() + 1); }
  int last_day() const noexcept;

  /// ISO month-end date, e.g. "2018-12-31".
  std::string to_string() const;

  /// Parses "YYYY-MM", "YYYY-MM-DD" or an ISO timestamp and floors it to the
  /// month. Throws ValidationError on anything else.
  static Month parse(std::string_view text);

  friend auto operator<=>(const Month&, const Month&) = default;
};

/// Strictly increasing list of months.
using DateIndex = std::vector<Month>;

/// Throws ValidationError when the index is not strictly increasing.
void validate_date_index(const DateIndex& dates, std::string_view what);

}  // namespace carbon
