#include "carbon/dates.hpp"

#include <charconv>

#include <fmt/format.h>

#include "carbon/errors.hpp"

namespace carbon {

namespace {

bool is_leap(int year) { return (year % 4 == 0 && year % 100 != 0) || year % 400 == 0; }

int parse_int(std::string_view text, std::string_view whole) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError(fmt::format("invalid date '{}'", whole));
  }
  return value;
}

}  // namespace

int Month::last_day() const noexcept {
  static constexpr int days[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (month == 2 && is_leap(year)) return 29;
  return days[month - 1];
}

std::string Month::to_string() const { return fmt::format("{:04d}-{:02d}-{:02d}", year, month, last_day()); }

Month Month::parse(std::string_view text) {
  // Accept an ISO timestamp by cutting at the time separator.
  std::string_view date = text.substr(0, text.find_first_of("T "));
  if (date.size() != 7 && date.size() != 10) throw ValidationError(fmt::format("invalid date '{}'", text));
  if (date[4] != '-' || (date.size() == 10 && date[7] != '-')) {
    throw ValidationError(fmt::format("invalid date '{}'", text));
  }
  Month m{parse_int(date.substr(0, 4), text), parse_int(date.substr(5, 2), text)};
  if (m.month < 1 || m.month > 12) throw ValidationError(fmt::format("invalid month in date '{}'", text));
  if (date.size() == 10) {
    const int day = parse_int(date.substr(8, 2), text);
    if (day < 1 || day > m.last_day()) throw ValidationError(fmt::format("invalid day in date '{}'", text));
  }
  return m;
}

void validate_date_index(const DateIndex& dates, std::string_view what) {
  for (std::size_t i = 1; i < dates.size(); ++i) {
    if (!(dates[i - 1] < dates[i])) {
      throw ValidationError(fmt::format("{}: dates not strictly increasing at {}", what, dates[i].to_string()));
    }
  }
}

}  // namespace carbon
