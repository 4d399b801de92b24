#include "qatriage/format.hpp"

#include <charconv>
#include <cstdio>

namespace qatriage {

std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

std::string format_fixed(double value, int digits) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", digits, value);
  return buffer;
}

std::string format_fixed_or_na(const std::optional<double>& value, int digits) {
  return value ? format_fixed(*value, digits) : std::string("NA");
}

}  // namespace qatriage
