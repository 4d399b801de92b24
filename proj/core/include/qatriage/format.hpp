#pragma once

#include <optional>
#include <string>

namespace qatriage {

/// Shortest decimal string that round-trips to the same double.
std::string format_double(double value);

/// Fixed-point rendering for report tables.
std::string format_fixed(double value, int digits);

/// format_fixed, with empty optionals rendered as "NA".
std::string format_fixed_or_na(const std::optional<double>& value, int digits);

}  // namespace qatriage
