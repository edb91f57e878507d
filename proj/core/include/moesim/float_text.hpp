// SPDX-License-Identifier: Apache-2.0
#pragma once

// Decimal text encoding for doubles used by every file format in the project.
// Values are written as the shortest decimal string that parses back to the
// identical bit pattern, so text round trips are exact.

#include <optional>
#include <string>
#include <string_view>

namespace moesim {

std::string format_double(double value);
void append_double(std::string& out, double value);

// Rejects trailing garbage, empty input, and non-finite spellings.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_integer(std::string_view text);

}  // namespace moesim
