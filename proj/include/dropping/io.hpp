// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dropping {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& s);

/// RFC-4180 field quoting: quotes fields containing comma, quote or newline.
std::string csv_field(const std::string& s);
/// Splits one CSV record, honouring quoted fields.
std::vector<std::string> csv_split(const std::string& line);

/// SplitMix64 step, used to derive independent seeds from a root seed.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace dropping
