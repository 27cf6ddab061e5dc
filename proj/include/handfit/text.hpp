#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace handfit {

// Shortest round-trip decimal form (std::to_chars); -0 prints as 0.
std::string format_double(double v);
// Whole-token parse; throws FormatError on junk or overflow.
double parse_double(std::string_view s);
long parse_long(std::string_view s);

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

}  // namespace handfit
