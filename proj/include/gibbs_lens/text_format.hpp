#pragma once

#include <string>

namespace gibbs_lens {

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

/// Fixed-point text with `digits` decimals, used for SVG coordinates.
std::string format_fixed(double value, int digits);

}  // namespace gibbs_lens
