#include "gibbs_lens/text_format.hpp"

#include <charconv>
#include <cmath>

namespace gibbs_lens {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string format_fixed(double value, int digits) {
  if (!std::isfinite(value)) return format_double(value);
  if (value == 0.0) value = 0.0;  // drop negative zero
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, digits);
  std::string s(buf, end);
  if (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

}  // namespace gibbs_lens
