#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace crgrf::detail {

// Shortest "%.17g" form; reads back to the identical double.
inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Report precision: 10 significant digits, "NA" for non-finite values.
inline std::string num(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace crgrf::detail
