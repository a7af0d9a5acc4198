#ifndef LACUNA_BURDEN_HPP
#define LACUNA_BURDEN_HPP

#include <string>

#include "lacuna/error.hpp"

namespace lacuna {

/// Categorical lacune burden: none, 1-3, more than 3.
enum class BurdenCategory : int { C0 = 0, C1 = 1, C2 = 2 };

inline BurdenCategory burden_from_count(long k) {
  if (k <= 0) return BurdenCategory::C0;
  if (k <= 3) return BurdenCategory::C1;
  return BurdenCategory::C2;
}

inline const char* burden_name(BurdenCategory c) {
  switch (c) {
    case BurdenCategory::C0: return "0";
    case BurdenCategory::C1: return "1-3";
    default: return ">3";
  }
}

inline BurdenCategory burden_from_name(const std::string& s) {
  if (s == "0") return BurdenCategory::C0;
  if (s == "1-3") return BurdenCategory::C1;
  if (s == ">3") return BurdenCategory::C2;
  throw Error(ErrorCode::ConfigError, "unknown burden category '" + s + "'");
}

}  // namespace lacuna

#endif
