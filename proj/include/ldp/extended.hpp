#pragma once

#include <cmath>
#include <compare>
#include <ostream>

#include "ldp/error.hpp"

namespace ldp {

/// Value in [-inf, +inf) u {+inf} used by rate functionals. Infinity is a tag,
/// never a stored float.
class Extended {
 public:
  constexpr Extended() = default;
  constexpr Extended(double v) : value_(v) {}  // NOLINT: implicit from finite

  static constexpr Extended infinity() {
    Extended e;
    e.infinite_ = true;
    return e;
  }

  constexpr bool is_finite() const { return !infinite_; }
  constexpr bool is_infinite() const { return infinite_; }

  double value() const {
    if (infinite_) throw Error(ErrorCode::InvalidArgument, "value() on +inf");
    return value_;
  }

  /// Finite value, or +HUGE_VAL for reporting purposes only.
  double to_double() const { return infinite_ ? HUGE_VAL : value_; }

  friend constexpr Extended operator+(Extended a, Extended b) {
    if (a.infinite_ || b.infinite_) return infinity();
    return Extended(a.value_ + b.value_);
  }
  Extended& operator+=(Extended other) { return *this = *this + other; }

  /// Scaling by a nonnegative finite factor; 0 * inf is not defined here.
  friend Extended operator*(double c, Extended a) {
    if (a.infinite_) {
      if (c > 0) return infinity();
      throw Error(ErrorCode::InvalidArgument, "0 * inf is undefined");
    }
    return Extended(c * a.value_);
  }

  friend constexpr bool operator==(const Extended& a, const Extended& b) {
    if (a.infinite_ || b.infinite_) return a.infinite_ == b.infinite_;
    return a.value_ == b.value_;
  }
  friend constexpr std::partial_ordering operator<=>(const Extended& a,
                                                     const Extended& b) {
    if (a.infinite_ && b.infinite_) return std::partial_ordering::equivalent;
    if (a.infinite_) return std::partial_ordering::greater;
    if (b.infinite_) return std::partial_ordering::less;
    return a.value_ <=> b.value_;
  }

  friend std::ostream& operator<<(std::ostream& os, const Extended& e) {
    if (e.infinite_) return os << "+inf";
    return os << e.value_;
  }

 private:
  double value_ = 0.0;
  bool infinite_ = false;
};

}  // namespace ldp
