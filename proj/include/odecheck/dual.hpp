#pragma once

// Vector-mode forward AD scalar. Every Dual carries kMaxTangents directional
// derivatives; unused lanes stay zero. A fixed lane count keeps the arithmetic
// branch-free and lets the compiler vectorize the tangent loops.

#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>

namespace odecheck {

inline constexpr std::size_t kMaxTangents = 8;

class Dual {
 public:
  using Tangents = std::array<double, kMaxTangents>;

  constexpr Dual() : value_(0.0), tangents_{} {}
  constexpr Dual(double value) : value_(value), tangents_{} {}  // NOLINT(implicit)
  constexpr Dual(double value, const Tangents& tangents) : value_(value), tangents_(tangents) {}

  /// A variable seeded with unit tangent in lane `lane`.
  static constexpr Dual variable(double value, std::size_t lane) {
    Dual d(value);
    d.tangents_[lane] = 1.0;
    return d;
  }

  constexpr double value() const { return value_; }
  constexpr double tangent(std::size_t lane) const { return tangents_[lane]; }
  constexpr double& tangent(std::size_t lane) { return tangents_[lane]; }
  constexpr const Tangents& tangents() const { return tangents_; }
  constexpr Tangents& tangents() { return tangents_; }

  constexpr Dual& operator+=(const Dual& o) {
    value_ += o.value_;
    for (std::size_t i = 0; i < kMaxTangents; ++i) tangents_[i] += o.tangents_[i];
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    value_ -= o.value_;
    for (std::size_t i = 0; i < kMaxTangents; ++i) tangents_[i] -= o.tangents_[i];
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    for (std::size_t i = 0; i < kMaxTangents; ++i)
      tangents_[i] = tangents_[i] * o.value_ + value_ * o.tangents_[i];
    value_ *= o.value_;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.value_;
    const double q = value_ / o.value_;
    for (std::size_t i = 0; i < kMaxTangents; ++i)
      tangents_[i] = (tangents_[i] - q * o.tangents_[i]) * inv;
    value_ = q;
    return *this;
  }
  constexpr Dual& operator+=(double c) {
    value_ += c;
    return *this;
  }
  constexpr Dual& operator-=(double c) {
    value_ -= c;
    return *this;
  }
  constexpr Dual& operator*=(double c) {
    value_ *= c;
    for (auto& t : tangents_) t *= c;
    return *this;
  }
  constexpr Dual& operator/=(double c) {
    value_ /= c;
    for (auto& t : tangents_) t /= c;
    return *this;
  }

  /// Chain rule for a unary function with value f and derivative df at value().
  constexpr Dual apply(double f, double df) const {
    Dual r(f);
    for (std::size_t i = 0; i < kMaxTangents; ++i) r.tangents_[i] = df * tangents_[i];
    return r;
  }

 private:
  double value_;
  Tangents tangents_;
};

constexpr Dual operator-(const Dual& a) { return a.apply(-a.value(), -1.0); }
constexpr Dual operator+(const Dual& a) { return a; }

constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
constexpr Dual operator/(Dual a, const Dual& b) { return a /= b; }

constexpr Dual operator+(Dual a, double b) { return a += b; }
constexpr Dual operator-(Dual a, double b) { return a -= b; }
constexpr Dual operator*(Dual a, double b) { return a *= b; }
constexpr Dual operator/(Dual a, double b) { return a /= b; }

constexpr Dual operator+(double a, Dual b) { return b += a; }
constexpr Dual operator-(double a, const Dual& b) { return (-b) += a; }
constexpr Dual operator*(double a, Dual b) { return b *= a; }
constexpr Dual operator/(double a, const Dual& b) {
  const double inv = 1.0 / b.value();
  return b.apply(a / b.value(), -a * inv * inv);
}

constexpr bool operator<(const Dual& a, const Dual& b) { return a.value() < b.value(); }
constexpr bool operator>(const Dual& a, const Dual& b) { return a.value() > b.value(); }
constexpr bool operator<=(const Dual& a, const Dual& b) { return a.value() <= b.value(); }
constexpr bool operator>=(const Dual& a, const Dual& b) { return a.value() >= b.value(); }
constexpr bool operator<(const Dual& a, double b) { return a.value() < b; }
constexpr bool operator>(const Dual& a, double b) { return a.value() > b; }
constexpr bool operator<=(const Dual& a, double b) { return a.value() <= b; }
constexpr bool operator>=(const Dual& a, double b) { return a.value() >= b; }

inline Dual exp(const Dual& a) {
  const double e = std::exp(a.value());
  return a.apply(e, e);
}
inline Dual log(const Dual& a) { return a.apply(std::log(a.value()), 1.0 / a.value()); }
inline Dual log1p(const Dual& a) { return a.apply(std::log1p(a.value()), 1.0 / (1.0 + a.value())); }
inline Dual expm1(const Dual& a) { return a.apply(std::expm1(a.value()), std::exp(a.value())); }
inline Dual sqrt(const Dual& a) {
  const double s = std::sqrt(a.value());
  return a.apply(s, 0.5 / s);
}
inline Dual pow(const Dual& a, double p) {
  const double v = std::pow(a.value(), p);
  return a.apply(v, p * std::pow(a.value(), p - 1.0));
}
inline Dual sin(const Dual& a) { return a.apply(std::sin(a.value()), std::cos(a.value())); }
inline Dual cos(const Dual& a) { return a.apply(std::cos(a.value()), -std::sin(a.value())); }
inline Dual tanh(const Dual& a) {
  const double t = std::tanh(a.value());
  return a.apply(t, 1.0 - t * t);
}
inline Dual abs(const Dual& a) { return a.value() < 0.0 ? -a : a; }

inline bool isfinite(const Dual& a) {
  if (!std::isfinite(a.value())) return false;
  for (double t : a.tangents())
    if (!std::isfinite(t)) return false;
  return true;
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.value(); }

inline std::ostream& operator<<(std::ostream& os, const Dual& d) {
  os << d.value() << " [";
  for (std::size_t i = 0; i < kMaxTangents; ++i) os << (i ? ", " : "") << d.tangent(i);
  return os << ']';
}

}  // namespace odecheck
