#pragma once

#include <string>

#include <boost/multiprecision/cpp_int.hpp>

namespace rla {

/// Arbitrary-precision rational used for all assorter arithmetic.
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline Rational make_rational(long long num, long long den = 1) {
    return Rational(BigInt(num), BigInt(den));
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

/// "n/d" (or "n" when the denominator is 1).
inline std::string to_string(const Rational& r) {
    std::string s = boost::multiprecision::numerator(r).str();
    const BigInt& den = boost::multiprecision::denominator(r);
    if (den != 1) s += "/" + den.str();
    return s;
}

/// Parses "n", "n/d" or a finite decimal literal such as "0.0125" or "1e-05" exactly.
Rational parse_rational(const std::string& text);

/// Smallest integer >= r.
BigInt ceil(const Rational& r);

/// Nearest integer, ties to even.
BigInt round_half_even(const Rational& r);

}  // namespace rla
