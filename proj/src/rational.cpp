#include "rla/rational.hpp"

#include <cctype>

#include "rla/error.hpp"

namespace rla {

namespace {

BigInt parse_integer(const std::string& digits, const std::string& whole) {
    if (digits.empty()) throw ParseError("not a rational number: '" + whole + "'");
    for (char ch : digits) {
        if (!std::isdigit(static_cast<unsigned char>(ch))) {
            throw ParseError("not a rational number: '" + whole + "'");
        }
    }
    // cpp_int reads a leading 0 as an octal prefix.
    const auto first = digits.find_first_not_of('0');
    return first == std::string::npos ? BigInt(0) : BigInt(digits.substr(first));
}

}  // namespace

Rational parse_rational(const std::string& text) {
    std::string s = text;
    bool negative = false;
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        negative = s[0] == '-';
        s.erase(0, 1);
    }
    Rational r;
    if (auto e = s.find_first_of("eE"); e != std::string::npos) {
        Rational mantissa = parse_rational(s.substr(0, e));
        std::string exp_text = s.substr(e + 1);
        bool neg_exp = !exp_text.empty() && exp_text[0] == '-';
        if (!exp_text.empty() && (exp_text[0] == '-' || exp_text[0] == '+')) exp_text.erase(0, 1);
        BigInt exponent = parse_integer(exp_text, text);
        if (exponent > 400) throw ParseError("exponent out of range: '" + text + "'");
        BigInt scale = 1;
        for (int i = 0; i < exponent.convert_to<int>(); ++i) scale *= 10;
        r = neg_exp ? Rational(mantissa / scale) : Rational(mantissa * scale);
    } else if (auto slash = s.find('/'); slash != std::string::npos) {
        BigInt den = parse_integer(s.substr(slash + 1), text);
        if (den == 0) throw ParseError("zero denominator: '" + text + "'");
        r = Rational(parse_integer(s.substr(0, slash), text), den);
    } else if (auto dot = s.find('.'); dot != std::string::npos) {
        std::string intpart = s.substr(0, dot);
        std::string frac = s.substr(dot + 1);
        if (intpart.empty()) intpart = "0";
        BigInt den = 1;
        for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
        r = Rational(parse_integer(intpart + frac, text), den);
    } else {
        r = Rational(parse_integer(s, text));
    }
    return negative ? Rational(-r) : r;
}

BigInt ceil(const Rational& r) {
    const BigInt& num = boost::multiprecision::numerator(r);
    const BigInt& den = boost::multiprecision::denominator(r);
    BigInt q = num / den;  // truncates toward zero
    if (num % den != 0 && num > 0) q += 1;
    return q;
}

BigInt round_half_even(const Rational& r) {
    const BigInt& num = boost::multiprecision::numerator(r);
    const BigInt& den = boost::multiprecision::denominator(r);
    BigInt floor = num / den;
    if (num % den != 0 && num < 0) floor -= 1;
    Rational frac = r - Rational(floor);
    const Rational half(BigInt(1), BigInt(2));
    if (frac > half) return floor + 1;
    if (frac < half) return floor;
    return floor % 2 == 0 ? floor : BigInt(floor + 1);
}

}  // namespace rla
