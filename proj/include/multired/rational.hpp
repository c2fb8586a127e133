#pragma once

#include <gmpxx.h>

#include <optional>
#include <string>

namespace multired {

using Rational = mpq_class;
using Integer = mpz_class;

inline Rational make_rational(long num, long den = 1) {
    Rational r(num, den);
    r.canonicalize();
    return r;
}

inline bool is_integer(const Rational& r) { return r.get_den() == 1; }

inline std::optional<Integer> exact_root(const Integer& v, unsigned long n) {
    if (v < 0 && n % 2 == 0) return std::nullopt;
    Integer r;
    if (mpz_root(r.get_mpz_t(), v.get_mpz_t(), n) == 0) return std::nullopt;
    return r;
}

inline Rational ipow(const Rational& base, long e) {
    Rational out = 1;
    Rational b = base;
    unsigned long k = e < 0 ? static_cast<unsigned long>(-e) : static_cast<unsigned long>(e);
    while (k) {
        if (k & 1) out *= b;
        b *= b;
        k >>= 1;
    }
    if (e < 0) out = 1 / out;
    return out;
}

// base^exponent when the result is rational; nullopt otherwise (including 0^negative).
inline std::optional<Rational> exact_pow(const Rational& base, const Rational& exponent) {
    if (base == 0) {
        if (exponent > 0) return Rational(0);
        return std::nullopt;
    }
    if (!exponent.get_den().fits_ulong_p() || !exponent.get_num().fits_slong_p())
        return std::nullopt;
    unsigned long den = exponent.get_den().get_ui();
    long num = exponent.get_num().get_si();
    if (den == 1) return ipow(base, num);
    auto rn = exact_root(base.get_num(), den);
    auto rd = exact_root(base.get_den(), den);
    if (!rn || !rd) return std::nullopt;
    Rational root(*rn, *rd);
    root.canonicalize();
    return ipow(root, num);
}

inline std::string to_string(const Rational& r) { return r.get_str(); }

}  // namespace multired
