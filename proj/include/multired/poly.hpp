#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rational.hpp"
#include "symbol.hpp"

namespace multired {

// Product of parameter symbols with positive integer exponents, sorted by symbol.
struct PowerProduct {
    std::vector<std::pair<Symbol, int>> factors;

    bool is_one() const { return factors.empty(); }
    int degree_in(Symbol v) const {
        for (auto& [s, e] : factors)
            if (s == v) return e;
        return 0;
    }
    int total_degree() const {
        int d = 0;
        for (auto& f : factors) d += f.second;
        return d;
    }

    friend PowerProduct operator*(const PowerProduct& a, const PowerProduct& b) {
        PowerProduct out;
        size_t i = 0, j = 0;
        while (i < a.factors.size() || j < b.factors.size()) {
            if (j == b.factors.size() || (i < a.factors.size() && a.factors[i].first < b.factors[j].first)) {
                out.factors.push_back(a.factors[i++]);
            } else if (i == a.factors.size() || b.factors[j].first < a.factors[i].first) {
                out.factors.push_back(b.factors[j++]);
            } else {
                out.factors.emplace_back(a.factors[i].first, a.factors[i].second + b.factors[j].second);
                ++i;
                ++j;
            }
        }
        return out;
    }

    // a / b if b divides a.
    friend std::optional<PowerProduct> divide(const PowerProduct& a, const PowerProduct& b) {
        PowerProduct out;
        size_t j = 0;
        for (auto& [s, e] : a.factors) {
            int sub = 0;
            if (j < b.factors.size() && b.factors[j].first == s) sub = b.factors[j++].second;
            else if (j < b.factors.size() && b.factors[j].first < s) return std::nullopt;
            if (e - sub < 0) return std::nullopt;
            if (e - sub > 0) out.factors.emplace_back(s, e - sub);
        }
        if (j != b.factors.size()) return std::nullopt;
        return out;
    }

    // Lexicographic comparison with the alphabetically first symbol most significant.
    // Returns >0 when a is the larger power product.
    friend int lex_compare(const PowerProduct& a, const PowerProduct& b) {
        size_t i = 0, j = 0;
        while (i < a.factors.size() && j < b.factors.size()) {
            auto& [sa, ea] = a.factors[i];
            auto& [sb, eb] = b.factors[j];
            if (sa == sb) {
                if (ea != eb) return ea > eb ? 1 : -1;
                ++i;
                ++j;
            } else if (sa < sb) {
                return 1;
            } else {
                return -1;
            }
        }
        if (i < a.factors.size()) return 1;
        if (j < b.factors.size()) return -1;
        return 0;
    }
};

struct PowerProductGreater {
    bool operator()(const PowerProduct& a, const PowerProduct& b) const { return lex_compare(a, b) > 0; }
};

// Multivariate polynomial over the rationals in parameter symbols.
class Poly {
public:
    using Terms = std::map<PowerProduct, Rational, PowerProductGreater>;

    Poly() = default;
    Poly(const Rational& c) {
        if (c != 0) terms_.emplace(PowerProduct{}, c);
    }
    Poly(long c) : Poly(Rational(c)) {}

    static Poly var(Symbol s, int e = 1) {
        Poly p;
        if (e == 0) return Poly(1);
        p.terms_.emplace(PowerProduct{{{s, e}}}, Rational(1));
        return p;
    }
    static Poly monomial(const PowerProduct& pp, const Rational& c) {
        Poly p;
        if (c != 0) p.terms_.emplace(pp, c);
        return p;
    }

    const Terms& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }
    bool is_constant() const { return terms_.empty() || (terms_.size() == 1 && terms_.begin()->first.is_one()); }
    Rational constant() const {
        auto it = terms_.find(PowerProduct{});
        return it == terms_.end() ? Rational(0) : it->second;
    }
    size_t size() const { return terms_.size(); }

    const std::pair<const PowerProduct, Rational>& leading() const { return *terms_.begin(); }

    std::set<Symbol> variables() const {
        std::set<Symbol> out;
        for (auto& [pp, c] : terms_)
            for (auto& f : pp.factors) out.insert(f.first);
        return out;
    }
    int degree(Symbol v) const {
        int d = 0;
        for (auto& [pp, c] : terms_) d = std::max(d, pp.degree_in(v));
        return d;
    }
    int total_degree() const {
        int d = 0;
        for (auto& [pp, c] : terms_) d = std::max(d, pp.total_degree());
        return d;
    }

    // Coefficient of v^k viewed as a polynomial in v.
    Poly coefficient(Symbol v, int k) const {
        Poly out;
        for (auto& [pp, c] : terms_) {
            if (pp.degree_in(v) != k) continue;
            PowerProduct rest;
            for (auto& f : pp.factors)
                if (f.first != v) rest.factors.push_back(f);
            out.add_term(rest, c);
        }
        return out;
    }

    Poly operator-() const {
        Poly out = *this;
        for (auto& [pp, c] : out.terms_) c = -c;
        return out;
    }
    Poly& operator+=(const Poly& o) {
        for (auto& [pp, c] : o.terms_) add_term(pp, c);
        return *this;
    }
    Poly& operator-=(const Poly& o) {
        for (auto& [pp, c] : o.terms_) add_term(pp, -c);
        return *this;
    }
    friend Poly operator+(Poly a, const Poly& b) { return a += b; }
    friend Poly operator-(Poly a, const Poly& b) { return a -= b; }
    friend Poly operator*(const Poly& a, const Poly& b) {
        Poly out;
        for (auto& [pa, ca] : a.terms_)
            for (auto& [pb, cb] : b.terms_) out.add_term(pa * pb, ca * cb);
        return out;
    }
    Poly& operator*=(const Poly& o) { return *this = *this * o; }
    Poly scaled(const Rational& s) const {
        if (s == 0) return {};
        Poly out = *this;
        for (auto& [pp, c] : out.terms_) c *= s;
        return out;
    }
    Poly pow(unsigned e) const {
        Poly out(1), b = *this;
        while (e) {
            if (e & 1) out *= b;
            e >>= 1;
            if (e) b *= b;
        }
        return out;
    }

    // Exact quotient when d divides this polynomial.
    std::optional<Poly> divide_exact(const Poly& d) const {
        if (d.is_zero()) throw DomainError("polynomial division by zero");
        if (is_zero()) return Poly();
        Poly rem = *this, quo;
        auto& [dlp, dlc] = d.leading();
        size_t guard = 0;
        while (!rem.is_zero()) {
            auto& [rlp, rlc] = rem.leading();
            auto q = divide(rlp, dlp);
            if (!q) return std::nullopt;
            Poly t = Poly::monomial(*q, rlc / dlc);
            quo += t;
            rem -= t * d;
            if (++guard > 100000) return std::nullopt;
        }
        return quo;
    }

    // (lc, p/lc) with the leading coefficient normalized to 1.
    std::pair<Rational, Poly> monic() const {
        if (is_zero()) return {Rational(0), Poly()};
        Rational lc = leading().second;
        return {lc, scaled(1 / lc)};
    }

    Rational evaluate(const std::map<Symbol, Rational>& point) const {
        Rational out = 0;
        for (auto& [pp, c] : terms_) {
            Rational t = c;
            for (auto& [s, e] : pp.factors) {
                auto it = point.find(s);
                if (it == point.end()) throw DomainError("unbound parameter " + s.name());
                t *= ipow(it->second, e);
            }
            out += t;
        }
        return out;
    }

    friend int compare(const Poly& a, const Poly& b) {
        auto ia = a.terms_.begin(), ib = b.terms_.begin();
        for (; ia != a.terms_.end() && ib != b.terms_.end(); ++ia, ++ib) {
            int c = lex_compare(ia->first, ib->first);
            if (c) return c;
            if (ia->second != ib->second) return ia->second < ib->second ? -1 : 1;
        }
        if (ia != a.terms_.end()) return 1;
        if (ib != b.terms_.end()) return -1;
        return 0;
    }
    friend bool operator==(const Poly& a, const Poly& b) { return compare(a, b) == 0; }
    friend bool operator<(const Poly& a, const Poly& b) { return compare(a, b) < 0; }

    std::string str() const {
        if (is_zero()) return "0";
        std::string out;
        bool first = true;
        for (auto& [pp, c] : terms_) {
            Rational mag = abs(c);
            if (first) {
                if (c < 0) out += "-";
            } else {
                out += c < 0 ? " - " : " + ";
            }
            first = false;
            std::string body;
            for (auto& [s, e] : pp.factors) {
                if (!body.empty()) body += "*";
                body += s.name();
                if (e != 1) body += "^" + std::to_string(e);
            }
            if (body.empty()) {
                out += mag.get_str();
            } else if (mag == 1) {
                out += body;
            } else if (is_integer(mag)) {
                out += mag.get_str() + "*" + body;
            } else {
                out += mag.get_str() + "*" + body;
            }
        }
        return out;
    }

    void add_term(const PowerProduct& pp, const Rational& c) {
        if (c == 0) return;
        auto [it, inserted] = terms_.emplace(pp, c);
        if (!inserted) {
            it->second += c;
            if (it->second == 0) terms_.erase(it);
        }
    }

private:
    Terms terms_;
};

// Square root of a polynomial when it is a perfect square.
inline std::optional<Poly> poly_sqrt(const Poly& p) {
    if (p.is_zero()) return Poly();
    auto& [lp, lc] = p.leading();
    PowerProduct half;
    for (auto& [s, e] : lp.factors) {
        if (e % 2) return std::nullopt;
        half.factors.emplace_back(s, e / 2);
    }
    auto rc = exact_pow(lc, Rational(1, 2));
    if (!rc) return std::nullopt;
    Poly root = Poly::monomial(half, *rc);
    Poly two_lead = Poly::monomial(half, 2 * *rc);
    for (size_t iter = 0; iter <= p.size() + 1; ++iter) {
        Poly rem = p - root * root;
        if (rem.is_zero()) return root;
        auto& [rp, rcoef] = rem.leading();
        auto& [tp, tc] = two_lead.leading();
        auto q = divide(rp, tp);
        if (!q) return std::nullopt;
        if (lex_compare(*q, half) >= 0) return std::nullopt;
        root += Poly::monomial(*q, rcoef / tc);
    }
    return std::nullopt;
}

// Partial factorization over Q: numeric content, monomial content, splitting by
// factors of the coefficient of a linear variable, rational roots of univariate
// factors, and quadratics with a perfect-square discriminant. Factors are monic.
struct Factorization {
    Rational content = 1;
    std::vector<std::pair<Poly, int>> factors;
};

namespace detail {

inline void push_factor(std::vector<std::pair<Poly, int>>& out, const Poly& f, int m) {
    for (auto& [g, k] : out)
        if (g == f) {
            k += m;
            return;
        }
    out.emplace_back(f, m);
}

inline std::vector<Integer> divisors(Integer n) {
    if (n < 0) n = -n;
    std::vector<Integer> out;
    if (n == 0) return out;
    if (n > 1000000) {
        out.push_back(1);
        out.push_back(n);
        return out;
    }
    for (Integer d = 1; d * d <= n; ++d)
        if (n % d == 0) {
            out.push_back(d);
            if (d * d != n) out.push_back(n / d);
        }
    return out;
}

// Irreducible-ish factors of a monic polynomial without monomial content.
inline void split_factor(const Poly& f, int mult, std::vector<std::pair<Poly, int>>& out, int depth) {
    if (f.is_constant()) return;
    auto vars = f.variables();
    if (depth < 8) {
        // linear variable whose coefficient has a common factor with the rest
        for (Symbol v : vars) {
            if (f.degree(v) != 1) continue;
            Poly g = f.coefficient(v, 1);
            if (g.is_constant()) continue;
            std::vector<std::pair<Poly, int>> gf;
            split_factor(g.monic().second, 1, gf, depth + 1);
            for (auto& [h, k] : gf) {
                if (auto q = f.divide_exact(h)) {
                    split_factor(h, mult, out, depth + 1);
                    split_factor(q->monic().second, mult, out, depth + 1);
                    return;
                }
            }
        }
        // univariate rational roots
        if (vars.size() == 1) {
            Symbol v = *vars.begin();
            int deg = f.degree(v);
            if (deg >= 2) {
                Integer l = 1;
                for (auto& [pp, c] : f.terms()) mpz_lcm(l.get_mpz_t(), l.get_mpz_t(), c.get_den().get_mpz_t());
                Poly fi = f.scaled(Rational(l));
                Integer a0 = fi.coefficient(v, 0).constant().get_num();
                Integer an = fi.coefficient(v, deg).constant().get_num();
                if (a0 != 0) {
                    for (auto& pn : divisors(a0))
                        for (auto& qd : divisors(an))
                            for (int sgn : {1, -1}) {
                                Rational r(sgn * pn, qd);
                                r.canonicalize();
                                Poly lin = Poly::var(v) - Poly(r);
                                if (auto q = f.divide_exact(lin)) {
                                    push_factor(out, lin, mult);
                                    split_factor(q->monic().second, mult, out, depth + 1);
                                    return;
                                }
                            }
                }
            }
        }
        // quadratic in some variable with constant leading coefficient
        for (Symbol v : vars) {
            if (f.degree(v) != 2) continue;
            Poly a = f.coefficient(v, 2), b = f.coefficient(v, 1), c = f.coefficient(v, 0);
            if (!a.is_constant()) continue;
            Poly disc = b * b - a * c.scaled(4);
            auto root = poly_sqrt(disc);
            if (!root) continue;
            // f = a (v - r1)(v - r2), r = (-b +- sqrt)/(2a)
            Rational inv = 1 / (2 * a.constant());
            Poly r1 = (-b + *root).scaled(inv), r2 = (-b - *root).scaled(inv);
            Poly l1 = Poly::var(v) - r1, l2 = Poly::var(v) - r2;
            if (l1 == l2) {
                split_factor(l1.monic().second, 2 * mult, out, depth + 1);
            } else {
                split_factor(l1.monic().second, mult, out, depth + 1);
                split_factor(l2.monic().second, mult, out, depth + 1);
            }
            return;
        }
    }
    push_factor(out, f, mult);
}

}  // namespace detail

inline Factorization factor(const Poly& p) {
    Factorization out;
    if (p.is_zero()) {
        out.content = 0;
        return out;
    }
    auto [lc, m] = p.monic();
    out.content = lc;
    // monomial content
    std::map<Symbol, int> minexp;
    bool first = true;
    for (auto& [pp, c] : m.terms()) {
        if (first) {
            for (auto& [s, e] : pp.factors) minexp[s] = e;
            first = false;
        } else {
            for (auto it = minexp.begin(); it != minexp.end();) {
                int e = pp.degree_in(it->first);
                if (e == 0) it = minexp.erase(it);
                else {
                    it->second = std::min(it->second, e);
                    ++it;
                }
            }
        }
    }
    if (!minexp.empty()) {
        PowerProduct mono;
        for (auto& [s, e] : minexp) {
            mono.factors.emplace_back(s, e);
            detail::push_factor(out.factors, Poly::var(s), e);
        }
        Poly rest;
        for (auto& [pp, c] : m.terms()) rest.add_term(*divide(pp, mono), c);
        m = rest;
    }
    detail::split_factor(m, 1, out.factors, 0);
    Poly prod(1);
    for (auto& [f, k] : out.factors) prod *= f.pow(static_cast<unsigned>(k));
    out.content = p.leading().second / prod.leading().second;
    std::sort(out.factors.begin(), out.factors.end(),
              [](auto& a, auto& b) { return a.first < b.first; });
    return out;
}

}  // namespace multired
