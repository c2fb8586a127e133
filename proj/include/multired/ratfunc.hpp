#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "poly.hpp"

namespace multired {

// Rational function in the parameters: numerator over a product of monic factors.
// The numerator is never divisible by a listed denominator factor, so the value
// is zero iff the numerator is zero.
class RatFunc {
public:
    using FactorList = std::vector<std::pair<Poly, int>>;

    RatFunc() = default;
    RatFunc(const Rational& c) : num_(c) {}
    RatFunc(long c) : num_(Rational(c)) {}
    RatFunc(const Poly& p) : num_(p) {}

    static RatFunc var(Symbol s) { return RatFunc(Poly::var(s)); }

    const Poly& num() const { return num_; }
    const FactorList& den() const { return den_; }
    Poly den_poly() const {
        Poly d(1);
        for (auto& [f, m] : den_) d *= f.pow(static_cast<unsigned>(m));
        return d;
    }

    bool is_zero() const { return num_.is_zero(); }
    bool is_constant() const { return den_.empty() && num_.is_constant(); }
    bool is_one() const { return is_constant() && num_.constant() == 1; }
    Rational constant() const { return num_.constant(); }
    bool is_integer_constant() const { return is_constant() && is_integer(constant()); }

    std::set<Symbol> variables() const {
        auto v = num_.variables();
        for (auto& [f, m] : den_)
            for (auto s : f.variables()) v.insert(s);
        return v;
    }

    RatFunc operator-() const {
        RatFunc out = *this;
        out.num_ = -out.num_;
        return out;
    }

    friend RatFunc operator*(const RatFunc& a, const RatFunc& b) {
        if (a.is_zero() || b.is_zero()) return {};
        if (a.den_.empty() && b.den_.empty()) return RatFunc(a.num_ * b.num_);
        RatFunc out;
        out.num_ = a.num_ * b.num_;
        out.den_ = a.den_;
        for (auto& [f, m] : b.den_) add_factor(out.den_, f, m);
        out.cancel();
        return out;
    }

    friend RatFunc operator+(const RatFunc& a, const RatFunc& b) {
        if (a.is_zero()) return b;
        if (b.is_zero()) return a;
        if (a.den_.empty() && b.den_.empty()) return RatFunc(a.num_ + b.num_);
        FactorList l = a.den_;
        for (auto& [f, m] : b.den_) {
            bool found = false;
            for (auto& [g, k] : l)
                if (g == f) {
                    k = std::max(k, m);
                    found = true;
                }
            if (!found) l.emplace_back(f, m);
        }
        RatFunc out;
        out.num_ = a.num_ * cofactor(l, a.den_) + b.num_ * cofactor(l, b.den_);
        out.den_ = std::move(l);
        out.cancel();
        return out;
    }
    friend RatFunc operator-(const RatFunc& a, const RatFunc& b) { return a + (-b); }
    RatFunc& operator+=(const RatFunc& o) { return *this = *this + o; }
    RatFunc& operator-=(const RatFunc& o) { return *this = *this - o; }
    RatFunc& operator*=(const RatFunc& o) { return *this = *this * o; }

    RatFunc inverse() const {
        if (is_zero()) throw DomainError("division by zero rational function");
        RatFunc out;
        out.num_ = den_poly();
        auto fz = factor(num_);
        out.num_ = out.num_.scaled(1 / fz.content);
        for (auto& [f, m] : fz.factors) add_factor(out.den_, f, m);
        out.cancel();
        return out;
    }
    friend RatFunc operator/(const RatFunc& a, const RatFunc& b) { return a * b.inverse(); }
    RatFunc& operator/=(const RatFunc& o) { return *this = *this / o; }

    RatFunc pow(long e) const {
        if (e == 0) return RatFunc(1);
        RatFunc base = e < 0 ? inverse() : *this;
        unsigned long k = e < 0 ? static_cast<unsigned long>(-e) : static_cast<unsigned long>(e);
        RatFunc out(1);
        while (k) {
            if (k & 1) out *= base;
            k >>= 1;
            if (k) base *= base;
        }
        return out;
    }

    // Substitute parameter values; throws DomainError when a denominator vanishes.
    RatFunc substitute(const std::map<Symbol, RatFunc>& values) const {
        RatFunc n = substitute_poly(num_, values);
        if (den_.empty()) return n;
        RatFunc d(1);
        for (auto& [f, m] : den_) {
            RatFunc fs = substitute_poly(f, values);
            if (fs.is_zero()) throw DomainError("denominator factor " + f.str() + " vanishes");
            d *= fs.pow(m);
        }
        return n / d;
    }

    Rational evaluate(const std::map<Symbol, Rational>& point) const {
        Rational d = 1;
        for (auto& [f, m] : den_) d *= ipow(f.evaluate(point), m);
        if (d == 0) throw DomainError("denominator vanishes at evaluation point");
        return num_.evaluate(point) / d;
    }

    friend int compare(const RatFunc& a, const RatFunc& b) {
        int c = compare(a.num_, b.num_);
        if (c) return c;
        if (a.den_.size() != b.den_.size()) return a.den_.size() < b.den_.size() ? -1 : 1;
        for (size_t i = 0; i < a.den_.size(); ++i) {
            c = compare(a.den_[i].first, b.den_[i].first);
            if (c) return c;
            if (a.den_[i].second != b.den_[i].second) return a.den_[i].second < b.den_[i].second ? -1 : 1;
        }
        return 0;
    }
    friend bool operator==(const RatFunc& a, const RatFunc& b) { return compare(a, b) == 0; }
    friend bool operator<(const RatFunc& a, const RatFunc& b) { return compare(a, b) < 0; }

    // Grammar text; wraps in parentheses when `atomic` is requested and needed.
    std::string str(bool atomic = false) const {
        std::string n = num_.str();
        if (den_.empty()) {
            bool simple = num_.size() <= 1 && !(num_.size() == 1 && num_.leading().second < 0) &&
                          (num_.is_constant() ? is_integer(num_.constant()) : num_.leading().second == 1);
            if (atomic && !simple) return "(" + n + ")";
            return n;
        }
        std::string d;
        for (auto& [f, m] : den_) {
            if (!d.empty()) d += "*";
            std::string fs = f.str();
            if (f.size() > 1) fs = "(" + fs + ")";
            d += fs;
            if (m != 1) d += "^" + std::to_string(m);
        }
        if (den_.size() > 1 || (den_.size() == 1 && den_[0].second != 1)) d = "(" + d + ")";
        std::string out = (num_.size() > 1 ? "(" + n + ")" : n) + "/" + d;
        return atomic ? "(" + out + ")" : out;
    }

private:
    static void add_factor(FactorList& l, const Poly& f, int m) {
        for (auto& [g, k] : l)
            if (g == f) {
                k += m;
                return;
            }
        l.emplace_back(f, m);
        std::sort(l.begin(), l.end(), [](auto& a, auto& b) { return a.first < b.first; });
    }

    static Poly cofactor(const FactorList& full, const FactorList& part) {
        Poly out(1);
        for (auto& [f, m] : full) {
            int have = 0;
            for (auto& [g, k] : part)
                if (g == f) have = k;
            if (m - have > 0) out *= f.pow(static_cast<unsigned>(m - have));
        }
        return out;
    }

    void cancel() {
        if (num_.is_zero()) {
            den_.clear();
            return;
        }
        for (auto& [f, m] : den_) {
            while (m > 0) {
                auto q = num_.divide_exact(f);
                if (!q) break;
                num_ = *q;
                --m;
            }
        }
        std::erase_if(den_, [](auto& p) { return p.second == 0; });
        std::sort(den_.begin(), den_.end(), [](auto& a, auto& b) { return a.first < b.first; });
    }

    static RatFunc substitute_poly(const Poly& p, const std::map<Symbol, RatFunc>& values) {
        RatFunc out;
        for (auto& [pp, c] : p.terms()) {
            RatFunc t(c);
            PowerProduct kept;
            for (auto& [s, e] : pp.factors) {
                auto it = values.find(s);
                if (it == values.end()) kept.factors.emplace_back(s, e);
                else t *= it->second.pow(e);
            }
            out += t * RatFunc(Poly::monomial(kept, 1));
        }
        return out;
    }

    Poly num_;
    FactorList den_;
};

}  // namespace multired
