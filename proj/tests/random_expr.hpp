#pragma once

#include <random>

#include "multired/diffops.hpp"

namespace testing_support {

using namespace multired;

// Random polynomial jet expressions with small rational coefficients.
class RandomExpr {
public:
    RandomExpr(unsigned seed, std::vector<Symbol> vars, Symbol dep, int max_order = 4)
        : rng_(seed), vars_(std::move(vars)), dep_(dep), max_order_(max_order) {}

    Atom jet() {
        std::uniform_int_distribution<int> ord(0, max_order_);
        std::uniform_int_distribution<size_t> pick(0, vars_.size() - 1);
        MultiIndex mi;
        int n = ord(rng_);
        for (int i = 0; i < n; ++i) mi = shifted(mi, vars_[pick(rng_)]);
        return Atom::jet(dep_, mi);
    }

    Rational coefficient() {
        std::uniform_int_distribution<int> num(-5, 5), den(1, 4);
        int n = num(rng_);
        if (n == 0) n = 1;
        return make_rational(n, den(rng_));
    }

    Expr monomial(int max_factors) {
        std::uniform_int_distribution<int> nf(0, max_factors), kind(0, 3), ex(1, 3);
        std::uniform_int_distribution<size_t> pick(0, vars_.size() - 1);
        Expr m(coefficient());
        int n = nf(rng_);
        for (int i = 0; i < n; ++i) {
            if (kind(rng_) == 0) m = m * Expr::indep(vars_[pick(rng_)]);
            else m = m * pow(Expr(jet()), RatFunc(ex(rng_)));
        }
        return m;
    }

    Expr polynomial(int max_terms = 4, int max_factors = 3) {
        std::uniform_int_distribution<int> nt(1, max_terms);
        Expr e;
        int n = nt(rng_);
        for (int i = 0; i < n; ++i) e += monomial(max_factors);
        return e;
    }

    std::mt19937& rng() { return rng_; }

private:
    std::mt19937 rng_;
    std::vector<Symbol> vars_;
    Symbol dep_;
    int max_order_;
};

}  // namespace testing_support
