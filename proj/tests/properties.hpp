#pragma once

#include <optional>
#include <random>
#include <string>

#include "multired/detsys.hpp"
#include "random_expr.hpp"

namespace testing_support {

using namespace multired;

// Each check returns a description of the first failure, or nothing.
using Failure = std::optional<std::string>;

inline Failure euler_annihilates_divergences(int n = 200, unsigned seed = 2024) {
    Symbol t("t"), x("x"), y("y"), u("u");
    RandomExpr gen(seed, {t, x, y}, u, 4);
    for (int i = 0; i < n; ++i) {
        Expr f = gen.polynomial(3, 3);
        Symbol v = (i % 3 == 0) ? t : (i % 3 == 1 ? x : y);
        if (!euler_operator(total_derivative(f, v), u).is_zero()) return "E(D_" + v.name() + " f) != 0 for f = " + f.str();
    }
    return std::nullopt;
}

inline Failure adjoint_identity_is_divergence(int n = 100, unsigned seed = 77) {
    Symbol t("t"), x("x"), u("u");
    RandomExpr gen(seed, {t, x}, u, 3);
    for (int i = 0; i < n; ++i) {
        Expr G = gen.polynomial(3, 3), Q = gen.polynomial(2, 2), P = gen.polynomial(2, 2);
        Expr lhs = euler_operator(Q * G, u) - frechet_adjoint(Q, G, u) - frechet_adjoint(G, Q, u);
        if (!lhs.is_zero()) return "E(QG) != G'*(Q) + Q'*(G) for G = " + G.str() + ", Q = " + Q.str();
        Expr div = Q * frechet(G, P, u) - P * frechet_adjoint(G, Q, u);
        if (!euler_operator(div, u).is_zero())
            return "QG'(P) - PG'*(Q) not a divergence for G = " + G.str() + ", Q = " + Q.str() + ", P = " + P.str();
    }
    return std::nullopt;
}

using Matrix = std::vector<std::vector<mpq_class>>;

inline size_t rref(Matrix& a, std::vector<size_t>& pivots) {
    size_t r = 0, cols = a.empty() ? 0 : a[0].size();
    pivots.clear();
    for (size_t c = 0; c < cols && r < a.size(); ++c) {
        size_t k = r;
        while (k < a.size() && a[k][c] == 0) ++k;
        if (k == a.size()) continue;
        std::swap(a[r], a[k]);
        mpq_class inv = 1 / a[r][c];
        for (auto& v : a[r]) v *= inv;
        for (size_t i = 0; i < a.size(); ++i)
            if (i != r && a[i][c] != 0) {
                mpq_class f = a[i][c];
                for (size_t j = 0; j < cols; ++j) a[i][j] -= f * a[r][j];
            }
        pivots.push_back(c);
        ++r;
    }
    return r;
}

inline Matrix dense_null_space(Matrix a, size_t n) {
    std::vector<size_t> piv;
    size_t r = rref(a, piv);
    Matrix out;
    for (size_t f = 0; f < n; ++f) {
        if (std::find(piv.begin(), piv.end(), f) != piv.end()) continue;
        std::vector<mpq_class> v(n);
        v[f] = 1;
        for (size_t i = 0; i < r; ++i) v[piv[i]] = -a[i][f];
        out.push_back(v);
    }
    return out;
}

// Random integer matrices of prescribed rank, posed as determining systems over the basis 1, u, u^2, ...
inline Failure numeric_solver_matches_dense(int trials = 50, unsigned seed = 4242, size_t max_dim = 12) {
    std::mt19937 rng(seed);
    std::uniform_int_distribution<size_t> dim(1, max_dim);
    std::uniform_int_distribution<int> entry(-4, 4);
    Symbol t("t"), x("x"), u("u");
    PdeSystem s;
    s.independents = {t, x};
    s.dependents = {u};
    s.lead = Atom::jet(u, {{t, 1}});
    s.rhs = Expr(Atom::jet(u, {{x, 2}}));
    for (int trial = 0; trial < trials; ++trial) {
        std::string tag = "trial " + std::to_string(trial) + ": ";
        size_t m = dim(rng), n = dim(rng), rank = std::uniform_int_distribution<size_t>(0, std::min(m, n))(rng);
        Matrix L(m, std::vector<mpq_class>(rank)), R(rank, std::vector<mpq_class>(n)), A(m, std::vector<mpq_class>(n));
        for (auto& row : L)
            for (auto& v : row) v = entry(rng);
        for (auto& row : R)
            for (auto& v : row) v = entry(rng);
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j)
                for (size_t k = 0; k < rank; ++k) A[i][j] += L[i][k] * R[k][j];

        DeterminingSystem ds;
        ds.sys = s;
        std::vector<Expr> cols;
        for (size_t j = 0; j < n; ++j) {
            ds.basis.push_back(pow(Expr(Atom::jet(u, {})), RatFunc(Rational(long(j)))));
            Expr col;
            for (size_t i = 0; i < m; ++i) col += Expr(Rational(A[i][j])) * pow(Expr::indep(x), RatFunc(Rational(long(i))));
            cols.push_back(col);
        }
        ds.sources.push_back(cols);
        ds.source_names.push_back("random");
        auto tree = solve_parametric(ds);
        if (tree.branches.size() != 1) return tag + "expected a single branch";
        auto& sol = tree.branches[0].solutions;
        auto expected = dense_null_space(A, n);
        if (sol.size() != expected.size())
            return tag + "dimension " + std::to_string(sol.size()) + ", dense " + std::to_string(expected.size());
        Matrix got;
        for (auto& e : sol) {
            std::vector<mpq_class> v(n);
            for (auto& term : e.terms()) {
                auto it = std::find_if(ds.basis.begin(), ds.basis.end(),
                                       [&](const Expr& b) { return b.terms()[0].mono == term.mono; });
                if (it == ds.basis.end() || !term.coef.is_constant()) return tag + "solution outside the basis: " + e.str();
                v[it - ds.basis.begin()] = term.coef.constant();
            }
            for (size_t i = 0; i < m; ++i) {
                mpq_class acc = 0;
                for (size_t j = 0; j < n; ++j) acc += A[i][j] * v[j];
                if (acc != 0) return tag + "solution not in the kernel: " + e.str();
            }
            got.push_back(v);
        }
        std::vector<size_t> piv;
        if (rref(got, piv) != expected.size()) return tag + "solutions are linearly dependent";
    }
    return std::nullopt;
}

}  // namespace testing_support
