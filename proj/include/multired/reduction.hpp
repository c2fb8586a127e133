#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "detsys.hpp"

namespace multired {

// Change of variables (old independents, u) -> (z, canonical coordinates, U(z)).
struct ReductionMap {
    std::vector<Symbol> old_vars;
    Symbol old_dep;
    Symbol zeta_var{"z"};
    Symbol new_dep{"U"};
    Expr zeta;
    Expr U_def;
    std::vector<Symbol> canonical;
    std::vector<Expr> canonical_exprs;
    std::map<Symbol, Expr> inverse;
    // Results are printed with new_dep^(k) renamed to lowered_dep^(k - lowered).
    int lowered = 0;
    Symbol lowered_dep{"U"};

    std::vector<Symbol> new_vars() const {
        std::vector<Symbol> v{zeta_var};
        v.insert(v.end(), canonical.begin(), canonical.end());
        return v;
    }
    std::vector<Expr> forward() const {
        std::vector<Expr> f{zeta};
        f.insert(f.end(), canonical_exprs.begin(), canonical_exprs.end());
        return f;
    }
    bool is_canonical(const Atom& a) const {
        return a.kind() == AtomKind::Indep && std::find(canonical.begin(), canonical.end(), a.symbol()) != canonical.end();
    }
    bool depends_on_canonical(const Expr& e) const {
        for (auto c : canonical)
            if (e.depends_on(Atom::indep(c))) return true;
        return false;
    }
    Expr U_jet(int k) const { return k ? Expr::jet(new_dep, {{zeta_var, k}}) : Expr::jet(new_dep); }

    // u as a function of the old variables and U.
    Expr u_of() const {
        Atom u = Atom::jet(old_dep);
        Expr A = partial(U_def, u);
        if (A.is_zero() || A.depends_on(u)) throw BadParameters("U = " + U_def.str() + " is not affine in " + old_dep.name());
        Expr B = U_def - A * Expr(u);
        return (U_jet(0) - B) / A;
    }
};

namespace detail {

inline Expr determinant(std::vector<std::vector<Expr>> m) {
    size_t n = m.size();
    if (n == 1) return m[0][0];
    if (n == 2) return m[0][0] * m[1][1] - m[0][1] * m[1][0];
    Expr out;
    for (size_t j = 0; j < n; ++j) {
        if (m[0][j].is_zero()) continue;
        std::vector<std::vector<Expr>> minor;
        for (size_t i = 1; i < n; ++i) {
            std::vector<Expr> row;
            for (size_t k = 0; k < n; ++k)
                if (k != j) row.push_back(m[i][k]);
            minor.push_back(row);
        }
        Expr c = m[0][j] * determinant(minor);
        out += j % 2 ? -c : c;
    }
    return out;
}

// Gauss-Jordan inverse over rational functions.
inline std::vector<std::vector<RatFunc>> invert(std::vector<std::vector<RatFunc>> a) {
    size_t n = a.size();
    std::vector<std::vector<RatFunc>> inv(n, std::vector<RatFunc>(n));
    for (size_t i = 0; i < n; ++i) inv[i][i] = RatFunc(1);
    for (size_t c = 0; c < n; ++c) {
        size_t p = c;
        while (p < n && a[p][c].is_zero()) ++p;
        if (p == n) throw SingularMap("coordinate matrix is singular");
        std::swap(a[p], a[c]);
        std::swap(inv[p], inv[c]);
        RatFunc s = a[c][c].inverse();
        for (size_t k = 0; k < n; ++k) {
            a[c][k] *= s;
            inv[c][k] *= s;
        }
        for (size_t i = 0; i < n; ++i) {
            if (i == c || a[i][c].is_zero()) continue;
            RatFunc f = a[i][c];
            for (size_t k = 0; k < n; ++k) {
                a[i][k] -= f * a[c][k];
                inv[i][k] -= f * inv[c][k];
            }
        }
    }
    return inv;
}

inline RatFunc constant_coefficient(const Expr& e, const std::string& what) {
    if (!e.is_constant()) throw BadParameters(what + " must be constant, got " + e.str());
    return e.constant();
}

// Coefficient lambda with e = lambda * var, or nullopt.
inline std::optional<RatFunc> linear_coefficient(const Expr& e, const Expr& var) {
    if (e.is_zero()) return RatFunc();
    Expr r = e / var;
    if (!r.is_constant()) return std::nullopt;
    return r.constant();
}

}  // namespace detail

// Substitution of u = u(old, U(z)) and old = inverse(z, canonical).
class Reducer {
public:
    explicit Reducer(const ReductionMap& m) : map_(m), u_of_(m.u_of()) {
        for (auto v : m.old_vars) zeta_d_[v] = partial(m.zeta, Atom::indep(v));
    }

    Expr operator()(const Expr& e) {
        return rebuild(e, [&](const Atom& a) -> std::optional<Expr> {
            if (a.kind() == AtomKind::Indep) {
                auto it = map_.inverse.find(a.symbol());
                if (it == map_.inverse.end()) return std::nullopt;
                return it->second;
            }
            if (a.kind() == AtomKind::Jet && a.symbol() == map_.old_dep) {
                auto it = reduced_.find(a.multi());
                if (it != reduced_.end()) return it->second;
                Expr r = to_new(old_jet(a.multi()));
                reduced_.emplace(a.multi(), r);
                return r;
            }
            return std::nullopt;
        });
    }

    // Substitutes only the old independents.
    Expr to_new(const Expr& e) const {
        std::map<Atom, Expr> rules;
        for (auto& [v, x] : map_.inverse) rules[Atom::indep(v)] = x;
        return substitute(e, rules);
    }

    // M[a][i] = d(new_a)/d(old_i), in old variables.
    std::vector<std::vector<Expr>> jacobian() const {
        std::vector<std::vector<Expr>> M;
        for (auto& f : map_.forward()) {
            std::vector<Expr> row;
            for (auto v : map_.old_vars) row.push_back(partial(f, Atom::indep(v)));
            M.push_back(row);
        }
        return M;
    }
    Expr jacobian_det() const { return detail::determinant(jacobian()); }

    // D_v in old variables on functions of the old variables and U(z).
    Expr old_derivative(const Expr& f, Symbol v) const {
        const Expr& zv = zeta_d_.at(v);
        return derive(f, [&](const Atom& a) -> Expr {
            if (a.kind() == AtomKind::Indep) return a.symbol() == v ? Expr(1) : Expr();
            if (a.kind() == AtomKind::Jet && a.symbol() == map_.new_dep)
                return zv * Expr::jet(map_.new_dep, shifted(a.multi(), map_.zeta_var));
            return Expr();
        });
    }

    Expr old_jet(const MultiIndex& mi) {
        if (mi.empty()) return u_of_;
        auto it = old_jets_.find(mi);
        if (it != old_jets_.end()) return it->second;
        Symbol v = mi.front().first;
        Expr r = old_derivative(old_jet(shifted(mi, v, -1)), v);
        old_jets_.emplace(mi, r);
        return r;
    }

private:
    const ReductionMap& map_;
    Expr u_of_;
    std::map<Symbol, Expr> zeta_d_;
    std::map<MultiIndex, Expr> old_jets_;
    std::map<MultiIndex, Expr> reduced_;
};

// Throws BadParameters unless inverse and forward agree and the generators
// satisfy X_k z = 0, X_k U = 0, X_k c_k = 1, X_j c_k = 0 (j < k), X_k c_j = C c_j (j < k).
inline void verify_map(const ReductionMap& m, const std::vector<PointSymmetry>& gens) {
    Reducer r(m);
    auto fwd = m.forward();
    auto nv = m.new_vars();
    for (size_t a = 0; a < fwd.size(); ++a) {
        Expr back = r.to_new(fwd[a]);
        if (!(back - Expr::indep(nv[a])).is_zero())
            throw BadParameters("inverse substitution does not recover " + nv[a].name() + ": got " + back.str());
    }
    if (r.jacobian_det().is_zero()) throw SingularMap("Jacobian determinant vanishes");
    if (gens.size() != m.canonical.size())
        throw BadParameters(std::to_string(gens.size()) + " generators for " + std::to_string(m.canonical.size()) +
                            " canonical coordinates");
    for (size_t k = 0; k < gens.size(); ++k) {
        const auto& X = gens[k];
        if (!X.apply_point(m.zeta).is_zero()) throw BadParameters(X.name + " does not annihilate z = " + m.zeta.str());
        if (!X.apply_point(m.U_def).is_zero())
            throw BadParameters(X.name + " does not annihilate U = " + m.U_def.str());
        Expr own = X.apply_point(m.canonical_exprs[k]);
        if (!(own - Expr(1)).is_zero())
            throw BadParameters(X.name + " applied to " + m.canonical[k].name() + " gives " + own.str() + ", not 1");
        for (size_t j = 0; j < gens.size(); ++j) {
            if (j == k) continue;
            Expr v = X.apply_point(m.canonical_exprs[j]);
            if (j > k && !v.is_zero())
                throw BadParameters(X.name + " applied to " + m.canonical[j].name() + " is " + v.str() + ", not 0");
            if (j < k && !detail::linear_coefficient(v, m.canonical_exprs[j]))
                throw BadParameters(X.name + " applied to " + m.canonical[j].name() + " is not a constant multiple");
        }
    }
}

namespace detail {

inline std::vector<Symbol> default_canonical(size_t k) {
    std::vector<Symbol> out{Symbol("rho")};
    if (k > 1) out.push_back(Symbol("chi"));
    for (size_t i = 2; i < k; ++i) out.push_back(Symbol("c" + std::to_string(i)));
    return out;
}

}  // namespace detail

// n-1 constant translations in n independent variables.
inline ReductionMap translation_map(const std::vector<PointSymmetry>& gens, const std::vector<Symbol>& vars,
                                    Symbol dep) {
    size_t n = vars.size(), k = gens.size();
    if (k + 1 != n) throw BadParameters("translation reduction needs " + std::to_string(n - 1) + " generators");
    std::vector<std::vector<RatFunc>> a(k, std::vector<RatFunc>(n));
    for (size_t j = 0; j < k; ++j) {
        if (!gens[j].eta_of(dep).is_zero()) throw BadParameters(gens[j].name + " is not a pure translation");
        for (size_t i = 0; i < n; ++i)
            a[j][i] = detail::constant_coefficient(gens[j].xi_of(vars[i]), gens[j].name + " coefficient");
    }
    auto ns = detail::null_space_generic(a, n);
    if (ns.size() != 1) throw BadParameters("translation generators are not independent");
    auto w = ns[0];
    size_t norm = n;
    for (size_t i = 1; i < n && norm == n; ++i)
        if (!w[i].is_zero()) norm = i;
    if (norm == n) norm = 0;
    RatFunc s = w[norm].inverse();
    for (auto& x : w) x *= s;
    // Columns: e_norm, then the generators.
    std::vector<std::vector<RatFunc>> B(n, std::vector<RatFunc>(n));
    B[norm][0] = RatFunc(1);
    for (size_t j = 0; j < k; ++j)
        for (size_t i = 0; i < n; ++i) B[i][j + 1] = a[j][i];
    auto L = detail::invert(B);

    ReductionMap m;
    m.old_vars = vars;
    m.old_dep = dep;
    m.canonical = detail::default_canonical(k);
    m.U_def = Expr::jet(dep);
    for (size_t i = 0; i < n; ++i) m.zeta += Expr(w[i]) * Expr::indep(vars[i]);
    for (size_t j = 0; j < k; ++j) {
        Expr c;
        for (size_t i = 0; i < n; ++i) c += Expr(L[j + 1][i]) * Expr::indep(vars[i]);
        m.canonical_exprs.push_back(c);
    }
    for (size_t i = 0; i < n; ++i) {
        Expr x = Expr(B[i][0]) * Expr::indep(m.zeta_var);
        for (size_t j = 0; j < k; ++j) x += Expr(B[i][j + 1]) * Expr::indep(m.canonical[j]);
        m.inverse[vars[i]] = x;
    }
    verify_map(m, gens);
    return m;
}

// Scaling sum_i l_i x_i d/dx_i + alpha u d/du in 1+1 dimensions.
inline ReductionMap scaling_map(const PointSymmetry& X, const std::vector<Symbol>& vars, Symbol dep) {
    if (vars.size() != 2) throw BadParameters("scaling reduction needs two independent variables");
    std::vector<RatFunc> l;
    for (auto v : vars) {
        auto c = detail::linear_coefficient(X.xi_of(v), Expr::indep(v));
        if (!c) throw BadParameters(X.name + " is not a scaling in " + v.name());
        l.push_back(*c);
    }
    auto alpha = detail::linear_coefficient(X.eta_of(dep), Expr::jet(dep));
    if (!alpha) throw BadParameters(X.name + " is not a scaling in " + dep.name());
    size_t k = l[0].is_zero() ? 1 : 0;
    if (l[k].is_zero()) throw BadParameters(X.name + " does not scale the independent variables");
    size_t o = 1 - k;
    RatFunc inv = l[k].inverse();
    Expr xk = Expr::indep(vars[k]), xo = Expr::indep(vars[o]);

    ReductionMap m;
    m.old_vars = vars;
    m.old_dep = dep;
    m.canonical = detail::default_canonical(1);
    m.zeta = xo * pow(xk, -(l[o] * inv));
    m.U_def = Expr::jet(dep) * pow(xk, -(*alpha * inv));
    m.canonical_exprs = {ln(xk) * inv};
    Expr rho = Expr::indep(m.canonical[0]);
    m.inverse[vars[k]] = exp(rho * l[k]);
    m.inverse[vars[o]] = Expr::indep(m.zeta_var) * exp(rho * l[o]);
    verify_map(m, {X});
    return m;
}

// Invariants and canonical coordinates given explicitly; inverse maps each old variable to (z, canonical).
inline ReductionMap user_map(const std::vector<Symbol>& vars, Symbol dep, const Expr& zeta, const Expr& U_def,
                             const std::vector<Expr>& canonical_exprs, const std::map<Symbol, Expr>& inverse,
                             const std::vector<PointSymmetry>& gens, std::vector<Symbol> canonical = {}) {
    if (canonical_exprs.size() + 1 != vars.size())
        throw BadParameters("need " + std::to_string(vars.size() - 1) + " canonical coordinates");
    if (canonical.empty()) canonical = detail::default_canonical(canonical_exprs.size());
    if (canonical.size() != canonical_exprs.size()) throw BadParameters("canonical names and expressions differ in number");
    ReductionMap m;
    m.old_vars = vars;
    m.old_dep = dep;
    m.canonical = canonical;
    m.zeta = zeta;
    m.U_def = U_def;
    m.canonical_exprs = canonical_exprs;
    for (auto v : vars) {
        auto it = inverse.find(v);
        if (it == inverse.end()) throw BadParameters("inverse map lacks " + v.name());
        m.inverse[v] = it->second;
    }
    verify_map(m, gens);
    return m;
}

// Translation X1 and diagonal scaling X2 with [X1, X2] = C X1 in 2+1 dimensions.
inline ReductionMap translation_scaling_map(const PointSymmetry& X1, const PointSymmetry& X2,
                                            const std::vector<Symbol>& vars, Symbol dep) {
    if (vars.size() != 3) throw BadParameters("translation-scaling reduction needs three independent variables");
    std::vector<RatFunc> a, l;
    for (auto v : vars) {
        a.push_back(detail::constant_coefficient(X1.xi_of(v), X1.name + " coefficient"));
        auto c = detail::linear_coefficient(X2.xi_of(v), Expr::indep(v));
        if (!c) throw BadParameters(X2.name + " is not a diagonal scaling in " + v.name());
        l.push_back(*c);
    }
    if (!X1.eta_of(dep).is_zero()) throw BadParameters(X1.name + " is not a pure translation");
    auto alpha = detail::linear_coefficient(X2.eta_of(dep), Expr::jet(dep));
    if (!alpha) throw BadParameters(X2.name + " is not a scaling in " + dep.name());
    std::vector<size_t> S, R;
    for (size_t i = 0; i < 3; ++i) (a[i].is_zero() ? R : S).push_back(i);
    if (S.empty()) throw BadParameters(X1.name + " vanishes");
    RatFunc C = l[S[0]];
    for (auto i : S)
        if (!(l[i] == C)) throw BadParameters("scaling weights differ along the translation");
    size_t kx = 3;
    for (auto i : R)
        if (!l[i].is_zero()) {
            kx = i;
            break;
        }
    if (kx == 3) throw BadParameters("no transverse scaled variable for the second canonical coordinate");
    RatFunc lk_inv = l[kx].inverse();
    Expr xk = Expr::indep(vars[kx]);

    ReductionMap m;
    m.old_vars = vars;
    m.old_dep = dep;
    m.canonical = detail::default_canonical(2);
    Expr rho = Expr::indep(m.canonical[0]), chi = Expr::indep(m.canonical[1]), z = Expr::indep(m.zeta_var);
    m.U_def = Expr::jet(dep) * pow(xk, -(*alpha * lk_inv));
    m.inverse[vars[kx]] = exp(chi * l[kx]);
    if (S.size() == 2) {
        size_t i = S[0], j = S[1];
        // w orthogonal to a on S; r with r.a = 1.
        RatFunc wi = -a[j], wj = a[i];
        std::vector<RatFunc> r(2);
        size_t simple = a[i].is_constant() ? 0 : (a[j].is_constant() ? 1 : 2);
        if (simple < 2) {
            r[simple] = (simple == 0 ? a[i] : a[j]).inverse();
        } else {
            RatFunc n2 = (a[i] * a[i] + a[j] * a[j]).inverse();
            r = {a[i] * n2, a[j] * n2};
        }
        Expr lin = Expr(wi) * Expr::indep(vars[i]) + Expr(wj) * Expr::indep(vars[j]);
        m.zeta = lin * pow(xk, -(C * lk_inv));
        m.canonical_exprs.push_back(Expr(r[0]) * Expr::indep(vars[i]) + Expr(r[1]) * Expr::indep(vars[j]));
        // [w; r] (x_i, x_j) = (z e^{C chi}, rho)
        auto Li = detail::invert({{wi, wj}, {r[0], r[1]}});
        Expr top = z * exp(chi * C);
        m.inverse[vars[i]] = Expr(Li[0][0]) * top + Expr(Li[0][1]) * rho;
        m.inverse[vars[j]] = Expr(Li[1][0]) * top + Expr(Li[1][1]) * rho;
    } else if (S.size() == 1) {
        size_t i = S[0];
        size_t o = 3 - i - kx;
        Expr xo = Expr::indep(vars[o]);
        m.zeta = xo * pow(xk, -(l[o] * lk_inv));
        m.canonical_exprs.push_back(Expr::indep(vars[i]) * a[i].inverse());
        m.inverse[vars[i]] = rho * a[i];
        m.inverse[vars[o]] = z * exp(chi * l[o]);
    } else {
        throw BadParameters(X1.name + " has no transverse variable");
    }
    m.canonical_exprs.push_back(ln(xk) * lk_inv);
    verify_map(m, {X1, X2});
    return m;
}

struct ReducedODE {
    Expr expr;
    // G after substitution equals weight * expr.
    Expr weight;
    Symbol var;
    Symbol dep;
    int order = 0;

    Atom top() const { return Atom::jet(dep, order ? MultiIndex{{var, order}} : MultiIndex{}); }
};

namespace detail {

inline int jet_order_in(const Expr& e, Symbol dep) {
    int k = -1;
    for (auto& j : jets_of(e, dep)) k = std::max(k, order(j.multi()));
    return k;
}

// Factors of the first term that carry the canonical coordinates.
inline Expr canonical_weight(const Expr& e, const ReductionMap& m) {
    Expr w(1);
    if (e.is_zero()) return w;
    for (auto& f : e.terms()[0].mono.factors) {
        bool hit = f.atom.primitive() ? m.is_canonical(f.atom) : m.depends_on_canonical(f.atom.arg());
        if (hit) w = w * Expr::from_term(Term{Monomial{{f}}, RatFunc(1)});
    }
    return w;
}

inline std::string canonical_terms(const Expr& e, const ReductionMap& m) {
    Expr out;
    for (auto& t : e.terms()) {
        Expr single = Expr::from_sorted({t});
        if (m.depends_on_canonical(single)) out += single;
    }
    return out.str();
}

}  // namespace detail

inline ReducedODE reduce_pde(const PdeSystem& sys, const ReductionMap& m) {
    Reducer r(m);
    Expr E = r(sys.G());
    if (E.is_zero()) throw NotInvariant("the equation vanishes identically on invariant functions");
    Expr w = detail::canonical_weight(E, m);
    Expr G = E / w;
    if (m.depends_on_canonical(G))
        throw NotInvariant("reduced equation keeps canonical coordinates: " + detail::canonical_terms(G, m));
    ReducedODE ode{G, w, m.zeta_var, m.new_dep, detail::jet_order_in(G, m.new_dep)};
    if (ode.order < 1) throw NotInvariant("reduced equation has no derivatives: " + G.str());
    return ode;
}

// New components J^a = M^a_i J^i / det M in (z, canonical) variables.
inline ConservedCurrent transform_current(const ConservedCurrent& cur, const ReductionMap& m) {
    Reducer r(m);
    auto M = r.jacobian();
    Expr det = r.to_new(detail::determinant(M));
    if (det.is_zero()) throw SingularMap("Jacobian determinant vanishes");
    auto nv = m.new_vars();
    ConservedCurrent out;
    for (size_t a = 0; a < nv.size(); ++a) {
        Expr c;
        for (size_t i = 0; i < m.old_vars.size(); ++i)
            if (!M[a][i].is_zero()) c += M[a][i] * cur.of(m.old_vars[i]);
        c = r(c) / det;
        if (!c.is_zero()) out.components[nv[a]] = c;
    }
    return out;
}

// D_z T + sum_c d_c Phi^c with the canonical coordinates as plain variables.
inline Expr reduced_divergence(const ConservedCurrent& cur, const ReductionMap& m) {
    Expr d = total_derivative(cur.of(m.zeta_var), m.zeta_var);
    for (auto c : m.canonical) d += partial(cur.of(c), Atom::indep(c));
    return d;
}

// Qbar with D_z Psi = Qbar * Gbar.
inline Expr reduced_multiplier(const Expr& Q, const ReductionMap& m, const ReducedODE& ode) {
    Reducer r(m);
    Expr det = r.to_new(r.jacobian_det());
    return r(Q) * ode.weight / det;
}

struct FirstIntegral {
    Expr psi;
    // D_z psi = lambda * Gbar.
    Expr lambda;
    Expr multiplier;
    std::string label;
};

namespace detail {

// Drops the additive constant (terms free of z and of U).
inline Expr strip_constant(const Expr& e, const ReductionMap& m) {
    Expr out;
    for (auto& t : e.terms()) {
        Expr single = Expr::from_sorted({t});
        bool live = single.depends_on(Atom::indep(m.zeta_var));
        for (auto& a : single.atoms())
            if (a.kind() == AtomKind::Jet && a.symbol() == m.new_dep) live = true;
        if (live) out += single;
    }
    return out;
}

inline Expr total_z_inverse(const Expr& e, const ReductionMap& m) {
    if (e.is_zero()) return {};
    return invert_divergence(e, {m.zeta_var}, {m.new_dep}).of(m.zeta_var);
}

}  // namespace detail

namespace detail {

// a / b by long division on leading terms, when it is exact.
inline std::optional<Expr> divide_exact(Expr a, const Expr& b) {
    if (b.is_zero()) return std::nullopt;
    if (b.size() == 1) return a / b;
    const Term& lb = b.terms().back();
    Expr lead_inv = Expr(1) / Expr::from_sorted({lb});
    Expr q;
    size_t limit = 4 * (a.size() + 1) * (b.size() + 1);
    for (size_t step = 0; step < limit && !a.is_zero(); ++step) {
        Expr t = Expr::from_sorted({a.terms().back()}) * lead_inv;
        q += t;
        a -= t * b;
    }
    if (!a.is_zero()) return std::nullopt;
    return q;
}

}  // namespace detail

// lambda with D_z psi = lambda * Gbar; nullopt when psi is not a first integral.
inline std::optional<Expr> integral_factor(const Expr& psi, const ReducedODE& ode) {
    Expr d = total_derivative(psi, ode.var);
    if (d.is_zero()) return Expr();
    if (detail::jet_order_in(d, ode.dep) != ode.order) return std::nullopt;
    Expr A = partial(ode.expr, ode.top());
    Expr B = partial(d, ode.top());
    if (!clear_sum_denominators(d * A - B * ode.expr).is_zero()) return std::nullopt;
    if (auto q = detail::divide_exact(B, A)) return *q;
    return B / A;
}

inline FirstIntegral extract_first_integral(const ConservedCurrent& cur, const ReductionMap& m, const ReducedODE& ode) {
    auto bar = transform_current(cur, m);
    Expr flux;
    for (auto c : m.canonical) flux += partial(bar.of(c), Atom::indep(c));
    Expr psi = bar.of(m.zeta_var);
    try {
        psi += detail::total_z_inverse(flux, m);
    } catch (const NotADivergence& e) {
        throw ResidualCanonicalDependence(std::string("canonical flux is not a total z-derivative: ") + e.what());
    }
    psi = detail::strip_constant(psi, m);
    if (m.depends_on_canonical(psi))
        throw ResidualCanonicalDependence("first integral keeps " + detail::canonical_terms(psi, m));
    auto lambda = integral_factor(psi, ode);
    if (!lambda) throw NotTotalDerivative("D_z of " + psi.str() + " is not a multiple of the reduced equation");
    return FirstIntegral{psi, *lambda, Expr(), "current"};
}

inline FirstIntegral first_integral_from_multiplier(const Expr& Q, const ReductionMap& m, const ReducedODE& ode) {
    Expr qbar = reduced_multiplier(Q, m, ode);
    if (m.depends_on_canonical(qbar))
        throw NotInvariant("reduced multiplier keeps " + detail::canonical_terms(qbar, m));
    Expr e = qbar * ode.expr;
    Expr psi;
    try {
        psi = detail::strip_constant(detail::total_z_inverse(e, m), m);
    } catch (const NotADivergence&) {
        throw NotTotalDerivative("Qbar*Gbar is not a total z-derivative for Q = " + Q.str());
    }
    if (!(total_derivative(psi, m.zeta_var) - e).is_zero())
        throw NotTotalDerivative("inversion residual for Q = " + Q.str());
    return FirstIntegral{psi, qbar, Q, "multiplier"};
}

// a = k b for a constant k (in the parameters); returns k.
inline std::optional<RatFunc> proportional(const Expr& a, const Expr& b) {
    if (a.is_zero() || b.is_zero()) {
        if (a.is_zero() && b.is_zero()) return RatFunc(1);
        return std::nullopt;
    }
    if (a.size() != b.size()) return std::nullopt;
    RatFunc k = a.terms()[0].coef / b.terms()[0].coef;
    if (!(a - b * k).is_zero()) return std::nullopt;
    return k;
}

// Renames new_dep^(k) to lowered_dep^(k - lowered); nullopt when a lower jet occurs.
inline std::optional<Expr> lower(const Expr& e, const ReductionMap& m) {
    if (m.lowered == 0) return e;
    bool ok = true;
    Expr out = rebuild(e, [&](const Atom& a) -> std::optional<Expr> {
        if (a.kind() != AtomKind::Jet || a.symbol() != m.new_dep) return std::nullopt;
        int k = count(a.multi(), m.zeta_var);
        if (k < m.lowered) {
            ok = false;
            return std::nullopt;
        }
        return k == m.lowered ? Expr::jet(m.lowered_dep) : Expr::jet(m.lowered_dep, {{m.zeta_var, k - m.lowered}});
    });
    if (!ok) return std::nullopt;
    return out;
}

inline Expr raise(const Expr& e, const ReductionMap& m) {
    if (m.lowered == 0) return e;
    return rebuild(e, [&](const Atom& a) -> std::optional<Expr> {
        if (a.kind() != AtomKind::Jet || a.symbol() != m.lowered_dep) return std::nullopt;
        return Expr::jet(m.new_dep, {{m.zeta_var, count(a.multi(), m.zeta_var) + m.lowered}});
    });
}

inline std::string display(const Expr& e, const ReductionMap& m) {
    auto l = lower(e, m);
    return (l ? *l : e).str();
}

// Random points: parameters and z in [1/2, 2], U in [1/2, 2], derivatives in [-1, 1].
class PointSampler {
public:
    explicit PointSampler(uint64_t seed) : rng_(seed) {}

    Rational uniform(long lo_num, long hi_num, long den) {
        std::uniform_int_distribution<long> d(lo_num, hi_num);
        Rational r(d(rng_), den);
        r.canonicalize();
        return r;
    }

    Point sample(const std::set<Symbol>& params, Symbol var, const std::vector<Atom>& jets,
                 const std::map<Symbol, Rational>& fixed = {}) {
        Point p;
        for (auto s : params) {
            auto it = fixed.find(s);
            p[s.name()] = it != fixed.end() ? it->second : uniform(50, 200, 100);
        }
        p[var.name()] = uniform(50, 200, 100);
        for (auto& a : jets) p[a.str()] = order(a.multi()) ? uniform(-100, 100, 100) : uniform(50, 200, 100);
        return p;
    }

private:
    std::mt19937_64 rng_;
};

inline uint64_t reduce_seed() {
    if (const char* s = std::getenv("REDUCE_SEED")) return std::strtoull(s, nullptr, 10);
    return 20240607;
}

struct NumericCheck {
    int points = 0;
    int skipped = 0;
    long double max_relative = 0;
    bool passed() const { return points > 0 && max_relative <= 1e-9L; }
};

// Evaluates D_z psi with the top derivative fixed by the reduced equation.
inline NumericCheck numeric_first_integral_check(const Expr& psi, const ReducedODE& ode, int n = 50,
                                                 uint64_t seed = reduce_seed(),
                                                 const std::map<Symbol, Rational>& fixed = {}) {
    NumericCheck out;
    Expr d = total_derivative(psi, ode.var);
    Expr A = partial(ode.expr, ode.top());
    if (A.depends_on(ode.top())) throw DomainError("reduced equation is not linear in " + ode.top().str());
    Expr B = ode.expr - A * Expr(ode.top());
    if (detail::jet_order_in(d, ode.dep) > ode.order) {
        PdeSystem s{{ode.var}, {ode.dep}, ode.top(), -B / A};
        OnShell shell(s);
        d = shell(d);
    }
    std::set<Symbol> params = d.parameters();
    for (auto q : ode.expr.parameters()) params.insert(q);
    std::vector<Atom> jets;
    for (int k = 0; k < ode.order; ++k) jets.push_back(Atom::jet(ode.dep, k ? MultiIndex{{ode.var, k}} : MultiIndex{}));
    PointSampler sampler(seed);
    for (int i = 0; i < n * 4 && out.points < n; ++i) {
        Point p = sampler.sample(params, ode.var, jets, fixed);
        try {
            long double a = eval_long_double(A, p);
            if (std::fabs(a) < 1e-6L) {
                ++out.skipped;
                continue;
            }
            p[ode.top().str()] = detail::from_ld(-eval_long_double(B, p) / a);
            long double scale = 1, value = 0;
            for (auto& t : d.terms()) {
                long double v = eval_long_double(Expr::from_sorted({t}), p);
                value += v;
                scale += std::fabs(v);
            }
            out.max_relative = std::max(out.max_relative, std::fabs(value) / scale);
            ++out.points;
        } catch (const DomainError&) {
            ++out.skipped;
        }
    }
    return out;
}

struct Independence {
    int rank = 0;
    // Relations in the symbols Psi1, Psi2, ...
    std::vector<Expr> relations;
};

namespace detail {

inline int numeric_rank(std::vector<std::vector<long double>> a) {
    int rank = 0;
    size_t rows = a.size(), cols = rows ? a[0].size() : 0;
    long double scale = 0;
    for (auto& r : a)
        for (auto x : r) scale = std::max(scale, std::fabs(x));
    if (scale == 0) return 0;
    for (size_t c = 0; c < cols && rank < static_cast<int>(rows); ++c) {
        size_t p = rank;
        for (size_t i = rank; i < rows; ++i)
            if (std::fabs(a[i][c]) > std::fabs(a[p][c])) p = i;
        if (std::fabs(a[p][c]) <= 1e-9L * scale) continue;
        std::swap(a[p], a[rank]);
        for (size_t i = rank + 1; i < rows; ++i) {
            long double f = a[i][c] / a[rank][c];
            for (size_t k = c; k < cols; ++k) a[i][k] -= f * a[rank][k];
        }
        ++rank;
    }
    return rank;
}

inline std::vector<Expr> relations_among(const std::vector<Expr>& cols, const std::vector<Expr>& names) {
    std::vector<Expr> out;
    for (auto& v : null_space_generic(collect_rows(cols), cols.size())) {
        Expr r;
        for (size_t k = 0; k < v.size(); ++k) r += Expr(v[k]) * names[k];
        out.push_back(r);
    }
    return out;
}

}  // namespace detail

// Jacobian rank in the U-jets at random points, plus linear and quadratic relations.
inline Independence functional_independence(const std::vector<Expr>& psis, Symbol var,
                                            uint64_t seed = reduce_seed()) {
    Independence out;
    std::set<Atom> jets;
    std::set<Symbol> params;
    for (auto& p : psis) {
        for (auto& j : jets_of(p)) jets.insert(j);
        for (auto q : p.parameters()) params.insert(q);
    }
    std::vector<Atom> jet_list(jets.begin(), jets.end());
    PointSampler sampler(seed);
    for (int trial = 0; trial < 3; ++trial) {
        Point pt = sampler.sample(params, var, jet_list);
        std::vector<std::vector<long double>> J;
        try {
            for (auto& p : psis) {
                std::vector<long double> row;
                for (auto& j : jets) row.push_back(eval_long_double(partial(p, j), pt));
                J.push_back(row);
            }
        } catch (const DomainError&) {
            continue;
        }
        out.rank = std::max(out.rank, detail::numeric_rank(J));
    }

    std::vector<Expr> names;
    for (size_t i = 0; i < psis.size(); ++i) names.push_back(Expr::indep(Symbol("Psi" + std::to_string(i + 1))));
    std::vector<Expr> cols{Expr(1)}, colnames{Expr(1)};
    for (size_t i = 0; i < psis.size(); ++i) {
        cols.push_back(psis[i]);
        colnames.push_back(names[i]);
    }
    auto linear = detail::relations_among(cols, colnames);
    std::set<size_t> dependent;
    for (auto& r : linear) {
        out.relations.push_back(r);
        for (size_t i = psis.size(); i-- > 0;)
            if (r.depends_on(Atom::indep(Symbol("Psi" + std::to_string(i + 1)))) && !dependent.count(i)) {
                dependent.insert(i);
                break;
            }
    }
    std::vector<size_t> keep;
    for (size_t i = 0; i < psis.size(); ++i)
        if (!dependent.count(i)) keep.push_back(i);
    std::vector<Expr> qcols{Expr(1)}, qnames{Expr(1)};
    for (auto i : keep) {
        qcols.push_back(psis[i]);
        qnames.push_back(names[i]);
    }
    size_t lin = qcols.size();
    for (size_t a = 0; a < keep.size(); ++a)
        for (size_t b = a; b < keep.size(); ++b) {
            qcols.push_back(psis[keep[a]] * psis[keep[b]]);
            qnames.push_back(names[keep[a]] * names[keep[b]]);
        }
    if (qcols.size() > lin)
        for (auto& r : detail::relations_among(qcols, qnames)) out.relations.push_back(r);
    return out;
}

// Replaces U^(k) by the k-th z-derivative of f.
inline Expr on_solution(const Expr& e, const ReducedODE& ode, const Expr& f) {
    std::map<int, Expr> derivs{{0, f}};
    return rebuild(e, [&](const Atom& a) -> std::optional<Expr> {
        if (a.kind() != AtomKind::Jet || a.symbol() != ode.dep) return std::nullopt;
        int k = count(a.multi(), ode.var);
        for (int i = 1; i <= k; ++i)
            if (!derivs.count(i)) derivs[i] = total_derivative(derivs[i - 1], ode.var);
        return derivs[k];
    });
}

}  // namespace multired
