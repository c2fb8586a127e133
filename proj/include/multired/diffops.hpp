#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "parse.hpp"

namespace multired {

// Derivative of a jet coordinate along an independent variable.
using JetRule = std::function<Expr(const Atom& jet, Symbol v)>;

inline Expr total_derivative(const Expr& e, Symbol v, const JetRule& rule = nullptr) {
    return derive(e, [&](const Atom& a) {
        if (a.kind() == AtomKind::Indep) return a.symbol() == v ? Expr(1) : Expr();
        if (rule) return rule(a, v);
        return Expr::jet(a.symbol(), shifted(a.multi(), v));
    });
}

inline Expr total_derivative(Expr e, const MultiIndex& mi, const JetRule& rule = nullptr) {
    for (auto& [v, k] : mi)
        for (int i = 0; i < k; ++i) e = total_derivative(e, v, rule);
    return e;
}

inline std::vector<Atom> jets_of(const Expr& e, std::optional<Symbol> dep = std::nullopt) {
    std::vector<Atom> out;
    for (auto& a : e.atoms())
        if (a.kind() == AtomKind::Jet && (!dep || a.symbol() == *dep)) out.push_back(a);
    return out;
}

// Order first, then more derivatives in earlier variables ranks higher.
inline int jet_rank_compare(const Atom& a, const Atom& b, const std::vector<Symbol>& vars) {
    int oa = order(a.multi()), ob = order(b.multi());
    if (oa != ob) return oa < ob ? -1 : 1;
    for (auto v : vars) {
        int ca = count(a.multi(), v), cb = count(b.multi(), v);
        if (ca != cb) return ca < cb ? -1 : 1;
    }
    if (a.symbol() != b.symbol()) return a.symbol() < b.symbol() ? 1 : -1;
    return 0;
}

inline std::optional<Atom> max_jet(const Expr& e, const std::vector<Symbol>& vars) {
    std::optional<Atom> best;
    for (auto& a : jets_of(e))
        if (!best || jet_rank_compare(a, *best, vars) > 0) best = a;
    return best;
}

struct PointSymmetry {
    std::string name;
    std::map<Symbol, Expr> xi;
    std::map<Symbol, Expr> eta;
    std::optional<Expr> r_factor;

    Expr xi_of(Symbol v) const {
        auto it = xi.find(v);
        return it == xi.end() ? Expr() : it->second;
    }
    Expr eta_of(Symbol u) const {
        auto it = eta.find(u);
        return it == eta.end() ? Expr() : it->second;
    }
    // X acting on a function of independent and dependent variables only.
    Expr apply_point(const Expr& f) const {
        Expr out;
        for (auto& [v, c] : xi)
            if (!c.is_zero()) out += c * partial(f, Atom::indep(v));
        for (auto& [u, c] : eta)
            if (!c.is_zero()) out += c * partial(f, Atom::jet(u));
        return out;
    }
};

inline Expr characteristic(const PointSymmetry& X, Symbol dep, const std::vector<Symbol>& vars) {
    Expr q = X.eta_of(dep);
    for (auto v : vars) {
        Expr c = X.xi_of(v);
        if (!c.is_zero()) q -= c * Expr::jet(dep, {{v, 1}});
    }
    return q;
}

inline Expr prolong(const PointSymmetry& X, const Expr& e, const std::vector<Symbol>& vars) {
    Expr out;
    for (auto v : vars) {
        Expr c = X.xi_of(v);
        if (!c.is_zero()) out += c * total_derivative(e, v);
    }
    std::map<Symbol, Expr> chars;
    for (auto& j : jets_of(e)) {
        auto it = chars.find(j.symbol());
        if (it == chars.end()) it = chars.emplace(j.symbol(), characteristic(X, j.symbol(), vars)).first;
        if (it->second.is_zero()) continue;
        Expr d = total_derivative(it->second, j.multi());
        if (!d.is_zero()) out += d * partial(e, j);
    }
    return out;
}

// Lie bracket of point vector fields over the given coordinates.
inline PointSymmetry commutator(const PointSymmetry& a, const PointSymmetry& b, const std::vector<Symbol>& vars,
                                const std::vector<Symbol>& deps) {
    PointSymmetry out;
    out.name = "[" + a.name + "," + b.name + "]";
    for (auto v : vars) {
        Expr c = a.apply_point(b.xi_of(v)) - b.apply_point(a.xi_of(v));
        if (!c.is_zero()) out.xi[v] = c;
    }
    for (auto u : deps) {
        Expr c = a.apply_point(b.eta_of(u)) - b.apply_point(a.eta_of(u));
        if (!c.is_zero()) out.eta[u] = c;
    }
    return out;
}

inline Expr euler_operator(const Expr& e, Symbol dep) {
    Expr out;
    for (auto& j : jets_of(e, dep)) {
        Expr d = total_derivative(partial(e, j), j.multi());
        out += order(j.multi()) % 2 ? -d : d;
    }
    return out;
}

inline Expr frechet(const Expr& G, const Expr& P, Symbol dep) {
    Expr out;
    for (auto& j : jets_of(G, dep)) out += partial(G, j) * total_derivative(P, j.multi());
    return out;
}

inline Expr frechet_adjoint(const Expr& G, const Expr& Q, Symbol dep) {
    Expr out;
    for (auto& j : jets_of(G, dep)) {
        Expr d = total_derivative(Q * partial(G, j), j.multi());
        out += order(j.multi()) % 2 ? -d : d;
    }
    return out;
}

// Solved-form PDE: lead = rhs, G = lead - rhs.
struct PdeSystem {
    std::vector<Symbol> independents;
    std::vector<Symbol> dependents;
    Atom lead;
    Expr rhs;

    Expr G() const { return Expr(lead) - rhs; }
    Symbol dependent() const { return lead.symbol(); }

    bool is_lead_descendant(const Atom& a) const {
        return a.kind() == AtomKind::Jet && a.symbol() == lead.symbol() && difference(a.multi(), lead.multi());
    }
};

// Restriction to solutions: the lead and its derivatives are eliminated.
class OnShell {
public:
    explicit OnShell(const PdeSystem& sys) : sys_(sys) {
        for (auto& j : jets_of(sys.rhs))
            if (sys.is_lead_descendant(j))
                throw CyclicRule("right-hand side contains " + j.str() + ", a derivative of " + sys.lead.str());
    }

    Expr operator()(const Expr& e) {
        return rebuild(e, [&](const Atom& a) -> std::optional<Expr> {
            if (!sys_.is_lead_descendant(a)) return std::nullopt;
            return resolve(a);
        });
    }

    Expr resolve(const Atom& a) {
        auto it = memo_.find(a);
        if (it != memo_.end()) return it->second;
        Expr r;
        if (a == sys_.lead) {
            r = sys_.rhs;
        } else {
            auto rest = *difference(a.multi(), sys_.lead.multi());
            Symbol v = rest.front().first;
            Atom lower = Atom::jet(a.symbol(), shifted(a.multi(), v, -1));
            r = (*this)(total_derivative(resolve(lower), v));
        }
        memo_.emplace(a, r);
        return r;
    }

private:
    const PdeSystem& sys_;
    std::map<Atom, Expr> memo_;
};

// Components keyed by independent variable.
struct ConservedCurrent {
    std::map<Symbol, Expr> components;
    Expr of(Symbol v) const {
        auto it = components.find(v);
        return it == components.end() ? Expr() : it->second;
    }
    Expr divergence(const JetRule& rule = nullptr) const {
        Expr out;
        for (auto& [v, c] : components) out += total_derivative(c, v, rule);
        return out;
    }
};

namespace detail {

// ∫ e d(atom) when atom enters only through monomial powers.
inline Expr antiderivative_in_atom(const Expr& e, const Atom& atom) {
    Expr out;
    for (auto& t : e.terms()) {
        RatFunc k;
        Term rest{Monomial{}, t.coef};
        for (auto& f : t.mono.factors) {
            if (f.atom == atom) k = f.exponent;
            else {
                if (!f.atom.primitive() && f.atom.arg().depends_on(atom))
                    throw IntegrationObstruction("cannot integrate " + Expr::from_sorted({t}).str() + " in " +
                                                 atom.str());
                rest.mono.factors.push_back(f);
            }
        }
        RatFunc k1 = k + RatFunc(1);
        Expr r = Expr::from_sorted({rest});
        if (k1.is_zero()) out += r * ln(Expr(atom));
        else out += r * pow(Expr(atom), k1) * k1.inverse();
    }
    return out;
}

}  // namespace detail

// ∫ e dv for e depending on v through powers of v and exp(a v + b).
inline Expr integrate_independent(const Expr& e, Symbol v) {
    Atom va = Atom::indep(v);
    Expr out;
    for (auto& t : e.terms()) {
        Expr single = Expr::from_sorted({t});
        if (!single.depends_on(va)) {
            out += single * Expr(va);
            continue;
        }
        std::optional<Factor> ex;
        for (auto& f : t.mono.factors)
            if (f.atom.kind() == AtomKind::Exp && f.atom.arg().depends_on(va)) ex = f;
        if (!ex) {
            out += detail::antiderivative_in_atom(single, va);
            continue;
        }
        Expr a = partial(ex->atom.arg(), va);
        if (a.depends_on(va)) throw IntegrationObstruction("exponent not linear in " + v.name());
        Expr poly = single / Expr::from_sorted({Term{Monomial{{*ex}}, RatFunc(1)}});
        RatFunc k;
        for (auto& f : poly.terms()[0].mono.factors)
            if (f.atom == va) k = f.exponent;
        auto n = detail::small_integer(k);
        Expr rest = poly * pow(Expr(va), -k);
        if (!n || *n < 0 || rest.depends_on(va))
            throw IntegrationObstruction("cannot integrate " + single.str() + " in " + v.name());
        Expr sum;
        Rational fact = 1;
        for (long j = 0; j <= *n; ++j) {
            if (j > 0) fact *= (*n - j + 1);
            Expr piece = pow(Expr(va), RatFunc(*n - j)) * Expr(fact) / pow(a, RatFunc(j + 1));
            sum += j % 2 ? -piece : piece;
        }
        out += rest * Expr(ex->atom) * sum;
    }
    return out;
}

namespace detail {

inline Rational multinomial(const MultiIndex& m) {
    Integer out;
    mpz_fac_ui(out.get_mpz_t(), static_cast<unsigned long>(order(m)));
    for (auto& [v, k] : m) {
        Integer f;
        mpz_fac_ui(f.get_mpz_t(), static_cast<unsigned long>(k));
        out /= f;
    }
    return Rational(out);
}

inline void sub_indices(const MultiIndex& m, size_t i, MultiIndex cur, std::vector<MultiIndex>& out) {
    if (i == m.size()) {
        out.push_back(cur);
        return;
    }
    for (int k = 0; k <= m[i].second; ++k)
        sub_indices(m, i + 1, k ? shifted(cur, m[i].first, k) : cur, out);
}

}  // namespace detail

// Homotopy operator for total divergences, any number of variables.
inline ConservedCurrent homotopy(const Expr& f, const std::vector<Symbol>& vars, const std::vector<Symbol>& deps) {
    ConservedCurrent cur;
    for (auto xj : vars) {
        Expr integrand;
        for (auto u : deps)
            for (auto& j : jets_of(f, u)) {
                const MultiIndex& alpha = j.multi();
                if (count(alpha, xj) == 0) continue;
                MultiIndex top = shifted(alpha, xj, -1);
                Expr df = partial(f, j);
                std::vector<MultiIndex> betas;
                detail::sub_indices(top, 0, {}, betas);
                for (auto& beta : betas) {
                    MultiIndex rest = *difference(top, beta);
                    Rational w = detail::multinomial(beta) * detail::multinomial(rest) / detail::multinomial(alpha);
                    Expr d = total_derivative(df, rest);
                    if (order(rest) % 2) d = -d;
                    integrand += Expr::jet(u, beta) * d * Expr(w);
                }
            }
        Expr comp;
        for (auto& t : integrand.terms()) {
            RatFunc deg;
            for (auto& fac : t.mono.factors) {
                if (fac.atom.kind() == AtomKind::Jet) deg += fac.exponent;
                else if (!fac.atom.primitive() && !jets_of(fac.atom.arg()).empty())
                    throw IntegrationObstruction("homotopy integrand not homogeneous: " +
                                                 Expr::from_sorted({t}).str());
            }
            if (deg.is_zero()) throw IntegrationObstruction("homotopy base point singular");
            comp += Expr::from_sorted({t}) * deg.inverse();
        }
        if (!comp.is_zero()) cur.components[xj] = comp;
    }
    std::map<Atom, Expr> zero;
    for (auto& j : jets_of(f)) zero[j] = Expr();
    Expr base;
    try {
        base = substitute(f, zero);
    } catch (const DomainError&) {
        throw IntegrationObstruction("homotopy base point singular");
    }
    if (!base.is_zero()) {
        Symbol v = vars.back();
        for (auto it = vars.rbegin(); it != vars.rend(); ++it)
            if (base.depends_on(Atom::indep(*it))) {
                v = *it;
                break;
            }
        cur.components[v] += integrate_independent(base, v);
    }
    return cur;
}

inline bool is_divergence(const Expr& e, const std::vector<Symbol>& deps) {
    for (auto u : deps)
        if (!euler_operator(e, u).is_zero()) return false;
    return true;
}

// Finds (F^i) with sum_i D_i F^i = e exactly.
inline ConservedCurrent invert_divergence(Expr e, const std::vector<Symbol>& vars, const std::vector<Symbol>& deps,
                                          int max_steps = 400) {
    if (!is_divergence(e, deps)) throw NotADivergence("Euler operator does not annihilate " + e.str());
    ConservedCurrent cur;
    Expr original = e;
    try {
        for (int step = 0; step < max_steps && !e.is_zero(); ++step) {
            auto J = max_jet(e, vars);
            if (!J) {
                Symbol v = vars.back();
                for (auto it = vars.rbegin(); it != vars.rend(); ++it)
                    if (e.depends_on(Atom::indep(*it))) {
                        v = *it;
                        break;
                    }
                cur.components[v] += integrate_independent(e, v);
                e = Expr();
                break;
            }
            if (J->multi().empty()) throw IntegrationObstruction("residual without derivatives: " + e.str());
            Expr A = partial(e, *J);
            if (A.depends_on(*J)) throw IntegrationObstruction("nonlinear in " + J->str() + ": " + e.str());
            std::optional<Expr> best_rem, best_hat;
            Symbol best_v;
            for (auto v : vars) {
                if (count(J->multi(), v) == 0) continue;
                Atom lower = Atom::jet(J->symbol(), shifted(J->multi(), v, -1));
                Expr hat = detail::antiderivative_in_atom(A, lower);
                Expr rem = e - total_derivative(hat, v);
                bool better = !best_rem;
                if (!better) {
                    auto mr = max_jet(rem, vars), mb = max_jet(*best_rem, vars);
                    int c = !mr ? (!mb ? 0 : -1) : (!mb ? 1 : jet_rank_compare(*mr, *mb, vars));
                    better = c < 0 || (c == 0 && rem.size() <= best_rem->size());
                }
                if (better) {
                    best_rem = rem;
                    best_hat = hat;
                    best_v = v;
                }
            }
            cur.components[best_v] += *best_hat;
            e = *best_rem;
        }
        if (!e.is_zero()) throw IntegrationObstruction("step limit reached, residual " + e.str());
    } catch (const IntegrationObstruction&) {
        cur = homotopy(original, vars, deps);
    }
    std::erase_if(cur.components, [](auto& kv) { return kv.second.is_zero(); });
    return cur;
}

inline ConservedCurrent current_from_multiplier(const Expr& Q, const PdeSystem& sys) {
    return invert_divergence(Q * sys.G(), sys.independents, sys.dependents);
}

// True when T1 - T2 is, on solutions, a spatial divergence.
inline bool densities_equivalent(const Expr& T1, const Expr& T2, const PdeSystem& sys, Symbol time) {
    OnShell shell(sys);
    Expr d = shell(T1 - T2);
    // Each time-derivative level of each dependent is a separate spatial field.
    std::map<std::pair<Symbol, int>, Symbol> fields;
    std::map<Atom, Expr> to_fields;
    for (auto& j : jets_of(d)) {
        int k = count(j.multi(), time);
        auto key = std::make_pair(j.symbol(), k);
        if (!fields.count(key)) fields[key] = Symbol(j.symbol().name() + "#" + std::to_string(k));
        to_fields[j] = Expr::jet(fields[key], shifted(j.multi(), time, -k));
    }
    Expr f = substitute(d, to_fields);
    for (auto& [key, s] : fields)
        if (!euler_operator(f, s).is_zero()) return false;
    return true;
}

}  // namespace multired
