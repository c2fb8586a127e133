#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "diffops.hpp"

namespace multired {

// lhs = 0, or lhs != 0 when `nonzero`.
struct ParamConstraint {
    Poly lhs;
    bool nonzero = false;
    std::string str() const { return lhs.str() + (nonzero ? " != 0" : " = 0"); }
    friend bool operator==(const ParamConstraint& a, const ParamConstraint& b) {
        return a.nonzero == b.nonzero && a.lhs == b.lhs;
    }
};

// Known facts about parameters: nonzero factors and positive symbols.
struct Assumptions {
    std::set<Poly> nonzero;
    std::set<Symbol> positive;

    void assume_nonzero(const Poly& p) {
        if (p.is_constant()) return;
        for (auto& [f, k] : factor(p).factors) nonzero.insert(f);
    }
    bool known_nonzero(const Poly& f) const {
        if (f.is_constant()) return !f.is_zero();
        if (nonzero.count(f)) return true;
        auto vars = f.variables();
        if (f.size() == 1 && std::all_of(vars.begin(), vars.end(), [&](Symbol s) { return positive.count(s); }))
            return true;
        return false;
    }
};

struct MultiplierAnsatz {
    std::vector<Expr> basis;
};

// Monomials of degree <= degree in the free jets of order <= max_order (and
// order >= 1 jets only if include_u is false) times monomials in the
// independent variables of degree <= indep_degree.
inline MultiplierAnsatz auto_ansatz(const PdeSystem& sys, int max_order, int degree, int indep_degree) {
    std::vector<Atom> jets;
    std::function<void(MultiIndex, size_t, int)> gen = [&](MultiIndex m, size_t i, int left) {
        if (i == sys.independents.size()) {
            for (auto u : sys.dependents) {
                Atom a = Atom::jet(u, m);
                if (!sys.is_lead_descendant(a)) jets.push_back(a);
            }
            return;
        }
        for (int k = 0; k <= left; ++k)
            gen(k ? shifted(m, sys.independents[i], k) : m, i + 1, left - k);
    };
    gen({}, 0, max_order);
    std::sort(jets.begin(), jets.end());
    std::vector<Expr> jm{Expr(1)}, im{Expr(1)};
    std::function<void(std::vector<Expr>&, const std::vector<Expr>&, int)> powers =
        [](std::vector<Expr>& out, const std::vector<Expr>& gens, int deg) {
            std::vector<Expr> layer{Expr(1)};
            for (int d = 1; d <= deg; ++d) {
                std::vector<Expr> next;
                std::set<Expr> seen;
                for (auto& m : layer)
                    for (auto& g : gens) {
                        Expr p = m * g;
                        if (seen.insert(p).second) next.push_back(p);
                    }
                out.insert(out.end(), next.begin(), next.end());
                layer = std::move(next);
            }
        };
    std::vector<Expr> jg, ig;
    for (auto& a : jets) jg.push_back(Expr(a));
    for (auto v : sys.independents) ig.push_back(Expr::indep(v));
    powers(jm, jg, degree);
    powers(im, ig, indep_degree);
    MultiplierAnsatz out;
    std::set<Expr> seen;
    for (auto& a : im)
        for (auto& b : jm) {
            Expr p = a * b;
            if (seen.insert(p).second) out.basis.push_back(p);
        }
    return out;
}

// pr X(G) = R G, with R read off from the lead coefficient.
inline Expr r_factor(const PointSymmetry& X, const PdeSystem& sys) {
    Expr G = sys.G();
    Expr W = prolong(X, G, sys.independents);
    Expr R = partial(W, sys.lead) / partial(G, sys.lead);
    if (!(W - R * G).is_zero())
        throw NotInvariant("pr " + X.name + "(G) is not a multiple of G: residual " + (W - R * G).str());
    return R;
}

namespace detail {

// Gaussian elimination over rational functions, assuming every pivot is nonzero.
inline std::vector<std::vector<RatFunc>> null_space_generic(std::vector<std::vector<RatFunc>> rows, size_t n) {
    std::vector<int> pivot_col;
    size_t r = 0;
    for (size_t c = 0; c < n && r < rows.size(); ++c) {
        size_t p = r;
        while (p < rows.size() && rows[p][c].is_zero()) ++p;
        if (p == rows.size()) continue;
        std::swap(rows[p], rows[r]);
        RatFunc inv = rows[r][c].inverse();
        for (auto& x : rows[r]) x *= inv;
        for (size_t i = 0; i < rows.size(); ++i) {
            if (i == r || rows[i][c].is_zero()) continue;
            RatFunc f = rows[i][c];
            for (size_t k = 0; k < n; ++k)
                if (!rows[r][k].is_zero()) rows[i][k] -= f * rows[r][k];
        }
        pivot_col.push_back(static_cast<int>(c));
        ++r;
    }
    std::vector<std::vector<RatFunc>> out;
    std::set<int> pivots(pivot_col.begin(), pivot_col.end());
    for (size_t f = 0; f < n; ++f) {
        if (pivots.count(static_cast<int>(f))) continue;
        std::vector<RatFunc> v(n);
        v[f] = RatFunc(1);
        for (size_t i = 0; i < pivot_col.size(); ++i) v[pivot_col[i]] = -rows[i][f];
        out.push_back(v);
    }
    return out;
}

// Rows of coefficient equations from expressions linear in unknown constants,
// one column per expression.
inline std::vector<std::vector<RatFunc>> collect_rows(const std::vector<Expr>& columns) {
    std::map<Monomial, std::vector<RatFunc>, MonoLess> rows;
    for (size_t k = 0; k < columns.size(); ++k)
        for (auto& t : columns[k].terms()) {
            auto& row = rows[t.mono];
            row.resize(columns.size());
            row[k] += t.coef;
        }
    std::vector<std::vector<RatFunc>> out;
    for (auto& [m, row] : rows) {
        row.resize(columns.size());
        out.push_back(row);
    }
    return out;
}

}  // namespace detail

// Trace of ad X_j: sum over k of the X_k-coefficient of [X_j, X_k].
inline std::vector<RatFunc> ad_traces(const std::vector<PointSymmetry>& alg, const std::vector<Symbol>& vars,
                                      const std::vector<Symbol>& deps) {
    size_t n = alg.size();
    std::vector<RatFunc> tr(n);
    for (size_t j = 0; j < n; ++j)
        for (size_t k = 0; k < n; ++k) {
            if (j == k) continue;
            PointSymmetry c = commutator(alg[j], alg[k], vars, deps);
            // Component-wise: sum_l c_l X_l - [X_j, X_k] = 0, one column per X_l plus the bracket.
            std::vector<Expr> per_l(n + 1);
            Symbol tag("__component");
            for (size_t l = 0; l <= n; ++l) {
                const PointSymmetry& X = l < n ? alg[l] : c;
                Expr e;
                int idx = 0;
                for (auto v : vars) e += X.xi_of(v) * pow(Expr::indep(tag), RatFunc(++idx));
                for (auto u : deps) e += X.eta_of(u) * pow(Expr::indep(tag), RatFunc(++idx));
                per_l[l] = l < n ? e : -e;
            }
            auto rows = detail::collect_rows(per_l);
            auto ns = detail::null_space_generic(rows, n + 1);
            std::optional<RatFunc> coef;
            for (auto& v : ns)
                if (!v[n].is_zero()) {
                    coef = v[k] / v[n];
                    break;
                }
            if (!coef) throw NotInvariant("[" + alg[j].name + "," + alg[k].name + "] is not in the algebra");
            tr[j] += *coef;
        }
    return tr;
}

// Q~ = pr X(Q) + (R_X + sum_i D_i xi^i + tr ad X) Q, on solutions.
inline Expr invariance_condition(const Expr& Q, const PointSymmetry& X, const PdeSystem& sys, const Expr& weight,
                                 OnShell& shell) {
    return shell(prolong(X, Q, sys.independents) + weight * Q);
}

inline Expr invariance_weight(const PointSymmetry& X, const PdeSystem& sys, const RatFunc& trace) {
    Expr w = X.r_factor ? *X.r_factor : r_factor(X, sys);
    for (auto v : sys.independents) w += total_derivative(X.xi_of(v), v);
    return w + Expr(trace);
}

struct DeterminingSystem {
    PdeSystem sys;
    std::vector<PointSymmetry> algebra;
    std::vector<Expr> basis;
    // sources[s][k]: expression contributed by basis element k to source s.
    std::vector<std::vector<Expr>> sources;
    std::vector<std::string> source_names;

    std::vector<std::vector<RatFunc>> rows() const {
        std::vector<std::vector<RatFunc>> out;
        for (auto& s : sources) {
            auto r = detail::collect_rows(s);
            out.insert(out.end(), r.begin(), r.end());
        }
        return out;
    }
    size_t equation_count() const { return rows().size(); }
};

inline DeterminingSystem build_determining_system(const MultiplierAnsatz& ansatz, const PdeSystem& sys,
                                                  const std::vector<PointSymmetry>& algebra) {
    if (ansatz.basis.empty()) throw InvalidProblem("empty multiplier ansatz");
    for (auto& b : ansatz.basis)
        for (auto& j : jets_of(b))
            if (sys.is_lead_descendant(j))
                throw AnsatzDependsOnLeading("basis element " + b.str() + " contains " + j.str());
    DeterminingSystem ds;
    ds.sys = sys;
    ds.algebra = algebra;
    ds.basis = ansatz.basis;
    Expr G = sys.G();
    for (auto u : sys.dependents) {
        std::vector<Expr> col;
        for (auto& b : ansatz.basis) col.push_back(euler_operator(b * G, u));
        ds.sources.push_back(std::move(col));
        ds.source_names.push_back("E_" + u.name() + "(QG)");
    }
    OnShell shell(sys);
    auto traces = ad_traces(algebra, sys.independents, sys.dependents);
    for (size_t j = 0; j < algebra.size(); ++j) {
        Expr w = invariance_weight(algebra[j], sys, traces[j]);
        std::vector<Expr> col;
        for (auto& b : ansatz.basis) col.push_back(invariance_condition(b, algebra[j], sys, w, shell));
        ds.sources.push_back(std::move(col));
        ds.source_names.push_back(algebra[j].name);
    }
    return ds;
}

struct Branch {
    std::map<Symbol, RatFunc> substitution;
    std::vector<ParamConstraint> constraints;
    std::vector<Expr> solutions;
    bool unresolved = false;
    std::string note;

    std::string constraint_str() const {
        std::string s;
        for (auto& c : constraints) {
            if (c.nonzero) continue;
            if (!s.empty()) s += ", ";
            s += c.str();
        }
        return s.empty() ? "generic" : s;
    }
};

struct CaseTree {
    std::vector<Branch> branches;
    const Branch* generic() const {
        for (auto& b : branches)
            if (std::none_of(b.constraints.begin(), b.constraints.end(), [](auto& c) { return !c.nonzero; }))
                return &b;
        return nullptr;
    }
};

struct SolveOptions {
    int branch_depth = 3;
    Assumptions assumptions;
    std::vector<Symbol> parameter_order;
};

namespace detail {

inline std::string substitution_key(const std::map<Symbol, RatFunc>& s) {
    std::string k;
    for (auto& [v, e] : s) k += v.name() + "=" + e.str() + ";";
    return k;
}

inline std::map<Symbol, RatFunc> compose(const std::map<Symbol, RatFunc>& base, Symbol v, const RatFunc& val) {
    std::map<Symbol, RatFunc> out;
    std::map<Symbol, RatFunc> one{{v, val}};
    for (auto& [w, e] : base) out[w] = e.substitute(one);
    out[v] = val;
    return out;
}

// Solutions of f = 0 as a substitution for one variable.
inline std::optional<std::pair<Symbol, RatFunc>> solve_linear(const Poly& f, const std::vector<Symbol>& order) {
    std::vector<Symbol> vars(order.begin(), order.end());
    for (auto s : f.variables())
        if (std::find(vars.begin(), vars.end(), s) == vars.end()) vars.push_back(s);
    std::optional<std::pair<Symbol, RatFunc>> fallback;
    for (auto v : vars) {
        if (f.degree(v) != 1) continue;
        Poly a = f.coefficient(v, 1), b = f.coefficient(v, 0);
        RatFunc val = -RatFunc(b) / RatFunc(a);
        if (a.is_constant()) return std::make_pair(v, val);
        if (!fallback) fallback = std::make_pair(v, val);
    }
    return fallback;
}

struct Solver {
    const DeterminingSystem& ds;
    SolveOptions opt;
    std::map<std::string, std::vector<Branch>> memo;

    // Branch on a candidate constraint; returns the reported branches.
    std::vector<Branch> branch_on(const std::map<Symbol, RatFunc>& sub, const Assumptions& as, const Poly& f,
                                  int depth) {
        auto lin = solve_linear(f, opt.parameter_order);
        if (!lin) return {};
        auto nsub = compose(sub, lin->first, lin->second);
        for (auto& nz : as.nonzero) {
            RatFunc v;
            try {
                v = RatFunc(nz).substitute(nsub);
            } catch (const DomainError&) {
                return {};
            }
            if (v.is_zero()) return {};
        }
        for (auto s : as.positive) {
            auto it = nsub.find(s);
            if (it != nsub.end() && it->second.is_constant() && it->second.constant() <= 0) return {};
        }
        return solve(nsub, as, depth + 1);
    }

    std::vector<Branch> solve(const std::map<Symbol, RatFunc>& sub, Assumptions as, int depth) {
        std::string key = substitution_key(sub);
        auto mit = memo.find(key);
        if (mit != memo.end()) return mit->second;
        memo[key] = {};
        std::vector<Branch> result;
        Branch mine;
        mine.substitution = sub;
        for (auto& [v, e] : sub) {
            Poly lhs = (RatFunc::var(v) - e).num();
            mine.constraints.push_back({lhs.monic().second, false});
        }
        if (depth > opt.branch_depth) {
            mine.unresolved = true;
            mine.note = "branch depth exceeded";
            memo[key] = {mine};
            return {mine};
        }
        // Specialize the basis and the per-source expressions.
        std::vector<size_t> keep;
        std::vector<Expr> basis;
        std::set<Expr> seen;
        for (size_t k = 0; k < ds.basis.size(); ++k) {
            Expr b;
            try {
                b = substitute_params(ds.basis[k], sub);
            } catch (const DomainError&) {
                continue;
            }
            if (b.is_zero() || !seen.insert(b).second) continue;
            keep.push_back(k);
            basis.push_back(b);
        }
        std::vector<std::vector<Expr>> sources;
        try {
            for (auto& s : ds.sources) {
                std::vector<Expr> col;
                for (auto k : keep) col.push_back(substitute_params(s[k], sub));
                sources.push_back(std::move(col));
            }
        } catch (const DomainError& e) {
            mine.unresolved = true;
            mine.note = e.what();
            memo[key] = {mine};
            return {mine};
        }
        std::vector<Branch> specials;
        // Coincidences of parametric exponents that would merge monomials.
        for (auto& s : sources) {
            std::set<Monomial> monos;
            for (auto& e : s)
                for (auto& t : e.terms()) monos.insert(t.mono);
            std::vector<Monomial> ms(monos.begin(), monos.end());
            std::set<std::string> tried;
            for (size_t i = 0; i < ms.size(); ++i)
                for (size_t j = i + 1; j < ms.size(); ++j) {
                    auto f = coincidence(ms[i], ms[j]);
                    if (!f) continue;
                    for (auto& [g, m] : factor(*f).factors) {
                        if (as.known_nonzero(g) || !tried.insert(g.str()).second) continue;
                        auto lin = solve_linear(g, opt.parameter_order);
                        if (!lin) continue;
                        // All exponent differences must vanish together.
                        auto nsub = compose({}, lin->first, lin->second);
                        if (!coincide_under(ms[i], ms[j], nsub)) continue;
                        auto got = branch_on(sub, as, g, depth);
                        specials.insert(specials.end(), got.begin(), got.end());
                    }
                }
        }
        auto rows = std::vector<std::vector<RatFunc>>();
        for (auto& s : sources) {
            auto r = collect_rows(s);
            rows.insert(rows.end(), r.begin(), r.end());
        }
        size_t n = basis.size();
        std::vector<int> pivot_col;
        std::vector<bool> used(rows.size(), false);
        std::vector<size_t> pivot_row;
        for (;;) {
            // Candidate pivots: safe ones first, then fewest nonzeros, constant entries first.
            struct Cand {
                size_t r, c;
                bool safe, constant;
                size_t nnz;
            };
            std::optional<Cand> best;
            for (size_t r = 0; r < rows.size(); ++r) {
                if (used[r]) continue;
                size_t nnz = 0;
                for (auto& x : rows[r])
                    if (!x.is_zero()) ++nnz;
                if (!nnz) continue;
                for (size_t c = 0; c < n; ++c) {
                    if (rows[r][c].is_zero()) continue;
                    Cand cd{r, c, is_safe(rows[r][c], as), rows[r][c].is_constant(), nnz};
                    auto better = [](const Cand& a, const Cand& b) {
                        if (a.safe != b.safe) return a.safe;
                        if (a.nnz != b.nnz) return a.nnz < b.nnz;
                        if (a.constant != b.constant) return a.constant;
                        if (a.r != b.r) return a.r < b.r;
                        return a.c < b.c;
                    };
                    if (!best || better(cd, *best)) best = cd;
                }
            }
            if (!best) break;
            const RatFunc piv = rows[best->r][best->c];
            if (!best->safe) {
                for (auto& [g, m] : factor(piv.num()).factors) {
                    if (as.known_nonzero(g)) continue;
                    auto got = branch_on(sub, as, g, depth);
                    specials.insert(specials.end(), got.begin(), got.end());
                    as.nonzero.insert(g);
                    mine.constraints.push_back({g, true});
                }
            }
            RatFunc inv = piv.inverse();
            auto& pr = rows[best->r];
            for (auto& x : pr) x *= inv;
            for (size_t i = 0; i < rows.size(); ++i) {
                if (i == best->r || rows[i][best->c].is_zero()) continue;
                RatFunc f = rows[i][best->c];
                for (size_t k = 0; k < n; ++k)
                    if (!pr[k].is_zero()) rows[i][k] -= f * pr[k];
            }
            used[best->r] = true;
            pivot_col.push_back(static_cast<int>(best->c));
            pivot_row.push_back(best->r);
        }
        std::set<int> pcs(pivot_col.begin(), pivot_col.end());
        for (size_t f = 0; f < n; ++f) {
            if (pcs.count(static_cast<int>(f))) continue;
            Expr q = basis[f];
            for (size_t i = 0; i < pivot_col.size(); ++i) {
                const RatFunc& c = rows[pivot_row[i]][f];
                if (!c.is_zero()) q -= basis[pivot_col[i]] * c;
            }
            mine.solutions.push_back(q);
        }
        result.push_back(mine);
        size_t dim = mine.solutions.size();
        std::set<std::string> have{constraint_set_key(mine)};
        for (auto& b : specials) {
            if (b.solutions.size() <= dim && !b.unresolved) continue;
            if (!have.insert(constraint_set_key(b)).second) continue;
            result.push_back(b);
        }
        memo[key] = result;
        return result;
    }

    static std::string constraint_set_key(const Branch& b) { return substitution_key(b.substitution); }

    static bool is_safe(const RatFunc& x, const Assumptions& as) {
        if (x.is_constant()) return true;
        for (auto& [g, m] : factor(x.num()).factors)
            if (!as.known_nonzero(g)) return false;
        return true;
    }

    // Numerator of the first nonconstant exponent difference, when the monomials
    // could coincide for special parameter values.
    static std::optional<Poly> coincidence(const Monomial& a, const Monomial& b) {
        std::map<Atom, RatFunc> diff;
        for (auto& f : a.factors) diff[f.atom] += f.exponent;
        for (auto& f : b.factors) diff[f.atom] -= f.exponent;
        std::optional<Poly> first;
        for (auto& [atom, d] : diff) {
            if (d.is_zero()) continue;
            if (d.is_constant()) return std::nullopt;
            if (!first) first = d.num();
        }
        return first;
    }

    static bool coincide_under(const Monomial& a, const Monomial& b, const std::map<Symbol, RatFunc>& s) {
        std::map<Atom, RatFunc> diff;
        for (auto& f : a.factors) diff[f.atom] += f.exponent;
        for (auto& f : b.factors) diff[f.atom] -= f.exponent;
        for (auto& [atom, d] : diff) {
            try {
                if (!d.substitute(s).is_zero()) return false;
            } catch (const DomainError&) {
                return false;
            }
        }
        return true;
    }
};

}  // namespace detail

inline CaseTree solve_parametric(const DeterminingSystem& ds, const SolveOptions& opt = {}) {
    detail::Solver s{ds, opt, {}};
    CaseTree out;
    auto all = s.solve({}, opt.assumptions, 0);
    // Drop a branch when a weaker branch already has at least its dimension.
    auto implies = [](const Branch& a, const Branch& b) {
        for (auto& [v, e] : b.substitution) {
            try {
                if (!(RatFunc::var(v).substitute(a.substitution) == e.substitute(a.substitution))) return false;
            } catch (const DomainError&) {
                return false;
            }
        }
        return true;
    };
    for (size_t i = 0; i < all.size(); ++i) {
        bool redundant = false;
        for (size_t j = 0; j < all.size() && i > 0 && !redundant; ++j) {
            if (i == j || all[i].unresolved) continue;
            if (all[j].substitution.size() < all[i].substitution.size() && implies(all[i], all[j]) &&
                all[i].solutions.size() <= all[j].solutions.size())
                redundant = true;
        }
        if (!redundant) out.branches.push_back(all[i]);
    }
    std::stable_sort(out.branches.begin() + 1, out.branches.end(), [](const Branch& a, const Branch& b) {
        return a.constraint_str() < b.constraint_str();
    });
    return out;
}

}  // namespace multired
