#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ratfunc.hpp"

namespace multired {

// Sorted by variable, zero counts omitted.
using MultiIndex = std::vector<std::pair<Symbol, int>>;

inline int order(const MultiIndex& m) {
    int n = 0;
    for (auto& [v, k] : m) n += k;
    return n;
}

inline int count(const MultiIndex& m, Symbol v) {
    for (auto& [w, k] : m)
        if (w == v) return k;
    return 0;
}

inline MultiIndex shifted(MultiIndex m, Symbol v, int k = 1) {
    for (auto it = m.begin(); it != m.end(); ++it) {
        if (it->first == v) {
            it->second += k;
            if (it->second == 0) m.erase(it);
            return m;
        }
        if (v < it->first) {
            m.insert(it, {v, k});
            return m;
        }
    }
    m.emplace_back(v, k);
    return m;
}

// a - b when every count stays nonnegative.
inline std::optional<MultiIndex> difference(const MultiIndex& a, const MultiIndex& b) {
    MultiIndex out = a;
    for (auto& [v, k] : b) {
        if (count(out, v) < k) return std::nullopt;
        out = shifted(out, v, -k);
    }
    return out;
}

enum class AtomKind { Indep, Jet, Exp, Ln, Pow };

class Expr;
struct AtomNode;

class Atom {
public:
    Atom() = default;
    static Atom indep(Symbol s);
    static Atom jet(Symbol dep, MultiIndex mi = {});
    static Atom function(AtomKind kind, Expr arg);

    AtomKind kind() const;
    Symbol symbol() const;
    const MultiIndex& multi() const;
    const Expr& arg() const;
    bool primitive() const { return kind() == AtomKind::Indep || kind() == AtomKind::Jet; }
    std::string str() const;

    friend int compare(const Atom& a, const Atom& b);
    friend bool operator==(const Atom& a, const Atom& b) { return compare(a, b) == 0; }
    friend bool operator<(const Atom& a, const Atom& b) { return compare(a, b) < 0; }

private:
    explicit Atom(std::shared_ptr<const AtomNode> p) : p_(std::move(p)) {}
    std::shared_ptr<const AtomNode> p_;
};

struct Factor {
    Atom atom;
    RatFunc exponent;
};

struct Monomial {
    std::vector<Factor> factors;
    bool is_one() const { return factors.empty(); }
    friend int compare(const Monomial& a, const Monomial& b) {
        size_t n = std::min(a.factors.size(), b.factors.size());
        for (size_t i = 0; i < n; ++i) {
            int c = compare(a.factors[i].atom, b.factors[i].atom);
            if (c) return c;
            c = compare(a.factors[i].exponent, b.factors[i].exponent);
            if (c) return c;
        }
        if (a.factors.size() == b.factors.size()) return 0;
        return a.factors.size() < b.factors.size() ? -1 : 1;
    }
    friend bool operator==(const Monomial& a, const Monomial& b) { return compare(a, b) == 0; }
    friend bool operator<(const Monomial& a, const Monomial& b) { return compare(a, b) < 0; }
    std::string str() const;
};

struct Term {
    Monomial mono;
    RatFunc coef;
};

class Expr {
public:
    Expr() = default;
    Expr(const RatFunc& c) {
        if (!c.is_zero()) terms_.push_back({{}, c});
    }
    Expr(const Rational& c) : Expr(RatFunc(c)) {}
    Expr(long c) : Expr(RatFunc(c)) {}
    Expr(int c) : Expr(RatFunc(long(c))) {}
    Expr(const Atom& a) { terms_.push_back({{{{a, RatFunc(1)}}}, RatFunc(1)}); }

    static Expr indep(Symbol s) { return Expr(Atom::indep(s)); }
    static Expr jet(Symbol dep, MultiIndex mi = {}) { return Expr(Atom::jet(dep, std::move(mi))); }
    static Expr param(Symbol s) { return Expr(RatFunc::var(s)); }
    // Canonicalizes a single raw term (unsorted factors allowed).
    static Expr from_term(Term t);

    const std::vector<Term>& terms() const { return terms_; }
    size_t size() const { return terms_.size(); }
    bool is_zero() const { return terms_.empty(); }
    bool is_constant() const { return terms_.empty() || (terms_.size() == 1 && terms_[0].mono.is_one()); }
    RatFunc constant() const { return terms_.empty() ? RatFunc() : terms_[0].coef; }
    // Coefficient of the empty monomial.
    RatFunc constant_term() const {
        for (auto& t : terms_)
            if (t.mono.is_one()) return t.coef;
        return {};
    }

    Expr operator-() const {
        Expr out = *this;
        for (auto& t : out.terms_) t.coef = -t.coef;
        return out;
    }
    friend Expr operator+(const Expr& a, const Expr& b);
    friend Expr operator-(const Expr& a, const Expr& b) { return a + (-b); }
    friend Expr operator*(const Expr& a, const Expr& b);
    friend Expr operator*(const Expr& a, const RatFunc& c) {
        if (c.is_zero()) return {};
        Expr out = a;
        for (auto& t : out.terms_) t.coef *= c;
        return out;
    }
    friend Expr operator*(const RatFunc& c, const Expr& a) { return a * c; }
    friend Expr operator/(const Expr& a, const Expr& b);
    Expr& operator+=(const Expr& o) { return *this = *this + o; }
    Expr& operator-=(const Expr& o) { return *this = *this - o; }
    Expr& operator*=(const Expr& o) { return *this = *this * o; }

    friend int compare(const Expr& a, const Expr& b) {
        size_t n = std::min(a.terms_.size(), b.terms_.size());
        for (size_t i = 0; i < n; ++i) {
            int c = compare(a.terms_[i].mono, b.terms_[i].mono);
            if (c) return c;
            c = compare(a.terms_[i].coef, b.terms_[i].coef);
            if (c) return c;
        }
        if (a.terms_.size() == b.terms_.size()) return 0;
        return a.terms_.size() < b.terms_.size() ? -1 : 1;
    }
    friend bool operator==(const Expr& a, const Expr& b) { return compare(a, b) == 0; }
    friend bool operator<(const Expr& a, const Expr& b) { return compare(a, b) < 0; }

    // Primitive atoms (independent variables and jets), looking inside functions.
    std::set<Atom> atoms() const;
    std::set<Symbol> parameters() const;
    bool depends_on(const Atom& a) const;
    bool has_functions() const;

    std::string str() const;

    static Expr from_sorted(std::vector<Term> t) {
        Expr e;
        e.terms_ = std::move(t);
        return e;
    }

private:
    std::vector<Term> terms_;
};

struct AtomNode {
    AtomKind kind;
    Symbol sym;
    MultiIndex mi;
    Expr arg;
};

inline Atom Atom::indep(Symbol s) {
    return Atom(std::make_shared<const AtomNode>(AtomNode{AtomKind::Indep, s, {}, {}}));
}
inline Atom Atom::jet(Symbol dep, MultiIndex mi) {
    return Atom(std::make_shared<const AtomNode>(AtomNode{AtomKind::Jet, dep, std::move(mi), {}}));
}
inline Atom Atom::function(AtomKind kind, Expr arg) {
    return Atom(std::make_shared<const AtomNode>(AtomNode{kind, {}, {}, std::move(arg)}));
}
inline AtomKind Atom::kind() const { return p_->kind; }
inline Symbol Atom::symbol() const { return p_->sym; }
inline const MultiIndex& Atom::multi() const { return p_->mi; }
inline const Expr& Atom::arg() const { return p_->arg; }

inline int compare(const Atom& a, const Atom& b) {
    if (a.p_ == b.p_) return 0;
    if (a.kind() != b.kind()) return a.kind() < b.kind() ? -1 : 1;
    switch (a.kind()) {
        case AtomKind::Indep:
            return a.symbol() == b.symbol() ? 0 : (a.symbol() < b.symbol() ? -1 : 1);
        case AtomKind::Jet: {
            if (a.symbol() != b.symbol()) return a.symbol() < b.symbol() ? -1 : 1;
            int oa = order(a.multi()), ob = order(b.multi());
            if (oa != ob) return oa < ob ? -1 : 1;
            auto& ma = a.multi();
            auto& mb = b.multi();
            for (size_t i = 0; i < std::min(ma.size(), mb.size()); ++i) {
                if (ma[i].first != mb[i].first) return ma[i].first < mb[i].first ? 1 : -1;
                if (ma[i].second != mb[i].second) return ma[i].second < mb[i].second ? -1 : 1;
            }
            return 0;
        }
        default:
            return compare(a.arg(), b.arg());
    }
}

namespace detail {

inline bool needs_fixup(const Monomial& m) {
    for (auto& f : m.factors)
        if (f.atom.kind() == AtomKind::Exp || f.atom.kind() == AtomKind::Pow) return true;
    return false;
}

inline void sort_merge(std::vector<Factor>& fs) {
    std::sort(fs.begin(), fs.end(), [](const Factor& a, const Factor& b) { return a.atom < b.atom; });
    std::vector<Factor> out;
    out.reserve(fs.size());
    for (auto& f : fs) {
        if (!out.empty() && out.back().atom == f.atom) out.back().exponent += f.exponent;
        else out.push_back(std::move(f));
    }
    std::erase_if(out, [](const Factor& f) { return f.exponent.is_zero(); });
    fs = std::move(out);
}

struct MonoLess {
    bool operator()(const Monomial& a, const Monomial& b) const { return a < b; }
};
using Accum = std::map<Monomial, RatFunc, MonoLess>;

inline void accumulate(Accum& acc, Term t) {
    auto it = acc.find(t.mono);
    if (it == acc.end()) acc.emplace(std::move(t.mono), std::move(t.coef));
    else {
        it->second += t.coef;
        if (it->second.is_zero()) acc.erase(it);
    }
}

inline Expr from_accum(Accum& acc) {
    std::vector<Term> ts;
    ts.reserve(acc.size());
    for (auto& [m, c] : acc) ts.push_back({m, c});
    return Expr::from_sorted(std::move(ts));
}

inline std::optional<long> small_integer(const RatFunc& e) {
    if (!e.is_integer_constant()) return std::nullopt;
    Rational c = e.constant();
    if (!c.get_num().fits_slong_p()) return std::nullopt;
    return c.get_num().get_si();
}

}  // namespace detail

Expr exp(const Expr& a);
Expr ln(const Expr& a);
Expr pow(const Expr& base, const RatFunc& e);
Expr pow(const Expr& base, const Expr& e);

inline Expr operator+(const Expr& a, const Expr& b) {
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    std::vector<Term> out;
    out.reserve(a.terms_.size() + b.terms_.size());
    size_t i = 0, j = 0;
    while (i < a.terms_.size() || j < b.terms_.size()) {
        int c = i == a.terms_.size()   ? 1
                : j == b.terms_.size() ? -1
                                       : compare(a.terms_[i].mono, b.terms_[j].mono);
        if (c < 0) out.push_back(a.terms_[i++]);
        else if (c > 0) out.push_back(b.terms_[j++]);
        else {
            RatFunc s = a.terms_[i].coef + b.terms_[j].coef;
            if (!s.is_zero()) out.push_back({a.terms_[i].mono, std::move(s)});
            ++i;
            ++j;
        }
    }
    return Expr::from_sorted(std::move(out));
}

inline Expr Expr::from_term(Term t) {
    if (t.coef.is_zero()) return {};
    detail::sort_merge(t.mono.factors);
    if (!detail::needs_fixup(t.mono)) return from_sorted({std::move(t)});
    Expr exp_arg;
    int exp_count = 0;
    bool exp_plain = true;
    std::vector<Expr> extra;
    std::vector<Factor> kept;
    for (auto& f : t.mono.factors) {
        if (f.atom.kind() == AtomKind::Exp) {
            ++exp_count;
            if (!f.exponent.is_one()) exp_plain = false;
            exp_arg += f.atom.arg() * f.exponent;
            continue;
        }
        if (f.atom.kind() == AtomKind::Pow) {
            auto n = detail::small_integer(f.exponent);
            if (n && (*n > 0 || f.atom.arg().is_constant())) {
                extra.push_back(pow(f.atom.arg(), f.exponent));
                continue;
            }
        }
        kept.push_back(f);
    }
    if (exp_count == 1 && exp_plain && extra.empty()) return from_sorted({std::move(t)});
    Expr out = from_sorted({Term{Monomial{std::move(kept)}, t.coef}});
    if (exp_count) out = out * exp(exp_arg);
    for (auto& x : extra) out = out * x;
    return out;
}

namespace detail {

// s * a where every term of a carries (s/lc)^e: bump those exponents.
inline std::optional<Expr> absorb_sum(const Expr& a, const Expr& s) {
    if (s.size() < 2) return std::nullopt;
    for (auto& t : a.terms()) {
        bool has = false;
        for (auto& f : t.mono.factors)
            if (f.atom.kind() == AtomKind::Pow) has = true;
        if (!has) return std::nullopt;
    }
    RatFunc lc = s.terms().back().coef;
    Expr monic = s * lc.inverse();
    Expr out;
    for (auto& t : a.terms()) {
        Term nt = t;
        bool found = false;
        for (auto& f : nt.mono.factors)
            if (f.atom.kind() == AtomKind::Pow && f.atom.arg() == monic) {
                f.exponent += RatFunc(1);
                found = true;
                break;
            }
        if (!found) return std::nullopt;
        nt.coef *= lc;
        out += Expr::from_term(std::move(nt));
    }
    return out;
}

}  // namespace detail

inline Expr operator*(const Expr& a, const Expr& b) {
    if (a.is_zero() || b.is_zero()) return {};
    if (a.is_constant()) return b * a.terms_[0].coef;
    if (b.is_constant()) return a * b.terms_[0].coef;
    if (auto r = detail::absorb_sum(a, b)) return *r;
    if (auto r = detail::absorb_sum(b, a)) return *r;
    detail::Accum acc;
    std::vector<Expr> fixups;
    for (auto& ta : a.terms_)
        for (auto& tb : b.terms_) {
            Term t{ta.mono, ta.coef * tb.coef};
            t.mono.factors.insert(t.mono.factors.end(), tb.mono.factors.begin(), tb.mono.factors.end());
            detail::sort_merge(t.mono.factors);
            if (detail::needs_fixup(t.mono)) {
                Expr f = Expr::from_term(std::move(t));
                for (auto& ft : f.terms()) detail::accumulate(acc, ft);
            } else {
                detail::accumulate(acc, std::move(t));
            }
        }
    return detail::from_accum(acc);
}

inline Expr operator/(const Expr& a, const Expr& b) {
    if (b.is_zero()) throw DomainError("division by zero expression");
    if (b.is_constant()) return a * b.constant().inverse();
    return a * pow(b, RatFunc(-1));
}

// Raises a single canonical term to a rational-function power.
inline Expr pow_term(const Term& t, const RatFunc& e) {
    auto n = detail::small_integer(e);
    Expr coef;
    if (n) coef = Expr(t.coef.pow(*n));
    else if (t.coef.is_one()) coef = Expr(1);
    else if (t.coef.is_constant() && e.is_constant()) {
        auto r = exact_pow(t.coef.constant(), e.constant());
        if (r) coef = Expr(*r);
    }
    if (coef.is_zero()) {
        Term ct{Monomial{{Factor{Atom::function(AtomKind::Pow, Expr(t.coef)), e}}}, RatFunc(1)};
        coef = Expr::from_sorted({ct});
    }
    Term m{t.mono, RatFunc(1)};
    for (auto& f : m.mono.factors) f.exponent *= e;
    return coef * Expr::from_term(std::move(m));
}

inline Expr pow(const Expr& base, const RatFunc& e) {
    if (e.is_zero()) return Expr(1);
    if (base.is_zero()) {
        if (e.is_constant() && e.constant() > 0) return {};
        throw DomainError("0 raised to a nonpositive or symbolic power");
    }
    auto n = detail::small_integer(e);
    if (n && *n >= 0) {
        Expr out(1), b = base;
        unsigned long k = static_cast<unsigned long>(*n);
        while (k) {
            if (k & 1) out = out * b;
            k >>= 1;
            if (k) b = b * b;
        }
        return out;
    }
    if (base.size() == 1) return pow_term(base.terms()[0], e);
    RatFunc lc = base.terms().back().coef;
    Expr monic = base * lc.inverse();
    Term pt{Monomial{{Factor{Atom::function(AtomKind::Pow, monic), e}}}, RatFunc(1)};
    return pow(Expr(lc), e) * Expr::from_sorted({pt});
}

inline Expr pow(const Expr& base, const Expr& e) {
    if (e.is_constant()) return pow(base, e.constant());
    return exp(e * ln(base));
}

inline Expr exp(const Expr& a) {
    if (a.is_zero()) return Expr(1);
    Expr rest;
    Expr pulled(1);
    for (auto& t : a.terms()) {
        if (t.mono.factors.size() == 1 && t.mono.factors[0].atom.kind() == AtomKind::Ln &&
            t.mono.factors[0].exponent.is_one()) {
            pulled = pulled * pow(t.mono.factors[0].atom.arg(), t.coef);
        } else {
            rest += Expr::from_sorted({t});
        }
    }
    if (rest.is_zero()) return pulled;
    Term et{Monomial{{Factor{Atom::function(AtomKind::Exp, rest), RatFunc(1)}}}, RatFunc(1)};
    return pulled * Expr::from_sorted({et});
}

inline Expr ln_atom(const Expr& arg) {
    return Expr::from_sorted({Term{Monomial{{Factor{Atom::function(AtomKind::Ln, arg), RatFunc(1)}}}, RatFunc(1)}});
}

inline Expr ln(const Expr& a) {
    if (a.is_zero()) throw DomainError("ln(0)");
    if (a.size() == 1) {
        const Term& t = a.terms()[0];
        Expr out;
        if (!t.coef.is_one()) {
            if (t.coef.is_constant() && t.coef.constant() <= 0 && t.mono.is_one())
                throw DomainError("ln of nonpositive constant " + t.coef.str());
            out += ln_atom(Expr(t.coef));
        }
        for (auto& f : t.mono.factors) {
            switch (f.atom.kind()) {
                case AtomKind::Exp: out += f.atom.arg() * f.exponent; break;
                case AtomKind::Pow: out += ln(f.atom.arg()) * f.exponent; break;
                default: out += ln_atom(Expr(f.atom)) * f.exponent; break;
            }
        }
        return out;
    }
    RatFunc lc = a.terms().back().coef;
    if (lc.is_one()) return ln_atom(a);
    return ln(Expr(lc)) + ln_atom(a * lc.inverse());
}

// e times a product of integer powers of its sum bases, with those powers expanded.
// Zero exactly when e is zero, so it also serves as a sharper zero test.
inline Expr clear_sum_denominators(Expr e) {
    for (int round = 0; round < 16; ++round) {
        std::optional<Expr> base;
        for (auto& t : e.terms())
            for (auto& f : t.mono.factors)
                if (f.atom.kind() == AtomKind::Pow && f.atom.arg().size() > 1 && detail::small_integer(f.exponent))
                    if (!base) base = f.atom.arg();
        if (!base) return e;
        long lo = 0;
        for (auto& t : e.terms())
            for (auto& f : t.mono.factors)
                if (f.atom.kind() == AtomKind::Pow && f.atom.arg() == *base)
                    if (auto n = detail::small_integer(f.exponent)) lo = std::min(lo, *n);
        Expr out;
        for (auto& t : e.terms()) {
            Term rest{Monomial{}, t.coef};
            long k = -lo;
            for (auto& f : t.mono.factors) {
                auto n = detail::small_integer(f.exponent);
                if (f.atom.kind() == AtomKind::Pow && f.atom.arg() == *base && n) k += *n;
                else rest.mono.factors.push_back(f);
            }
            out += Expr::from_sorted({rest}) * pow(*base, RatFunc(k));
        }
        e = out;
    }
    return e;
}

inline std::set<Atom> Expr::atoms() const {
    std::set<Atom> out;
    for (auto& t : terms_)
        for (auto& f : t.mono.factors) {
            if (f.atom.primitive()) out.insert(f.atom);
            else {
                auto in = f.atom.arg().atoms();
                out.insert(in.begin(), in.end());
            }
        }
    return out;
}

inline std::set<Symbol> Expr::parameters() const {
    std::set<Symbol> out;
    for (auto& t : terms_) {
        for (auto s : t.coef.variables()) out.insert(s);
        for (auto& f : t.mono.factors) {
            for (auto s : f.exponent.variables()) out.insert(s);
            if (!f.atom.primitive()) {
                auto in = f.atom.arg().parameters();
                out.insert(in.begin(), in.end());
            }
        }
    }
    return out;
}

inline bool Expr::depends_on(const Atom& a) const {
    for (auto& t : terms_)
        for (auto& f : t.mono.factors) {
            if (f.atom == a) return true;
            if (!f.atom.primitive() && f.atom.arg().depends_on(a)) return true;
        }
    return false;
}

inline bool Expr::has_functions() const {
    for (auto& t : terms_)
        for (auto& f : t.mono.factors)
            if (!f.atom.primitive()) return true;
    return false;
}

// Derivation extending `prim` (the derivative of each primitive atom) by the chain rule.
using PrimitiveDerivative = std::function<Expr(const Atom&)>;

inline Expr derive(const Expr& e, const PrimitiveDerivative& prim) {
    detail::Accum acc;
    for (auto& t : e.terms()) {
        for (size_t i = 0; i < t.mono.factors.size(); ++i) {
            const Factor& f = t.mono.factors[i];
            Expr inner;
            switch (f.atom.kind()) {
                case AtomKind::Indep:
                case AtomKind::Jet: inner = prim(f.atom); break;
                case AtomKind::Exp: inner = derive(f.atom.arg(), prim); break;
                case AtomKind::Ln: {
                    Expr d = derive(f.atom.arg(), prim);
                    if (!d.is_zero()) inner = d / f.atom.arg();
                    break;
                }
                case AtomKind::Pow: inner = derive(f.atom.arg(), prim); break;
            }
            if (inner.is_zero()) continue;
            Term rest{t.mono, t.coef};
            if (f.atom.kind() != AtomKind::Exp) {
                rest.coef *= f.exponent;
                rest.mono.factors[i].exponent -= RatFunc(1);
            }
            Expr piece = Expr::from_term(std::move(rest)) * inner;
            for (auto& pt : piece.terms()) detail::accumulate(acc, pt);
        }
    }
    return detail::from_accum(acc);
}

inline Expr partial(const Expr& e, const Atom& a) {
    return derive(e, [&](const Atom& b) { return b == a ? Expr(1) : Expr(); });
}

// Rebuilds e with primitive atoms replaced by `rule` (when it returns a value)
// and coefficients/exponents mapped by `coef`.
inline Expr rebuild(const Expr& e, const std::function<std::optional<Expr>(const Atom&)>& rule,
                    const std::function<RatFunc(const RatFunc&)>& coef = nullptr) {
    std::function<bool(const Expr&)> touched = [&](const Expr& x) {
        for (auto& t : x.terms()) {
            if (coef && !t.coef.is_constant()) return true;
            for (auto& f : t.mono.factors) {
                if (coef && !f.exponent.is_constant()) return true;
                if (f.atom.primitive()) {
                    if (rule && rule(f.atom)) return true;
                } else if (touched(f.atom.arg())) {
                    return true;
                }
            }
        }
        return false;
    };
    detail::Accum acc;
    for (auto& t : e.terms()) {
        Expr single = Expr::from_sorted({t});
        if (!touched(single)) {
            detail::accumulate(acc, t);
            continue;
        }
        Expr out(coef ? coef(t.coef) : t.coef);
        for (auto& f : t.mono.factors) {
            if (out.is_zero()) break;
            RatFunc ex = coef ? coef(f.exponent) : f.exponent;
            Expr base;
            switch (f.atom.kind()) {
                case AtomKind::Indep:
                case AtomKind::Jet: {
                    auto r = rule ? rule(f.atom) : std::nullopt;
                    base = r ? *r : Expr(f.atom);
                    break;
                }
                case AtomKind::Exp: out = out * exp(rebuild(f.atom.arg(), rule, coef) * ex); continue;
                case AtomKind::Ln: base = ln(rebuild(f.atom.arg(), rule, coef)); break;
                case AtomKind::Pow: base = rebuild(f.atom.arg(), rule, coef); break;
            }
            out = out * pow(base, ex);
        }
        for (auto& ot : out.terms()) detail::accumulate(acc, ot);
    }
    return detail::from_accum(acc);
}

// Simultaneous substitution of primitive atoms. No derivative closure here.
inline Expr substitute(const Expr& e, const std::map<Atom, Expr>& rules) {
    if (rules.empty()) return e;
    return rebuild(e, [&](const Atom& a) -> std::optional<Expr> {
        auto it = rules.find(a);
        if (it == rules.end()) return std::nullopt;
        return it->second;
    });
}

inline Expr substitute_params(const Expr& e, const std::map<Symbol, RatFunc>& values) {
    if (values.empty()) return e;
    return rebuild(e, nullptr, [&](const RatFunc& c) { return c.substitute(values); });
}

// Numeric evaluation. Keys are parameter names and printed atom names ("t", "u_xx").
using Point = std::map<std::string, Rational>;

struct NumericValue {
    Rational value;
    bool exact = true;
};

namespace detail {

inline std::map<Symbol, Rational> param_point(const Point& p, const std::set<Symbol>& params) {
    std::map<Symbol, Rational> out;
    for (auto s : params) {
        auto it = p.find(s.name());
        if (it == p.end()) throw DomainError("no value for parameter " + s.name());
        out[s] = it->second;
    }
    return out;
}

inline long double eval_ld(const Expr& e, const Point& p, bool& exact, Rational& exact_value);

inline long double to_ld(const Rational& r) {
    return static_cast<long double>(r.get_num().get_d()) / static_cast<long double>(r.get_den().get_d());
}

inline Rational from_ld(long double v) {
    Rational r(static_cast<double>(v));
    long double resid = v - to_ld(r);
    if (resid != 0) r += Rational(static_cast<double>(resid));
    return r;
}

inline NumericValue eval_atom(const Atom& a, const Point& p);

inline NumericValue power(const NumericValue& b, const NumericValue& e) {
    if (b.value == 0) {
        if (e.value > 0) return {Rational(0), b.exact && e.exact};
        throw DomainError("0 raised to a nonpositive power");
    }
    if (b.exact && e.exact) {
        auto r = exact_pow(b.value, e.value);
        if (r) return {*r, true};
    }
    if (b.value < 0) {
        if (is_integer(e.value)) {
            long double v = std::pow(to_ld(-b.value), to_ld(e.value));
            if (e.value.get_num().get_si() % 2) v = -v;
            return {from_ld(v), false};
        }
        throw DomainError("negative base raised to a fractional power");
    }
    return {from_ld(std::pow(to_ld(b.value), to_ld(e.value))), false};
}

inline NumericValue eval(const Expr& e, const Point& p) {
    NumericValue sum{Rational(0), true};
    for (auto& t : e.terms()) {
        NumericValue term{t.coef.evaluate(param_point(p, t.coef.variables())), true};
        for (auto& f : t.mono.factors) {
            NumericValue ex{f.exponent.evaluate(param_point(p, f.exponent.variables())), true};
            NumericValue b = eval_atom(f.atom, p);
            NumericValue v = f.atom.kind() == AtomKind::Exp && ex.value == 1 ? b : power(b, ex);
            term.value *= v.value;
            term.exact = term.exact && v.exact;
        }
        sum.value += term.value;
        sum.exact = sum.exact && term.exact;
    }
    return sum;
}

inline NumericValue eval_atom(const Atom& a, const Point& p) {
    switch (a.kind()) {
        case AtomKind::Indep:
        case AtomKind::Jet: {
            auto it = p.find(a.str());
            if (it == p.end()) throw DomainError("no value for " + a.str());
            return {it->second, true};
        }
        case AtomKind::Exp: {
            auto v = eval(a.arg(), p);
            if (v.value == 0) return {Rational(1), v.exact};
            return {from_ld(std::exp(to_ld(v.value))), false};
        }
        case AtomKind::Ln: {
            auto v = eval(a.arg(), p);
            if (v.value <= 0) throw DomainError("ln of nonpositive value");
            if (v.value == 1) return {Rational(0), v.exact};
            return {from_ld(std::log(to_ld(v.value))), false};
        }
        case AtomKind::Pow: return eval(a.arg(), p);
    }
    return {};
}

}  // namespace detail

inline NumericValue eval_numeric(const Expr& e, const Point& p) { return detail::eval(e, p); }

inline long double eval_long_double(const Expr& e, const Point& p) {
    auto v = detail::eval(e, p);
    return detail::to_ld(v.value);
}

// Printing in the expression grammar.

inline std::string Atom::str() const {
    switch (kind()) {
        case AtomKind::Indep: return symbol().name();
        case AtomKind::Jet: {
            if (multi().empty()) return symbol().name();
            bool short_names = true;
            for (auto& [v, k] : multi())
                if (v.name().size() != 1) short_names = false;
            if (short_names) {
                std::string s = symbol().name() + "_";
                for (auto& [v, k] : multi()) s += std::string(k, v.name()[0]);
                return s;
            }
            std::string s = "diff(" + symbol().name();
            for (auto& [v, k] : multi()) s += ", " + v.name() + ", " + std::to_string(k);
            return s + ")";
        }
        case AtomKind::Exp: return "exp(" + arg().str() + ")";
        case AtomKind::Ln: return "ln(" + arg().str() + ")";
        case AtomKind::Pow: return "(" + arg().str() + ")";
    }
    return {};
}

inline std::string Monomial::str() const {
    std::string s;
    for (auto& f : factors) {
        if (!s.empty()) s += "*";
        s += f.atom.str();
        if (!f.exponent.is_one()) s += "^" + f.exponent.str(true);
    }
    return s;
}

namespace detail {

inline bool looks_negative(const RatFunc& c) { return c.num().leading().second < 0; }

inline std::string coef_str(const RatFunc& c) {
    if (c.den().empty() && c.num().size() > 1) return "(" + c.num().str() + ")";
    if (!c.den().empty() && c.num().size() > 1) return "(" + c.str() + ")";
    return c.str();
}

}  // namespace detail

inline std::string Expr::str() const {
    if (terms_.empty()) return "0";
    std::string s;
    for (size_t i = 0; i < terms_.size(); ++i) {
        const Term& t = terms_[i];
        bool neg = detail::looks_negative(t.coef);
        RatFunc c = neg ? -t.coef : t.coef;
        std::string body;
        if (t.mono.is_one()) body = detail::coef_str(c);
        else if (c.is_one()) body = t.mono.str();
        else body = detail::coef_str(c) + "*" + t.mono.str();
        if (i == 0) s += neg ? "-" + body : body;
        else s += neg ? " - " + body : " + " + body;
    }
    return s;
}

inline std::ostream& operator<<(std::ostream& os, const Expr& e) { return os << e.str(); }

}  // namespace multired
