#pragma once

#include <chrono>
#include <fstream>
#include <sstream>

#include "detsys.hpp"
#include "parse.hpp"
#include "reduction.hpp"

namespace multired {

struct ExpectedBranch {
    std::string key;
    std::optional<std::vector<Expr>> multipliers;
    std::vector<std::pair<Expr, Expr>> integrals;
    std::optional<int> rank;
    std::vector<Expr> relations;
    std::optional<Expr> ode;
    std::map<std::string, int> lines;
};

struct ExpectedResults {
    std::vector<ExpectedBranch> branches;
    ExpectedBranch& at(const std::string& key) {
        for (auto& b : branches)
            if (b.key == key) return b;
        branches.push_back({key, {}, {}, {}, {}, {}, {}});
        return branches.back();
    }
};

enum class MapKind { None, Translation, Scaling, TranslationScaling, User };

struct ReductionSpec {
    MapKind kind = MapKind::None;
    std::vector<std::string> generators;
    Symbol variable{"z"};
    Symbol dependent{"U"};
    Symbol lowered_dependent{"U"};
    int lowered = 0;
    Expr zeta, U_def;
    std::vector<Symbol> canonical;
    std::vector<Expr> canonical_exprs;
    std::map<Symbol, Expr> inverse;
};

struct Problem {
    std::string name;
    Context ctx;
    PdeSystem sys;
    Expr measure = Expr(1);
    std::vector<PointSymmetry> algebra;
    bool numeric = false;
    MultiplierAnsatz ansatz;
    SolveOptions solve;
    ReductionSpec reduction;
    std::optional<ExpectedResults> expected;

    // Names visible in reduced expressions.
    Context reduced_context() const {
        Context c = ctx;
        c.independents = {reduction.variable};
        c.dependents = {reduction.lowered ? reduction.lowered_dependent : reduction.dependent};
        return c;
    }
    Context relation_context(size_t n) const {
        Context c = ctx;
        c.independents.clear();
        c.dependents.clear();
        for (size_t i = 1; i <= std::max<size_t>(n, 1); ++i) c.independents.push_back(Symbol("Psi" + std::to_string(i)));
        return c;
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

struct Piece {
    std::string text;
    int column;
};

// Splits on sep outside parentheses and brackets.
inline std::vector<Piece> split_top(const std::string& s, char sep, int column) {
    std::vector<Piece> out;
    int depth = 0;
    size_t start = 0;
    auto push = [&](size_t a, size_t b) {
        size_t l = a;
        while (l < b && std::isspace(static_cast<unsigned char>(s[l]))) ++l;
        out.push_back({trim(std::string_view(s).substr(a, b - a)), column + static_cast<int>(l)});
    };
    for (size_t i = 0; i < s.size(); ++i) {
        char ch = s[i];
        if (ch == '(' || ch == '[') ++depth;
        else if (ch == ')' || ch == ']') --depth;
        else if (ch == sep && depth == 0) {
            push(start, i);
            start = i + 1;
        }
    }
    push(start, s.size());
    if (out.size() == 1 && out[0].text.empty()) out.clear();
    return out;
}

struct Entry {
    std::string section;
    std::string key;
    std::optional<std::string> qualifier;
    Piece head;
    Piece value;
    int line;
};

inline std::vector<Entry> read_entries(std::istream& in) {
    static const std::set<std::string> sections{"variables", "pde", "symmetries", "ansatz", "reduction", "expected"};
    std::vector<Entry> out;
    std::string section, raw;
    int lineno = 0;
    bool after_entry = false;
    while (std::getline(in, raw)) {
        ++lineno;
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw.resize(hash);
        if (trim(raw).empty()) continue;
        if (std::isspace(static_cast<unsigned char>(raw[0])) && after_entry) {
            out.back().value.text += " " + trim(raw);
            continue;
        }
        std::string t = trim(raw);
        if (t.front() == '[') {
            if (t.back() != ']') throw ParseError("unterminated section header", lineno, 1);
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            if (!sections.count(section)) throw ParseError("unknown section [" + section + "]", lineno, 1);
            after_entry = false;
            continue;
        }
        if (section.empty()) throw ParseError("entry outside any section", lineno, 1);
        Entry e;
        e.section = section;
        e.line = lineno;
        size_t i = 0;
        while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
        size_t k = i;
        while (k < raw.size() && (std::isalnum(static_cast<unsigned char>(raw[k])) || raw[k] == '_')) ++k;
        if (k == i) throw ParseError("expected a key", lineno, static_cast<int>(i) + 1);
        e.key = raw.substr(i, k - i);
        while (k < raw.size() && std::isspace(static_cast<unsigned char>(raw[k]))) ++k;
        if (k < raw.size() && raw[k] == '[') {
            size_t close = raw.find(']', k);
            if (close == std::string::npos) throw ParseError("unterminated branch qualifier", lineno, static_cast<int>(k) + 1);
            e.qualifier = trim(std::string_view(raw).substr(k + 1, close - k - 1));
            k = close + 1;
        }
        int depth = 0;
        size_t eq = std::string::npos;
        for (size_t j = k; j < raw.size(); ++j) {
            if (raw[j] == '(') ++depth;
            else if (raw[j] == ')') --depth;
            else if (raw[j] == '=' && depth == 0) {
                eq = j;
                break;
            }
        }
        if (eq == std::string::npos) throw ParseError("expected '=' after " + e.key, lineno, static_cast<int>(k) + 1);
        e.head = {trim(std::string_view(raw).substr(k, eq - k)), static_cast<int>(k) + 1};
        size_t v = eq + 1;
        while (v < raw.size() && std::isspace(static_cast<unsigned char>(raw[v]))) ++v;
        e.value = {trim(std::string_view(raw).substr(v)), static_cast<int>(v) + 1};
        out.push_back(std::move(e));
        after_entry = true;
    }
    return out;
}

inline Expr parse_at(const Piece& p, const Context& c, int line) { return parse_expr(p.text, c, line, p.column); }

inline std::vector<Expr> parse_list(const Piece& p, const Context& c, int line) {
    std::vector<Expr> out;
    for (auto& q : split_top(p.text, ',', p.column)) out.push_back(parse_expr(q.text, c, line, q.column));
    return out;
}

inline std::vector<std::string> name_list(const Piece& p, int line) {
    std::vector<std::string> out;
    for (auto& q : split_top(p.text, ',', p.column)) {
        if (q.text.empty() || !std::all_of(q.text.begin(), q.text.end(), [](char ch) {
                return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_';
            }) || std::isdigit(static_cast<unsigned char>(q.text[0])))
            throw ParseError("'" + q.text + "' is not a name", line, q.column);
        out.push_back(q.text);
    }
    return out;
}

inline int integer_value(const Piece& p, int line) {
    try {
        size_t used = 0;
        int v = std::stoi(p.text, &used);
        if (used == p.text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ParseError("expected an integer, got '" + p.text + "'", line, p.column);
}

inline void no_head(const Entry& e) {
    if (!e.head.text.empty()) throw ParseError("unexpected '" + e.head.text + "' before '='", e.line, e.head.column);
    if (e.qualifier) throw ParseError(e.key + " takes no branch qualifier", e.line, e.head.column);
}

[[noreturn]] inline void unknown_key(const Entry& e) {
    throw ParseError("unknown key '" + e.key + "' in [" + e.section + "]", e.line, 1);
}

// Normal form of a branch label: sorted monic constraint polynomials, or "generic".
inline std::string branch_key(const std::string& label, const Context& c, int line, int column) {
    std::string t = trim(label);
    if (t.empty() || t == "generic") return "generic";
    std::vector<std::string> parts;
    for (auto& piece : split_top(t, ',', column)) {
        auto eq = piece.text.find('=');
        std::string lhs = piece.text, rhs = "0";
        if (eq != std::string::npos) {
            lhs = piece.text.substr(0, eq);
            rhs = piece.text.substr(eq + 1);
        }
        Expr d = parse_expr(lhs, c, line, piece.column) - parse_expr(rhs, c, line, piece.column);
        if (!d.is_constant() || d.is_zero()) throw ParseError("branch constraint must be a nonzero parameter relation", line, piece.column);
        parts.push_back(d.constant().num().monic().second.str() + " = 0");
    }
    std::sort(parts.begin(), parts.end());
    std::string out;
    for (auto& p : parts) out += (out.empty() ? "" : ", ") + p;
    return out;
}

}  // namespace detail

inline std::string branch_key(const Branch& b) {
    std::vector<std::string> parts;
    for (auto& c : b.constraints)
        if (!c.nonzero) parts.push_back(c.lhs.monic().second.str() + " = 0");
    if (parts.empty()) return "generic";
    std::sort(parts.begin(), parts.end());
    std::string out;
    for (auto& p : parts) out += (out.empty() ? "" : ", ") + p;
    return out;
}

inline Problem parse_problem(std::istream& in, const std::string& name = "problem") {
    using namespace detail;
    auto entries = read_entries(in);
    Problem p;
    p.name = name;
    auto in_section = [&](const std::string& s) {
        std::vector<const Entry*> out;
        for (auto& e : entries)
            if (e.section == s) out.push_back(&e);
        return out;
    };

    std::vector<std::string> nonzero_text, positive_text;
    std::vector<const Entry*> lets;
    std::set<std::string> declared;
    auto declare = [&](const std::string& n, const Entry& e) {
        if (!declared.insert(n).second) throw ParseError("'" + n + "' declared twice", e.line, e.value.column);
    };
    for (auto* e : in_section("variables")) {
        if (e->key == "independent") {
            no_head(*e);
            for (auto& n : name_list(e->value, e->line)) declare(n, *e), p.ctx.independents.push_back(Symbol(n));
        } else if (e->key == "dependent") {
            no_head(*e);
            for (auto& n : name_list(e->value, e->line)) declare(n, *e), p.ctx.dependents.push_back(Symbol(n));
        } else if (e->key == "parameters") {
            no_head(*e);
            for (auto& n : name_list(e->value, e->line)) declare(n, *e), p.ctx.parameters.push_back(Symbol(n));
        } else if (e->key == "let") {
            lets.push_back(e);
        } else if (e->key == "nonzero" || e->key == "positive") {
            no_head(*e);
        } else {
            unknown_key(*e);
        }
    }
    if (p.ctx.independents.empty()) throw ParseError("no independent variables declared", 1, 1);
    if (p.ctx.dependents.size() != 1) throw ParseError("exactly one dependent variable is supported", 1, 1);
    for (auto* e : lets) {
        if (e->qualifier) throw ParseError("let takes no branch qualifier", e->line, e->head.column);
        std::string n = e->head.text;
        auto it = std::find(p.ctx.parameters.begin(), p.ctx.parameters.end(), Symbol(n));
        if (it != p.ctx.parameters.end()) p.ctx.parameters.erase(it);
        else declare(n, *e);
        Expr v = parse_at(e->value, p.ctx, e->line);
        if (!v.is_constant()) throw ParseError("let " + n + " must be a parameter expression", e->line, e->value.column);
        p.ctx.definitions[n] = v;
    }
    for (auto* e : in_section("variables")) {
        if (e->key == "nonzero")
            for (auto& x : parse_list(e->value, p.ctx, e->line)) {
                if (!x.is_constant()) throw ParseError("nonzero expects parameter expressions", e->line, e->value.column);
                p.solve.assumptions.assume_nonzero(x.constant().num());
            }
        if (e->key == "positive")
            for (auto& n : name_list(e->value, e->line)) {
                if (!p.ctx.is_parameter(Symbol(n))) throw ParseError("'" + n + "' is not a parameter", e->line, e->value.column);
                p.solve.assumptions.positive.insert(Symbol(n));
            }
    }

    p.sys.independents = p.ctx.independents;
    p.sys.dependents = p.ctx.dependents;
    bool have_pde = false;
    for (auto* e : in_section("pde")) {
        if (e->key == "measure") {
            no_head(*e);
            p.measure = parse_at(e->value, p.ctx, e->line);
            continue;
        }
        std::string lhs = e->key + (e->head.text.empty() ? "" : " " + e->head.text);
        Expr lead = parse_expr(lhs, p.ctx, e->line, 1);
        if (lead.size() != 1 || !lead.terms()[0].coef.is_one() || lead.terms()[0].mono.factors.size() != 1 ||
            lead.terms()[0].mono.factors[0].atom.kind() != AtomKind::Jet ||
            !lead.terms()[0].mono.factors[0].exponent.is_one())
            throw ParseError("left side of an equation must be a single derivative, got '" + lhs + "'", e->line, 1);
        if (have_pde) throw ParseError("only one equation is supported", e->line, 1);
        have_pde = true;
        p.sys.lead = lead.terms()[0].mono.factors[0].atom;
        p.sys.rhs = parse_at(e->value, p.ctx, e->line);
        for (auto& j : jets_of(p.sys.rhs))
            if (p.sys.is_lead_descendant(j))
                throw ParseError("right side contains " + j.str() + ", a derivative of the leading term", e->line, e->value.column);
    }
    if (!have_pde) throw ParseError("missing [pde] equation", 1, 1);

    for (auto* e : in_section("symmetries")) {
        if (e->qualifier) throw ParseError("symmetries take no branch qualifier", e->line, 1);
        PointSymmetry X;
        X.name = e->key;
        if (!e->head.text.empty()) throw ParseError("expected 'NAME = var -> expr, ...'", e->line, e->head.column);
        for (auto& comp : split_top(e->value.text, ',', e->value.column)) {
            auto arrow = comp.text.find("->");
            if (arrow == std::string::npos) throw ParseError("expected 'var -> expr'", e->line, comp.column);
            std::string var = trim(std::string_view(comp.text).substr(0, arrow));
            Piece rhs{trim(std::string_view(comp.text).substr(arrow + 2)), comp.column + static_cast<int>(arrow) + 2};
            Expr c = parse_at(rhs, p.ctx, e->line);
            Symbol s(var);
            if (p.ctx.is_independent(s)) X.xi[s] = c;
            else if (p.ctx.is_dependent(s)) X.eta[s] = c;
            else throw ParseError("'" + var + "' is not a variable", e->line, comp.column);
        }
        for (auto& Y : p.algebra)
            if (Y.name == X.name) throw ParseError("symmetry " + X.name + " defined twice", e->line, 1);
        p.algebra.push_back(std::move(X));
    }

    int order = -1, degree = 1, indep_degree = 1;
    for (auto* e : in_section("ansatz")) {
        no_head(*e);
        if (e->key == "mode") {
            if (e->value.text == "numeric") p.numeric = true;
            else if (e->value.text != "symbolic") throw ParseError("mode is symbolic or numeric", e->line, e->value.column);
        } else if (e->key == "basis") {
            auto b = parse_list(e->value, p.ctx, e->line);
            p.ansatz.basis.insert(p.ansatz.basis.end(), b.begin(), b.end());
        } else if (e->key == "order") {
            order = integer_value(e->value, e->line);
        } else if (e->key == "degree") {
            degree = integer_value(e->value, e->line);
        } else if (e->key == "indep_degree") {
            indep_degree = integer_value(e->value, e->line);
        } else if (e->key == "eliminate") {
            for (auto& n : name_list(e->value, e->line)) {
                if (!p.ctx.is_parameter(Symbol(n))) throw ParseError("'" + n + "' is not a parameter", e->line, e->value.column);
                p.solve.parameter_order.push_back(Symbol(n));
            }
        } else if (e->key == "branch_depth") {
            p.solve.branch_depth = integer_value(e->value, e->line);
        } else {
            unknown_key(*e);
        }
    }
    if (order >= 0) {
        auto a = auto_ansatz(p.sys, order, degree, indep_degree);
        for (auto& b : a.basis)
            if (std::find(p.ansatz.basis.begin(), p.ansatz.basis.end(), b) == p.ansatz.basis.end())
                p.ansatz.basis.push_back(b);
    }
    if (p.numeric && !p.ctx.parameters.empty())
        throw ParseError("numeric mode needs every parameter bound by let; free: " + p.ctx.parameters.front().name(), 1, 1);

    auto& r = p.reduction;
    std::vector<const Entry*> inverses;
    std::vector<Piece> canonical_text;
    int canonical_line = 0;
    for (auto* e : in_section("reduction")) {
        if (e->key == "inverse") {
            inverses.push_back(e);
            continue;
        }
        no_head(*e);
        if (e->key == "kind") {
            static const std::map<std::string, MapKind> kinds{{"translation", MapKind::Translation},
                                                              {"scaling", MapKind::Scaling},
                                                              {"translation-scaling", MapKind::TranslationScaling},
                                                              {"user", MapKind::User}};
            auto it = kinds.find(e->value.text);
            if (it == kinds.end()) throw ParseError("unknown reduction kind '" + e->value.text + "'", e->line, e->value.column);
            r.kind = it->second;
        } else if (e->key == "generators") {
            r.generators = name_list(e->value, e->line);
            for (auto& g : r.generators)
                if (std::none_of(p.algebra.begin(), p.algebra.end(), [&](auto& X) { return X.name == g; }))
                    throw ParseError("unknown symmetry '" + g + "'", e->line, e->value.column);
        } else if (e->key == "variable") {
            r.variable = Symbol(name_list(e->value, e->line).at(0));
        } else if (e->key == "dependent") {
            r.dependent = Symbol(name_list(e->value, e->line).at(0));
        } else if (e->key == "lowered_dependent") {
            r.lowered_dependent = Symbol(name_list(e->value, e->line).at(0));
        } else if (e->key == "lowered") {
            r.lowered = integer_value(e->value, e->line);
        } else if (e->key == "zeta") {
            r.zeta = parse_at(e->value, p.ctx, e->line);
        } else if (e->key == "U") {
            r.U_def = parse_at(e->value, p.ctx, e->line);
        } else if (e->key == "canonical") {
            canonical_text = split_top(e->value.text, ',', e->value.column);
            canonical_line = e->line;
        } else {
            unknown_key(*e);
        }
    }
    if (r.kind == MapKind::User) {
        if (r.zeta.is_zero() || r.U_def.is_zero()) throw ParseError("user reduction needs zeta and U", 1, 1);
        for (auto& c : canonical_text) {
            auto colon = c.text.find(':');
            if (colon == std::string::npos) throw ParseError("expected 'name: expr' in canonical", canonical_line, c.column);
            r.canonical.push_back(Symbol(trim(std::string_view(c.text).substr(0, colon))));
            r.canonical_exprs.push_back(parse_expr(c.text.substr(colon + 1), p.ctx, canonical_line, c.column + static_cast<int>(colon) + 1));
        }
        Context nc = p.ctx;
        nc.independents = {r.variable};
        nc.independents.insert(nc.independents.end(), r.canonical.begin(), r.canonical.end());
        nc.dependents.clear();
        for (auto* e : inverses) {
            Symbol v(e->head.text);
            if (!p.ctx.is_independent(v)) throw ParseError("'" + e->head.text + "' is not an independent variable", e->line, e->head.column);
            r.inverse[v] = parse_at(e->value, nc, e->line);
        }
    } else if (!inverses.empty() || !canonical_text.empty()) {
        throw ParseError("inverse and canonical apply to kind = user only", inverses.empty() ? canonical_line : inverses[0]->line, 1);
    }
    if (r.kind != MapKind::None && r.generators.empty())
        for (auto& X : p.algebra) r.generators.push_back(X.name);

    auto ex = in_section("expected");
    if (!ex.empty()) {
        ExpectedResults er;
        Context rc = p.reduced_context();
        for (auto* e : ex) {
            std::string key = branch_key(e->qualifier.value_or("generic"), p.ctx, e->line, e->head.column);
            auto& b = er.at(key);
            auto bare = [&] {
                if (!e->head.text.empty()) throw ParseError("unexpected '" + e->head.text + "'", e->line, e->head.column);
            };
            if (e->key == "multipliers") {
                bare();
                b.multipliers = parse_list(e->value, p.ctx, e->line);
                b.lines["multipliers"] = e->line;
            } else if (e->key == "integral") {
                if (e->head.text.empty()) throw ParseError("integral needs its multiplier before '='", e->line, e->head.column);
                b.integrals.emplace_back(parse_at(e->head, p.ctx, e->line), parse_at(e->value, rc, e->line));
                b.lines["integral" + std::to_string(b.integrals.size())] = e->line;
            } else if (e->key == "rank") {
                bare();
                b.rank = integer_value(e->value, e->line);
                b.lines["rank"] = e->line;
            } else if (e->key == "relation") {
                bare();
                b.relations.push_back(parse_at(e->value, p.relation_context(9), e->line));
            } else if (e->key == "ode") {
                bare();
                b.ode = parse_at(e->value, rc, e->line);
            } else {
                unknown_key(*e);
            }
        }
        p.expected = std::move(er);
    }
    return p;
}

inline Problem load_problem(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidProblem("cannot open " + path);
    std::string name = path;
    auto slash = name.find_last_of('/');
    if (slash != std::string::npos) name = name.substr(slash + 1);
    auto dot = name.rfind('.');
    if (dot != std::string::npos) name = name.substr(0, dot);
    try {
        return parse_problem(in, name);
    } catch (const ParseError& e) {
        throw ParseError(e.message(), e.line(), e.column(), path);
    }
}

struct LawResult {
    Expr multiplier;
    Expr reported;
    ConservedCurrent current;
    bool conserved = false;
    Expr psi;
    Expr psi_display;
    Expr lambda;
    bool routes_agree = false;
    bool exact = false;
    NumericCheck numeric;
    std::string error;
};

struct BranchResult {
    Branch branch;
    std::string key;
    std::map<Symbol, RatFunc> substitution;
    std::optional<ReductionMap> map;
    std::optional<ReducedODE> ode;
    Expr ode_display;
    std::string error;
    std::vector<LawResult> laws;
    std::optional<Independence> independence;
};

struct ResultBundle {
    std::string problem;
    std::vector<BranchResult> branches;
    size_t basis_size = 0;
    double seconds = 0;
};

struct RunOptions {
    std::optional<int> branch_depth;
    uint64_t seed = reduce_seed();
    bool reduce = true;
    int numeric_points = 50;
};

namespace detail {

inline PointSymmetry specialize(const PointSymmetry& X, const std::map<Symbol, RatFunc>& sub) {
    PointSymmetry Y = X;
    for (auto& [v, c] : Y.xi) c = substitute_params(c, sub);
    for (auto& [v, c] : Y.eta) c = substitute_params(c, sub);
    if (Y.r_factor) Y.r_factor = substitute_params(*Y.r_factor, sub);
    return Y;
}

inline ReductionMap build_map(const Problem& p, const std::map<Symbol, RatFunc>& sub) {
    const auto& r = p.reduction;
    std::vector<PointSymmetry> gens;
    for (auto& g : r.generators)
        for (auto& X : p.algebra)
            if (X.name == g) gens.push_back(specialize(X, sub));
    Symbol dep = p.sys.dependent();
    auto need = [&](size_t n) {
        if (gens.size() != n)
            throw BadParameters("reduction kind needs " + std::to_string(n) + " generators, got " + std::to_string(gens.size()));
    };
    ReductionMap m;
    switch (r.kind) {
        case MapKind::Translation:
            m = translation_map(gens, p.sys.independents, dep);
            break;
        case MapKind::Scaling:
            need(1);
            m = scaling_map(gens[0], p.sys.independents, dep);
            break;
        case MapKind::TranslationScaling:
            need(2);
            m = translation_scaling_map(gens[0], gens[1], p.sys.independents, dep);
            break;
        case MapKind::User: {
            std::vector<Expr> ce;
            for (auto& c : r.canonical_exprs) ce.push_back(substitute_params(c, sub));
            std::map<Symbol, Expr> inv;
            for (auto& [v, e] : r.inverse) inv[v] = substitute_params(e, sub);
            m = user_map(p.sys.independents, dep, substitute_params(r.zeta, sub), substitute_params(r.U_def, sub), ce,
                         inv, gens, r.canonical);
            break;
        }
        case MapKind::None:
            throw InvalidProblem("no [reduction] section");
    }
    if (m.zeta_var != r.variable || m.new_dep != r.dependent) {
        // Builtin maps name their coordinates z and U.
        std::map<Atom, Expr> ren{{Atom::indep(m.zeta_var), Expr::indep(r.variable)}};
        m.zeta_var = r.variable;
        m.new_dep = r.dependent;
        for (auto& [v, e] : m.inverse) e = substitute(e, ren);
    }
    m.lowered = r.lowered;
    m.lowered_dep = r.lowered_dependent;
    return m;
}

inline bool exactly_zero(const Expr& e) { return e.is_zero() || clear_sum_denominators(e).is_zero(); }

}  // namespace detail

inline CaseTree find_multipliers(const Problem& p, std::optional<int> branch_depth = std::nullopt) {
    auto ds = build_determining_system(p.ansatz, p.sys, p.algebra);
    SolveOptions opt = p.solve;
    if (branch_depth) opt.branch_depth = *branch_depth;
    return solve_parametric(ds, opt);
}

inline PdeSystem specialize(const PdeSystem& sys, const std::map<Symbol, RatFunc>& sub) {
    PdeSystem s = sys;
    s.rhs = substitute_params(s.rhs, sub);
    return s;
}

inline LawResult conservation_law(const Expr& Q, const PdeSystem& sys, const Expr& measure) {
    LawResult law;
    law.multiplier = Q;
    law.reported = Q / measure;
    law.current = current_from_multiplier(Q, sys);
    law.conserved = detail::exactly_zero(law.current.divergence() - Q * sys.G());
    return law;
}

inline void reduce_law(LawResult& law, const ReductionMap& m, const ReducedODE& ode, const RunOptions& opt) {
    try {
        auto fm = first_integral_from_multiplier(law.multiplier, m, ode);
        law.psi = fm.psi;
        law.lambda = fm.lambda;
        try {
            auto fc = extract_first_integral(law.current, m, ode);
            law.routes_agree = proportional(fm.psi, fc.psi).has_value();
        } catch (const Error& e) {
            law.error = std::string("canonical-current route: ") + e.what();
        }
        auto l = lower(law.psi, m);
        law.psi_display = l ? *l : law.psi;
        law.exact = integral_factor(law.psi, ode).has_value();
        if (!law.psi.is_zero()) law.numeric = numeric_first_integral_check(law.psi, ode, opt.numeric_points, opt.seed);
    } catch (const Error& e) {
        law.error = e.what();
    }
}

inline ResultBundle run_problem(const Problem& p, const RunOptions& opt = {}) {
    auto start = std::chrono::steady_clock::now();
    ResultBundle out;
    out.problem = p.name;
    out.basis_size = p.ansatz.basis.size();
    CaseTree tree = find_multipliers(p, opt.branch_depth);
    for (auto& b : tree.branches) {
        BranchResult br;
        br.branch = b;
        br.key = branch_key(b);
        br.substitution = b.substitution;
        PdeSystem sys = specialize(p.sys, b.substitution);
        Expr measure = substitute_params(p.measure, b.substitution);
        for (auto& Q : b.solutions) br.laws.push_back(conservation_law(Q, sys, measure));
        if (opt.reduce && p.reduction.kind != MapKind::None && !b.unresolved) {
            try {
                br.map = detail::build_map(p, b.substitution);
                br.ode = reduce_pde(sys, *br.map);
                auto l = lower(br.ode->expr, *br.map);
                br.ode_display = l ? *l : br.ode->expr;
                std::vector<Expr> psis;
                for (auto& law : br.laws) {
                    reduce_law(law, *br.map, *br.ode, opt);
                    if (!law.psi.is_zero()) psis.push_back(law.psi_display);
                }
                if (!psis.empty()) br.independence = functional_independence(psis, br.map->zeta_var, opt.seed);
            } catch (const Error& e) {
                br.error = e.what();
            }
        }
        out.branches.push_back(std::move(br));
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

struct CheckItem {
    std::string branch;
    std::string what;
    bool pass = false;
    std::string detail;
};

struct DiffReport {
    std::vector<CheckItem> items;
    bool passed() const {
        return std::all_of(items.begin(), items.end(), [](auto& i) { return i.pass; });
    }
};

namespace detail {

inline size_t span_rank(const std::vector<Expr>& v) {
    if (v.empty()) return 0;
    auto rows = collect_rows(v);
    return v.size() - null_space_generic(rows, v.size()).size();
}

inline bool span_equal(const std::vector<Expr>& a, const std::vector<Expr>& b) {
    std::vector<Expr> both = a;
    both.insert(both.end(), b.begin(), b.end());
    size_t r = span_rank(both);
    return span_rank(a) == r && span_rank(b) == r;
}

inline std::string join(const std::vector<Expr>& v) {
    std::string s;
    for (auto& e : v) s += (s.empty() ? "" : ", ") + e.str();
    return s.empty() ? "(none)" : s;
}

}  // namespace detail

inline DiffReport diff_expected(const Problem& p, const ResultBundle& r, const ExpectedResults& ex) {
    using detail::exactly_zero;
    DiffReport rep;
    auto add = [&](const std::string& b, const std::string& what, bool pass, const std::string& detail = "") {
        rep.items.push_back({b, what, pass, detail});
    };
    for (auto& eb : ex.branches) {
        auto it = std::find_if(r.branches.begin(), r.branches.end(), [&](auto& b) { return b.key == eb.key; });
        if (it == r.branches.end()) {
            add(eb.key, "branch present", false, "no such branch in the case tree");
            continue;
        }
        const BranchResult& br = *it;
        const auto& sub = br.substitution;
        if (br.branch.unresolved) add(eb.key, "branch resolved", false, br.branch.note);
        if (eb.multipliers) {
            std::vector<Expr> want, got;
            for (auto& q : *eb.multipliers) want.push_back(substitute_params(q, sub));
            for (auto& l : br.laws) got.push_back(l.reported);
            add(eb.key, "multipliers", detail::span_equal(want, got),
                "expected {" + detail::join(want) + "}, found {" + detail::join(got) + "}");
        }
        for (auto& l : br.laws)
            add(eb.key, "conservation law exact for Q = " + l.reported.str(), l.conserved);
        if (!br.error.empty()) add(eb.key, "reduction", false, br.error);
        if (eb.ode) {
            Expr want = substitute_params(*eb.ode, sub);
            bool ok = br.ode && proportional(br.ode_display, want).has_value();
            add(eb.key, "reduced equation", ok, "expected " + want.str() + ", found " + br.ode_display.str());
        }
        std::vector<Expr> scaled;
        bool all_matched = true;
        for (size_t k = 0; k < eb.integrals.size(); ++k) {
            Expr Q = substitute_params(eb.integrals[k].first, sub);
            Expr want = substitute_params(eb.integrals[k].second, sub);
            std::string label = "first integral " + std::to_string(k + 1) + " (Q = " + Q.str() + ")";
            const LawResult* law = nullptr;
            for (auto& l : br.laws)
                if (proportional(l.reported, Q)) law = &l;
            if (!law) {
                add(eb.key, label, false, "no multiplier proportional to " + Q.str());
                all_matched = false;
                continue;
            }
            if (br.ode && br.map) {
                Expr raised = raise(want, *br.map);
                bool ok = want.is_zero() || integral_factor(raised, *br.ode).has_value();
                add(eb.key, label + " is a first integral as printed", ok, want.str());
            }
            if (!law->error.empty()) add(eb.key, label + " derivation", false, law->error);
            auto k_ = want.is_zero() ? std::optional<RatFunc>() : proportional(want, law->psi_display);
            bool match = want.is_zero() ? law->psi.is_zero() : k_.has_value();
            add(eb.key, label + " matches", match, "expected " + want.str() + ", found " + law->psi_display.str());
            if (!law->psi.is_zero()) {
                add(eb.key, label + " exact check", law->exact);
                add(eb.key, label + " numeric check", law->numeric.passed(),
                    std::to_string(law->numeric.points) + " points, max relative " +
                        std::to_string(static_cast<double>(law->numeric.max_relative)));
                add(eb.key, label + " routes agree", law->routes_agree);
            }
            if (match && k_) scaled.push_back(law->psi_display * *k_);
            else all_matched = false;
        }
        if (eb.rank) {
            int got = br.independence ? br.independence->rank : 0;
            add(eb.key, "independence rank", got == *eb.rank,
                "expected " + std::to_string(*eb.rank) + ", found " + std::to_string(got));
        }
        if (!eb.relations.empty()) {
            if (!all_matched || !br.map) {
                add(eb.key, "relations", false, "first integrals did not all match");
                continue;
            }
            std::map<Atom, Expr> at;
            for (size_t k = 0; k < scaled.size(); ++k) at[Atom::indep(Symbol("Psi" + std::to_string(k + 1)))] = scaled[k];
            std::vector<Expr> want;
            for (auto& rel : eb.relations) {
                Expr w = substitute_params(rel, sub);
                want.push_back(w);
                add(eb.key, "relation " + w.str() + " holds", exactly_zero(substitute(w, at)));
            }
            auto ind = functional_independence(scaled, br.map->zeta_var, reduce_seed());
            add(eb.key, "relations recovered", detail::span_equal(want, ind.relations),
                "expected {" + detail::join(want) + "}, found {" + detail::join(ind.relations) + "}");
        }
    }
    for (auto& br : r.branches) {
        bool listed = std::any_of(ex.branches.begin(), ex.branches.end(), [&](auto& eb) { return eb.key == br.key; });
        if (listed || (br.laws.empty() && !br.branch.unresolved)) continue;
        std::vector<Expr> got;
        for (auto& l : br.laws) got.push_back(l.reported);
        add(br.key, "no unexpected branch", false,
            br.branch.unresolved ? br.branch.note : "multipliers {" + detail::join(got) + "}");
    }
    return rep;
}

}  // namespace multired
