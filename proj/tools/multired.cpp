#include <CLI11.hpp>
#include <iostream>

#include "multired/bundle.hpp"

using namespace multired;

namespace {

enum Exit { Ok = 0, Failed = 1, Usage = 2 };

struct Args {
    std::string file;
    std::optional<int> branch_depth;
    bool json = false;
    std::string multiplier;
    std::string integral;
};

void print_branch_header(const Branch& b) {
    std::cout << "branch " << branch_key(b);
    std::string nz;
    for (auto& c : b.constraints)
        if (c.nonzero) nz += (nz.empty() ? "" : ", ") + c.lhs.str();
    if (!nz.empty()) std::cout << "  (assuming nonzero: " << nz << ")";
    if (b.unresolved) std::cout << "  UNRESOLVED: " << b.note;
    std::cout << "\n";
}

int find_multipliers_cmd(const Args& a) {
    auto p = load_problem(a.file);
    RunOptions opt;
    opt.branch_depth = a.branch_depth;
    opt.reduce = false;
    auto bundle = run_problem(p, opt);
    if (a.json) {
        std::cout << to_json(bundle, p).dump(2) << "\n";
        return Ok;
    }
    std::cout << "problem " << p.name << ": " << bundle.basis_size << " basis functions, " << bundle.branches.size()
              << " branch" << (bundle.branches.size() == 1 ? "" : "es") << "\n";
    int k = 0;
    for (auto& b : bundle.branches) {
        print_branch_header(b.branch);
        if (b.laws.empty()) std::cout << "  no multipliers\n";
        for (auto& l : b.laws) std::cout << "  Q" << ++k << " = " << l.reported << "\n";
    }
    return Ok;
}

int build_current_cmd(const Args& a) {
    auto p = load_problem(a.file);
    Expr Q;
    PdeSystem sys = p.sys;
    Expr measure = p.measure;
    bool is_index = !a.multiplier.empty() && std::all_of(a.multiplier.begin(), a.multiplier.end(), ::isdigit);
    if (is_index) {
        size_t want = std::stoul(a.multiplier);
        auto tree = find_multipliers(p, a.branch_depth);
        size_t k = 0;
        for (auto& b : tree.branches)
            for (auto& s : b.solutions)
                if (++k == want) {
                    Q = s;
                    sys = specialize(p.sys, b.substitution);
                    measure = substitute_params(p.measure, b.substitution);
                }
        if (Q.is_zero()) {
            std::cerr << "error: multiplier index " << want << " out of range (" << k << " found)\n";
            return Usage;
        }
    } else {
        try {
            Q = parse_expr(a.multiplier, p.ctx) * measure;
        } catch (const ParseError& e) {
            throw ParseError(e.message() + " in --multiplier \"" + a.multiplier + "\"", e.line(), e.column());
        }
    }
    LawResult law;
    try {
        law = conservation_law(Q, sys, measure);
    } catch (const Error& e) {
        std::cerr << "error: Q = " << (Q / measure) << ": " << e.what() << "\n";
        return Failed;
    }
    Expr residual = clear_sum_denominators(law.current.divergence() - Q * sys.G());
    if (a.json) {
        std::cout << to_json(law, sys, std::nullopt).dump(2) << "\n";
    } else {
        std::cout << "Q = " << law.reported << "\n";
        for (auto& [v, c] : law.current.components)
            std::cout << (v == sys.independents.front() ? "T" : "Phi^" + v.name()) << " = " << c << "\n";
        std::cout << "residual D.Phi - Q G = " << residual << "\n";
    }
    return law.conserved ? Ok : Failed;
}

void print_reduction(const BranchResult& b) {
    if (!b.error.empty()) {
        std::cout << "  reduction failed: " << b.error << "\n";
        return;
    }
    if (!b.ode || !b.map) return;
    std::cout << "  " << b.map->zeta_var.name() << " = " << b.map->zeta << ", " << b.map->new_dep.name() << " = " << b.map->U_def;
    if (b.map->lowered) std::cout << ", " << b.map->lowered_dep.name() << " = " << b.map->new_dep.name() << "^(" << b.map->lowered << ")";
    std::cout << "\n  ODE: " << b.ode_display << " = 0\n";
    int k = 0;
    for (auto& l : b.laws) {
        ++k;
        std::cout << "  Psi" << k << " [Q = " << l.reported << "] = " << l.psi_display;
        if (!l.psi.is_zero())
            std::cout << "\n      exact " << (l.exact ? "yes" : "NO") << ", numeric " << l.numeric.points << " points max rel "
                      << static_cast<double>(l.numeric.max_relative) << ", routes " << (l.routes_agree ? "agree" : "DIFFER");
        else
            std::cout << "  (trivial)";
        if (!l.error.empty()) std::cout << "\n      " << l.error;
        std::cout << "\n";
    }
    if (b.independence) {
        std::cout << "  functionally independent: " << b.independence->rank << "\n";
        for (auto& r : b.independence->relations) std::cout << "  relation: " << r << " = 0\n";
    }
}

bool bundle_ok(const ResultBundle& r) {
    for (auto& b : r.branches) {
        if (!b.error.empty()) return false;
        for (auto& l : b.laws)
            if (!l.conserved || !l.error.empty() || (!l.psi.is_zero() && (!l.exact || !l.numeric.passed())))
                return false;
    }
    return true;
}

int reduce_cmd(const Args& a) {
    auto p = load_problem(a.file);
    if (p.reduction.kind == MapKind::None) {
        std::cerr << "error: " << a.file << " has no [reduction] section\n";
        return Usage;
    }
    RunOptions opt;
    opt.branch_depth = a.branch_depth;
    auto bundle = run_problem(p, opt);
    if (a.json) {
        std::cout << to_json(bundle, p).dump(2) << "\n";
    } else {
        for (auto& b : bundle.branches) {
            print_branch_header(b.branch);
            print_reduction(b);
        }
    }
    return bundle_ok(bundle) ? Ok : Failed;
}

int verify_integral(const Args& a, const Problem& p) {
    Expr psi;
    try {
        psi = parse_expr(a.integral, p.reduced_context());
    } catch (const ParseError& e) {
        throw ParseError(e.message() + " in --integral \"" + a.integral + "\"", e.line(), e.column());
    }
    RunOptions opt;
    opt.branch_depth = a.branch_depth;
    auto bundle = run_problem(p, opt);
    bool any = false;
    nlohmann::json rows = nlohmann::json::array();
    for (auto& b : bundle.branches) {
        if (!b.ode || !b.map) continue;
        Expr e = raise(substitute_params(psi, b.substitution), *b.map);
        Expr d = total_derivative(e, b.ode->var);
        Expr A = partial(b.ode->expr, b.ode->top());
        Expr residual;
        std::optional<Expr> lambda;
        lambda = integral_factor(e, *b.ode);
        if (!lambda)
            residual = detail::jet_order_in(d, b.ode->dep) == b.ode->order
                           ? clear_sum_denominators(d * A - partial(d, b.ode->top()) * b.ode->expr)
                           : d;
        NumericCheck nc;
        if (lambda && !e.is_zero()) nc = numeric_first_integral_check(e, *b.ode);
        bool ok = lambda && (e.is_zero() || nc.passed());
        any = any || ok;
        if (a.json) {
            rows.push_back({{"branch", b.key},
                            {"residual", detail::lowered_str(residual, b.map)},
                            {"lambda", lambda ? detail::lowered_str(*lambda, b.map) : ""},
                            {"numeric_points", nc.points},
                            {"max_relative", static_cast<double>(nc.max_relative)},
                            {"verified", ok}});
        } else {
            std::cout << "branch " << b.key << ": residual " << (lambda ? "0" : detail::lowered_str(residual, b.map));
            if (lambda) std::cout << ", lambda = " << detail::lowered_str(*lambda, b.map);
            if (nc.points) std::cout << ", numeric " << nc.points << " points max rel " << static_cast<double>(nc.max_relative);
            std::cout << (ok ? "  VERIFIED" : "") << "\n";
        }
    }
    if (a.json) std::cout << nlohmann::json{{"integral", psi.str()}, {"branches", rows}, {"verified", any}}.dump(2) << "\n";
    return any ? Ok : Failed;
}

int verify_cmd(const Args& a) {
    auto p = load_problem(a.file);
    if (!a.integral.empty()) {
        if (p.reduction.kind == MapKind::None) {
            std::cerr << "error: " << a.file << " has no [reduction] section\n";
            return Usage;
        }
        return verify_integral(a, p);
    }
    if (!p.expected) {
        std::cerr << "error: " << a.file << " has no [expected] section and no --integral was given\n";
        return Usage;
    }
    RunOptions opt;
    opt.branch_depth = a.branch_depth;
    auto bundle = run_problem(p, opt);
    auto rep = diff_expected(p, bundle, *p.expected);
    if (a.json) {
        std::cout << to_json(bundle, p, &rep).dump(2) << "\n";
    } else {
        for (auto& i : rep.items) {
            std::cout << (i.pass ? "pass " : "FAIL ") << "[" << i.branch << "] " << i.what;
            if (!i.pass && !i.detail.empty()) std::cout << "\n     " << i.detail;
            std::cout << "\n";
        }
        std::cout << (rep.passed() ? "all checks passed" : "verification FAILED") << " (" << bundle.seconds << " s)\n";
    }
    return rep.passed() ? Ok : Failed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-reduction of PDEs by invariant conservation laws"};
    app.require_subcommand(1);
    Args a;
    auto common = [&](CLI::App* c) {
        c->add_option("problem", a.file, "problem file")->required();
        c->add_flag("--json", a.json, "machine-readable output");
    };
    auto* fm = app.add_subcommand("find-multipliers", "solve the invariant multiplier determining system");
    common(fm);
    fm->add_option("--branch-depth", a.branch_depth, "maximum case-split depth (default 3)");
    auto* bc = app.add_subcommand("build-current", "conserved current of a multiplier");
    common(bc);
    bc->add_option("--multiplier", a.multiplier, "multiplier index from find-multipliers, or an expression")->required();
    bc->add_option("--branch-depth", a.branch_depth, "maximum case-split depth (default 3)");
    auto* rd = app.add_subcommand("reduce", "reduced ODE and first integrals on every branch");
    common(rd);
    rd->add_option("--branch-depth", a.branch_depth, "maximum case-split depth (default 3)");
    auto* vf = app.add_subcommand("verify", "check a first integral, or the [expected] section");
    common(vf);
    vf->add_option("--integral", a.integral, "candidate first integral in the reduced variables");
    vf->add_option("--branch-depth", a.branch_depth, "maximum case-split depth (default 3)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return Usage;
    }
    try {
        if (*fm) return find_multipliers_cmd(a);
        if (*bc) return build_current_cmd(a);
        if (*rd) return reduce_cmd(a);
        if (*vf) return verify_cmd(a);
    } catch (const ParseError& e) {
        std::cerr << e.what() << "\n";
        return Usage;
    } catch (const InvalidProblem& e) {
        std::cerr << e.what() << "\n";
        return Usage;
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return Failed;
    }
    return Usage;
}
