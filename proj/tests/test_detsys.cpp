#include <gtest/gtest.h>

#include "multired/detsys.hpp"
#include "properties.hpp"

using namespace multired;

namespace {

Symbol T("t"), X("x"), U("u");

Context ctx2() {
    Context c;
    c.independents = {T, X};
    c.dependents = {U};
    for (auto n : {"a", "b", "c", "k", "p", "q"}) c.parameters.push_back(Symbol(n));
    return c;
}

Expr P(const char* s) { return parse_expr(s, ctx2()); }

std::set<Expr> as_set(const std::vector<Expr>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(Detsys, CompactonClassification) {
    PdeSystem s;
    s.independents = {T, X};
    s.dependents = {U};
    s.lead = Atom::jet(U, {{T, 1}});
    s.rhs = P("-diff(a*u^p, x) - diff(b*u^q, x, 3)");
    PointSymmetry X1{"X1", {{T, Expr(1)}, {X, P("c")}}, {}, {}};
    MultiplierAnsatz an;
    for (auto b : {"1", "u", "u^p", "u^q", "t", "x", "t^2", "t*x", "x^2", "u_x", "u_xx", "t*u", "x*u"})
        an.basis.push_back(P(b));
    auto ds = build_determining_system(an, s, {X1});
    SolveOptions opt;
    for (auto n : {"a", "b", "c"}) opt.assumptions.assume_nonzero(Poly::var(Symbol(n)));
    for (auto n : {"p", "q"}) opt.assumptions.positive.insert(Symbol(n));
    opt.assumptions.assume_nonzero(Poly::var(Symbol("q")) - Poly(1));
    opt.parameter_order = {Symbol("p"), Symbol("q"), Symbol("a"), Symbol("b"), Symbol("c")};
    auto tree = solve_parametric(ds, opt);
    ASSERT_NE(tree.generic(), nullptr);
    EXPECT_EQ(as_set(tree.generic()->solutions), as_set({P("1"), P("u^q")}));
    ASSERT_EQ(tree.branches.size(), 2u);
    auto b = std::find_if(tree.branches.begin(), tree.branches.end(),
                          [](const Branch& b) { return b.constraint_str() == "a - c = 0, p - 1 = 0"; });
    ASSERT_NE(b, tree.branches.end());
    EXPECT_EQ(as_set(b->solutions), as_set({P("1"), P("u^q"), P("x - c*t"), P("(x - c*t)^2")}));
}

namespace {

const Branch* find_branch(const CaseTree& tree, const std::string& constraints) {
    for (auto& b : tree.branches)
        if (b.constraint_str() == constraints) return &b;
    return nullptr;
}

}  // namespace

TEST(Detsys, DampedBoussinesqClassification) {
    Context c = ctx2();
    c.definitions["q"] = parse_expr("2/(p-1)", c);
    PdeSystem s;
    s.independents = {T, X};
    s.dependents = {U};
    s.lead = Atom::jet(U, {{T, 2}});
    s.rhs = parse_expr("a*u_txx - b*u_xxxx + diff(k*u^p, x, 2)", c);
    PointSymmetry S{"X", {{T, P("2*t")}, {X, P("x")}}, {{U, parse_expr("-q*u", c)}}, {}};
    auto an = auto_ansatz(s, 3, 1, 2);
    auto ds = build_determining_system(an, s, {S});
    SolveOptions opt;
    for (auto n : {"a", "b", "k"}) opt.assumptions.positive.insert(Symbol(n));
    opt.assumptions.assume_nonzero(Poly::var(Symbol("p")));
    opt.assumptions.assume_nonzero(Poly::var(Symbol("p")) - Poly(1));
    opt.parameter_order = {Symbol("p"), Symbol("a"), Symbol("b"), Symbol("k")};
    auto tree = solve_parametric(ds, opt);
    ASSERT_NE(tree.generic(), nullptr);
    EXPECT_TRUE(tree.generic()->solutions.empty());
    auto b1 = find_branch(tree, "p + 1 = 0");
    auto b2 = find_branch(tree, "p - 2 = 0");
    auto b3 = find_branch(tree, "p - 3 = 0");
    ASSERT_TRUE(b1 && b2 && b3);
    EXPECT_EQ(as_set(b1->solutions), as_set({P("1")}));
    EXPECT_EQ(as_set(b2->solutions), as_set({P("t*x")}));
    EXPECT_EQ(as_set(b3->solutions), as_set({P("t")}));
}

namespace {

Symbol Y("y"), V("v");

Context ctx3(Symbol dep, std::initializer_list<const char*> params) {
    Context c;
    c.independents = {T, X, Y};
    c.dependents = {dep};
    for (auto n : params) c.parameters.push_back(Symbol(n));
    return c;
}

}  // namespace

TEST(Detsys, GkpPotentialClassification) {
    Context c = ctx3(V, {"p", "s", "nu", "mu"});
    PdeSystem s;
    s.independents = {T, X, Y};
    s.dependents = {V};
    s.lead = Atom::jet(V, {{T, 1}, {X, 1}});
    s.rhs = parse_expr("-(v_x^p*v_xx + v_xxxx + s*v_yy)", c);
    PointSymmetry X1{"X1", {{T, Expr(1)}, {X, parse_expr("nu", c)}}, {}, {}};
    PointSymmetry X2{"X2", {{X, parse_expr("mu", c)}, {Y, Expr(-1)}}, {}, {}};
    PointSymmetry X3{"X3", {}, {{V, Expr(1)}}, {}};
    auto an = auto_ansatz(s, 1, 1, 1);
    for (auto b : {"v_xx", "v_xxx"}) an.basis.push_back(parse_expr(b, c));
    auto ds = build_determining_system(an, s, {X1, X2, X3});
    SolveOptions opt;
    opt.assumptions.positive.insert(Symbol("p"));
    opt.assumptions.assume_nonzero(Poly::var(Symbol("s")));
    opt.parameter_order = {Symbol("p"), Symbol("s"), Symbol("nu"), Symbol("mu")};
    auto tree = solve_parametric(ds, opt);
    ASSERT_EQ(tree.branches.size(), 1u);
    EXPECT_EQ(as_set(tree.generic()->solutions), as_set({Expr(1), parse_expr("v_t", c), parse_expr("v_x", c),
                                                         parse_expr("v_y", c)}));
}

TEST(Detsys, ThinFilmClassification) {
    Context c = ctx3(U, {"p", "k", "a1", "a2", "b1", "b2", "nu", "mu"});
    PdeSystem s;
    s.independents = {T, X, Y};
    s.dependents = {U};
    s.lead = Atom::jet(U, {{T, 1}});
    s.rhs = parse_expr("-1/k*(diff(u^3*diff(a1*(u_xx + u_yy) - b1*u^p, x), x)"
                       " + diff(u^3*diff(a2*(u_xx + u_yy) - b2*u^p, y), y))", c);
    PointSymmetry X1{"X1", {{X, parse_expr("nu", c)}, {Y, parse_expr("-mu", c)}}, {}, {}};
    PointSymmetry X2{"X2",
                     {{T, parse_expr("t", c)}, {X, parse_expr("(p-1)/(2*(2*p+1))*x", c)},
                      {Y, parse_expr("(p-1)/(2*(2*p+1))*y", c)}},
                     {{U, parse_expr("-1/(2*p+1)*u", c)}}, {}};
    auto an = auto_ansatz(s, 3, 1, 1);
    auto ds = build_determining_system(an, s, {X1, X2});
    SolveOptions opt;
    for (auto n : {"k", "a1", "a2", "b1", "b2", "nu"}) opt.assumptions.assume_nonzero(Poly::var(Symbol(n)));
    opt.assumptions.positive.insert(Symbol("p"));
    opt.assumptions.assume_nonzero(Poly::var(Symbol("p")) - Poly(1));
    opt.parameter_order = {Symbol("p"), Symbol("k"), Symbol("a1"), Symbol("a2"), Symbol("b1"), Symbol("b2"),
                           Symbol("nu"), Symbol("mu")};
    auto tree = solve_parametric(ds, opt);
    ASSERT_NE(tree.generic(), nullptr);
    EXPECT_TRUE(tree.generic()->solutions.empty());
    ASSERT_EQ(tree.branches.size(), 2u);
    auto b = find_branch(tree, "p - 3 = 0");
    ASSERT_TRUE(b);
    EXPECT_EQ(as_set(b->solutions), as_set({Expr(1)}));
}

TEST(Detsys, WaveClassification) {
    Context c = ctx3(U, {"p", "c", "k", "nu"});
    PdeSystem s;
    s.independents = {T, X, Y};
    s.dependents = {U};
    s.lead = Atom::jet(U, {{T, 2}});
    s.rhs = parse_expr("c^2*(u_xx + u_yy) + k*u^p", c);
    PointSymmetry X1{"X1", {{T, Expr(1)}, {X, parse_expr("nu", c)}}, {}, {}};
    PointSymmetry X2{"X2", {{T, parse_expr("t", c)}, {X, parse_expr("x", c)}, {Y, parse_expr("y", c)}},
                     {{U, parse_expr("2/(1-p)*u", c)}}, {}};
    auto an = auto_ansatz(s, 1, 1, 2);
    auto ds = build_determining_system(an, s, {X1, X2});
    SolveOptions opt;
    for (auto n : {"c", "k", "nu"}) opt.assumptions.assume_nonzero(Poly::var(Symbol(n)));
    opt.assumptions.assume_nonzero(Poly::var(Symbol("p")));
    opt.assumptions.assume_nonzero(Poly::var(Symbol("p")) - Poly(1));
    opt.parameter_order = {Symbol("p"), Symbol("nu"), Symbol("c"), Symbol("k")};
    auto tree = solve_parametric(ds, opt);
    ASSERT_NE(tree.generic(), nullptr);
    EXPECT_TRUE(tree.generic()->solutions.empty());
    ASSERT_EQ(tree.branches.size(), 4u);
    auto b = find_branch(tree, "p + 3 = 0");
    ASSERT_TRUE(b);
    EXPECT_EQ(as_set(b->solutions), as_set({parse_expr("u_t", c), parse_expr("u_x", c), parse_expr("u_y", c)}));
    for (const char* sign : {"1", "-1"}) {
        Context cc = c;
        cc.parameters.erase(std::find(cc.parameters.begin(), cc.parameters.end(), Symbol("nu")));
        cc.definitions["nu"] = parse_expr((std::string(sign) + "*c").c_str(), cc);
        Expr q4 = parse_expr("(nu*t - x)^2*(u_t - nu*u_x) + y^2*(u_t + nu*u_x) + nu*(nu*t - x)*(2*y*u_y + u)", cc);
        auto br = find_branch(tree, std::string(sign == std::string("1") ? "c - nu" : "c + nu") + " = 0, p - 5 = 0");
        ASSERT_TRUE(br) << sign;
        ASSERT_EQ(br->solutions.size(), 1u);
        Expr got = br->solutions[0];
        RatFunc k = q4.terms().back().coef / got.terms().back().coef;
        EXPECT_TRUE((got * k - q4).is_zero()) << got << " vs " << q4;
    }
}

TEST(Detsys, PorousMediumRadialClassification) {
    Symbol R("r");
    for (long n : {1L, 3L}) {
        Context c;
        c.independents = {T, R};
        c.dependents = {U};
        for (auto p : {"p", "q", "k"}) c.parameters.push_back(Symbol(p));
        c.definitions["n"] = Expr(n);
        PdeSystem s;
        s.independents = {T, R};
        s.dependents = {U};
        s.lead = Atom::jet(U, {{T, 1}});
        s.rhs = parse_expr("k*diff(u^p, r, 2) + k*(n-1)/r*diff(u^p, r)", c);
        PointSymmetry X2{"X2", {{T, parse_expr("(q*(1-p) + 2)*t", c)}, {R, Expr::indep(R)}},
                         {{U, parse_expr("q*u", c)}}, {}};
        MultiplierAnsatz an;
        for (auto b : {"1", "r", "r^2", "t", "t*r", "u", "r*u", "r^2*u", "u_r"}) an.basis.push_back(parse_expr(b, c));
        auto ds = build_determining_system(an, s, {X2});
        SolveOptions opt;
        opt.assumptions.positive.insert(Symbol("k"));
        opt.assumptions.assume_nonzero(Poly::var(Symbol("p")));
        opt.assumptions.assume_nonzero(Poly::var(Symbol("p")) - Poly(1));
        opt.parameter_order = {Symbol("q"), Symbol("p"), Symbol("k")};
        auto tree = solve_parametric(ds, opt);
        ASSERT_EQ(tree.branches.size(), 3u) << n;
        EXPECT_TRUE(tree.generic()->solutions.empty());
        Expr measure = parse_expr("r^(n-1)", c);
        auto b1 = find_branch(tree, n == 1 ? "q + 1 = 0" : "q + 3 = 0");
        auto b2 = find_branch(tree, "q + 2 = 0");
        ASSERT_TRUE(b1 && b2) << n;
        ASSERT_EQ(b1->solutions.size(), 1u);
        ASSERT_EQ(b2->solutions.size(), 1u);
        EXPECT_EQ(b1->solutions[0] / measure, Expr(1));
        EXPECT_EQ(b2->solutions[0] / measure, parse_expr("r^(2-n)", c));
    }
}

TEST(Detsys, NumericSolverMatchesDenseNullSpace) {
    auto f = testing_support::numeric_solver_matches_dense();
    EXPECT_FALSE(f) << *f;
}
