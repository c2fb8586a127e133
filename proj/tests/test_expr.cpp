#include <gtest/gtest.h>

#include "multired/parse.hpp"

using namespace multired;

namespace {

Context ctx() {
    Context c;
    c.independents = {Symbol("t"), Symbol("x")};
    c.dependents = {Symbol("u")};
    c.parameters = {Symbol("a"), Symbol("b"), Symbol("c"), Symbol("p"), Symbol("q")};
    return c;
}

Expr P(const char* s) { return parse_expr(s, ctx()); }

}  // namespace

TEST(Expr, Cancellation) {
    EXPECT_TRUE((P("u_x*u_x") - P("u_x^2")).is_zero());
    EXPECT_EQ(P("(u+1)^2"), P("u^2 + 2*u + 1"));
}

TEST(Expr, ParametricExponents) {
    EXPECT_EQ(P("u^p*u"), P("u^(p+1)"));
    EXPECT_EQ(P("u^p*u^(-p)"), Expr(1));
    EXPECT_EQ(P("diff(a*u^p, x)"), P("a*p*u^(p-1)*u_x"));
    EXPECT_EQ(P("(u^q)^2"), P("u^(2*q)"));
}

TEST(Expr, ThirdDerivativeOfPower) {
    Expr lhs = P("diff(b*u^q, x, 3)");
    Expr rhs = P("b*q*u^(q-1)*u_xxx + 3*b*q*(q-1)*u^(q-2)*u_x*u_xx + b*q*(q-1)*(q-2)*u^(q-3)*u_x^3");
    EXPECT_EQ(lhs, rhs);
}

TEST(Expr, ExpAndLn) {
    EXPECT_EQ(P("exp(ln(t))"), P("t"));
    EXPECT_EQ(P("ln(exp(x))"), P("x"));
    EXPECT_EQ(P("exp(2*ln(t) + x)"), P("t^2*exp(x)"));
    EXPECT_EQ(P("exp(x)*exp(-x)"), Expr(1));
    EXPECT_EQ(P("exp(x)^2"), P("exp(2*x)"));
    EXPECT_EQ(P("ln(t^2*x)"), P("2*ln(t) + ln(x)"));
    EXPECT_EQ(P("diff(ln(t), t)"), P("t^(-1)"));
    EXPECT_EQ(P("diff(exp(a*t), t)"), P("a*exp(a*t)"));
    EXPECT_EQ(P("t^(p/2)*t^(p/2)"), P("t^p"));
}

TEST(Expr, RationalPowersOfConstants) {
    EXPECT_EQ(P("4^(1/2)"), Expr(2));
    EXPECT_EQ(P("(9*u^2)^(1/2)"), P("3*u"));
    EXPECT_EQ(P("sqrt(2)*sqrt(2)"), Expr(2));
}

TEST(Expr, SumPowers) {
    Expr e = P("(1+u)^(-1)");
    EXPECT_EQ(e * P("1+u"), Expr(1));
    EXPECT_EQ(P("diff((1+u)^(1/2), x)"), P("1/2*(1+u)^(-1/2)*u_x"));
}

TEST(Expr, RoundTrip) {
    const char* samples[] = {
        "u_t + a*p*u^(p-1)*u_x - 3/2*b*u_xxx",
        "2/(p - 1)*u^(q/2) - (a - c)*x",
        "exp(-c*t)*ln(x) + (1+u)^(-1/2)",
        "-x^2*u_tx + t*u^(-1)",
        "(p^2 - 1)/(q*(p + 3))*u_x^(p+2)",
    };
    for (auto s : samples) {
        Expr e = P(s);
        EXPECT_EQ(P(e.str().c_str()), e) << s << " -> " << e.str();
    }
}

TEST(Expr, Substitute) {
    Context c = ctx();
    c.independents.push_back(Symbol("r"));
    Expr e = parse_expr("x^2 + u", c);
    Expr r = substitute(e, {{Atom::indep(Symbol("x")), parse_expr("r", c)}});
    EXPECT_EQ(r, parse_expr("r^2 + u", c));
    Expr pe = substitute_params(P("u^(p+1)/(p-1)"), {{Symbol("p"), RatFunc(3)}});
    EXPECT_EQ(pe, P("1/2*u^4"));
}

TEST(Expr, Evaluate) {
    EXPECT_EQ(eval_numeric(P("u_x^2"), {{"u_x", 3}}).value, 9);
    EXPECT_EQ(eval_numeric(P("u^(p+1)"), {{"u", 2}, {"p", 3}}).value, 16);
    auto v = eval_numeric(P("exp(x)"), {{"x", 1}});
    EXPECT_FALSE(v.exact);
    EXPECT_NEAR(v.value.get_d(), 2.718281828459045, 1e-12);
    EXPECT_THROW(eval_numeric(P("u^(-1)"), {{"u", 0}}), DomainError);
    EXPECT_THROW(eval_numeric(P("ln(u)"), {{"u", -1}}), DomainError);
}

TEST(Expr, CompactonFirstIntegralValue) {
    Context c;
    c.independents = {Symbol("z")};
    c.dependents = {Symbol("U")};
    c.parameters = {Symbol("a"), Symbol("b"), Symbol("c"), Symbol("p"), Symbol("q")};
    Expr psi = parse_expr("-c*U + a*U^p + b*q*(q-1)*U^(q-2)*Ud^2 + b*q*U^(q-1)*Udd", c);
    Point pt{{"U", 1}, {"U_z", 0}, {"U_zz", 0}, {"p", 2}, {"q", 2}, {"a", 1}, {"b", 1}, {"c", 1}};
    EXPECT_EQ(eval_numeric(psi, pt).value, 0);
}

TEST(Parse, Errors) {
    try {
        P("u_t + foo");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1);
        EXPECT_EQ(e.column(), 7);
    }
    EXPECT_THROW(P("u_ty"), ParseError);
    EXPECT_THROW(P("(u + 1"), ParseError);
    EXPECT_THROW(P("u/0"), ParseError);
}
