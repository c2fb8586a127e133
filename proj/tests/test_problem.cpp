#include <gtest/gtest.h>

#include "multired/bundle.hpp"

using namespace multired;

namespace {

Problem from_text(const std::string& s) {
    std::istringstream in(s);
    return parse_problem(in);
}

const char* kMinimal = R"(
[variables]
independent = t, x
dependent = u
parameters = a

[pde]
u_t = a*u_xx

[symmetries]
X1 = x -> 1
)";

int error_line(const std::string& s) {
    try {
        from_text(s);
    } catch (const ParseError& e) {
        return e.line();
    }
    return -1;
}

}  // namespace

TEST(Problem, ParsesMinimal) {
    auto p = from_text(kMinimal);
    EXPECT_EQ(p.ctx.independents.size(), 2u);
    EXPECT_EQ(p.sys.lead, Atom::jet(Symbol("u"), {{Symbol("t"), 1}}));
    ASSERT_EQ(p.algebra.size(), 1u);
    EXPECT_EQ(p.algebra[0].xi_of(Symbol("x")), Expr(1));
}

TEST(Problem, RejectsUnknownKeyWithLocation) {
    EXPECT_EQ(error_line(std::string(kMinimal) + "[ansatz]\nfoo = 1\n"), 13);
    EXPECT_EQ(error_line(std::string(kMinimal) + "[nonsense]\n"), 12);
    EXPECT_EQ(error_line("[variables]\nindependent = t\ndependent = u\n[pde]\nu_t = u_xx + w\n"), 5);
}

TEST(Problem, RejectsLeadOnRightSide) {
    EXPECT_EQ(error_line("[variables]\nindependent = t, x\ndependent = u\n[pde]\nu_t = u_tx\n"), 5);
}

TEST(Problem, RejectsSecondEquation) {
    EXPECT_EQ(error_line("[variables]\nindependent = t, x\ndependent = u\n[pde]\nu_t = u_xx\nu_x = u\n"), 6);
}

TEST(Problem, NumericModeNeedsBoundParameters) {
    std::string s = std::string(kMinimal) + "[ansatz]\nmode = numeric\norder = 1\n";
    EXPECT_THROW(from_text(s), ParseError);
    std::string bound = s;
    bound.replace(bound.find("parameters = a"), 14, "let a = 3");
    auto p = from_text(bound);
    EXPECT_TRUE(p.numeric);
    EXPECT_FALSE(p.ansatz.basis.empty());
}

TEST(Problem, ContinuationLines) {
    auto p = from_text("[variables]\nindependent = t, x\ndependent = u\n[pde]\nu_t = u_xx +\n   u^2\n");
    EXPECT_EQ(p.sys.rhs.str(), "u^2 + u_xx");
}

TEST(Problem, BranchKeysNormalize) {
    Context c;
    for (auto n : {"p", "a", "c"}) c.parameters.push_back(Symbol(n));
    EXPECT_EQ(detail::branch_key("p = 1, a = c", c, 1, 1), detail::branch_key("c - a = 0, p - 1 = 0", c, 1, 1));
    EXPECT_EQ(detail::branch_key("", c, 1, 1), "generic");
}

class Corpus : public ::testing::TestWithParam<const char*> {};

TEST_P(Corpus, MatchesExpected) {
    auto p = load_problem(std::string(MULTIRED_CORPUS) + "/" + GetParam() + ".prob");
    ASSERT_TRUE(p.expected);
    auto bundle = run_problem(p);
    auto rep = diff_expected(p, bundle, *p.expected);
    EXPECT_FALSE(rep.items.empty());
    for (auto& i : rep.items) EXPECT_TRUE(i.pass) << "[" << i.branch << "] " << i.what << ": " << i.detail;
    for (auto& b : bundle.branches) {
        EXPECT_FALSE(b.branch.unresolved) << b.key;
        for (auto& l : b.laws) EXPECT_TRUE(l.conserved) << b.key << " " << l.multiplier;
    }
}

TEST(Problem, FlagsUnlistedBranchWithMultipliers) {
    auto p = load_problem(std::string(MULTIRED_CORPUS) + "/compacton.prob");
    auto bundle = run_problem(p);
    auto ex = *p.expected;
    ex.branches.erase(std::remove_if(ex.branches.begin(), ex.branches.end(), [](auto& b) { return b.key != "generic"; }),
                      ex.branches.end());
    auto rep = diff_expected(p, bundle, ex);
    EXPECT_FALSE(rep.passed());
    EXPECT_TRUE(std::any_of(rep.items.begin(), rep.items.end(), [](auto& i) {
        return !i.pass && i.what == "no unexpected branch" && i.branch == "a - c = 0, p - 1 = 0";
    }));
}

class BundleRoundTrip : public ::testing::TestWithParam<const char*> {};

TEST_P(BundleRoundTrip, ExpressionsReparse) {
    auto p = load_problem(std::string(MULTIRED_CORPUS) + "/" + GetParam() + ".prob");
    auto bundle = run_problem(p);
    auto j = nlohmann::json::parse(to_json(bundle, p).dump());
    Context rc = p.reduced_context();
    auto same = [](const std::string& s, const Context& c, const Expr& e) {
        EXPECT_EQ(parse_expr(s, c), e) << s;
    };
    ASSERT_EQ(j["branches"].size(), bundle.branches.size());
    for (size_t b = 0; b < bundle.branches.size(); ++b) {
        auto& br = bundle.branches[b];
        auto& jb = j["branches"][b];
        EXPECT_EQ(jb["key"], br.key);
        ASSERT_EQ(jb["laws"].size(), br.laws.size());
        for (size_t k = 0; k < br.laws.size(); ++k) {
            auto& l = br.laws[k];
            auto& jl = jb["laws"][k];
            same(jl["multiplier"], p.ctx, l.multiplier);
            same(jl["reported"], p.ctx, l.reported);
            for (auto& [v, c] : l.current.components) same(jl["current"][v.name()], p.ctx, c);
            EXPECT_EQ(jl["residual"], "0");
            if (br.ode) same(jl["first_integral"], rc, l.psi_display);
        }
        if (br.ode) same(jb["reduction"]["ode"], rc, br.ode_display);
        if (br.independence) {
            Context c = p.relation_context(br.laws.size());
            for (size_t k = 0; k < br.independence->relations.size(); ++k)
                same(jb["independence"]["relations"][k], c, br.independence->relations[k]);
        }
    }
}

INSTANTIATE_TEST_SUITE_P(Corpus, BundleRoundTrip, ::testing::Values("compacton", "gkp", "wave", "porous_n3"));

INSTANTIATE_TEST_SUITE_P(All, Corpus,
                         ::testing::Values("compacton", "dboussinesq", "gkp", "thinfilm", "wave", "porous_n1",
                                           "porous_n3", "empty"));
