#pragma once

#include <cctype>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "expr.hpp"

namespace multired {

// Names visible to the expression parser.
struct Context {
    std::vector<Symbol> independents;
    std::vector<Symbol> dependents;
    std::vector<Symbol> parameters;
    std::map<std::string, Expr> definitions;

    bool is_independent(Symbol s) const {
        return std::find(independents.begin(), independents.end(), s) != independents.end();
    }
    bool is_dependent(Symbol s) const {
        return std::find(dependents.begin(), dependents.end(), s) != dependents.end();
    }
    bool is_parameter(Symbol s) const {
        return std::find(parameters.begin(), parameters.end(), s) != parameters.end();
    }
};

inline Expr total_derivative_plain(const Expr& e, Symbol v) {
    return derive(e, [v](const Atom& a) {
        if (a.kind() == AtomKind::Indep) return a.symbol() == v ? Expr(1) : Expr();
        return Expr::jet(a.symbol(), shifted(a.multi(), v));
    });
}

namespace detail {

class Parser {
public:
    Parser(std::string_view text, const Context& ctx, int line, int column)
        : s_(text), ctx_(ctx), line_(line), col0_(column) {}

    Expr parse() {
        Expr e = expr();
        skip();
        if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(what, line_, col0_ + static_cast<int>(pos_));
    }

    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!eat(c)) fail(std::string("expected '") + c + "'");
    }

    Expr expr() {
        Expr e = term();
        for (;;) {
            if (eat('+')) e = e + term();
            else if (eat('-')) e = e - term();
            else return e;
        }
    }

    Expr term() {
        Expr e = unary();
        for (;;) {
            if (eat('*')) e = e * unary();
            else if (eat('/')) {
                size_t at = pos_;
                Expr d = unary();
                if (d.is_zero()) {
                    pos_ = at;
                    fail("division by zero");
                }
                e = e / d;
            } else
                return e;
        }
    }

    Expr unary() {
        if (eat('-')) return -unary();
        if (eat('+')) return unary();
        return power();
    }

    Expr power() {
        Expr b = primary();
        if (eat('^')) {
            size_t at = pos_;
            Expr e = unary();
            try {
                return pow(b, e);
            } catch (const DomainError& err) {
                pos_ = at;
                fail(err.what());
            }
        }
        return b;
    }

    std::string identifier() {
        skip();
        size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
            ++pos_;
        return std::string(s_.substr(start, pos_ - start));
    }

    Expr number() {
        size_t start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        std::string digits(s_.substr(start, pos_ - start));
        Rational v{Integer(digits)};
        if (pos_ < s_.size() && s_[pos_] == '.') {
            ++pos_;
            size_t fs = pos_;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            std::string frac(s_.substr(fs, pos_ - fs));
            if (!frac.empty()) {
                Integer scale;
                mpz_ui_pow_ui(scale.get_mpz_t(), 10, frac.size());
                Rational f(Integer(frac), scale);
                f.canonicalize();
                v += f;
            }
        }
        return Expr(v);
    }

    Expr primary() {
        skip();
        if (pos_ >= s_.size()) fail("unexpected end of expression");
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = expr();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) return number();
        if (std::isalpha(static_cast<unsigned char>(c))) {
            size_t at = pos_;
            std::string name = identifier();
            skip();
            if (pos_ < s_.size() && s_[pos_] == '(') return call(name, at);
            return resolve(name, at);
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    Expr call(const std::string& name, size_t at) {
        expect('(');
        if (name == "diff") {
            Expr e = expr();
            bool any = false;
            while (eat(',')) {
                size_t vat = pos_;
                std::string v = identifier();
                Symbol vs(v);
                if (!ctx_.is_independent(vs)) {
                    pos_ = vat;
                    fail("'" + v + "' is not an independent variable");
                }
                long n = 1;
                skip();
                size_t save = pos_;
                if (eat(',')) {
                    skip();
                    if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                        Expr k = number();
                        n = k.constant().constant().get_num().get_si();
                    } else {
                        pos_ = save;
                    }
                }
                for (long i = 0; i < n; ++i) e = total_derivative_plain(e, vs);
                any = true;
            }
            if (!any) fail("diff needs at least one variable");
            expect(')');
            return e;
        }
        Expr a = expr();
        expect(')');
        try {
            if (name == "exp") return exp(a);
            if (name == "ln" || name == "log") return ln(a);
            if (name == "sqrt") return pow(a, RatFunc(make_rational(1, 2)));
        } catch (const DomainError& err) {
            pos_ = at;
            fail(err.what());
        }
        pos_ = at;
        fail("unknown function '" + name + "'");
    }

    Expr resolve(const std::string& name, size_t at) {
        auto d = ctx_.definitions.find(name);
        if (d != ctx_.definitions.end()) return d->second;
        Symbol s(name);
        if (ctx_.is_independent(s)) return Expr::indep(s);
        if (ctx_.is_parameter(s)) return Expr::param(s);
        if (ctx_.is_dependent(s)) return Expr::jet(s);
        auto us = name.find('_');
        if (us != std::string::npos) {
            Symbol dep(name.substr(0, us));
            if (ctx_.is_dependent(dep) && us + 1 < name.size()) {
                MultiIndex mi;
                for (size_t i = us + 1; i < name.size(); ++i) {
                    Symbol v(std::string(1, name[i]));
                    if (!ctx_.is_independent(v)) {
                        pos_ = at + i;
                        fail("'" + v.name() + "' is not an independent variable");
                    }
                    mi = shifted(mi, v);
                }
                return Expr::jet(dep, mi);
            }
        }
        if (ctx_.independents.size() == 1) {
            size_t k = name.size();
            while (k > 0 && name[k - 1] == 'd') --k;
            Symbol dep(name.substr(0, k));
            if (k < name.size() && ctx_.is_dependent(dep)) {
                MultiIndex mi{{ctx_.independents[0], static_cast<int>(name.size() - k)}};
                return Expr::jet(dep, mi);
            }
        }
        pos_ = at;
        fail("unknown identifier '" + name + "'");
    }

    std::string_view s_;
    const Context& ctx_;
    int line_;
    int col0_;
    size_t pos_ = 0;
};

}  // namespace detail

inline Expr parse_expr(std::string_view text, const Context& ctx, int line = 1, int column = 1) {
    return detail::Parser(text, ctx, line, column).parse();
}

}  // namespace multired
