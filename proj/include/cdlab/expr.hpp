#pragma once

#include <algorithm>
#include <cctype>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cdlab/core.hpp"

namespace cdlab {

/// Closed-form scalar expressions in (t, x1..xn) with exact symbolic
/// derivatives. Coefficient fields, stream functions, gauge functions and
/// test functions are all given in this language so that gradients,
/// divergences and PDE residuals are analytic rather than finite-differenced.
///
/// Variables: index 0 is t, index i >= 1 is x_i.
struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    enum class Kind { Num, Var, Add, Mul, Neg, Pow, Sin, Cos, Exp, Div };
    Kind kind;
    double value = 0.0;  // Num
    int var = 0;         // Var
    int ipow = 1;        // Pow exponent (integer, >= 2)
    ExprPtr a, b;

    Expr(Kind k) : kind(k) {}
};

inline ExprPtr e_num(double v) {
    auto e = std::make_shared<Expr>(Expr::Kind::Num);
    e->value = v;
    return e;
}
inline ExprPtr e_var(int idx) {
    auto e = std::make_shared<Expr>(Expr::Kind::Var);
    e->var = idx;
    return e;
}
inline ExprPtr e_t() { return e_var(0); }
inline ExprPtr e_x(int i) { return e_var(i); }

inline bool is_num(const ExprPtr& e, double v) {
    return e->kind == Expr::Kind::Num && e->value == v;
}
inline bool is_const(const ExprPtr& e) { return e->kind == Expr::Kind::Num; }

inline ExprPtr e_add(ExprPtr a, ExprPtr b) {
    if (is_num(a, 0.0)) return b;
    if (is_num(b, 0.0)) return a;
    if (is_const(a) && is_const(b)) return e_num(a->value + b->value);
    auto e = std::make_shared<Expr>(Expr::Kind::Add);
    e->a = std::move(a);
    e->b = std::move(b);
    return e;
}
inline ExprPtr e_neg(ExprPtr a) {
    if (is_const(a)) return e_num(-a->value);
    if (a->kind == Expr::Kind::Neg) return a->a;
    auto e = std::make_shared<Expr>(Expr::Kind::Neg);
    e->a = std::move(a);
    return e;
}
inline ExprPtr e_sub(ExprPtr a, ExprPtr b) { return e_add(std::move(a), e_neg(std::move(b))); }
inline ExprPtr e_mul(ExprPtr a, ExprPtr b) {
    if (is_num(a, 0.0) || is_num(b, 0.0)) return e_num(0.0);
    if (is_num(a, 1.0)) return b;
    if (is_num(b, 1.0)) return a;
    if (is_const(a) && is_const(b)) return e_num(a->value * b->value);
    auto e = std::make_shared<Expr>(Expr::Kind::Mul);
    e->a = std::move(a);
    e->b = std::move(b);
    return e;
}
inline ExprPtr e_div(ExprPtr a, ExprPtr b) {
    if (is_num(a, 0.0)) return e_num(0.0);
    if (is_num(b, 1.0)) return a;
    if (is_const(a) && is_const(b)) {
        if (b->value == 0.0) throw std::invalid_argument("expression divides by zero constant");
        return e_num(a->value / b->value);
    }
    auto e = std::make_shared<Expr>(Expr::Kind::Div);
    e->a = std::move(a);
    e->b = std::move(b);
    return e;
}
inline ExprPtr e_pow(ExprPtr a, int k) {
    if (k == 0) return e_num(1.0);
    if (k == 1) return a;
    if (is_const(a)) return e_num(std::pow(a->value, k));
    auto e = std::make_shared<Expr>(Expr::Kind::Pow);
    e->a = std::move(a);
    e->ipow = k;
    return e;
}
inline ExprPtr e_sin(ExprPtr a) {
    if (is_const(a)) return e_num(std::sin(a->value));
    auto e = std::make_shared<Expr>(Expr::Kind::Sin);
    e->a = std::move(a);
    return e;
}
inline ExprPtr e_cos(ExprPtr a) {
    if (is_const(a)) return e_num(std::cos(a->value));
    auto e = std::make_shared<Expr>(Expr::Kind::Cos);
    e->a = std::move(a);
    return e;
}
inline ExprPtr e_exp(ExprPtr a) {
    if (is_const(a)) return e_num(std::exp(a->value));
    auto e = std::make_shared<Expr>(Expr::Kind::Exp);
    e->a = std::move(a);
    return e;
}

/// Symbolic derivative with respect to variable index (0 = t, i = x_i).
inline ExprPtr diff(const ExprPtr& e, int var) {
    switch (e->kind) {
        case Expr::Kind::Num: return e_num(0.0);
        case Expr::Kind::Var: return e_num(e->var == var ? 1.0 : 0.0);
        case Expr::Kind::Add: return e_add(diff(e->a, var), diff(e->b, var));
        case Expr::Kind::Neg: return e_neg(diff(e->a, var));
        case Expr::Kind::Mul:
            return e_add(e_mul(diff(e->a, var), e->b), e_mul(e->a, diff(e->b, var)));
        case Expr::Kind::Div:
            // (a/b)' = a'/b - a b'/b^2
            return e_sub(e_div(diff(e->a, var), e->b),
                         e_div(e_mul(e->a, diff(e->b, var)), e_mul(e->b, e->b)));
        case Expr::Kind::Pow:
            return e_mul(e_mul(e_num(double(e->ipow)), e_pow(e->a, e->ipow - 1)),
                         diff(e->a, var));
        case Expr::Kind::Sin: return e_mul(e_cos(e->a), diff(e->a, var));
        case Expr::Kind::Cos: return e_neg(e_mul(e_sin(e->a), diff(e->a, var)));
        case Expr::Kind::Exp: return e_mul(e_exp(e->a), diff(e->a, var));
    }
    throw std::logic_error("unreachable");
}

inline bool depends_on(const ExprPtr& e, int var) {
    switch (e->kind) {
        case Expr::Kind::Num: return false;
        case Expr::Kind::Var: return e->var == var;
        case Expr::Kind::Neg:
        case Expr::Kind::Pow:
        case Expr::Kind::Sin:
        case Expr::Kind::Cos:
        case Expr::Kind::Exp: return depends_on(e->a, var);
        case Expr::Kind::Add:
        case Expr::Kind::Mul:
        case Expr::Kind::Div: return depends_on(e->a, var) || depends_on(e->b, var);
    }
    return false;
}

/// Flat postfix program for fast repeated evaluation of one expression.
class Tape {
public:
    Tape() = default;
    explicit Tape(const ExprPtr& e) {
        compile(e);
        if (depth(e) > kStack)
            throw std::invalid_argument("expression nesting exceeds the evaluator stack");
    }

    double eval(const double* vars) const {
        double stack[kStack];
        int sp = 0;
        for (const Op& op : ops_) {
            switch (op.code) {
                case Code::Num: stack[sp++] = op.value; break;
                case Code::Var: stack[sp++] = vars[op.arg]; break;
                case Code::Add: --sp; stack[sp - 1] += stack[sp]; break;
                case Code::Mul: --sp; stack[sp - 1] *= stack[sp]; break;
                case Code::Div: --sp; stack[sp - 1] /= stack[sp]; break;
                case Code::Neg: stack[sp - 1] = -stack[sp - 1]; break;
                case Code::Pow: {
                    double base = stack[sp - 1], r = 1.0;
                    int k = op.arg;
                    bool inv = k < 0;
                    if (inv) k = -k;
                    while (k) {
                        if (k & 1) r *= base;
                        base *= base;
                        k >>= 1;
                    }
                    stack[sp - 1] = inv ? 1.0 / r : r;
                    break;
                }
                case Code::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
                case Code::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
                case Code::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
            }
        }
        return sp ? stack[sp - 1] : 0.0;
    }

    /// Evaluate at time t and spatial point x.
    double operator()(double t, const Vec& x) const {
        double vars[1 + kMaxDim] = {t, 0, 0, 0};
        for (int i = 0; i < x.n; ++i) vars[1 + i] = x[i];
        return eval(vars);
    }

    bool empty() const { return ops_.empty(); }

private:
    static constexpr int kStack = 256;
    enum class Code { Num, Var, Add, Mul, Div, Neg, Pow, Sin, Cos, Exp };
    struct Op {
        Code code;
        double value = 0.0;
        int arg = 0;
    };
    std::vector<Op> ops_;

    static int depth(const ExprPtr& e) {
        switch (e->kind) {
            case Expr::Kind::Num:
            case Expr::Kind::Var: return 1;
            case Expr::Kind::Neg:
            case Expr::Kind::Pow:
            case Expr::Kind::Sin:
            case Expr::Kind::Cos:
            case Expr::Kind::Exp: return depth(e->a);
            case Expr::Kind::Add:
            case Expr::Kind::Mul:
            case Expr::Kind::Div: return std::max(depth(e->a), 1 + depth(e->b));
        }
        return 1;
    }

    void compile(const ExprPtr& e) {
        switch (e->kind) {
            case Expr::Kind::Num: ops_.push_back({Code::Num, e->value, 0}); return;
            case Expr::Kind::Var: ops_.push_back({Code::Var, 0.0, e->var}); return;
            case Expr::Kind::Add: compile(e->a); compile(e->b); ops_.push_back({Code::Add, 0, 0}); return;
            case Expr::Kind::Mul: compile(e->a); compile(e->b); ops_.push_back({Code::Mul, 0, 0}); return;
            case Expr::Kind::Div: compile(e->a); compile(e->b); ops_.push_back({Code::Div, 0, 0}); return;
            case Expr::Kind::Neg: compile(e->a); ops_.push_back({Code::Neg, 0, 0}); return;
            case Expr::Kind::Pow: compile(e->a); ops_.push_back({Code::Pow, 0, e->ipow}); return;
            case Expr::Kind::Sin: compile(e->a); ops_.push_back({Code::Sin, 0, 0}); return;
            case Expr::Kind::Cos: compile(e->a); ops_.push_back({Code::Cos, 0, 0}); return;
            case Expr::Kind::Exp: compile(e->a); ops_.push_back({Code::Exp, 0, 0}); return;
        }
    }
};

namespace detail {

class Parser {
public:
    Parser(std::string src, int max_dim) : src_(std::move(src)), max_dim_(max_dim) {}

    ExprPtr parse() {
        ExprPtr e = parse_sum();
        skip_ws();
        if (pos_ != src_.size()) fail("trailing input");
        return e;
    }

private:
    std::string src_;
    std::size_t pos_ = 0;
    int max_dim_;

    [[noreturn]] void fail(const std::string& what) {
        std::ostringstream os;
        os << "expression parse error at offset " << pos_ << ": " << what << " in '" << src_ << "'";
        throw std::invalid_argument(os.str());
    }
    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    char peek() {
        skip_ws();
        return pos_ < src_.size() ? src_[pos_] : '\0';
    }

    ExprPtr parse_sum() {
        ExprPtr e = parse_term();
        for (;;) {
            if (eat('+')) e = e_add(e, parse_term());
            else if (eat('-')) e = e_sub(e, parse_term());
            else return e;
        }
    }
    ExprPtr parse_term() {
        ExprPtr e = parse_unary();
        for (;;) {
            if (eat('*')) e = e_mul(e, parse_unary());
            else if (eat('/')) e = e_div(e, parse_unary());
            else return e;
        }
    }
    ExprPtr parse_unary() {
        if (eat('-')) return e_neg(parse_unary());
        if (eat('+')) return parse_unary();
        return parse_power();
    }
    ExprPtr parse_power() {
        ExprPtr base = parse_primary();
        if (eat('^')) {
            bool neg = eat('-');
            skip_ws();
            std::size_t start = pos_;
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            if (pos_ == start) fail("expected integer exponent");
            int k = std::stoi(src_.substr(start, pos_ - start));
            return e_pow(base, neg ? -k : k);
        }
        return base;
    }
    ExprPtr parse_primary() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end");
        char c = src_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t used = 0;
            double v = std::stod(src_.substr(pos_), &used);
            pos_ += used;
            return e_num(v);
        }
        if (c == '(') {
            ++pos_;
            ExprPtr e = parse_sum();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            std::size_t start = pos_;
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                ++pos_;
            std::string name = src_.substr(start, pos_ - start);
            if (name == "pi") return e_num(std::numbers::pi);
            if (name == "t") return e_t();
            if (name == "x" || name == "x1") return check_dim(1);
            if (name == "y" || name == "x2") return check_dim(2);
            if (name == "z" || name == "x3") return check_dim(3);
            if (name == "sin" || name == "cos" || name == "exp") {
                if (!eat('(')) fail("expected '(' after function name");
                ExprPtr arg = parse_sum();
                if (!eat(')')) fail("expected ')'");
                if (name == "sin") return e_sin(arg);
                if (name == "cos") return e_cos(arg);
                return e_exp(arg);
            }
            fail("unknown identifier '" + name + "'");
        }
        fail("unexpected character");
    }
    ExprPtr check_dim(int i) {
        if (i > max_dim_) fail("spatial variable exceeds dimension");
        return e_x(i);
    }
};

}  // namespace detail

/// Parse an expression string in variables t, x1..xn (x,y,z aliases), with
/// functions sin/cos/exp, the constant pi, and integer '^' powers.
inline ExprPtr parse_expr(const std::string& src, int n) {
    return detail::Parser(src, n).parse();
}

/// A scalar field carrying its expression, compiled evaluator and first
/// derivatives; second derivatives are compiled on demand.
class ScalarField {
public:
    ScalarField() : expr_(e_num(0.0)), n_(2) { init(); }
    ScalarField(ExprPtr e, int n) : expr_(std::move(e)), n_(n) { init(); }
    ScalarField(const std::string& s, int n) : expr_(parse_expr(s, n)), n_(n) { init(); }

    int dim() const { return n_; }
    const ExprPtr& expr() const { return expr_; }

    double operator()(double t, const Vec& x) const { return tape_(t, x); }
    double dt(double t, const Vec& x) const { return dt_(t, x); }
    double dx(int i, double t, const Vec& x) const { return dx_[static_cast<size_t>(i)](t, x); }
    double dxx(int i, int j, double t, const Vec& x) const {
        return dxx_[static_cast<size_t>(i * n_ + j)](t, x);
    }
    double laplacian(double t, const Vec& x) const {
        double s = 0.0;
        for (int i = 0; i < n_; ++i) s += dxx(i, i, t, x);
        return s;
    }

    ExprPtr dx_expr(int i) const { return diff(expr_, i + 1); }
    ExprPtr dt_expr() const { return diff(expr_, 0); }

    bool time_dependent() const { return depends_on(expr_, 0); }

private:
    ExprPtr expr_;
    int n_;
    Tape tape_, dt_;
    std::vector<Tape> dx_, dxx_;

    void init() {
        tape_ = Tape(expr_);
        dt_ = Tape(diff(expr_, 0));
        dx_.resize(static_cast<size_t>(n_));
        dxx_.resize(static_cast<size_t>(n_ * n_));
        for (int i = 0; i < n_; ++i) {
            ExprPtr di = diff(expr_, i + 1);
            dx_[static_cast<size_t>(i)] = Tape(di);
            for (int j = 0; j < n_; ++j)
                dxx_[static_cast<size_t>(i * n_ + j)] = Tape(diff(di, j + 1));
        }
    }
};

}  // namespace cdlab
