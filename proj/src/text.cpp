// Infix text <-> Expression.
//
// Grammar (precedence low to high):
//   sum     := product (('+' | '-') product)*
//   product := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          right associative
//   primary := number | name | name '(' args ')' | '(' sum ')'
//
// `^` binds tighter than unary minus, so -x^2 is -(x^2). A '-' directly in
// front of a numeric literal (and not followed by '^') yields a negative
// constant rather than a negation node.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "srlab/expr.hpp"

namespace srlab {

namespace {

class Parser {
public:
    Parser(std::string_view text, ParseOptions const& opts) : text_(text), opts_(opts) {}

    auto run() -> Expression
    {
        skip_ws();
        if (pos_ >= text_.size()) { throw ParseError("empty expression", pos_); }
        auto e = sum();
        skip_ws();
        if (pos_ < text_.size()) { throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_); }
        return e;
    }

private:
    std::string_view text_;
    ParseOptions const& opts_;
    std::size_t pos_{0};

    void skip_ws()
    {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])) != 0) { ++pos_; }
    }

    auto peek() -> char
    {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    auto accept(char c) -> bool
    {
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c)
    {
        if (!accept(c)) {
            if (pos_ >= text_.size()) { throw ParseError(std::string("expected '") + c + "' but input ended", pos_); }
            throw ParseError(std::string("expected '") + c + "'", pos_);
        }
    }

    auto sum() -> Expression
    {
        auto lhs = product();
        for (;;) {
            if (accept('+')) {
                lhs = Expression::apply(Block::Add, {lhs, product()});
            } else if (accept('-')) {
                lhs = Expression::apply(Block::Sub, {lhs, product()});
            } else {
                return lhs;
            }
        }
    }

    auto product() -> Expression
    {
        auto lhs = unary();
        for (;;) {
            if (accept('*')) {
                lhs = Expression::apply(Block::Mul, {lhs, unary()});
            } else if (accept('/')) {
                lhs = Expression::apply(Block::Div, {lhs, unary()});
            } else {
                return lhs;
            }
        }
    }

    auto unary() -> Expression
    {
        if (peek() == '-') {
            std::size_t const minus = pos_++;
            skip_ws();
            if (pos_ < text_.size() && starts_number(pos_)) {
                std::size_t const save = pos_;
                auto lit = number(true);
                if (peek() != '^') { return lit; }
                pos_ = save;
            }
            (void)minus;
            return Expression::apply(Block::Neg, {unary()});
        }
        return power();
    }

    auto power() -> Expression
    {
        auto base = primary();
        if (accept('^')) { return Expression::apply(Block::Pow, {base, unary()}); }
        return base;
    }

    [[nodiscard]] auto starts_number(std::size_t p) const -> bool
    {
        char c = text_[p];
        if (std::isdigit(static_cast<unsigned char>(c)) != 0) { return true; }
        return c == '.' && p + 1 < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p + 1])) != 0;
    }

    auto number(bool negative) -> Expression
    {
        std::size_t const start = pos_;
        bool is_real = false;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0) { ++pos_; }
        if (pos_ < text_.size() && text_[pos_] == '.') {
            is_real = true;
            ++pos_;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0) { ++pos_; }
        }
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t p = pos_ + 1;
            if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) { ++p; }
            if (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p])) != 0) {
                is_real = true;
                pos_ = p;
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0) { ++pos_; }
            }
        }
        std::string lit(text_.substr(start, pos_ - start));
        if (negative) { lit.insert(lit.begin(), '-'); }
        if (!is_real) {
            std::int64_t iv{};
            auto [ptr, ec] = std::from_chars(lit.data(), lit.data() + lit.size(), iv);
            if (ec == std::errc() && ptr == lit.data() + lit.size() && std::fabs(static_cast<double>(iv)) <= 9007199254740992.0) {
                return Expression::integer(iv);
            }
        }
        double v{};
        auto [ptr, ec] = std::from_chars(lit.data(), lit.data() + lit.size(), v);
        if (ec != std::errc() || ptr != lit.data() + lit.size() || !std::isfinite(v)) {
            throw ParseError("malformed number '" + lit + "'", start);
        }
        return Expression::real(v);
    }

    static auto is_slot_name(std::string_view name) -> std::optional<int>
    {
        if (name.empty() || (name[0] != 'f' && name[0] != 'F')) { return std::nullopt; }
        if (name.size() == 1) { return 1; }
        int idx = 0;
        auto [ptr, ec] = std::from_chars(name.data() + 1, name.data() + name.size(), idx);
        if (ec != std::errc() || ptr != name.data() + name.size() || idx < 1) { return std::nullopt; }
        return idx;
    }

    auto primary() -> Expression
    {
        char c = peek();
        if (c == '\0') { throw ParseError("unexpected end of input", pos_); }
        if (starts_number(pos_)) { return number(false); }
        if (accept('(')) {
            auto e = sum();
            expect(')');
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) == 0 && c != '_') {
            throw ParseError(std::string("unexpected '") + c + "'", pos_);
        }
        std::size_t const start = pos_;
        while (pos_ < text_.size()
               && (std::isalnum(static_cast<unsigned char>(text_[pos_])) != 0 || text_[pos_] == '_')) {
            ++pos_;
        }
        std::string name(text_.substr(start, pos_ - start));
        if (peek() == '(') {
            ++pos_;
            std::vector<Expression> args;
            if (!accept(')')) {
                do { args.push_back(sum()); } while (accept(','));
                expect(')');
            }
            if (auto b = block_by_name(name)) {
                auto const& info = block_info(*b);
                if (static_cast<int>(args.size()) != info.arity) {
                    throw ParseError(std::string(info.name) + " expects " + std::to_string(info.arity) + " argument(s), got "
                                         + std::to_string(args.size()),
                                     start);
                }
                return Expression::apply(*b, std::move(args));
            }
            if (opts_.allow_slots) {
                if (auto idx = is_slot_name(name)) { return Expression::slot(*idx, std::move(args)); }
            }
            throw ParseError("unknown function '" + name + "'", start);
        }
        if (std::ranges::find(opts_.variables, name) != opts_.variables.end()) { return Expression::variable(name); }
        if (name == "pi") { return Expression::real(std::numbers::pi); }
        throw ParseError("unknown variable '" + name + "'", start);
    }
};

// precedence levels used by the printer
constexpr int kSum = 1;
constexpr int kProduct = 2;
constexpr int kUnary = 3;
constexpr int kPower = 4;
constexpr int kAtom = 5;

auto precedence(Expression const& e) -> int
{
    switch (e.kind()) {
    case NodeKind::RealConst:
    case NodeKind::IntConst: return std::signbit(e.value()) ? kUnary : kAtom;
    case NodeKind::Variable:
    case NodeKind::Slot: return kAtom;
    case NodeKind::Apply: break;
    }
    switch (e.block()) {
    case Block::Add:
    case Block::Sub: return kSum;
    case Block::Mul:
    case Block::Div: return kProduct;
    case Block::Neg: return kUnary;
    case Block::Pow: return kPower;
    default: return kAtom;
    }
}

class Printer {
public:
    explicit Printer(int digits) : digits_(digits) {}

    void print(Expression const& e, std::string& out) const
    {
        switch (e.kind()) {
        case NodeKind::RealConst: out += format_number(e.value(), digits_, false); return;
        case NodeKind::IntConst: out += format_number(e.value(), digits_, true); return;
        case NodeKind::Variable: out += e.name(); return;
        case NodeKind::Slot:
            out += "f" + std::to_string(e.slot_index());
            print_args(e, out);
            return;
        case NodeKind::Apply: break;
        }
        auto const& info = block_info(e.block());
        int const p = precedence(e);
        switch (e.block()) {
        case Block::Add:
        case Block::Sub:
        case Block::Mul:
        case Block::Div: {
            wrap(e.child(0), precedence(e.child(0)) < p, out);
            bool const spaced = p == kSum;
            out += spaced ? " " : "";
            out += info.symbol;
            out += spaced ? " " : "";
            auto const& r = e.child(1);
            wrap(r, precedence(r) <= p || precedence(r) == kUnary, out);
            return;
        }
        case Block::Neg: {
            auto const& c = e.child(0);
            out += '-';
            bool const literal = c.is_constant() && !std::signbit(c.value());
            wrap(c, precedence(c) < kUnary || literal, out);
            return;
        }
        case Block::Pow:
            wrap(e.child(0), precedence(e.child(0)) <= kPower, out);
            out += '^';
            wrap(e.child(1), precedence(e.child(1)) < kUnary, out);
            return;
        default:
            out += info.name;
            print_args(e, out);
            return;
        }
    }

private:
    int digits_;

    void wrap(Expression const& e, bool paren, std::string& out) const
    {
        if (paren) { out += '('; }
        print(e, out);
        if (paren) { out += ')'; }
    }

    void print_args(Expression const& e, std::string& out) const
    {
        out += '(';
        bool first = true;
        for (auto const& c : e.children()) {
            if (!first) { out += ", "; }
            first = false;
            print(c, out);
        }
        out += ')';
    }
};

} // namespace

auto parse(std::string_view text, ParseOptions const& options) -> Expression { return Parser(text, options).run(); }

auto parse(std::string_view text, std::vector<std::string> const& variables) -> Expression
{
    ParseOptions opts;
    opts.variables = variables;
    return parse(text, opts);
}

auto format_number(double v, int digits, bool integer) -> std::string
{
    digits = std::clamp(digits, 1, 17);
    char buf[64];
    if (integer) {
        std::snprintf(buf, sizeof buf, "%.0f", v);
        return buf;
    }
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    std::string s(buf);
    if (s.find_first_of(".eEin") == std::string::npos) { s += ".0"; }
    return s;
}

auto format(Expression const& e, int digits) -> std::string
{
    std::string out;
    Printer(std::clamp(digits, 1, 17)).print(e, out);
    return out;
}

} // namespace srlab
