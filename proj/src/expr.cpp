#include "srlab/expr.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "srlab/dataset.hpp"

namespace srlab {

namespace {
constexpr std::array<BlockInfo, kBlockCount> kBlocks{{
    {Block::Add, "add", 2, 1, true, "+"},
    {Block::Sub, "sub", 2, 1, false, "-"},
    {Block::Mul, "mul", 2, 1, true, "*"},
    {Block::Div, "div", 2, 1, false, "/"},
    {Block::Neg, "neg", 1, 1, false, "-"},
    {Block::Sin, "sin", 1, 3, false, ""},
    {Block::Cos, "cos", 1, 3, false, ""},
    {Block::Tan, "tan", 1, 3, false, ""},
    {Block::Abs, "abs", 1, 3, false, ""},
    {Block::Sqrt, "sqrt", 1, 3, false, ""},
    {Block::Floor, "floor", 1, 3, false, ""},
    {Block::Ceil, "ceil", 1, 3, false, ""},
    {Block::Max, "max", 2, 2, true, ""},
    {Block::Min, "min", 2, 2, true, ""},
    {Block::Asin, "asin", 1, 3, false, ""},
    {Block::Acos, "acos", 1, 3, false, ""},
    {Block::Atan, "atan", 1, 3, false, ""},
    {Block::Atan2, "atan2", 2, 2, false, ""},
    {Block::Log, "log", 1, 3, false, ""},
    {Block::Exp, "exp", 1, 3, false, ""},
    {Block::Tanh, "tanh", 1, 3, false, ""},
    {Block::Pow, "pow", 2, 2, false, "^"},
}};
} // namespace

auto block_info(Block b) -> BlockInfo const& { return kBlocks[static_cast<std::size_t>(b)]; }

auto all_blocks() -> std::span<BlockInfo const> { return kBlocks; }

auto block_by_name(std::string_view name) -> std::optional<Block>
{
    std::string lower(name);
    std::ranges::transform(lower, lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    // aliases accepted on input
    if (lower == "subtract") { lower = "sub"; }
    if (lower == "multiply") { lower = "mul"; }
    if (lower == "divide") { lower = "div"; }
    if (lower == "negate") { lower = "neg"; }
    if (lower == "ln") { lower = "log"; }
    if (lower == "arcsin") { lower = "asin"; }
    if (lower == "arccos") { lower = "acos"; }
    if (lower == "arctan") { lower = "atan"; }
    for (auto const& info : kBlocks) {
        if (info.name == lower) { return info.id; }
    }
    return std::nullopt;
}

auto apply_block(Block b, double a, double c) -> std::optional<double>
{
    if (std::isnan(a) || std::isnan(c)) { return std::nullopt; }
    double r{};
    switch (b) {
    case Block::Add: r = a + c; break;
    case Block::Sub: r = a - c; break;
    case Block::Mul: r = a * c; break;
    case Block::Div:
        if (c == 0.0) { return std::nullopt; }
        r = a / c;
        break;
    case Block::Neg: r = -a; break;
    case Block::Sin: r = std::sin(a); break;
    case Block::Cos: r = std::cos(a); break;
    case Block::Tan: r = std::tan(a); break;
    case Block::Abs: r = std::fabs(a); break;
    case Block::Sqrt:
        if (a < 0.0) { return std::nullopt; }
        r = std::sqrt(a);
        break;
    case Block::Floor: r = std::floor(a); break;
    case Block::Ceil: r = std::ceil(a); break;
    case Block::Max: r = a < c ? c : a; break;
    case Block::Min: r = c < a ? c : a; break;
    case Block::Asin:
        if (a < -1.0 || a > 1.0) { return std::nullopt; }
        r = std::asin(a);
        break;
    case Block::Acos:
        if (a < -1.0 || a > 1.0) { return std::nullopt; }
        r = std::acos(a);
        break;
    case Block::Atan: r = std::atan(a); break;
    case Block::Atan2: r = std::atan2(a, c); break;
    case Block::Log:
        if (a <= 0.0) { return std::nullopt; }
        r = std::log(a);
        break;
    case Block::Exp: r = std::exp(a); break;
    case Block::Tanh: r = std::tanh(a); break;
    case Block::Pow:
        if (a == 0.0 && c < 0.0) { return std::nullopt; }
        r = std::pow(a, c);
        break;
    }
    if (std::isnan(r)) { return std::nullopt; }
    return r;
}

// ---------------------------------------------------------------------------

Expression::Expression() : Expression(real(0.0)) {}

auto Expression::real(double v) -> Expression
{
    return Expression(std::make_shared<Node const>(Node{NodeKind::RealConst, Block::Add, v, {}, 0, {}}));
}

auto Expression::integer(std::int64_t v) -> Expression
{
    return Expression(std::make_shared<Node const>(Node{NodeKind::IntConst, Block::Add, static_cast<double>(v), {}, 0, {}}));
}

auto Expression::variable(std::string name) -> Expression
{
    return Expression(std::make_shared<Node const>(Node{NodeKind::Variable, Block::Add, 0.0, std::move(name), 0, {}}));
}

auto Expression::apply(Block b, std::vector<Expression> args) -> Expression
{
    auto const& info = block_info(b);
    if (static_cast<int>(args.size()) != info.arity) {
        throw std::invalid_argument("block " + std::string(info.name) + " expects " + std::to_string(info.arity)
                                    + " argument(s), got " + std::to_string(args.size()));
    }
    return Expression(std::make_shared<Node const>(Node{NodeKind::Apply, b, 0.0, {}, 0, std::move(args)}));
}

auto Expression::slot(int index, std::vector<Expression> args) -> Expression
{
    if (index < 1) { throw std::invalid_argument("slot index must be >= 1"); }
    return Expression(std::make_shared<Node const>(Node{NodeKind::Slot, Block::Add, 0.0, {}, index, std::move(args)}));
}

auto Expression::node_count() const -> std::size_t
{
    std::size_t n = 1;
    for (auto const& c : children()) { n += c.node_count(); }
    return n;
}

auto Expression::depth() const -> std::size_t
{
    std::size_t d = 0;
    for (auto const& c : children()) { d = std::max(d, c.depth()); }
    return d + 1;
}

auto Expression::has_slots() const -> bool
{
    if (kind() == NodeKind::Slot) { return true; }
    return std::ranges::any_of(children(), [](auto const& c) { return c.has_slots(); });
}

namespace {
void collect_vars(Expression const& e, std::set<std::string>& out)
{
    if (e.kind() == NodeKind::Variable) { out.insert(e.name()); }
    for (auto const& c : e.children()) { collect_vars(c, out); }
}
} // namespace

auto Expression::variables() const -> std::vector<std::string>
{
    std::set<std::string> s;
    collect_vars(*this, s);
    return {s.begin(), s.end()};
}

auto compare(Expression const& a, Expression const& b) -> int
{
    if (a.kind() != b.kind()) { return a.kind() < b.kind() ? -1 : 1; }
    switch (a.kind()) {
    case NodeKind::RealConst:
    case NodeKind::IntConst:
        if (a.value() == b.value()) { return 0; }
        // NaN never appears in constructed constants; order -0 < +0 is irrelevant
        return a.value() < b.value() ? -1 : 1;
    case NodeKind::Variable: return a.name().compare(b.name()) < 0 ? -1 : (a.name() == b.name() ? 0 : 1);
    case NodeKind::Apply:
        if (a.block() != b.block()) { return a.block() < b.block() ? -1 : 1; }
        break;
    case NodeKind::Slot:
        if (a.slot_index() != b.slot_index()) { return a.slot_index() < b.slot_index() ? -1 : 1; }
        break;
    }
    auto const& ca = a.children();
    auto const& cb = b.children();
    for (std::size_t i = 0; i < std::min(ca.size(), cb.size()); ++i) {
        if (int c = compare(ca[i], cb[i]); c != 0) { return c; }
    }
    if (ca.size() != cb.size()) { return ca.size() < cb.size() ? -1 : 1; }
    return 0;
}

auto operator==(Expression const& a, Expression const& b) -> bool
{
    if (a.node_ == b.node_) { return true; }
    return compare(a, b) == 0;
}

auto operator+(Expression const& a, Expression const& b) -> Expression { return Expression::apply(Block::Add, {a, b}); }
auto operator-(Expression const& a, Expression const& b) -> Expression { return Expression::apply(Block::Sub, {a, b}); }
auto operator*(Expression const& a, Expression const& b) -> Expression { return Expression::apply(Block::Mul, {a, b}); }
auto operator/(Expression const& a, Expression const& b) -> Expression { return Expression::apply(Block::Div, {a, b}); }
auto operator-(Expression const& a) -> Expression { return Expression::apply(Block::Neg, {a}); }

// ---------------------------------------------------------------------------
// complexity

auto ComplexityProfile::defaults() -> ComplexityProfile
{
    ComplexityProfile p;
    for (auto const& info : kBlocks) { p.weights[info.id] = info.default_weight; }
    return p;
}

namespace {
auto weight_of(ComplexityProfile const& p, Block b) -> std::int64_t
{
    auto it = p.weights.find(b);
    if (it == p.weights.end()) {
        throw ComplexityError("no complexity weight for block " + std::string(block_info(b).name));
    }
    return it->second;
}

auto integral_exponent(Expression const& e) -> std::optional<std::int64_t>
{
    if (!e.is_constant()) { return std::nullopt; }
    double v = e.value();
    if (v != std::floor(v) || std::fabs(v) > 1e6) { return std::nullopt; }
    return static_cast<std::int64_t>(v);
}
} // namespace

auto complexity(Expression const& e, ComplexityProfile const& p) -> std::int64_t
{
    switch (e.kind()) {
    case NodeKind::RealConst:
    case NodeKind::IntConst: return p.constant_weight;
    case NodeKind::Variable: return p.variable_weight;
    case NodeKind::Slot: {
        std::int64_t total = 0;
        for (auto const& c : e.children()) { total += complexity(c, p); }
        return total;
    }
    case NodeKind::Apply: break;
    }
    if (e.block() == Block::Pow) {
        if (auto k = integral_exponent(e.child(1)); k && *k >= 2) {
            return (*k - 1) * weight_of(p, Block::Mul) + *k * complexity(e.child(0), p);
        }
    }
    std::int64_t total = weight_of(p, e.block());
    for (auto const& c : e.children()) { total += complexity(c, p); }
    return total;
}

// ---------------------------------------------------------------------------
// evaluation

auto evaluate(Expression const& e, Bindings const& row) -> std::optional<double>
{
    switch (e.kind()) {
    case NodeKind::RealConst:
    case NodeKind::IntConst: return e.value();
    case NodeKind::Variable: {
        auto it = row.find(e.name());
        if (it == row.end()) { throw EvalError("unbound variable '" + e.name() + "'"); }
        return it->second;
    }
    case NodeKind::Slot: throw EvalError("cannot evaluate an unfilled template slot");
    case NodeKind::Apply: break;
    }
    auto const& ch = e.children();
    auto a = evaluate(ch[0], row);
    std::optional<double> b = 0.0;
    if (ch.size() > 1) { b = evaluate(ch[1], row); }
    if (!a || !b) { return std::nullopt; }
    return apply_block(e.block(), *a, *b);
}

CompiledExpr::CompiledExpr(Expression const& e, std::vector<std::string> const& columns)
{
    std::size_t depth = 0;
    auto emit = [&](auto&& self, Expression const& n) -> void {
        switch (n.kind()) {
        case NodeKind::RealConst:
        case NodeKind::IntConst:
            consts_.push_back(code_.size());
            code_.push_back({Instr::Op::Const, Block::Add, 0, n.value()});
            ++depth;
            break;
        case NodeKind::Variable: {
            auto it = std::ranges::find(columns, n.name());
            if (it == columns.end()) { throw EvalError("missing column '" + n.name() + "'"); }
            code_.push_back({Instr::Op::Column, Block::Add, static_cast<std::uint32_t>(it - columns.begin()), 0.0});
            ++depth;
            break;
        }
        case NodeKind::Slot: throw EvalError("cannot evaluate an unfilled template slot");
        case NodeKind::Apply:
            for (auto const& c : n.children()) { self(self, c); }
            // index 2 marks a square with a fixed integer exponent
            code_.push_back({Instr::Op::Apply, n.block(),
                             n.block() == Block::Pow && n.child(1).kind() == NodeKind::IntConst && n.child(1).value() == 2.0 ? 2U : 0U,
                             0.0});
            depth -= n.children().size() - 1;
            break;
        }
        max_stack_ = std::max(max_stack_, depth);
    };
    emit(emit, e);
}

auto CompiledExpr::eval(std::span<std::span<double const> const> cols, std::span<double> out) const -> bool
{
    std::size_t const rows = out.size();
    // stack of row-vectors, reused between calls on the same thread
    thread_local std::vector<std::vector<double>> stack;
    if (stack.size() < max_stack_) { stack.resize(max_stack_); }
    std::size_t sp = 0;
    for (auto const& in : code_) {
        switch (in.op) {
        case Instr::Op::Const: {
            auto& s = stack[sp++];
            s.assign(rows, in.value);
            break;
        }
        case Instr::Op::Column: {
            auto& s = stack[sp++];
            auto col = cols[in.index];
            s.assign(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(rows));
            break;
        }
        case Instr::Op::Apply: {
            auto const& info = block_info(in.block);
            if (info.arity == 1) {
                auto& a = stack[sp - 1];
                switch (in.block) {
                // sin and cos of an infinity are NaN, which marks the row invalid
                case Block::Sin:
                    for (std::size_t i = 0; i < rows; ++i) { a[i] = std::sin(a[i]); }
                    break;
                case Block::Cos:
                    for (std::size_t i = 0; i < rows; ++i) { a[i] = std::cos(a[i]); }
                    break;
                case Block::Neg:
                    for (std::size_t i = 0; i < rows; ++i) { a[i] = -a[i]; }
                    break;
                default:
                    for (std::size_t i = 0; i < rows; ++i) {
                        auto r = apply_block(in.block, a[i]);
                        a[i] = r ? *r : std::numeric_limits<double>::quiet_NaN();
                    }
                }
            } else {
                auto& a = stack[sp - 2];
                auto const& b = stack[sp - 1];
                switch (in.block) {
                // fast paths: IEEE semantics already give NaN-in/NaN-out here
                case Block::Add:
                    for (std::size_t i = 0; i < rows; ++i) { a[i] += b[i]; }
                    break;
                case Block::Sub:
                    for (std::size_t i = 0; i < rows; ++i) { a[i] -= b[i]; }
                    break;
                case Block::Mul:
                    for (std::size_t i = 0; i < rows; ++i) { a[i] *= b[i]; }
                    break;
                case Block::Div:
                    for (std::size_t i = 0; i < rows; ++i) {
                        a[i] = b[i] == 0.0 ? std::numeric_limits<double>::quiet_NaN() : a[i] / b[i];
                    }
                    break;
                case Block::Pow:
                    if (in.index == 2) {
                        // squaring is exact-rounded, as is pow(u, 2)
                        for (std::size_t i = 0; i < rows; ++i) { a[i] *= a[i]; }
                        break;
                    }
                    [[fallthrough]];
                default:
                    for (std::size_t i = 0; i < rows; ++i) {
                        auto r = apply_block(in.block, a[i], b[i]);
                        a[i] = r ? *r : std::numeric_limits<double>::quiet_NaN();
                    }
                }
                --sp;
            }
            break;
        }
        }
    }
    auto const& res = stack[0];
    bool ok = true;
    for (std::size_t i = 0; i < rows; ++i) {
        out[i] = res[i];
        ok = ok && std::isfinite(res[i]);
    }
    return ok;
}

auto evaluate_batch(Expression const& e, Dataset const& data) -> BatchResult
{
    CompiledExpr prog(e, data.names());
    auto views = data.views();
    BatchResult r;
    r.values.resize(data.rows());
    r.valid = prog.eval(views, r.values);
    return r;
}

} // namespace srlab
