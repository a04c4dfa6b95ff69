#ifndef SRLAB_EXPR_HPP
#define SRLAB_EXPR_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace srlab {

class Dataset;

/// Raised for malformed expression text. `position()` is a 0-based offset
/// into the input string.
class ParseError : public std::runtime_error {
public:
    ParseError(std::string const& msg, std::size_t pos)
        : std::runtime_error(msg + " at position " + std::to_string(pos)), pos_(pos) {}
    [[nodiscard]] auto position() const noexcept -> std::size_t { return pos_; }

private:
    std::size_t pos_;
};

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Block : std::uint8_t {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Sin,
    Cos,
    Tan,
    Abs,
    Sqrt,
    Floor,
    Ceil,
    Max,
    Min,
    Asin,
    Acos,
    Atan,
    Atan2,
    Log,
    Exp,
    Tanh,
    Pow,
};

inline constexpr std::size_t kBlockCount = static_cast<std::size_t>(Block::Pow) + 1;

struct BlockInfo {
    Block id;
    std::string_view name;
    int arity;
    int default_weight;
    bool commutative;
    // Infix symbol for arithmetic operators, empty for function-call syntax.
    std::string_view symbol;
};

auto block_info(Block b) -> BlockInfo const&;
auto block_by_name(std::string_view name) -> std::optional<Block>;
auto all_blocks() -> std::span<BlockInfo const>;

/// Applies a block to its arguments under real-domain rules. Returns
/// `std::nullopt` when an argument lies outside the block's real domain
/// (log of a nonpositive number, asin outside [-1, 1], division by zero...).
auto apply_block(Block b, double a, double c = 0.0) -> std::optional<double>;

enum class NodeKind : std::uint8_t { RealConst, IntConst, Variable, Apply, Slot };

class Expression;

struct Node {
    NodeKind kind;
    Block block{Block::Add};
    double value{0.0};
    std::string name; // variable name
    int slot{0};      // slot index (1-based) for template slots
    std::vector<Expression> children;
};

/// Immutable expression tree. Copies share structure.
class Expression {
public:
    Expression(); // the real constant 0
    static auto real(double v) -> Expression;
    static auto integer(std::int64_t v) -> Expression;
    static auto variable(std::string name) -> Expression;
    static auto apply(Block b, std::vector<Expression> args) -> Expression;
    static auto slot(int index, std::vector<Expression> args) -> Expression;

    [[nodiscard]] auto kind() const noexcept -> NodeKind { return node_->kind; }
    [[nodiscard]] auto block() const noexcept -> Block { return node_->block; }
    [[nodiscard]] auto value() const noexcept -> double { return node_->value; }
    [[nodiscard]] auto name() const noexcept -> std::string const& { return node_->name; }
    [[nodiscard]] auto slot_index() const noexcept -> int { return node_->slot; }
    [[nodiscard]] auto children() const noexcept -> std::vector<Expression> const& { return node_->children; }
    [[nodiscard]] auto child(std::size_t i) const -> Expression const& { return node_->children.at(i); }

    [[nodiscard]] auto is_constant() const noexcept -> bool
    {
        return kind() == NodeKind::RealConst || kind() == NodeKind::IntConst;
    }
    [[nodiscard]] auto is_apply(Block b) const noexcept -> bool { return kind() == NodeKind::Apply && block() == b; }

    [[nodiscard]] auto node_count() const -> std::size_t;
    [[nodiscard]] auto depth() const -> std::size_t;
    [[nodiscard]] auto has_slots() const -> bool;
    /// Distinct variable names, sorted.
    [[nodiscard]] auto variables() const -> std::vector<std::string>;

    friend auto operator==(Expression const& a, Expression const& b) -> bool;

private:
    explicit Expression(std::shared_ptr<Node const> n) : node_(std::move(n)) {}
    std::shared_ptr<Node const> node_;
};

/// Total structural order: kind, then payload, then children.
auto compare(Expression const& a, Expression const& b) -> int;

inline auto operator<(Expression const& a, Expression const& b) -> bool { return compare(a, b) < 0; }

// convenience builders
auto operator+(Expression const& a, Expression const& b) -> Expression;
auto operator-(Expression const& a, Expression const& b) -> Expression;
auto operator*(Expression const& a, Expression const& b) -> Expression;
auto operator/(Expression const& a, Expression const& b) -> Expression;
auto operator-(Expression const& a) -> Expression;

struct ComplexityProfile {
    std::map<Block, int> weights;
    int variable_weight{1};
    int constant_weight{1};

    static auto defaults() -> ComplexityProfile;
};

class ComplexityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sum of node weights. pow(u, k) with integer k >= 2 is costed as
/// (k - 1) multiplications plus k copies of u.
auto complexity(Expression const& e, ComplexityProfile const& p = ComplexityProfile::defaults()) -> std::int64_t;

// ---------------------------------------------------------------------------
// text interchange

struct ParseOptions {
    std::vector<std::string> variables;
    /// Accept `f(...)`, `f1(...)`, `f2(...)` as template slots.
    bool allow_slots{false};
};

auto parse(std::string_view text, std::vector<std::string> const& variables) -> Expression;
auto parse(std::string_view text, ParseOptions const& options) -> Expression;

/// Renders with constants rounded to `digits` significant digits (1..17).
auto format(Expression const& e, int digits = 17) -> std::string;

/// Decimal text for one constant at the given significant digits. Integral
/// real values keep a trailing ".0" so they re-parse as real constants.
auto format_number(double v, int digits, bool integer) -> std::string;

// ---------------------------------------------------------------------------
// evaluation

using Bindings = std::map<std::string, double, std::less<>>;

/// Evaluates at one point. `std::nullopt` means the value is not real at
/// that point (invalid); invalid propagates through every operation.
auto evaluate(Expression const& e, Bindings const& row) -> std::optional<double>;

struct BatchResult {
    std::vector<double> values; // NaN marks invalid rows
    bool valid{true};
};

auto evaluate_batch(Expression const& e, Dataset const& data) -> BatchResult;

/// Postfix form of an expression bound to column indices of a dataset.
/// Evaluation runs column-at-a-time over all rows.
class CompiledExpr {
public:
    struct Instr {
        enum class Op : std::uint8_t { Const, Column, Apply } op;
        Block block{Block::Add};
        std::uint32_t index{0};
        double value{0.0};
    };

    CompiledExpr() = default;
    /// `columns` maps variable names to column positions.
    CompiledExpr(Expression const& e, std::vector<std::string> const& columns);

    /// Evaluates over `rows` rows of `cols`. Returns false when any row is
    /// invalid or non-finite; `out` then holds NaN at invalid rows.
    auto eval(std::span<std::span<double const> const> cols, std::span<double> out) const -> bool;

    [[nodiscard]] auto code() const noexcept -> std::vector<Instr> const& { return code_; }

    /// Constant leaves in left-to-right order, adjustable without recompiling.
    [[nodiscard]] auto constant_count() const noexcept -> std::size_t { return consts_.size(); }
    void set_constant(std::size_t k, double v) { code_[consts_.at(k)].value = v; }

private:
    std::vector<Instr> code_;
    std::vector<std::size_t> consts_;
    std::size_t max_stack_{0};
};

} // namespace srlab

#endif
