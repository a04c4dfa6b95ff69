#ifndef SRLAB_TESTS_ORACLE_HPP
#define SRLAB_TESTS_ORACLE_HPP

// First-order rounding-error scale of an expression at a point: the value
// and a bound S such that evaluating in double carries an absolute error of
// order eps * S. Two algebraically equal expressions then agree to within a
// few eps * max(S_a, S_b) even when their results cancel.

#include <bit>
#include <cmath>
#include <limits>
#include <optional>

#include "srlab/expr.hpp"

namespace srlab::testing {

struct Scaled {
    double value;
    double scale;
};

inline auto scaled_eval(Expression const& e, Bindings const& row) -> std::optional<Scaled>
{
    switch (e.kind()) {
    case NodeKind::RealConst:
    case NodeKind::IntConst: return Scaled{e.value(), std::fabs(e.value())};
    case NodeKind::Variable: {
        double const v = row.find(e.name())->second;
        return Scaled{v, std::fabs(v)};
    }
    case NodeKind::Slot: return std::nullopt;
    case NodeKind::Apply: break;
    }
    auto a = scaled_eval(e.child(0), row);
    if (!a) { return std::nullopt; }
    std::optional<Scaled> b;
    if (e.children().size() > 1) {
        b = scaled_eval(e.child(1), row);
        if (!b) { return std::nullopt; }
    }
    auto v = apply_block(e.block(), a->value, b ? b->value : 0.0);
    if (!v || !std::isfinite(*v)) { return std::nullopt; }
    double const u = a->value;
    double const su = a->scale;
    double const av = std::fabs(*v);
    double s = 0.0;
    switch (e.block()) {
    case Block::Add:
    case Block::Sub: s = su + b->scale; break;
    case Block::Mul: s = std::fabs(b->value) * su + std::fabs(u) * b->scale; break;
    case Block::Div: s = su / std::fabs(b->value) + std::fabs(u) * b->scale / (b->value * b->value); break;
    case Block::Neg:
    case Block::Abs: s = su; break;
    case Block::Sin: s = std::fabs(std::cos(u)) * su; break;
    case Block::Cos: s = std::fabs(std::sin(u)) * su; break;
    case Block::Tan: s = (1.0 + *v * *v) * su; break;
    case Block::Sqrt: s = su / (2.0 * av); break;
    case Block::Floor:
    case Block::Ceil: s = 0.0; break;
    case Block::Max:
    case Block::Min: s = std::max(su, b->scale); break;
    case Block::Asin:
    case Block::Acos: s = su / std::sqrt(std::max(1.0 - u * u, 0.0)); break;
    case Block::Atan: s = su / (1.0 + u * u); break;
    case Block::Atan2: {
        double const r2 = u * u + b->value * b->value;
        s = (std::fabs(b->value) * su + std::fabs(u) * b->scale) / r2;
        break;
    }
    case Block::Log: s = su / std::fabs(u); break;
    case Block::Exp: s = av * su; break;
    case Block::Tanh: s = (1.0 - *v * *v) * su; break;
    case Block::Pow: {
        double const p = b->value;
        s = std::fabs(p * std::pow(u, p - 1.0)) * su;
        if (u > 0.0) { s += av * std::fabs(std::log(u)) * b->scale; }
        break;
    }
    }
    if (!std::isfinite(s)) { s = std::numeric_limits<double>::infinity(); }
    return Scaled{*v, s + av};
}

inline auto ulp_distance(double a, double b) -> std::int64_t
{
    auto ia = std::bit_cast<std::int64_t>(a);
    auto ib = std::bit_cast<std::int64_t>(b);
    if (ia < 0) { ia = std::numeric_limits<std::int64_t>::min() - ia; }
    if (ib < 0) { ib = std::numeric_limits<std::int64_t>::min() - ib; }
    return std::abs(ia - ib);
}

} // namespace srlab::testing

#endif
