// Algebraic normal form: a sum of terms, each a numeric coefficient times a
// product of atoms raised to integer exponents. Atoms are variables, slots,
// function applications with canonical arguments, and sums kept unexpanded.

#include "srlab/rewrite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include "srlab/dataset.hpp"

namespace srlab {

namespace {

constexpr double kExactLimit = 9007199254740992.0; // 2^53
constexpr std::int64_t kMaxExpandPower = 16;
constexpr std::size_t kExpandFactor = 4;
constexpr int kMaxPasses = 8;

struct Num {
    double v{0.0};
    bool exact{true};
};

auto num_add(Num a, Num b) -> Num
{
    double const r = a.v + b.v;
    return {r, a.exact && b.exact && std::fabs(r) <= kExactLimit};
}

auto num_neg(Num a) -> Num { return {-a.v, a.exact}; }

auto num_mul(Num a, Num b) -> Num
{
    if (a.exact && b.exact) {
        auto const r = static_cast<__int128>(static_cast<std::int64_t>(a.v)) * static_cast<std::int64_t>(b.v);
        auto const lim = static_cast<__int128>(static_cast<std::int64_t>(kExactLimit));
        if (r <= lim && r >= -lim) { return {static_cast<double>(static_cast<std::int64_t>(r)), true}; }
    }
    return {a.v * b.v, false};
}

// Caller guarantees b != 0.
auto num_div(Num a, Num b) -> Num
{
    if (a.exact && b.exact) {
        auto const ia = static_cast<std::int64_t>(a.v);
        auto const ib = static_cast<std::int64_t>(b.v);
        if (ia % ib == 0) { return {static_cast<double>(ia / ib), true}; }
    }
    return {a.v / b.v, false};
}

auto num_pow(Num a, std::int64_t k) -> std::optional<Num>
{
    if (a.v == 0.0 && k < 0) { return std::nullopt; }
    if (k > 64 || k < -64) {
        double const r = std::pow(a.v, static_cast<double>(k));
        if (!std::isfinite(r)) { return std::nullopt; }
        return Num{r, false};
    }
    Num r{1.0, true};
    for (std::int64_t i = 0; i < std::abs(k); ++i) { r = num_mul(r, a); }
    if (k < 0) { r = num_div(Num{1.0, true}, r); }
    if (!std::isfinite(r.v)) { return std::nullopt; }
    return r;
}

auto num_expr(Num n) -> Expression
{
    return n.exact ? Expression::integer(static_cast<std::int64_t>(n.v)) : Expression::real(n.v);
}

auto is_arith(Block b) -> bool
{
    return b == Block::Add || b == Block::Sub || b == Block::Mul || b == Block::Div || b == Block::Neg;
}

auto atom_rank(Expression const& a) -> int
{
    switch (a.kind()) {
    case NodeKind::Variable: return 0;
    case NodeKind::Slot: return 1;
    case NodeKind::Apply: return is_arith(a.block()) ? 3 : 2;
    default: return 4;
    }
}

auto atom_cmp(Expression const& a, Expression const& b) -> int
{
    int const ra = atom_rank(a);
    int const rb = atom_rank(b);
    if (ra != rb) { return ra < rb ? -1 : 1; }
    if (ra == 0) { return a.name().compare(b.name()) < 0 ? -1 : (a.name() == b.name() ? 0 : 1); }
    if (ra == 2 && a.block() != b.block()) {
        return block_info(a.block()).name < block_info(b.block()).name ? -1 : 1;
    }
    return compare(a, b);
}

struct Factor {
    Expression atom;
    std::int64_t exp;
};
using Mono = std::vector<Factor>;

struct Term {
    Num coef;
    Mono mono;
};
using Poly = std::vector<Term>;

auto degree(Mono const& m) -> std::int64_t
{
    std::int64_t d = 0;
    for (auto const& f : m) { d += f.exp; }
    return d;
}

auto mono_cmp(Mono const& a, Mono const& b) -> int
{
    if (a.empty() != b.empty()) { return a.empty() ? -1 : 1; }
    auto const da = degree(a);
    auto const db = degree(b);
    if (da != db) { return da < db ? -1 : 1; }
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        if (int c = atom_cmp(a[i].atom, b[i].atom); c != 0) { return c; }
        if (a[i].exp != b[i].exp) { return a[i].exp > b[i].exp ? -1 : 1; }
    }
    if (a.size() != b.size()) { return a.size() < b.size() ? -1 : 1; }
    return 0;
}

auto mono_mul(Mono const& a, Mono const& b) -> Mono
{
    Mono r;
    r.reserve(a.size() + b.size());
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() || j < b.size()) {
        int c = i == a.size() ? 1 : (j == b.size() ? -1 : atom_cmp(a[i].atom, b[j].atom));
        if (c < 0) {
            r.push_back(a[i++]);
        } else if (c > 0) {
            r.push_back(b[j++]);
        } else {
            auto const e = a[i].exp + b[j].exp;
            if (e != 0) { r.push_back({a[i].atom, e}); }
            ++i;
            ++j;
        }
    }
    return r;
}

// Functions that are real and finite for every real argument; a zero multiple
// of anything else may be invalid and must survive.
auto is_total(Expression const& e) -> bool
{
    switch (e.kind()) {
    case NodeKind::RealConst:
    case NodeKind::IntConst:
    case NodeKind::Variable:
    case NodeKind::Slot: return true;
    case NodeKind::Apply: break;
    }
    switch (e.block()) {
    case Block::Add:
    case Block::Sub:
    case Block::Mul:
    case Block::Neg:
    case Block::Sin:
    case Block::Cos:
    case Block::Abs:
    case Block::Floor:
    case Block::Ceil:
    case Block::Max:
    case Block::Min:
    case Block::Atan:
    case Block::Tanh: break;
    case Block::Pow:
        if (e.child(1).kind() != NodeKind::IntConst || e.child(1).value() < 0) { return false; }
        break;
    default: return false;
    }
    return std::ranges::all_of(e.children(), is_total);
}

auto mono_total(Mono const& m) -> bool
{
    return std::ranges::all_of(m, [](Factor const& f) { return f.exp > 0 && is_total(f.atom); });
}

auto is_constant_poly(Poly const& p) -> bool { return p.empty() || (p.size() == 1 && p[0].mono.empty()); }
auto constant_of(Poly const& p) -> Num { return p.empty() ? Num{0.0, true} : p[0].coef; }

class Canon {
public:
    bool fold_angles = false;
    bool guard = true;
    std::set<std::string>* rules = nullptr;

    void note(char const* rule) const
    {
        if (rules) { rules->insert(rule); }
    }

    auto normalize(Poly p) const -> Poly
    {
        std::ranges::stable_sort(p, [](Term const& a, Term const& b) { return mono_cmp(a.mono, b.mono) < 0; });
        Poly out;
        for (auto& t : p) {
            if (!out.empty() && mono_cmp(out.back().mono, t.mono) == 0) {
                out.back().coef = num_add(out.back().coef, t.coef);
                note("collect-terms");
            } else {
                out.push_back(std::move(t));
            }
        }
        std::erase_if(out, [](Term const& t) { return t.coef.v == 0.0 && mono_total(t.mono); });
        return out;
    }

    auto add(Poly a, Poly const& b) const -> Poly
    {
        a.insert(a.end(), b.begin(), b.end());
        return normalize(std::move(a));
    }

    static auto neg(Poly p) -> Poly
    {
        for (auto& t : p) { t.coef = num_neg(t.coef); }
        return p;
    }

    // Empty polynomials stand for an exact zero that still multiplies terms.
    auto mul_all(Poly const& a, Poly const& b) const -> Poly
    {
        Poly const zero{Term{Num{0.0, true}, {}}};
        auto const& pa = a.empty() ? zero : a;
        auto const& pb = b.empty() ? zero : b;
        Poly r;
        r.reserve(pa.size() * pb.size());
        for (auto const& s : pa) {
            for (auto const& t : pb) {
                auto m = mono_mul(s.mono, t.mono);
                if (s.mono.size() + t.mono.size() > m.size()) { note("collect-factors"); }
                r.push_back({num_mul(s.coef, t.coef), std::move(m)});
            }
        }
        return normalize(std::move(r));
    }

    static auto atom_poly(Expression atom, std::int64_t exp = 1) -> Poly
    {
        return Poly{Term{Num{1.0, true}, Mono{Factor{std::move(atom), exp}}}};
    }

    auto mul(Poly const& a, Poly const& b) const -> Poly
    {
        if (a.size() <= 1 || b.size() <= 1) { return mul_all(a, b); }
        auto full = mul_all(a, b);
        if (!guard) {
            note("expand-product");
            return full;
        }
        auto const before = expr(a).node_count() + expr(b).node_count() + 1;
        if (expr(full).node_count() <= kExpandFactor * before) {
            note("expand-product");
            return full;
        }
        return mul_all(atom_poly(expr(a)), atom_poly(expr(b)));
    }

    auto power(Poly const& p, std::int64_t k) const -> Poly
    {
        if (k == 0) {
            note("identity");
            return Poly{Term{Num{1.0, true}, {}}};
        }
        if (k == 1) {
            note("identity");
            return p;
        }
        if (p.size() <= 1) {
            auto const t = p.empty() ? Term{Num{0.0, true}, {}} : p[0];
            auto c = num_pow(t.coef, k);
            if (!c) {
                return atom_poly(Expression::apply(Block::Pow, {expr(p), Expression::integer(k)}));
            }
            Mono m = t.mono;
            for (auto& f : m) { f.exp *= k; }
            if (t.mono.empty() || c->v != t.coef.v) { note("fold-constants"); }
            return normalize(Poly{Term{*c, std::move(m)}});
        }
        if (k > 0 && k <= kMaxExpandPower) {
            Poly r = p;
            for (std::int64_t i = 1; i < k; ++i) { r = mul_all(r, p); }
            if (!guard || expr(r).node_count() <= kExpandFactor * (expr(p).node_count() + 2)) {
                note("expand-power");
                return r;
            }
        }
        return atom_poly(expr(p), k);
    }

    auto divide(Poly const& a, Poly const& b) const -> Poly
    {
        if (b.empty() || (b.size() == 1 && b[0].coef.v == 0.0)) {
            return atom_poly(Expression::apply(Block::Div, {expr(a), expr(b)}));
        }
        if (b.size() == 1) {
            auto const& d = b[0];
            Mono inv = d.mono;
            for (auto& f : inv) { f.exp = -f.exp; }
            Poly r;
            auto const& pa = a.empty() ? Poly{Term{Num{0.0, true}, {}}} : a;
            for (auto const& t : pa) {
                r.push_back({num_div(t.coef, d.coef), mono_mul(t.mono, inv)});
            }
            return normalize(std::move(r));
        }
        return mul_all(a, atom_poly(expr(b), -1));
    }

    auto fold_function(Block blk, std::vector<Poly> const& args) const -> std::optional<Poly>
    {
        if (!std::ranges::all_of(args, is_constant_poly)) { return std::nullopt; }
        Num const a = constant_of(args[0]);
        Num const c = args.size() > 1 ? constant_of(args[1]) : Num{};
        auto v = apply_block(blk, a.v, c.v);
        if (!v || !std::isfinite(*v)) { return std::nullopt; }
        bool exact = false;
        switch (blk) {
        case Block::Abs:
        case Block::Floor:
        case Block::Ceil: exact = a.exact; break;
        case Block::Max:
        case Block::Min: exact = a.exact && c.exact; break;
        default: break;
        }
        note("fold-constants");
        Num const n{*v, exact && std::fabs(*v) <= kExactLimit};
        if (n.v == 0.0) { return Poly{}; }
        return Poly{Term{n, {}}};
    }

    // sin/cos argument reduction; returns the sign pulled out of the function.
    auto reduce_angle(Block blk, Poly& arg) const -> double
    {
        double sign = 1.0;
        Num offset{0.0, true};
        Poly rest;
        for (auto const& t : arg) {
            if (t.mono.empty()) {
                offset = t.coef;
            } else {
                rest.push_back(t);
            }
        }
        if (!rest.empty() && rest[0].coef.v < 0.0) {
            rest = neg(std::move(rest));
            offset = num_neg(offset);
            if (blk == Block::Sin) { sign = -1.0; }
            note("angle-fold");
        }
        constexpr double two_pi = 2.0 * std::numbers::pi;
        double residue = 0.0;
        if (std::fabs(offset.v) > std::numbers::pi) {
            residue = 4.0 * std::numeric_limits<double>::epsilon() * std::fabs(offset.v);
            double r = std::remainder(offset.v, two_pi);
            if (r == -std::numbers::pi) { r = std::numbers::pi; }
            offset = Num{r, false};
            note("angle-fold");
        }
        // residue of a removed multiple of 2pi
        if (offset.v != 0.0 && std::fabs(offset.v) <= residue) {
            offset = Num{0.0, true};
            note("angle-fold");
        }
        if (offset.v != 0.0) { rest.push_back({offset, {}}); }
        arg = normalize(std::move(rest));
        return sign;
    }

    auto function(Block blk, std::vector<Expression> const& children) const -> Poly
    {
        std::vector<Poly> args;
        args.reserve(children.size());
        for (auto const& c : children) { args.push_back(poly(c)); }
        double sign = 1.0;
        if (fold_angles && (blk == Block::Sin || blk == Block::Cos)) { sign = reduce_angle(blk, args[0]); }
        if (auto folded = fold_function(blk, args)) {
            if (sign < 0.0) { return neg(*folded); }
            return *folded;
        }
        if (blk == Block::Abs && args[0].size() == 1 && args[0][0].coef.v < 0.0) {
            args[0] = neg(std::move(args[0]));
            note("abs-negation");
        }
        std::vector<Expression> exprs;
        exprs.reserve(args.size());
        for (auto const& a : args) { exprs.push_back(expr(a)); }
        if (blk == Block::Abs && exprs[0].is_apply(Block::Abs)) {
            note("abs-idempotent");
            return atom_poly(exprs[0]);
        }
        if ((blk == Block::Max || blk == Block::Min) && compare(exprs[1], exprs[0]) < 0) {
            std::swap(exprs[0], exprs[1]);
            note("sort-arguments");
        }
        auto p = atom_poly(Expression::apply(blk, std::move(exprs)));
        if (sign < 0.0) { p[0].coef = Num{-1.0, true}; }
        return p;
    }

    auto poly(Expression const& e) const -> Poly
    {
        switch (e.kind()) {
        case NodeKind::RealConst:
        case NodeKind::IntConst:
            if (e.value() == 0.0) { return {}; }
            return Poly{Term{Num{e.value(), e.kind() == NodeKind::IntConst}, {}}};
        case NodeKind::Variable: return atom_poly(e);
        case NodeKind::Slot: {
            std::vector<Expression> args;
            for (auto const& c : e.children()) { args.push_back(expr(poly(c))); }
            return atom_poly(Expression::slot(e.slot_index(), std::move(args)));
        }
        case NodeKind::Apply: break;
        }
        switch (e.block()) {
        case Block::Add: return add(poly(e.child(0)), poly(e.child(1)));
        case Block::Sub: return add(poly(e.child(0)), neg(poly(e.child(1))));
        case Block::Neg: return neg(poly(e.child(0)));
        case Block::Mul: return mul(poly(e.child(0)), poly(e.child(1)));
        case Block::Div: return divide(poly(e.child(0)), poly(e.child(1)));
        case Block::Pow: {
            auto base = poly(e.child(0));
            auto ex = poly(e.child(1));
            if (is_constant_poly(ex) && constant_of(ex).exact) {
                return power(base, static_cast<std::int64_t>(constant_of(ex).v));
            }
            if (auto folded = fold_function(Block::Pow, {base, ex})) { return *folded; }
            return atom_poly(Expression::apply(Block::Pow, {expr(base), expr(ex)}));
        }
        default: return function(e.block(), e.children());
        }
    }

    static auto factor_expr(Factor const& f) -> Expression
    {
        auto const k = std::abs(f.exp);
        return k == 1 ? f.atom : Expression::apply(Block::Pow, {f.atom, Expression::integer(k)});
    }

    static auto product(std::vector<Expression> const& xs) -> std::optional<Expression>
    {
        if (xs.empty()) { return std::nullopt; }
        Expression r = xs[0];
        for (std::size_t i = 1; i < xs.size(); ++i) { r = r * xs[i]; }
        return r;
    }

    static auto term_expr(Num mag, Mono const& mono) -> Expression
    {
        std::vector<Expression> num;
        std::vector<Expression> den;
        for (auto const& f : mono) { (f.exp > 0 ? num : den).push_back(factor_expr(f)); }
        bool const unit = mag.v == 1.0 || mag.v == -1.0;
        if (!num.empty() && !unit) { num.insert(num.begin(), num_expr(mag)); }
        auto n = product(num);
        auto d = product(den);
        Expression top;
        if (!n) {
            top = num_expr(mag);
        } else if (mag.v == -1.0) {
            top = -*n;
        } else {
            top = *n;
        }
        return d ? top / *d : top;
    }

    static auto expr(Poly const& p) -> Expression
    {
        if (p.empty()) { return Expression::integer(0); }
        // lead with the first positive term so that no unary minus is needed
        auto const lead = static_cast<std::size_t>(
            std::ranges::find_if(p, [](Term const& t) { return t.coef.v > 0.0; }) - p.begin());
        std::size_t const first = lead < p.size() ? lead : 0;
        Expression r = term_expr(p[first].coef, p[first].mono);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (i == first) { continue; }
            auto const& t = p[i];
            if (t.coef.v < 0.0) {
                r = r - term_expr(num_neg(t.coef), t.mono);
            } else {
                r = r + term_expr(t.coef, t.mono);
            }
        }
        return r;
    }
};

auto run_to_fixpoint(Canon const& c, Expression const& e) -> Expression
{
    auto cur = Canon::expr(c.poly(e));
    for (int pass = 1; pass < kMaxPasses; ++pass) {
        auto next = Canon::expr(c.poly(cur));
        if (next == cur) { break; }
        cur = std::move(next);
    }
    return cur;
}

auto round_significant(double v, int digits) -> double
{
    if (v == 0.0 || !std::isfinite(v)) { return v; }
    if (digits >= 1) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.*e", digits - 1, v);
        return std::strtod(buf, nullptr);
    }
    // below one significant digit: round at the absolute quantum
    double const q = std::pow(10.0, std::floor(std::log10(std::fabs(v))) - digits + 1);
    return std::round(v / q) * q;
}

auto display_constant(double v) -> Expression
{
    if (std::nearbyint(v) == v && std::fabs(v) < kExactLimit) { return Expression::integer(static_cast<std::int64_t>(v)); }
    return Expression::real(v);
}

auto round_all(Expression const& e, int digits) -> Expression
{
    switch (e.kind()) {
    case NodeKind::RealConst: return display_constant(round_significant(e.value(), digits));
    case NodeKind::IntConst:
    case NodeKind::Variable: return e;
    case NodeKind::Slot:
    case NodeKind::Apply: break;
    }
    std::vector<Expression> kids;
    kids.reserve(e.children().size());
    for (auto const& c : e.children()) { kids.push_back(round_all(c, digits)); }
    if (e.kind() == NodeKind::Slot) { return Expression::slot(e.slot_index(), std::move(kids)); }
    return Expression::apply(e.block(), std::move(kids));
}

} // namespace

auto canonicalize(Expression const& e) -> Expression { return run_to_fixpoint(Canon{}, e); }

auto canonicalize_report(Expression const& e, ComplexityProfile const& p) -> RewriteReport
{
    std::set<std::string> fired;
    Canon c;
    c.rules = &fired;
    RewriteReport r;
    r.input = e;
    r.output = run_to_fixpoint(c, e);
    if (!(r.output == e)) { fired.insert("sort"); }
    r.rules.assign(fired.begin(), fired.end());
    r.complexity_before = complexity(e, p);
    r.complexity_after = complexity(r.output, p);
    return r;
}

auto fold_angle(Expression const& e) -> Expression
{
    Canon c;
    c.fold_angles = true;
    return run_to_fixpoint(c, e);
}

auto canonical_terms(Expression const& e) -> std::vector<Expression>
{
    Canon c;
    std::vector<Expression> out;
    for (auto const& t : c.poly(canonicalize(e))) { out.push_back(Canon::expr(Poly{t})); }
    return out;
}

auto canonical_monomials(Expression const& e) -> std::vector<std::pair<double, Expression>>
{
    Canon c;
    std::vector<std::pair<double, Expression>> out;
    for (auto const& t : c.poly(canonicalize(e))) {
        out.emplace_back(t.coef.v, Canon::expr(Poly{Term{Num{1.0, true}, t.mono}}));
    }
    return out;
}

namespace {

auto horner(Canon const& c, Poly terms, std::vector<std::string> const& vars, std::size_t level) -> Expression
{
    terms = c.normalize(std::move(terms));
    if (level == vars.size() || terms.empty()) { return Canon::expr(terms); }
    auto const v = Expression::variable(vars[level]);
    std::map<std::int64_t, Poly> groups;
    for (auto t : terms) {
        std::int64_t k = 0;
        std::erase_if(t.mono, [&](Factor const& f) {
            if (f.atom == v) {
                k = f.exp;
                return true;
            }
            return false;
        });
        groups[k].push_back(std::move(t));
    }
    auto vpow = [&](std::int64_t d) {
        return d == 1 ? v : Expression::apply(Block::Pow, {v, Expression::integer(d)});
    };
    // v^d * inner with signs and constants pulled to the front
    auto scaled = [&](std::int64_t d, Expression const& inner) -> Expression {
        if (inner.is_constant() && inner.value() == 1.0) { return vpow(d); }
        if (inner.is_constant() && inner.value() == -1.0) { return -vpow(d); }
        if (inner.is_constant()) { return inner * vpow(d); }
        if (inner.is_apply(Block::Neg)) { return -(vpow(d) * inner.child(0)); }
        if (inner.is_apply(Block::Mul) && inner.child(0).is_constant()) {
            return inner.child(0) * (vpow(d) * inner.child(1));
        }
        return vpow(d) * inner;
    };
    auto negative = [](Expression const& e) {
        return e.is_apply(Block::Neg) || (e.is_constant() && e.value() < 0.0)
               || (e.is_apply(Block::Mul) && e.child(0).is_constant() && e.child(0).value() < 0.0);
    };
    auto magnitude = [&](Expression const& e) -> Expression {
        if (e.is_apply(Block::Neg)) { return e.child(0); }
        if (e.is_constant()) { return Canon::expr(Canon::neg(c.poly(e))); }
        auto const k = Canon::expr(Canon::neg(c.poly(e.child(0))));
        if (k.is_constant() && k.value() == 1.0) { return e.child(1); }
        return k * e.child(1);
    };
    auto combine = [&](Expression const& lower, Expression const& upper) -> Expression {
        if (negative(upper)) { return lower - magnitude(upper); }
        if (negative(lower)) { return upper - magnitude(lower); }
        return lower + upper;
    };
    auto it = groups.rbegin();
    Expression inner = horner(c, it->second, vars, level + 1);
    std::int64_t k_hi = it->first;
    for (++it; it != groups.rend(); ++it) {
        inner = combine(horner(c, it->second, vars, level + 1), scaled(k_hi - it->first, inner));
        k_hi = it->first;
    }
    if (k_hi == 0) { return inner; }
    return scaled(k_hi, inner);
}

} // namespace

auto hornerize(Expression const& e, std::vector<std::string> const& precedence) -> Expression
{
    Canon c;
    c.guard = false;
    auto p = c.poly(e);
    std::set<std::string> const listed(precedence.begin(), precedence.end());
    for (auto const& t : p) {
        for (auto const& f : t.mono) {
            if (f.atom.kind() == NodeKind::Variable && listed.contains(f.atom.name())) {
                if (f.exp < 0) { throw RewriteError("negative power of '" + f.atom.name() + "'"); }
                continue;
            }
            for (auto const& name : f.atom.variables()) {
                if (listed.contains(name)) {
                    throw RewriteError("'" + name + "' occurs outside a polynomial position in " + format(f.atom));
                }
            }
        }
    }
    return horner(c, std::move(p), precedence, 0);
}

auto round_for_display(Expression const& e, int digits, Dataset const* data) -> Expression
{
    if (digits < 1) { throw RewriteError("digits must be at least 1"); }
    auto const canon = canonicalize(e);
    if (data == nullptr) { return canonicalize(round_all(canon, digits)); }

    Canon c;
    auto terms = c.poly(canon);
    if (terms.empty()) { return canon; }
    std::vector<double> contribution(terms.size(), 0.0);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        auto const body = Canon::term_expr(Num{1.0, true}, terms[i].mono);
        auto const batch = evaluate_batch(body, *data);
        for (double v : batch.values) {
            if (std::isfinite(v)) { contribution[i] = std::max(contribution[i], std::fabs(terms[i].coef.v * v)); }
        }
    }
    double const dominant = *std::ranges::max_element(contribution);
    Poly kept;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (contribution[i] == 0.0 && terms[i].coef.v == 0.0 && !mono_total(terms[i].mono)) {
            kept.push_back(terms[i]);
            continue;
        }
        if (contribution[i] == 0.0) { continue; }
        int const loss = static_cast<int>(std::floor(std::log10(dominant / contribution[i])));
        double const v = round_significant(terms[i].coef.v, digits - std::max(loss, 0));
        if (v == 0.0) { continue; }
        Term t = terms[i];
        auto const ce = display_constant(v);
        t.coef = Num{v, ce.kind() == NodeKind::IntConst};
        for (auto& f : t.mono) { f.atom = round_all(f.atom, digits); }
        kept.push_back(std::move(t));
    }
    return canonicalize(Canon::expr(kept));
}

} // namespace srlab
