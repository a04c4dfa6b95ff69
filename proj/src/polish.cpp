// Linear least squares over explicit bases and constant identification.

#include "srlab/polish.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>

#include "dd.hpp"
#include "srlab/rewrite.hpp"

namespace srlab {

namespace {

using detail::DoubleDouble;

struct Solved {
    std::vector<double> coef;
    std::vector<double> residual;
};

auto max_abs(std::vector<double> const& v) -> double
{
    double m = 0.0;
    for (double x : v) { m = std::max(m, std::fabs(x)); }
    return m;
}

auto residuals_dd(std::vector<std::vector<double>> const& cols, std::vector<double> const& coef,
                  std::vector<double> const& y) -> std::vector<double>
{
    std::vector<double> r(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        DoubleDouble acc{y[i], 0.0};
        for (std::size_t j = 0; j < cols.size(); ++j) { acc.add_product(-coef[j], cols[j][i]); }
        r[i] = acc.value();
    }
    return r;
}

auto solve(std::vector<std::vector<double>> const& cols, std::vector<Expression> const& basis,
           std::vector<double> const& y) -> Solved
{
    auto const m = static_cast<Eigen::Index>(y.size());
    auto const n = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd a(m, n);
    std::vector<double> scale(cols.size());
    for (Eigen::Index j = 0; j < n; ++j) {
        auto const& c = cols[static_cast<std::size_t>(j)];
        double s = max_abs(c);
        if (s == 0.0) {
            throw RankDeficientError("basis term '" + format(basis[static_cast<std::size_t>(j)]) + "' is zero on every row",
                                     {format(basis[static_cast<std::size_t>(j)])});
        }
        scale[static_cast<std::size_t>(j)] = s;
        for (Eigen::Index i = 0; i < m; ++i) { a(i, j) = c[static_cast<std::size_t>(i)] / s; }
    }
    // numerically dependent columns get a zero coefficient (basic solution)
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> const qr(a);
    Eigen::VectorXd rhs = Eigen::Map<Eigen::VectorXd const>(y.data(), m);
    Eigen::VectorXd z = qr.solve(rhs);
    std::vector<double> coef(cols.size());
    auto unscale = [&] {
        for (std::size_t j = 0; j < coef.size(); ++j) { coef[j] = z[static_cast<Eigen::Index>(j)] / scale[j]; }
    };
    unscale();
    for (int step = 0; step < 2; ++step) {
        auto const r = residuals_dd(cols, coef, y);
        Eigen::VectorXd const dz = qr.solve(Eigen::Map<Eigen::VectorXd const>(r.data(), m));
        z += dz;
        unscale();
    }
    return {coef, residuals_dd(cols, coef, y)};
}

// Exact dependence: the canonical expansions of the basis terms, read as
// coefficient vectors over their monomials, are linearly dependent.
void check_structure(std::vector<Expression> const& basis)
{
    std::vector<Expression> monos;
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
    for (auto const& b : basis) {
        std::vector<std::pair<std::size_t, double>> row;
        for (auto const& [c, mono] : canonical_monomials(b)) {
            auto it = std::ranges::find(monos, mono);
            if (it == monos.end()) {
                monos.push_back(mono);
                it = std::prev(monos.end());
            }
            row.emplace_back(static_cast<std::size_t>(it - monos.begin()), c);
        }
        rows.push_back(std::move(row));
    }
    auto const n = static_cast<Eigen::Index>(basis.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(monos.size()), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (auto const& [k, c] : rows[static_cast<std::size_t>(j)]) { m(static_cast<Eigen::Index>(k), j) += c; }
        double const s = m.col(j).cwiseAbs().maxCoeff();
        if (s > 0.0) { m.col(j) /= s; }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    qr.setThreshold(1e-9);
    qr.compute(m);
    if (qr.rank() == n) { return; }
    std::vector<std::string> dep;
    auto const& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < n; ++k) { dep.push_back(format(basis[static_cast<std::size_t>(perm[k])])); }
    std::string msg = "rank-deficient basis; dependent terms:";
    for (auto const& t : dep) { msg += " " + t; }
    throw RankDeficientError(msg, dep);
}

} // namespace

auto LinearFit::model() const -> Expression
{
    if (terms.empty()) { return Expression::real(0.0); }
    std::optional<Expression> sum;
    for (auto const& t : terms) {
        auto term = Expression::apply(Block::Mul, {Expression::real(t.coefficient), t.basis});
        sum = sum ? Expression::apply(Block::Add, {*sum, term}) : term;
    }
    return *sum;
}

auto linear_fit(Dataset const& d, BasisSpec const& spec) -> LinearFit
{
    if (spec.basis.empty()) { throw PolishError("basis is empty"); }
    if (!d.has(spec.target)) { throw PolishError("target column '" + spec.target + "' is missing"); }
    if (d.rows() < spec.basis.size()) {
        throw PolishError("need at least as many rows (" + std::to_string(d.rows()) + ") as basis terms ("
                          + std::to_string(spec.basis.size()) + ")");
    }
    if (!(spec.prune_threshold >= 0.0 && spec.prune_threshold < 1.0)) {
        throw PolishError("prune threshold must lie in [0, 1)");
    }
    check_structure(spec.basis);
    std::vector<Expression> basis = spec.basis;
    std::vector<std::vector<double>> cols;
    for (auto const& b : basis) {
        auto v = evaluate_batch(b, d);
        if (!v.valid) { throw PolishError("basis term '" + format(b) + "' is not real on every row"); }
        cols.push_back(std::move(v.values));
    }
    auto const& y = d.column(spec.target);

    LinearFit fit;
    bool first = true;
    while (true) {
        auto const s = solve(cols, basis, y);
        if (first) {
            fit.unpruned_max_residual = max_abs(s.residual);
            first = false;
        }
        std::vector<double> contrib(basis.size());
        for (std::size_t j = 0; j < basis.size(); ++j) { contrib[j] = std::fabs(s.coef[j]) * max_abs(cols[j]); }
        double const dominant = *std::ranges::max_element(contrib);
        std::vector<std::size_t> keep;
        for (std::size_t j = 0; j < basis.size(); ++j) {
            if (contrib[j] >= spec.prune_threshold * dominant || basis.size() == 1) { keep.push_back(j); }
        }
        if (keep.size() == basis.size() || keep.empty()) {
            fit.terms.clear();
            for (std::size_t j = 0; j < basis.size(); ++j) { fit.terms.push_back({basis[j], s.coef[j], contrib[j]}); }
            fit.max_residual = max_abs(s.residual);
            return fit;
        }
        std::vector<Expression> nb;
        std::vector<std::vector<double>> nc;
        for (std::size_t j = 0, k = 0; j < basis.size(); ++j) {
            if (k < keep.size() && keep[k] == j) {
                nb.push_back(basis[j]);
                nc.push_back(std::move(cols[j]));
                ++k;
            } else {
                fit.pruned.push_back(basis[j]);
            }
        }
        basis = std::move(nb);
        cols = std::move(nc);
    }
}

auto bifocal_basis(int k, std::string const& x) -> std::vector<Expression>
{
    if (k < 1) { throw PolishError("bifocal fit needs at least one term"); }
    auto const v = Expression::variable(x);
    std::vector<Expression> out{Expression::apply(Block::Asin, {v})};
    auto const one = Expression::integer(1);
    auto const root = Expression::apply(
        Block::Sqrt, {Expression::apply(Block::Mul, {Expression::apply(Block::Sub, {one, v}),
                                                     Expression::apply(Block::Add, {one, v})})});
    for (int j = 0; j + 2 <= k; ++j) {
        auto const p = 1 + 2 * j;
        auto const power = p == 1 ? v : Expression::apply(Block::Pow, {v, Expression::integer(p)});
        out.push_back(Expression::apply(Block::Mul, {power, root}));
    }
    return out;
}

auto bifocal_fit(Dataset const& d, int k, std::string const& target, std::string const& x) -> LinearFit
{
    if (!d.has(x)) { throw PolishError("column '" + x + "' is missing"); }
    auto const& xs = d.column(x);
    if (std::ranges::any_of(xs, [](double v) { return !(v >= -1.0 && v <= 1.0); })) {
        throw PolishError("bifocal fit needs " + x + " in [-1, 1]");
    }
    return linear_fit(d, BasisSpec{bifocal_basis(k, x), target});
}

void write_fit_report(LinearFit const& fit, std::ostream& out)
{
    out << "term,coefficient,max_contribution\n";
    for (auto const& t : fit.terms) {
        out << '"' << format(t.basis) << "\"," << format_number(t.coefficient, 17, false) << ','
            << format_number(t.max_contribution, 17, false) << '\n';
    }
}

// ---------------------------------------------------------------------------
// constants

auto ConstantLibrary::defaults() -> ConstantLibrary
{
    auto root = [](int n) {
        return Generator{"sqrt(" + std::to_string(n) + ")", Expression::apply(Block::Sqrt, {Expression::integer(n)}),
                         std::sqrt(static_cast<double>(n))};
    };
    ConstantLibrary lib;
    lib.generators = {
        {"1", Expression::integer(1), 1.0},
        {"pi", Expression::real(std::numbers::pi), std::numbers::pi},
        {"e", Expression::apply(Block::Exp, {Expression::integer(1)}), std::numbers::e},
        root(2),
        root(3),
        root(5),
        root(6),
        {"log(2)", Expression::apply(Block::Log, {Expression::integer(2)}), std::numbers::ln2},
    };
    return lib;
}

void ConstantLibrary::validate() const
{
    if (generators.empty()) { throw PolishError("constant library has no generators"); }
    std::set<double> seen;
    for (auto const& g : generators) {
        if (!std::isfinite(g.value) || g.value == 0.0) { throw PolishError("generator '" + g.name + "' is not finite and nonzero"); }
        if (!seen.insert(g.value).second) { throw PolishError("generator '" + g.name + "' is a duplicate"); }
    }
    if (max_numerator < 1 || max_denominator < 1) { throw PolishError("rational bounds must be positive"); }
    if (!(tolerance >= 0.0)) { throw PolishError("tolerance must be non-negative"); }
}

namespace {

auto describe(std::int64_t p, std::int64_t q, Generator const& g) -> std::string
{
    std::string s = p < 0 ? "-" : "";
    auto const ap = std::llabs(p);
    if (g.name == "1") {
        s += std::to_string(ap);
    } else if (ap == 1) {
        s += g.name;
    } else {
        s += std::to_string(ap) + "*" + g.name;
    }
    if (q != 1) { s += "/" + std::to_string(q); }
    return s;
}

auto build_form(std::int64_t p, std::int64_t q, Generator const& g) -> Expression
{
    Expression e = g.name == "1" ? Expression::integer(p)
                   : p == 1      ? g.form
                                 : Expression::apply(Block::Mul, {Expression::integer(p), g.form});
    if (q != 1) { e = Expression::apply(Block::Div, {e, Expression::integer(q)}); }
    return e;
}

auto identify_with(double v, ConstantLibrary const& lib, double tol) -> std::vector<Identification>
{
    std::vector<Identification> out;
    if (!std::isfinite(v)) { return out; }
    if (v == 0.0) {
        out.push_back({"0", Expression::integer(0), 0, 1, "1", 0.0, 0.0});
        return out;
    }
    std::vector<std::size_t> order;
    for (std::size_t gi = 0; gi < lib.generators.size(); ++gi) {
        auto const& g = lib.generators[gi];
        for (std::int64_t q = 1; q <= lib.max_denominator; ++q) {
            double const pf = std::nearbyint(v * static_cast<double>(q) / g.value);
            if (pf == 0.0 || std::fabs(pf) > lib.max_numerator) { continue; }
            auto const p = static_cast<std::int64_t>(pf);
            if (std::gcd(p, q) != 1) { continue; }
            double const cand = static_cast<double>(p) * g.value / static_cast<double>(q);
            double const err = std::fabs(cand - v) / std::fabs(v);
            if (err > tol) { continue; }
            out.push_back({describe(p, q, g), build_form(p, q, g), p, q, g.name, cand, err});
            order.push_back(gi);
        }
    }
    std::vector<std::size_t> idx(out.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) {
        return std::tuple(out[a].denominator, out[a].relative_error, order[a])
               < std::tuple(out[b].denominator, out[b].relative_error, order[b]);
    });
    std::vector<Identification> ranked;
    for (auto i : idx) { ranked.push_back(std::move(out[i])); }
    return ranked;
}

auto replace_constant(Expression const& e, std::size_t target, std::size_t& next, Expression const& with) -> Expression
{
    switch (e.kind()) {
    case NodeKind::RealConst: return next++ == target ? with : e;
    case NodeKind::Apply: {
        std::vector<Expression> kids;
        for (auto const& c : e.children()) { kids.push_back(replace_constant(c, target, next, with)); }
        return Expression::apply(e.block(), std::move(kids));
    }
    default: return e;
    }
}

void real_constants(Expression const& e, std::vector<double>& out)
{
    if (e.kind() == NodeKind::RealConst) { out.push_back(e.value()); }
    for (auto const& c : e.children()) { real_constants(c, out); }
}

} // namespace

auto identify_constant(double v, ConstantLibrary const& lib) -> std::vector<Identification>
{
    lib.validate();
    return identify_with(v, lib, lib.tolerance);
}

auto snap_expression(Expression const& e, ConstantLibrary const& lib, Dataset const& d, std::string const& target,
                     Metric metric) -> Expression
{
    lib.validate();
    SplitAssignment const all(d.rows(), Tag::Both);
    auto fitness = [&](Expression const& x) -> std::optional<double> {
        auto f = score(x, d, all, metric, target);
        return f ? std::optional(f->train) : std::nullopt;
    };
    auto current = e;
    auto best = fitness(current);
    if (!best) { return e; }
    std::vector<double> values;
    real_constants(e, values);
    // position of the k-th original constant in `current`: a snap removes
    // one real constant and inserts those of its form (pi is one)
    std::ptrdiff_t shift = 0;
    for (std::size_t k = 0; k < values.size(); ++k) {
        auto cands = identify_with(values[k], lib, lib.tolerance);
        if (cands.empty()) { cands = identify_with(values[k], lib, std::max(lib.tolerance, 1e-6)); }
        for (auto const& c : cands) {
            std::size_t next = 0;
            auto const at = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(k) + shift);
            auto trial = replace_constant(current, at, next, c.form);
            auto const f = fitness(trial);
            if (f && *f <= *best) {
                current = std::move(trial);
                best = f;
                std::vector<double> inserted;
                real_constants(c.form, inserted);
                shift += static_cast<std::ptrdiff_t>(inserted.size()) - 1;
                break;
            }
        }
    }
    return current;
}

} // namespace srlab
