// Templates, data splitting, error metrics, scoring and the Pareto archive.

#include "srlab/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "srlab/rewrite.hpp"

namespace srlab {

namespace {

auto trim(std::string_view s) -> std::string_view
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) { s.remove_prefix(1); }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) { s.remove_suffix(1); }
    return s;
}

void collect_slots(Expression const& e, std::map<int, std::vector<Expression>>& out)
{
    if (e.kind() == NodeKind::Slot) {
        auto [it, fresh] = out.emplace(e.slot_index(), e.children());
        if (!fresh && !std::ranges::equal(it->second, e.children())) {
            throw SearchError("slot f" + std::to_string(e.slot_index()) + " is used with different arguments");
        }
    }
    for (auto const& c : e.children()) { collect_slots(c, out); }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace

auto metric_name(Metric m) -> std::string_view
{
    switch (m) {
    case Metric::MaxAbsError: return "max-abs-error";
    case Metric::MeanAbsError: return "mean-abs-error";
    case Metric::MeanSquaredError: return "mean-squared-error";
    case Metric::RSquared: return "r-squared";
    case Metric::Correlation: return "correlation";
    }
    return "";
}

auto metric_by_name(std::string_view name) -> std::optional<Metric>
{
    for (auto m : {Metric::MaxAbsError, Metric::MeanAbsError, Metric::MeanSquaredError, Metric::RSquared,
                   Metric::Correlation}) {
        if (metric_name(m) == name) { return m; }
    }
    return std::nullopt;
}

auto Constraint::parse(std::string_view text, std::vector<std::string> const& columns) -> Constraint
{
    static constexpr std::array<std::pair<std::string_view, Relation>, 4> ops{
        {{">=", Relation::GreaterEqual}, {"<=", Relation::LessEqual}, {">", Relation::Greater}, {"<", Relation::Less}}};
    for (auto const& [op, rel] : ops) {
        auto const pos = text.find(op);
        if (pos == std::string_view::npos) { continue; }
        Constraint c;
        c.expr = srlab::parse(trim(text.substr(0, pos)), ParseOptions{columns, true});
        auto const rhs = srlab::parse(trim(text.substr(pos + op.size())), columns);
        auto const bound = rhs.variables().empty() ? evaluate(rhs, Bindings{}) : std::nullopt;
        if (!bound) {
            throw SearchError("constraint bound must be a real constant: '" + std::string(text) + "'");
        }
        c.relation = rel;
        c.bound = *bound;
        return c;
    }
    throw SearchError("constraint needs one of > >= < <=: '" + std::string(text) + "'");
}

auto TargetTemplate::parse(std::string_view text, std::vector<std::string> const& columns,
                           std::vector<std::string> const& constraints) -> TargetTemplate
{
    auto const eq = text.find('=');
    if (eq == std::string_view::npos) { throw SearchError("template needs the form 'target = expression'"); }
    TargetTemplate t;
    t.target = std::string(trim(text.substr(0, eq)));
    if (std::ranges::find(columns, t.target) == columns.end()) {
        throw SearchError("template target '" + t.target + "' is not a column");
    }
    t.scaffold = srlab::parse(trim(text.substr(eq + 1)), ParseOptions{columns, true});
    for (auto const& c : constraints) { t.constraints.push_back(Constraint::parse(c, columns)); }

    std::map<int, std::vector<Expression>> slots;
    collect_slots(t.scaffold, slots);
    if (slots.empty()) { throw SearchError("template has no unknown function f(...)"); }
    if (slots.rbegin()->first != static_cast<int>(slots.size())) {
        throw SearchError("slot indices must run f1, f2, ... without gaps");
    }
    for (auto const& [k, args] : slots) {
        for (auto const& a : args) {
            if (a.kind() != NodeKind::Variable) {
                throw SearchError("arguments of f" + std::to_string(k) + " must be column names; derive a column for '"
                                  + format(a) + "'");
            }
            if (a.name() == t.target) { throw SearchError("the target column cannot be an argument of f"); }
        }
    }
    for (auto const& c : t.constraints) {
        std::map<int, std::vector<Expression>> used;
        collect_slots(c.expr, used);
        for (auto const& [k, args] : used) {
            if (!slots.contains(k)) { throw SearchError("constraint uses f" + std::to_string(k) + " absent from template"); }
        }
    }
    return t;
}

auto TargetTemplate::slot_count() const -> std::size_t { return slot_args().size(); }

auto TargetTemplate::slot_args() const -> std::vector<std::vector<std::string>>
{
    std::map<int, std::vector<Expression>> slots;
    collect_slots(scaffold, slots);
    std::vector<std::vector<std::string>> out;
    for (auto const& [k, args] : slots) {
        std::vector<std::string> names;
        for (auto const& a : args) { names.push_back(a.name()); }
        out.push_back(std::move(names));
    }
    return out;
}

auto TargetTemplate::fill(std::vector<Expression> const& bodies) const -> Expression
{
    return substitute_slots(scaffold, bodies);
}

void TargetTemplate::validate(Dataset const& d) const
{
    if (!d.has(target)) { throw SearchError("target column '" + target + "' is missing from the dataset"); }
    auto check = [&](Expression const& e) {
        for (auto const& v : e.variables()) {
            if (!d.has(v)) { throw SearchError("template uses column '" + v + "' missing from the dataset"); }
        }
    };
    check(scaffold);
    for (auto const& c : constraints) { check(c.expr); }
}

auto substitute_slots(Expression const& e, std::vector<Expression> const& bodies) -> Expression
{
    switch (e.kind()) {
    case NodeKind::Slot: {
        auto const k = static_cast<std::size_t>(e.slot_index());
        if (k > bodies.size()) { throw SearchError("no body for slot f" + std::to_string(k)); }
        return bodies[k - 1];
    }
    case NodeKind::Apply: {
        std::vector<Expression> kids;
        kids.reserve(e.children().size());
        for (auto const& c : e.children()) { kids.push_back(substitute_slots(c, bodies)); }
        return Expression::apply(e.block(), std::move(kids));
    }
    default: return e;
    }
}

auto split(Dataset const& d, SplitStrategy const& strategy, std::uint64_t seed) -> SplitAssignment
{
    std::size_t const n = d.rows();
    SplitAssignment tags(n, Tag::Both);
    switch (strategy.kind) {
    case SplitStrategy::Kind::AllBoth: return tags;
    case SplitStrategy::Kind::Alternating:
        for (std::size_t i = 0; i < n; ++i) { tags[i] = (i % 2 == 0 || i + 1 == n) ? Tag::Train : Tag::Validate; }
        return tags;
    case SplitStrategy::Kind::Random: break;
    }
    auto pct_ok = [](double p) { return p > 0.0 && p <= 100.0; };
    if (!pct_ok(strategy.train_percent) || !pct_ok(strategy.validate_percent)) {
        throw SearchError("split percentages must lie in (0, 100]");
    }
    auto count = [&](double p) {
        auto const k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * p / 100.0));
        return std::clamp<std::size_t>(k, 1, n);
    };
    std::size_t const nt = count(strategy.train_percent);
    std::size_t const nv = count(strategy.validate_percent);
    std::size_t const overlap = nt + nv > n ? nt + nv - n : 0;
    // Fisher-Yates with a fixed generator keeps the split reproducible
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) { perm[i] = i; }
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) { std::swap(perm[i - 1], perm[rng() % i]); }
    for (std::size_t i = 0; i < n; ++i) {
        Tag t = Tag::Validate;
        if (i < nt - overlap) {
            t = Tag::Train;
        } else if (i < nt) {
            t = Tag::Both;
        }
        tags[perm[i]] = t;
    }
    return tags;
}

auto default_blocks() -> std::vector<Block>
{
    return {Block::Add, Block::Sub, Block::Mul, Block::Div, Block::Sin, Block::Cos};
}

void SearchConfig::validate() const
{
    if (blocks.empty()) { throw SearchError("no building blocks enabled"); }
    for (auto b : blocks) {
        if (b == Block::Neg) { continue; }
        if (!profile.weights.contains(b)) {
            throw SearchError("block '" + std::string(block_info(b).name) + "' has no complexity weight");
        }
    }
    auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (!rate_ok(crossover_rate) || !rate_ok(mutation_rate)) { throw SearchError("rates must lie in [0, 1]"); }
    if (population < 2) { throw SearchError("population must be at least 2"); }
    if (!generations && !seconds && !stop_fitness) { throw SearchError("a generation or time budget is required"); }
    if (generations && *generations < 0) { throw SearchError("generation budget must be non-negative"); }
    if (seconds && !(*seconds > 0.0)) { throw SearchError("time budget must be positive"); }
    if (tuner.max_iterations < 0) { throw SearchError("tuner iterations must be non-negative"); }
    if (max_depth < 1 || max_nodes < 1) { throw SearchError("size limits must be positive"); }
}

auto metric_value(Metric m, std::span<double const> pred, std::span<double const> data,
                  std::span<std::size_t const> rows) -> double
{
    if (rows.empty()) { return 0.0; }
    auto const n = static_cast<double>(rows.size());
    switch (m) {
    case Metric::MaxAbsError: {
        double worst = 0.0;
        for (auto i : rows) { worst = std::max(worst, std::fabs(pred[i] - data[i])); }
        return worst;
    }
    case Metric::MeanAbsError: {
        double s = 0.0;
        for (auto i : rows) { s += std::fabs(pred[i] - data[i]); }
        return s / n;
    }
    case Metric::MeanSquaredError: {
        double s = 0.0;
        for (auto i : rows) { s += (pred[i] - data[i]) * (pred[i] - data[i]); }
        return s / n;
    }
    case Metric::RSquared: {
        double mean = 0.0;
        for (auto i : rows) { mean += data[i]; }
        mean /= n;
        double ss_res = 0.0;
        double ss_tot = 0.0;
        for (auto i : rows) {
            ss_res += (pred[i] - data[i]) * (pred[i] - data[i]);
            ss_tot += (data[i] - mean) * (data[i] - mean);
        }
        if (ss_tot == 0.0) { return ss_res == 0.0 ? 0.0 : kInf; }
        return ss_res / ss_tot;
    }
    case Metric::Correlation: {
        double mp = 0.0;
        double md = 0.0;
        for (auto i : rows) {
            mp += pred[i];
            md += data[i];
        }
        mp /= n;
        md /= n;
        double spd = 0.0;
        double spp = 0.0;
        double sdd = 0.0;
        for (auto i : rows) {
            spd += (pred[i] - mp) * (data[i] - md);
            spp += (pred[i] - mp) * (pred[i] - mp);
            sdd += (data[i] - md) * (data[i] - md);
        }
        if (spp == 0.0 || sdd == 0.0) { return spp == sdd ? 0.0 : 1.0; }
        return 1.0 - spd / std::sqrt(spp * sdd);
    }
    }
    return kInf;
}

namespace {
auto holds(Relation r, double v, double bound) -> bool
{
    switch (r) {
    case Relation::Greater: return v > bound;
    case Relation::GreaterEqual: return v >= bound;
    case Relation::Less: return v < bound;
    case Relation::LessEqual: return v <= bound;
    }
    return false;
}
} // namespace

auto score(Expression const& e, Dataset const& d, SplitAssignment const& s, Metric metric, std::string const& target,
           std::vector<Constraint> const& constraints) -> std::optional<Fitness>
{
    if (e.has_slots()) { throw SearchError("cannot score an expression with unfilled slots"); }
    if (s.size() != d.rows()) { throw SearchError("split does not match the dataset"); }
    auto const pred = evaluate_batch(e, d);
    if (!pred.valid) { return std::nullopt; }
    for (auto const& c : constraints) {
        if (c.expr.has_slots()) { throw SearchError("constraint has unfilled slots"); }
        auto const v = evaluate_batch(c.expr, d);
        if (!v.valid) { return std::nullopt; }
        if (!std::ranges::all_of(v.values, [&](double x) { return holds(c.relation, x, c.bound); })) {
            return std::nullopt;
        }
    }
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != Tag::Validate) { train.push_back(i); }
        if (s[i] != Tag::Train) { val.push_back(i); }
    }
    auto const& y = d.column(target);
    Fitness f;
    f.train = metric_value(metric, pred.values, y, train);
    f.validate = val.empty() ? f.train : metric_value(metric, pred.values, y, val);
    if (std::isnan(f.train) || std::isnan(f.validate)) { return std::nullopt; }
    return f;
}

auto ParetoArchive::insert(Candidate const& c) -> bool
{
    double const f = c.fitness.validate;
    for (auto const& [k, e] : levels_) {
        if (k > c.complexity) { break; }
        if (e.fitness.validate <= f) { return false; }
    }
    std::erase_if(levels_, [&](auto const& kv) {
        return kv.first >= c.complexity && kv.second.fitness.validate >= f;
    });
    levels_.insert_or_assign(c.complexity, c);
    return true;
}

auto ParetoArchive::entries() const -> std::vector<Candidate>
{
    std::vector<Candidate> out;
    out.reserve(levels_.size());
    for (auto const& [k, c] : levels_) { out.push_back(c); }
    return out;
}

auto ParetoArchive::at(std::int64_t complexity) const -> Candidate const*
{
    auto it = levels_.find(complexity);
    return it == levels_.end() ? nullptr : &it->second;
}

auto ParetoArchive::best() const -> Candidate const*
{
    // the frontier is strictly decreasing in fitness, so the last is best
    return levels_.empty() ? nullptr : &levels_.rbegin()->second;
}

auto within_blocks(Expression const& e, std::vector<Block> const& blocks) -> bool
{
    auto on = [&](Block b) { return std::ranges::find(blocks, b) != blocks.end(); };
    auto kids_ok = [&] {
        return std::ranges::all_of(e.children(), [&](Expression const& c) { return within_blocks(c, blocks); });
    };
    if (e.kind() != NodeKind::Apply) { return e.kind() != NodeKind::Slot || kids_ok(); }
    bool ok = on(e.block());
    if (!ok) {
        switch (e.block()) {
        case Block::Neg: ok = on(Block::Sub) || on(Block::Mul); break;
        case Block::Sub: ok = on(Block::Add) && on(Block::Mul); break;
        case Block::Pow:
            if (e.child(1).kind() == NodeKind::IntConst) {
                double const k = e.child(1).value();
                ok = (k >= 0.0 || on(Block::Div)) && (std::fabs(k) <= 1.0 || on(Block::Mul));
                return ok && within_blocks(e.child(0), blocks);
            }
            break;
        case Block::Mul:
            ok = on(Block::Add)
                 && (e.child(0).kind() == NodeKind::IntConst || e.child(1).kind() == NodeKind::IntConst);
            break;
        default: break;
        }
    }
    return ok && kids_ok();
}

auto residuals(Expression const& e, Dataset const& d, std::string const& target) -> Dataset
{
    auto const pred = evaluate_batch(e, d);
    auto const& y = d.column(target);
    std::vector<Column> cols;
    for (auto const& name : d.names()) {
        if (name != target) { cols.push_back(Column{name, d.column(name)}); }
    }
    std::vector<double> r(d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) {
        if (!std::isfinite(pred.values[i])) {
            throw EvalError("model is not real at row " + std::to_string(i + 1));
        }
        r[i] = y[i] - pred.values[i];
    }
    cols.push_back(Column{"residual", std::move(r)});
    return Dataset(std::move(cols));
}

namespace {
auto snap_near_integers(Expression const& e, double tol) -> Expression
{
    switch (e.kind()) {
    case NodeKind::RealConst: {
        double const r = std::nearbyint(e.value());
        if (r != 0.0 && std::fabs(e.value() - r) <= tol * std::fabs(r) && std::fabs(r) < 9e15) {
            return Expression::integer(static_cast<std::int64_t>(r));
        }
        return e;
    }
    case NodeKind::Apply:
    case NodeKind::Slot: {
        std::vector<Expression> kids;
        for (auto const& c : e.children()) { kids.push_back(snap_near_integers(c, tol)); }
        return e.kind() == NodeKind::Slot ? Expression::slot(e.slot_index(), std::move(kids))
                                          : Expression::apply(e.block(), std::move(kids));
    }
    default: return e;
    }
}

auto approx_equal(Expression const& a, Expression const& b, double tol) -> bool
{
    if (a.kind() != b.kind()) { return false; }
    switch (a.kind()) {
    case NodeKind::RealConst:
        return std::fabs(a.value() - b.value()) <= tol * std::max(std::fabs(a.value()), std::fabs(b.value()));
    case NodeKind::IntConst: return a.value() == b.value();
    case NodeKind::Variable: return a.name() == b.name();
    case NodeKind::Slot:
        if (a.slot_index() != b.slot_index()) { return false; }
        break;
    case NodeKind::Apply:
        if (a.block() != b.block()) { return false; }
        break;
    }
    if (a.children().size() != b.children().size()) { return false; }
    for (std::size_t i = 0; i < a.children().size(); ++i) {
        if (!approx_equal(a.child(i), b.child(i), tol)) { return false; }
    }
    return true;
}
} // namespace

auto same_form(Expression const& a, Expression const& b, double rel_tol) -> bool
{
    auto norm = [&](Expression const& e) { return fold_angle(snap_near_integers(fold_angle(e), rel_tol)); };
    return approx_equal(norm(a), norm(b), rel_tol);
}

} // namespace srlab
