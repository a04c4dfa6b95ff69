// Coefficient tuning, variation operators and the generational loop.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_map>

#include "srlab/rewrite.hpp"
#include "srlab/search.hpp"

namespace srlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// tuning

struct Rows {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validate;
};

auto partition(SplitAssignment const& s) -> Rows
{
    Rows r;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != Tag::Validate) { r.train.push_back(i); }
        if (s[i] != Tag::Train) { r.validate.push_back(i); }
    }
    if (r.validate.empty()) { r.validate = r.train; }
    return r;
}

// Evaluation context shared by every tuning call of a search.
struct TuneData {
    Dataset const* full;
    std::string target;
    Metric metric;
    Rows rows;
    Dataset train;                // train rows only
    std::vector<double> y_train;

    TuneData(Dataset const& d, SplitAssignment const& s, Metric m, std::string t)
        : full(&d), target(std::move(t)), metric(m), rows(partition(s))
    {
        train = d.select_rows(rows.train);
        y_train = train.column(target);
    }
};

// Constants of a compiled program tied to shared parameters; -1 means fixed.
struct Binding {
    std::vector<int> param_of;
    std::vector<double> params;
    std::vector<bool> snapped;
};

void apply_params(CompiledExpr& prog, Binding const& b, std::vector<double> const& p)
{
    for (std::size_t k = 0; k < b.param_of.size(); ++k) {
        if (b.param_of[k] >= 0) { prog.set_constant(k, p[static_cast<std::size_t>(b.param_of[k])]); }
    }
}

auto eval_on(CompiledExpr const& prog, Dataset const& d, std::vector<double>& out) -> bool
{
    auto const views = d.views();
    out.resize(d.rows());
    return prog.eval(views, out);
}

auto sse(std::vector<double> const& f, std::vector<double> const& y) -> double
{
    double s = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) { s += (f[i] - y[i]) * (f[i] - y[i]); }
    return std::isfinite(s) ? s : kInf;
}

// Damped Gauss-Newton with a forward-difference Jacobian on the train rows.
auto levenberg_marquardt(CompiledExpr& prog, Binding const& b, std::vector<double> p, TuneData const& td,
                         TunerSettings const& tuner) -> std::vector<double>
{
    auto const n = static_cast<Eigen::Index>(p.size());
    auto const m = static_cast<Eigen::Index>(td.train.rows());
    std::vector<double> f;
    apply_params(prog, b, p);
    if (!eval_on(prog, td.train, f)) { return p; }
    double cost = sse(f, td.y_train);
    if (!std::isfinite(cost)) { return p; }
    double lambda = tuner.initial_damping;
    Eigen::MatrixXd jac(m, n);
    Eigen::VectorXd r(m);
    std::vector<double> fh;
    for (int iter = 0; iter < tuner.max_iterations && cost > 0.0; ++iter) {
        for (Eigen::Index i = 0; i < m; ++i) { r[i] = f[static_cast<std::size_t>(i)] - td.y_train[static_cast<std::size_t>(i)]; }
        for (Eigen::Index j = 0; j < n; ++j) {
            auto q = p;
            double h = 1.4901161193847656e-08 * std::max(1.0, std::fabs(p[static_cast<std::size_t>(j)]));
            q[static_cast<std::size_t>(j)] += h;
            apply_params(prog, b, q);
            if (!eval_on(prog, td.train, fh)) {
                h = -h;
                q[static_cast<std::size_t>(j)] = p[static_cast<std::size_t>(j)] + h;
                apply_params(prog, b, q);
                if (!eval_on(prog, td.train, fh)) {
                    jac.col(j).setZero();
                    continue;
                }
            }
            for (Eigen::Index i = 0; i < m; ++i) {
                jac(i, j) = (fh[static_cast<std::size_t>(i)] - f[static_cast<std::size_t>(i)]) / h;
            }
        }
        if (!jac.allFinite()) { break; }
        Eigen::MatrixXd const a = jac.transpose() * jac;
        Eigen::VectorXd const g = jac.transpose() * r;
        double const floor = 1e-12 * std::max(a.diagonal().maxCoeff(), 1e-300);
        bool accepted = false;
        for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
            Eigen::MatrixXd damped = a;
            for (Eigen::Index j = 0; j < n; ++j) { damped(j, j) += lambda * std::max(a(j, j), floor); }
            Eigen::VectorXd const delta = damped.ldlt().solve(-g);
            if (!delta.allFinite()) {
                lambda *= 4.0;
                continue;
            }
            auto q = p;
            for (Eigen::Index j = 0; j < n; ++j) { q[static_cast<std::size_t>(j)] += delta[j]; }
            apply_params(prog, b, q);
            std::vector<double> fq;
            if (eval_on(prog, td.train, fq)) {
                double const c = sse(fq, td.y_train);
                if (c < cost) {
                    bool const stalled = c > cost * (1.0 - 1e-12);
                    p = std::move(q);
                    f = std::move(fq);
                    cost = c;
                    lambda = std::max(lambda / 3.0, 1e-12);
                    accepted = true;
                    if (stalled) { iter = tuner.max_iterations; }
                    continue;
                }
            }
            lambda *= 4.0;
        }
        if (!accepted) { break; }
    }
    return p;
}

struct Measure {
    double train{kInf};
    double validate{kInf};
};

auto measure(CompiledExpr const& prog, TuneData const& td, std::vector<double>& buf) -> std::optional<Measure>
{
    if (!eval_on(prog, *td.full, buf)) { return std::nullopt; }
    auto const& y = td.full->column(td.target);
    Measure out{metric_value(td.metric, buf, y, td.rows.train), metric_value(td.metric, buf, y, td.rows.validate)};
    if (std::isnan(out.train) || std::isnan(out.validate)) { return std::nullopt; }
    return out;
}

// Tunes `b.params` in place; returns false when nothing improved.
auto tune_binding(CompiledExpr& prog, Binding& b, TuneData const& td, TunerSettings const& tuner, bool integer_snap)
    -> bool
{
    if (b.params.empty()) { return false; }
    std::vector<double> buf;
    apply_params(prog, b, b.params);
    auto const before = measure(prog, td, buf);
    auto p = levenberg_marquardt(prog, b, b.params, td, tuner);
    apply_params(prog, b, p);
    auto now = measure(prog, td, buf);
    bool changed = false;
    if (now && (!before || now->train <= before->train)) {
        changed = p != b.params;
        b.params = p;
    } else {
        apply_params(prog, b, b.params);
        now = before;
    }
    if (integer_snap && now) {
        for (std::size_t j = 0; j < b.params.size(); ++j) {
            double const r = std::nearbyint(b.params[j]);
            if (r == b.params[j] && b.snapped[j]) { continue; }
            if (std::fabs(r) > 1e15) { continue; }
            auto q = b.params;
            q[j] = r;
            apply_params(prog, b, q);
            auto const m = measure(prog, td, buf);
            if (m && m->validate <= now->validate) {
                b.params = std::move(q);
                b.snapped[j] = true;
                now = m;
                changed = true;
            }
        }
        apply_params(prog, b, b.params);
    }
    return changed;
}

// Real constants of `e` in leaf order get parameters starting at `offset`.
void bind_constants(Expression const& e, int offset, int& local, Binding& b)
{
    switch (e.kind()) {
    case NodeKind::RealConst:
        b.param_of.push_back(offset + local++);
        return;
    case NodeKind::IntConst: b.param_of.push_back(-1); return;
    case NodeKind::Variable: return;
    default:
        for (auto const& c : e.children()) { bind_constants(c, offset, local, b); }
    }
}

void collect_reals(Expression const& e, std::vector<double>& out)
{
    if (e.kind() == NodeKind::RealConst) { out.push_back(e.value()); }
    for (auto const& c : e.children()) { collect_reals(c, out); }
}

auto with_constants(Expression const& e, Binding const& b, std::size_t& next) -> Expression
{
    switch (e.kind()) {
    case NodeKind::RealConst: {
        auto const j = next++;
        if (b.snapped[j]) { return Expression::integer(static_cast<std::int64_t>(b.params[j])); }
        return Expression::real(b.params[j]);
    }
    case NodeKind::Apply: {
        std::vector<Expression> kids;
        kids.reserve(e.children().size());
        for (auto const& c : e.children()) { kids.push_back(with_constants(c, b, next)); }
        return Expression::apply(e.block(), std::move(kids));
    }
    default: return e;
    }
}

// Binds scaffold constants as fixed and each slot's body constants to the
// body's parameter block, so repeated slot uses share parameters.
void bind_template(Expression const& scaffold, std::vector<Expression> const& bodies,
                   std::vector<int> const& offsets, Binding& b)
{
    switch (scaffold.kind()) {
    case NodeKind::RealConst:
    case NodeKind::IntConst: b.param_of.push_back(-1); return;
    case NodeKind::Variable: return;
    case NodeKind::Slot: {
        auto const k = static_cast<std::size_t>(scaffold.slot_index() - 1);
        int local = 0;
        bind_constants(bodies[k], offsets[k], local, b);
        return;
    }
    case NodeKind::Apply:
        for (auto const& c : scaffold.children()) { bind_template(c, bodies, offsets, b); }
    }
}

auto tune_bodies(TargetTemplate const& t, std::vector<Expression> const& bodies, TuneData const& td,
                 TunerSettings const& tuner, bool integer_snap) -> std::vector<Expression>
{
    Binding b;
    std::vector<int> offsets;
    for (auto const& body : bodies) {
        offsets.push_back(static_cast<int>(b.params.size()));
        collect_reals(body, b.params);
    }
    if (b.params.empty()) { return bodies; }
    b.snapped.assign(b.params.size(), false);
    bind_template(t.scaffold, bodies, offsets, b);
    CompiledExpr prog(t.fill(bodies), td.full->names());
    if (!tune_binding(prog, b, td, tuner, integer_snap)) { return bodies; }
    std::vector<Expression> out;
    std::size_t next = 0;
    for (auto const& body : bodies) { out.push_back(with_constants(body, b, next)); }
    return out;
}

// ---------------------------------------------------------------------------
// tree addressing

// Integer exponents of pow are part of the operator, not mutation sites.
auto addressable(Expression const& e) -> std::size_t
{
    return e.is_apply(Block::Pow) && e.child(1).kind() == NodeKind::IntConst ? 1 : e.children().size();
}

void preorder(Expression const& e, std::vector<Expression>& out)
{
    out.push_back(e);
    for (std::size_t i = 0; i < addressable(e); ++i) { preorder(e.child(i), out); }
}

auto replace_at(Expression const& e, std::size_t& index, Expression const& with) -> Expression
{
    if (index == 0) {
        index = std::numeric_limits<std::size_t>::max();
        return with;
    }
    --index;
    if (e.kind() != NodeKind::Apply) { return e; }
    std::vector<Expression> kids;
    bool touched = false;
    auto const open = addressable(e);
    for (std::size_t i = 0; i < e.children().size(); ++i) {
        if (i >= open || index == std::numeric_limits<std::size_t>::max()) {
            kids.push_back(e.child(i));
            continue;
        }
        kids.push_back(replace_at(e.child(i), index, with));
        touched = true;
    }
    return touched ? Expression::apply(e.block(), std::move(kids)) : e;
}

auto replace_node(Expression const& e, std::size_t index, Expression const& with) -> Expression
{
    return replace_at(e, index, with);
}

auto uniform_index(std::size_t n, std::mt19937_64& rng) -> std::size_t
{
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

auto chance(double p, std::mt19937_64& rng) -> bool { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

auto canonical_bodies(std::vector<Expression> const& bodies) -> std::vector<Expression>
{
    std::vector<Expression> out;
    out.reserve(bodies.size());
    for (auto const& b : bodies) { out.push_back(fold_angle(b)); }
    return out;
}

} // namespace

auto tune_coefficients(Expression const& e, Dataset const& d, SplitAssignment const& s, Metric metric,
                       std::string const& target, TunerSettings const& tuner, bool integer_snap) -> Expression
{
    if (e.has_slots()) { throw SearchError("cannot tune an expression with unfilled slots"); }
    if (s.size() != d.rows()) { throw SearchError("split does not match the dataset"); }
    TuneData const td(d, s, metric, target);
    Binding b;
    collect_reals(e, b.params);
    if (b.params.empty()) { return e; }
    b.snapped.assign(b.params.size(), false);
    int local = 0;
    bind_constants(e, 0, local, b);
    CompiledExpr prog(e, d.names());
    if (!tune_binding(prog, b, td, tuner, integer_snap)) { return e; }
    std::size_t next = 0;
    return with_constants(e, b, next);
}

// ---------------------------------------------------------------------------
// Proposer

Proposer::Proposer(SearchConfig const& config, std::vector<std::vector<std::string>> slot_args)
    : config_(config), args_(std::move(slot_args))
{
    for (auto b : config_.blocks) {
        auto const& info = block_info(b);
        (info.arity == 1 ? unary_ : binary_).push_back(b);
    }
    for (auto const& a : args_) {
        if (a.empty() && !config_.real_constants && !config_.integer_constants) {
            throw SearchError("a slot without arguments needs constants enabled");
        }
    }
}

auto Proposer::random_leaf(std::size_t slot, std::mt19937_64& rng) const -> Expression
{
    auto const& vars = args_.at(slot);
    bool const constants = config_.real_constants || config_.integer_constants;
    if (!vars.empty() && (!constants || chance(0.6, rng))) {
        return Expression::variable(vars[uniform_index(vars.size(), rng)]);
    }
    bool const use_real = config_.real_constants && (!config_.integer_constants || chance(0.5, rng));
    if (use_real) { return Expression::real(std::uniform_real_distribution<double>(-10.0, 10.0)(rng)); }
    return Expression::integer(std::uniform_int_distribution<std::int64_t>(-10, 10)(rng));
}

auto Proposer::random_tree(std::size_t slot, int depth, std::mt19937_64& rng) const -> Expression
{
    if (depth <= 0 || chance(0.25, rng)) { return random_leaf(slot, rng); }
    bool const unary = !unary_.empty() && (binary_.empty() || chance(0.35, rng));
    if (unary) {
        return Expression::apply(unary_[uniform_index(unary_.size(), rng)], {random_tree(slot, depth - 1, rng)});
    }
    if (binary_.empty()) { return random_leaf(slot, rng); }
    auto const op = binary_[uniform_index(binary_.size(), rng)];
    auto lhs = random_tree(slot, depth - 1, rng);
    auto rhs = random_tree(slot, depth - 1, rng);
    return Expression::apply(op, {std::move(lhs), std::move(rhs)});
}

auto Proposer::random_bodies(std::mt19937_64& rng) const -> std::vector<Expression>
{
    std::vector<Expression> out;
    for (std::size_t k = 0; k < args_.size(); ++k) {
        Expression body = random_leaf(k, rng);
        for (int attempt = 0; attempt < 10; ++attempt) {
            auto const depth = std::uniform_int_distribution<int>(1, 4)(rng);
            auto cand = fold_angle(random_tree(k, depth, rng));
            if (admissible(cand)) {
                body = std::move(cand);
                break;
            }
        }
        out.push_back(std::move(body));
    }
    return out;
}

auto Proposer::admissible(Expression const& body) const -> bool
{
    return body.depth() <= static_cast<std::size_t>(config_.max_depth)
           && body.node_count() <= static_cast<std::size_t>(config_.max_nodes);
}

auto Proposer::mutate(std::vector<Expression> const& bodies, std::mt19937_64& rng) const -> std::vector<Expression>
{
    auto const input = canonical_bodies(bodies);
    for (int attempt = 0; attempt < 10; ++attempt) {
        auto const k = uniform_index(bodies.size(), rng);
        std::vector<Expression> nodes;
        preorder(bodies[k], nodes);
        auto const at = uniform_index(nodes.size(), rng);
        auto const& node = nodes[at];
        Expression repl = node;
        switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
        case 0: // point
            if (node.kind() == NodeKind::Apply) {
                auto const& pool = node.children().size() == 1 ? unary_ : binary_;
                if (!pool.empty()) { repl = Expression::apply(pool[uniform_index(pool.size(), rng)], node.children()); }
            } else if (node.kind() == NodeKind::RealConst && chance(0.5, rng)) {
                repl = Expression::real(node.value() * std::normal_distribution<double>(1.0, 0.1)(rng));
            } else {
                repl = random_leaf(k, rng);
            }
            break;
        case 1: // subtree
            repl = random_tree(k, std::uniform_int_distribution<int>(0, 3)(rng), rng);
            break;
        case 2: { // insert
            bool const unary = !unary_.empty() && (binary_.empty() || chance(0.5, rng));
            if (unary) {
                repl = Expression::apply(unary_[uniform_index(unary_.size(), rng)], {node});
            } else if (!binary_.empty()) {
                auto other = random_tree(k, std::uniform_int_distribution<int>(0, 1)(rng), rng);
                auto const op = binary_[uniform_index(binary_.size(), rng)];
                repl = chance(0.5, rng) ? Expression::apply(op, {node, other}) : Expression::apply(op, {other, node});
            }
            break;
        }
        default: // delete
            if (node.kind() == NodeKind::Apply) {
                repl = node.children()[uniform_index(node.children().size(), rng)];
            } else {
                repl = random_leaf(k, rng);
            }
            break;
        }
        auto out = bodies;
        out[k] = fold_angle(replace_node(bodies[k], at, repl));
        if (admissible(out[k]) && out[k] != input[k]) {
            for (std::size_t j = 0; j < out.size(); ++j) {
                if (j != k) { out[j] = input[j]; }
            }
            return out;
        }
    }
    // fall back to a fresh individual that differs from the input
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto fresh = random_bodies(rng);
        if (fresh != input) { return fresh; }
    }
    return random_bodies(rng);
}

auto Proposer::crossover(std::vector<Expression> const& a, std::vector<Expression> const& b,
                         std::mt19937_64& rng) const -> std::pair<std::vector<Expression>, std::vector<Expression>>
{
    auto const k = uniform_index(a.size(), rng);
    std::vector<Expression> na;
    std::vector<Expression> nb;
    preorder(a[k], na);
    preorder(b[k], nb);
    auto const i = uniform_index(na.size(), rng);
    auto const j = uniform_index(nb.size(), rng);
    auto ca = a;
    auto cb = b;
    ca[k] = replace_node(a[k], i, nb[j]);
    cb[k] = replace_node(b[k], j, na[i]);
    return {std::move(ca), std::move(cb)};
}

auto Proposer::propose(std::vector<std::vector<Expression>> const& population, std::size_t count,
                       std::mt19937_64& rng, Picker const& pick) const -> std::vector<std::vector<Expression>>
{
    if (population.empty()) { throw SearchError("cannot propose from an empty population"); }
    auto parent = [&]() -> std::vector<Expression> const& {
        return population[pick ? pick(rng) : uniform_index(population.size(), rng)];
    };
    double const total = config_.crossover_rate + config_.mutation_rate;
    double const p_cross = total > 0.0 ? config_.crossover_rate / total : 0.0;
    std::vector<std::vector<Expression>> out;
    out.reserve(count + 1);
    auto keep = [&](std::vector<Expression> bodies) {
        bodies = canonical_bodies(bodies);
        if (std::ranges::all_of(bodies, [&](Expression const& e) { return admissible(e); })) {
            out.push_back(std::move(bodies));
        }
    };
    std::size_t guard = 0;
    while (out.size() < count && guard++ < 20 * count + 100) {
        if (chance(p_cross, rng)) {
            auto const& pa = parent();
            auto const& pb = parent();
            auto [ca, cb] = crossover(pa, pb, rng);
            keep(std::move(ca));
            if (out.size() < count) { keep(std::move(cb)); }
        } else {
            out.push_back(mutate(parent(), rng));
        }
    }
    while (out.size() < count) { out.push_back(random_bodies(rng)); }
    return out;
}

// ---------------------------------------------------------------------------
// search loop

namespace {

struct Evaluated {
    std::vector<Expression> bodies;
    Expression full;
    Fitness fitness;
    std::int64_t complexity{0};
};

struct Individual {
    std::vector<Expression> bodies;
    std::string key;
    Fitness fitness;
    std::int64_t complexity{0};
    std::int64_t birth{0};
};

auto body_key(std::vector<Expression> const& bodies) -> std::string
{
    std::string k;
    for (auto const& b : bodies) {
        k += format(b);
        k += ';';
    }
    return k;
}

class Evaluator {
public:
    Evaluator(SearchConfig const& config, Dataset const& d, TargetTemplate const& t, SplitAssignment const& s)
        : config_(config), data_(d), template_(t), split_(s), td_(d, s, config.metric, t.target)
    {
    }

    auto operator()(std::vector<Expression> const& bodies) const -> std::optional<Evaluated>
    {
        try {
            auto tuned = bodies;
            if (config_.real_constants) {
                tuned = canonical_bodies(
                    tune_bodies(template_, bodies, td_, config_.tuner, config_.integer_constants));
            }
            auto full = fold_angle(template_.fill(tuned));
            if (!within_blocks(full, config_.blocks)) { return std::nullopt; }
            std::vector<Constraint> cons;
            for (auto const& c : template_.constraints) {
                cons.push_back(Constraint{substitute_slots(c.expr, tuned), c.relation, c.bound});
            }
            auto fit = score(full, data_, split_, config_.metric, template_.target, cons);
            if (!fit) { return std::nullopt; }
            auto const c = complexity(full, config_.profile);
            return Evaluated{std::move(tuned), std::move(full), *fit, c};
        } catch (ComplexityError const&) {
            return std::nullopt;
        } catch (EvalError const&) {
            return std::nullopt;
        }
    }

private:
    SearchConfig const& config_;
    Dataset const& data_;
    TargetTemplate const& template_;
    SplitAssignment const& split_;
    TuneData td_;
};

// Lower is better in every objective.
using Objectives = std::array<double, 3>;

auto dominates(Objectives const& a, Objectives const& b) -> bool
{
    bool strict = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) { return false; }
        if (a[i] < b[i]) { strict = true; }
    }
    return strict;
}

auto nondominated_ranks(std::vector<Objectives> const& obj) -> std::vector<int>
{
    std::size_t const n = obj.size();
    std::vector<std::vector<std::size_t>> beats(n);
    std::vector<int> count(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dominates(obj[i], obj[j])) {
                beats[i].push_back(j);
                ++count[j];
            } else if (dominates(obj[j], obj[i])) {
                beats[j].push_back(i);
                ++count[i];
            }
        }
    }
    std::vector<int> rank(n, 0);
    std::vector<std::size_t> front;
    for (std::size_t i = 0; i < n; ++i) {
        if (count[i] == 0) { front.push_back(i); }
    }
    int r = 0;
    while (!front.empty()) {
        std::vector<std::size_t> next;
        for (auto i : front) {
            rank[i] = r;
            for (auto j : beats[i]) {
                if (--count[j] == 0) { next.push_back(j); }
            }
        }
        front = std::move(next);
        ++r;
    }
    return rank;
}

} // namespace

auto run_search(SearchConfig const& config, Dataset const& d, TargetTemplate const& t, ProgressSink const& sink)
    -> SearchResult
{
    config.validate();
    t.validate(d);
    for (auto const& args : t.slot_args()) {
        for (auto const& a : args) {
            if (!d.has(a)) { throw SearchError("slot argument '" + a + "' is not a dataset column"); }
        }
    }
    using Clock = std::chrono::steady_clock;
    auto const start = Clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

    SearchResult result;
    result.split = split(d, config.split, config.seed);
    Proposer const proposer(config, t.slot_args());
    Evaluator const evaluate(config, d, t, result.split);
    std::mt19937_64 rng(config.seed);
    int const workers = config.deterministic ? 1 : std::max(1, config.workers);
    auto const pop_size = static_cast<std::size_t>(config.population);

    std::unordered_map<std::string, std::optional<Evaluated>> cache;
    std::int64_t generation = 0;

    // Scores a batch: unseen keys are evaluated (in parallel when allowed),
    // then results are read back in batch order so the outcome does not
    // depend on the worker count.
    auto score_batch = [&](std::vector<std::vector<Expression>> const& batch) {
        std::vector<std::string> keys;
        keys.reserve(batch.size());
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            keys.push_back(body_key(batch[i]));
            if (!cache.contains(keys.back())
                && std::ranges::none_of(todo, [&](std::size_t j) { return keys[j] == keys.back(); })) {
                todo.push_back(i);
            }
        }
        std::vector<std::optional<Evaluated>> fresh(todo.size());
        if (workers > 1 && todo.size() > 1) {
            std::vector<std::thread> pool;
            auto const w = std::min<std::size_t>(static_cast<std::size_t>(workers), todo.size());
            for (std::size_t id = 0; id < w; ++id) {
                pool.emplace_back([&, id] {
                    for (std::size_t j = id; j < todo.size(); j += w) { fresh[j] = evaluate(batch[todo[j]]); }
                });
            }
            for (auto& th : pool) { th.join(); }
        } else {
            for (std::size_t j = 0; j < todo.size(); ++j) { fresh[j] = evaluate(batch[todo[j]]); }
        }
        result.evaluations += static_cast<std::int64_t>(todo.size());
        if (cache.size() > 200000) { cache.clear(); }
        for (std::size_t j = 0; j < todo.size(); ++j) { cache.emplace(keys[todo[j]], std::move(fresh[j])); }

        std::vector<Individual> out;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            auto const it = cache.find(keys[i]);
            if (it == cache.end() || !it->second) { continue; }
            auto const& ev = *it->second;
            Candidate c{ev.full, ev.bodies, ev.fitness, ev.complexity, generation, elapsed()};
            if (result.archive.insert(c) && sink.on_improvement) { sink.on_improvement(c); }
            out.push_back(Individual{ev.bodies, body_key(ev.bodies), ev.fitness, ev.complexity, generation});
        }
        return out;
    };

    auto fresh_bodies = [&](std::size_t n) {
        std::vector<std::vector<Expression>> batch;
        for (std::size_t i = 0; i < n; ++i) { batch.push_back(proposer.random_bodies(rng)); }
        return batch;
    };

    std::vector<Individual> population = score_batch(fresh_bodies(pop_size));
    for (int refill = 0; population.size() < pop_size && refill < 20; ++refill) {
        auto more = score_batch(fresh_bodies(pop_size - population.size()));
        population.insert(population.end(), more.begin(), more.end());
    }

    auto reached = [&] {
        auto const* best = result.archive.best();
        return config.stop_fitness && best && best->fitness.validate <= *config.stop_fitness;
    };
    auto report = [&] {
        if (!sink.on_status) { return; }
        double const s = elapsed();
        sink.on_status(SearchStatus{generation, result.evaluations, s,
                                    s > 0.0 ? static_cast<double>(result.evaluations) / s : 0.0});
    };

    while (true) {
        report();
        if (reached()) { break; }
        if (config.generations && generation >= *config.generations) { break; }
        if (config.seconds && elapsed() >= *config.seconds) {
            result.time_capped = true;
            break;
        }
        if (sink.keep_going && !sink.keep_going()) { break; }
        ++generation;

        if (population.empty()) {
            population = score_batch(fresh_bodies(pop_size));
            continue;
        }

        // tournament by (front rank, train fitness, complexity)
        std::vector<Objectives> obj;
        for (auto const& ind : population) {
            obj.push_back({ind.fitness.train, static_cast<double>(ind.complexity), 0.0});
        }
        auto const rank = nondominated_ranks(obj);
        auto better = [&](std::size_t a, std::size_t b) {
            auto const& x = population[a];
            auto const& y = population[b];
            return std::tuple(rank[a], x.fitness.train, x.complexity)
                   < std::tuple(rank[b], y.fitness.train, y.complexity);
        };
        Proposer::Picker const pick = [&](std::mt19937_64& g) {
            std::size_t best = uniform_index(population.size(), g);
            for (int i = 1; i < 3; ++i) {
                auto const c = uniform_index(population.size(), g);
                if (better(c, best)) { best = c; }
            }
            return best;
        };
        std::vector<std::vector<Expression>> parents;
        parents.reserve(population.size());
        for (auto const& ind : population) { parents.push_back(ind.bodies); }

        auto batch = proposer.propose(parents, pop_size, rng, pick);
        auto immigrants = fresh_bodies(std::max<std::size_t>(1, pop_size / 20));
        batch.insert(batch.end(), immigrants.begin(), immigrants.end());
        auto offspring = score_batch(batch);

        // survivors: population, offspring and archive, deduplicated
        std::vector<Individual> pool = std::move(population);
        pool.insert(pool.end(), offspring.begin(), offspring.end());
        for (auto const& c : result.archive.entries()) {
            pool.push_back(Individual{c.bodies, body_key(c.bodies), c.fitness, c.complexity, c.generation});
        }
        std::unordered_map<std::string, std::size_t> seen;
        std::vector<Individual> unique;
        for (auto& ind : pool) {
            auto [it, fresh] = seen.emplace(ind.key, unique.size());
            if (fresh) {
                unique.push_back(std::move(ind));
            } else {
                unique[it->second].birth = std::min(unique[it->second].birth, ind.birth);
            }
        }
        std::vector<Objectives> sobj;
        for (auto const& ind : unique) {
            sobj.push_back({ind.fitness.train, static_cast<double>(ind.complexity),
                            static_cast<double>(generation - ind.birth)});
        }
        auto const srank = nondominated_ranks(sobj);
        std::vector<std::size_t> order(unique.size());
        for (std::size_t i = 0; i < order.size(); ++i) { order[i] = i; }
        std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
            return std::tuple(srank[a], unique[a].fitness.train, unique[a].complexity)
                   < std::tuple(srank[b], unique[b].fitness.train, unique[b].complexity);
        });
        population.clear();
        for (std::size_t i = 0; i < order.size() && population.size() < pop_size; ++i) {
            population.push_back(std::move(unique[order[i]]));
        }
    }
    result.generations = generation;
    result.seconds = elapsed();
    return result;
}

} // namespace srlab
