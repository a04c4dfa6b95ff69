#ifndef SRLAB_SEARCH_HPP
#define SRLAB_SEARCH_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "srlab/dataset.hpp"
#include "srlab/expr.hpp"

namespace srlab {

class SearchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Metric : std::uint8_t { MaxAbsError, MeanAbsError, MeanSquaredError, RSquared, Correlation };

auto metric_name(Metric m) -> std::string_view;
auto metric_by_name(std::string_view name) -> std::optional<Metric>;

enum class Relation : std::uint8_t { Greater, GreaterEqual, Less, LessEqual };

struct Constraint {
    Expression expr; // may contain slots
    Relation relation{Relation::Greater};
    double bound{0.0};

    /// "f(x) > 7", "f1(x) <= 2.5"
    static auto parse(std::string_view text, std::vector<std::string> const& columns) -> Constraint;
};

struct TargetTemplate {
    std::string target;
    Expression scaffold;
    std::vector<Constraint> constraints;

    /// "y = f(x)", "z = f1(x)*f2(y)", "W = f(x, asinx)".
    static auto parse(std::string_view text, std::vector<std::string> const& columns,
                      std::vector<std::string> const& constraints = {}) -> TargetTemplate;

    [[nodiscard]] auto slot_count() const -> std::size_t;
    /// Argument column names of each slot, index 0 for f1.
    [[nodiscard]] auto slot_args() const -> std::vector<std::vector<std::string>>;
    /// Scaffold with every slot replaced by its body.
    [[nodiscard]] auto fill(std::vector<Expression> const& bodies) const -> Expression;
    void validate(Dataset const& d) const;
};

/// Replaces each slot f_k(...) by bodies[k - 1].
auto substitute_slots(Expression const& e, std::vector<Expression> const& bodies) -> Expression;

enum class Tag : std::uint8_t { Train, Validate, Both };
using SplitAssignment = std::vector<Tag>;

struct SplitStrategy {
    enum class Kind : std::uint8_t { Random, Alternating, AllBoth } kind{Kind::Random};
    double train_percent{75.0};
    double validate_percent{75.0};
};

/// Random: a seeded shuffle; round(n*train%) rows train and round(n*validate%)
/// validate, overlapping only as much as needed. Rows left over when the
/// percentages sum below 100 are tagged validate. Alternating: even rows and
/// the last row train, the rest validate.
auto split(Dataset const& d, SplitStrategy const& strategy, std::uint64_t seed) -> SplitAssignment;

struct TunerSettings {
    int max_iterations{12};
    double initial_damping{1e-3};
};

auto default_blocks() -> std::vector<Block>;

struct SearchConfig {
    std::vector<Block> blocks = default_blocks();
    ComplexityProfile profile = ComplexityProfile::defaults();
    bool real_constants{true};
    bool integer_constants{false};
    Metric metric{Metric::MaxAbsError};
    SplitStrategy split;
    std::uint64_t seed{1};
    std::optional<std::int64_t> generations;
    std::optional<double> seconds;
    std::optional<double> stop_fitness; // stop once validation fitness reaches this
    int population{200};
    double crossover_rate{0.5};
    double mutation_rate{0.5};
    TunerSettings tuner;
    int workers{1};
    bool deterministic{true};
    int max_depth{12};
    int max_nodes{64};

    void validate() const;
};

struct Fitness {
    double train{0.0};
    double validate{0.0};
};

/// Evaluates `e` on every row; rejected (nullopt) when any row is invalid or a
/// constraint fails anywhere. R^2 and correlation are reported as 1 - value.
auto score(Expression const& e, Dataset const& d, SplitAssignment const& s, Metric metric, std::string const& target,
           std::vector<Constraint> const& constraints = {}) -> std::optional<Fitness>;

/// Metric of prediction against data over the given rows, lower is better.
auto metric_value(Metric m, std::span<double const> pred, std::span<double const> data,
                  std::span<std::size_t const> rows) -> double;

struct Candidate {
    Expression expression;           // slots filled, canonical
    std::vector<Expression> bodies;  // one per slot
    Fitness fitness;
    std::int64_t complexity{0};
    std::int64_t generation{0};
    double time{0.0}; // seconds since the search started
};

/// Best candidate per complexity level, restricted to the non-dominated set:
/// no entry has another with lower-or-equal complexity and strictly better
/// validation fitness.
class ParetoArchive {
public:
    /// True (the frontier improved) iff no entry at complexity <= c's has
    /// validation fitness <= c's. Entries that c dominates are removed.
    auto insert(Candidate const& c) -> bool;

    [[nodiscard]] auto entries() const -> std::vector<Candidate>;
    [[nodiscard]] auto at(std::int64_t complexity) const -> Candidate const*;
    [[nodiscard]] auto best() const -> Candidate const*;
    [[nodiscard]] auto size() const -> std::size_t { return levels_.size(); }
    [[nodiscard]] auto empty() const -> bool { return levels_.empty(); }

private:
    std::map<std::int64_t, Candidate> levels_;
};

/// Tunes the real constants of `e` by damped Gauss-Newton on the train rows.
/// Integer constants are left alone. With `integer_snap`, each tuned constant
/// is rounded to the nearest integer when that does not worsen validation
/// fitness. Returns `e` unchanged when train fitness would get worse.
auto tune_coefficients(Expression const& e, Dataset const& d, SplitAssignment const& s, Metric metric,
                       std::string const& target, TunerSettings const& tuner = {}, bool integer_snap = false)
    -> Expression;

/// Random expression construction and variation restricted to enabled blocks.
class Proposer {
public:
    Proposer(SearchConfig const& config, std::vector<std::vector<std::string>> slot_args);

    auto random_tree(std::size_t slot, int depth, std::mt19937_64& rng) const -> Expression;
    auto random_bodies(std::mt19937_64& rng) const -> std::vector<Expression>;
    /// Replace, insert or delete a random node of one body; the result
    /// differs from the input.
    auto mutate(std::vector<Expression> const& bodies, std::mt19937_64& rng) const -> std::vector<Expression>;
    /// Swaps random subtrees of the same slot between two parents.
    auto crossover(std::vector<Expression> const& a, std::vector<Expression> const& b, std::mt19937_64& rng) const
        -> std::pair<std::vector<Expression>, std::vector<Expression>>;
    using Picker = std::function<std::size_t(std::mt19937_64&)>;
    /// Offspring of a population: crossover pairs and mutants, canonicalized
    /// and within limits. Parents are drawn with `pick` (uniform by default).
    auto propose(std::vector<std::vector<Expression>> const& population, std::size_t count, std::mt19937_64& rng,
                 Picker const& pick = {}) const -> std::vector<std::vector<Expression>>;
    /// Within the depth and node limits.
    [[nodiscard]] auto admissible(Expression const& body) const -> bool;

private:
    auto random_leaf(std::size_t slot, std::mt19937_64& rng) const -> Expression;

    SearchConfig config_;
    std::vector<std::vector<std::string>> args_;
    std::vector<Block> unary_;
    std::vector<Block> binary_;
};

/// True when every node of `e` is built from `blocks`, reading integer powers
/// as repeated multiplication, negation as subtraction from zero and integer
/// multiples as repeated addition.
auto within_blocks(Expression const& e, std::vector<Block> const& blocks) -> bool;

struct SearchStatus {
    std::int64_t generation{0};
    std::int64_t evaluations{0};
    double time{0.0};
    double evaluations_per_second{0.0};
};

struct ProgressSink {
    std::function<void(Candidate const&)> on_improvement;
    std::function<void(SearchStatus const&)> on_status;
    /// Polled between generations; returning false ends the search. It may
    /// block, which pauses the search at a generation boundary.
    std::function<bool()> keep_going;
};

struct SearchResult {
    ParetoArchive archive;
    SplitAssignment split;
    std::int64_t generations{0};
    std::int64_t evaluations{0};
    double seconds{0.0};
    bool time_capped{false};
};

auto run_search(SearchConfig const& config, Dataset const& d, TargetTemplate const& t, ProgressSink const& sink = {})
    -> SearchResult;

/// Input columns of `e` plus "residual" = data - prediction.
auto residuals(Expression const& e, Dataset const& d, std::string const& target) -> Dataset;

/// Equal after snapping constants within `rel_tol` of a nonzero integer and
/// canonicalizing, with remaining real constants compared to `rel_tol`.
/// Negligible extra terms make the forms differ.
auto same_form(Expression const& a, Expression const& b, double rel_tol = 1e-8) -> bool;

} // namespace srlab

#endif
