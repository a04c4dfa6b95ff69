#ifndef SRLAB_POLISH_HPP
#define SRLAB_POLISH_HPP

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "srlab/dataset.hpp"
#include "srlab/expr.hpp"
#include "srlab/search.hpp"

namespace srlab {

class PolishError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown for a rank-deficient basis; names the dependent terms.
class RankDeficientError : public PolishError {
public:
    RankDeficientError(std::string const& what, std::vector<std::string> dependent)
        : PolishError(what), dependent_(std::move(dependent))
    {
    }
    [[nodiscard]] auto dependent() const -> std::vector<std::string> const& { return dependent_; }

private:
    std::vector<std::string> dependent_;
};

struct BasisSpec {
    std::vector<Expression> basis;
    std::string target;
    /// Terms whose largest contribution is below this fraction of the
    /// dominant term's are dropped and the fit repeated. Zero disables.
    double prune_threshold{1e-12};
};

struct FitTerm {
    Expression basis;
    double coefficient{0.0};
    double max_contribution{0.0};
};

struct LinearFit {
    std::vector<FitTerm> terms;
    std::vector<Expression> pruned;
    double max_residual{0.0};
    /// Residual of the first solve, before any pruning.
    double unpruned_max_residual{0.0};

    /// Sum of coefficient * basis over the kept terms.
    [[nodiscard]] auto model() const -> Expression;
};

/// Least squares over an explicit basis: columns scaled to unit max-abs,
/// column-pivoted Householder QR, two steps of refinement with residuals
/// accumulated in double-double. Throws RankDeficientError when the terms'
/// canonical expansions are linearly dependent. Columns that are only
/// numerically dependent get a zero coefficient and are then pruned.
auto linear_fit(Dataset const& d, BasisSpec const& spec) -> LinearFit;

/// {asin(x)} and x^(1+2k) * sqrt((1 - x)*(1 + x)) for k = 0..K-2.
auto bifocal_basis(int k, std::string const& x = "x") -> std::vector<Expression>;
auto bifocal_fit(Dataset const& d, int k, std::string const& target, std::string const& x = "x") -> LinearFit;

/// CSV with columns term, coefficient (17 digits), max_contribution.
void write_fit_report(LinearFit const& fit, std::ostream& out);

struct Generator {
    std::string name; // display form, e.g. "pi", "sqrt(2)"
    Expression form;
    double value{0.0};
};

struct ConstantLibrary {
    std::vector<Generator> generators;
    int max_numerator{64};
    int max_denominator{64};
    double tolerance{1e-12}; // relative

    /// 1, pi, e, sqrt 2, sqrt 3, sqrt 5, sqrt 6, ln 2.
    static auto defaults() -> ConstantLibrary;
    void validate() const;
};

struct Identification {
    std::string text;  // "pi/6", "sqrt(3)/2", "1/4"
    Expression form;   // unevaluated p*g/q
    std::int64_t numerator{0};
    std::int64_t denominator{1};
    std::string generator;
    double value{0.0};
    double relative_error{0.0};
};

/// Candidates p/q * g within tolerance of v, ranked by denominator, then
/// relative error, then generator order.
auto identify_constant(double v, ConstantLibrary const& lib = ConstantLibrary::defaults())
    -> std::vector<Identification>;

/// Replaces each real constant, left to right, by the best identification
/// that does not worsen `metric` over all rows of `d`. Identifications at
/// the library tolerance are tried first, then looser ones (1e-6 relative)
/// which survive only through the fitness check.
auto snap_expression(Expression const& e, ConstantLibrary const& lib, Dataset const& d, std::string const& target,
                     Metric metric = Metric::MaxAbsError) -> Expression;

} // namespace srlab

#endif
