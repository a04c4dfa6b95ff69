#ifndef SRLAB_REWRITE_HPP
#define SRLAB_REWRITE_HPP

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "srlab/expr.hpp"

namespace srlab {

class Dataset;

class RewriteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RewriteReport {
    Expression input;
    Expression output;
    std::vector<std::string> rules; // names of the rules that fired, sorted
    std::int64_t complexity_before{0};
    std::int64_t complexity_after{0};
};

/// Expands integer powers and products of sums (guarded against blow-up),
/// folds numeric sub-expressions, sorts and collects similar terms and
/// factors, and applies identities such as abs(abs(u)) -> abs(u) and
/// 1*u -> u. The result is a fixed point of this function.
auto canonicalize(Expression const& e) -> Expression;
auto canonicalize_report(Expression const& e, ComplexityProfile const& p = ComplexityProfile::defaults())
    -> RewriteReport;

/// canonicalize plus angle reduction inside sin/cos: additive constants are
/// reduced modulo 2*pi into (-pi, pi] (offsets below 1e-9 vanish), and a
/// negative leading argument term is pulled out using odd/even symmetry.
auto fold_angle(Expression const& e) -> Expression;

/// Nested-multiplication form of a polynomial in `precedence` (outermost
/// variable first) whose coefficients may be arbitrary expressions in other
/// variables. Throws RewriteError when `e` is not polynomial in them.
auto hornerize(Expression const& e, std::vector<std::string> const& precedence) -> Expression;

/// Rounds constants for display. Without data every constant is rounded to
/// `digits` significant digits. With data, the coefficient of each top-level
/// term is rounded relative to that term's largest contribution over the
/// rows: a term whose contribution is 10^-k of the dominant one keeps k fewer
/// digits, and terms below the dominant term's last displayed digit vanish.
auto round_for_display(Expression const& e, int digits, Dataset const* data = nullptr) -> Expression;

/// Top-level additive terms of a canonical expression, constant term first.
auto canonical_terms(Expression const& e) -> std::vector<Expression>;

/// The same terms split into (coefficient, unit-coefficient monomial).
auto canonical_monomials(Expression const& e) -> std::vector<std::pair<double, Expression>>;

} // namespace srlab

#endif
