#ifndef SRLAB_DATASET_HPP
#define SRLAB_DATASET_HPP

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "srlab/expr.hpp"

namespace srlab {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Column {
    std::string name;
    std::vector<double> values;
};

/// Named numeric columns of equal length (>= 2 rows). All values finite.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<Column> columns);

    [[nodiscard]] auto rows() const noexcept -> std::size_t { return columns_.empty() ? 0 : columns_.front().values.size(); }
    [[nodiscard]] auto cols() const noexcept -> std::size_t { return columns_.size(); }
    [[nodiscard]] auto columns() const noexcept -> std::vector<Column> const& { return columns_; }
    [[nodiscard]] auto names() const -> std::vector<std::string>;
    [[nodiscard]] auto has(std::string_view name) const -> bool;
    [[nodiscard]] auto column(std::string_view name) const -> std::vector<double> const&;
    [[nodiscard]] auto views() const -> std::vector<std::span<double const>>;

    /// Copy with one more column appended.
    [[nodiscard]] auto with_column(Column c) const -> Dataset;
    /// Copy restricted to the given row indices.
    [[nodiscard]] auto select_rows(std::span<std::size_t const> idx) const -> Dataset;

    friend auto operator==(Dataset const& a, Dataset const& b) -> bool;

private:
    std::vector<Column> columns_;
};

// ---------------------------------------------------------------------------
// CSV

auto read_csv(std::istream& in) -> Dataset;
auto import_csv(std::filesystem::path const& path) -> Dataset;
void write_csv(Dataset const& d, std::ostream& out, int digits = 17);
void export_csv(Dataset const& d, std::filesystem::path const& path, int digits = 17);

// ---------------------------------------------------------------------------
// sample plans

struct UniformGrid {
    std::size_t count;
};
struct ChebyshevNodes {
    std::size_t count;
};
struct ExplicitValues {
    std::vector<double> values;
};

struct PlanAxis {
    std::string name;
    double low{0.0};
    double high{1.0};
    std::variant<UniformGrid, ChebyshevNodes, ExplicitValues> strategy{UniformGrid{2}};

    [[nodiscard]] auto points() const -> std::vector<double>;
};

/// Cartesian product of per-variable samples; the last axis varies fastest.
struct SamplePlan {
    std::vector<PlanAxis> axes;

    [[nodiscard]] auto size() const -> std::size_t;
    [[nodiscard]] auto grid() const -> Dataset;
};

/// Samples `e` over the plan. The dependent column is named `target`.
auto tabulate(Expression const& e, SamplePlan const& plan, std::string const& target = "y") -> Dataset;

auto derive_column(Dataset const& d, std::string const& name, Expression const& e) -> Dataset;

/// Appends T_0..T_{count-1} of column `variable` (named T0, T1, ...). With
/// `rescale`, values are first mapped affinely from [min, max] onto [-1, 1].
auto chebyshev_columns(Dataset const& d, std::string const& variable, std::size_t count, bool rescale = false) -> Dataset;

/// n-th derivative (n = 1 or 2) of a cubic smoothing spline through (x, y),
/// evaluated at the samples. The smoothing weight is chosen by generalized
/// cross-validation.
auto spline_derivative(Dataset const& d, std::string const& y, std::string const& x, int order) -> std::vector<double>;

/// Cumulative trapezoidal integral, 0 at the first row.
auto trapezoid_integral(Dataset const& d, std::string const& y, std::string const& x) -> std::vector<double>;

// ---------------------------------------------------------------------------
// quadrature

struct QuadratureRequest {
    Expression integrand;          // in variable `t`
    Expression lower;              // in `x`, or a constant
    Expression upper;              // in `x`, or a constant
    double tolerance{1e-15};       // absolute
    /// Optional singular part g(t) removed before integrating; its exact
    /// antiderivative G(t) is added back as G(upper) - G(lower).
    std::optional<Expression> subtract;
    std::optional<Expression> subtract_antiderivative;
    std::size_t max_subdivisions{4000};
    std::string variable{"t"};
    std::string bound_variable{"x"};
};

class QuadratureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct QuadratureValue {
    double value;
    double error_estimate;
    std::size_t intervals;
};

auto integrate(QuadratureRequest const& req, double x) -> QuadratureValue;

/// Columns `bound_variable` and `target`, one row per x value.
auto quadrature(QuadratureRequest const& req, std::span<double const> xs, std::string const& target = "y") -> Dataset;

} // namespace srlab

#endif
