#include "srlab/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "dd.hpp"

namespace srlab {

Dataset::Dataset(std::vector<Column> columns) : columns_(std::move(columns))
{
    if (columns_.empty()) { throw DataError("dataset has no columns"); }
    std::set<std::string> seen;
    auto const n = columns_.front().values.size();
    for (auto const& c : columns_) {
        if (c.name.empty()) { throw DataError("empty column name"); }
        if (!seen.insert(c.name).second) { throw DataError("duplicate column name '" + c.name + "'"); }
        if (c.values.size() != n) { throw DataError("column '" + c.name + "' has a different length"); }
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(c.values[i])) {
                throw DataError("non-finite value in column '" + c.name + "' at row " + std::to_string(i + 1));
            }
        }
    }
    if (n < 2) { throw DataError(n == 0 ? "no rows" : "dataset needs at least 2 rows"); }
}

auto Dataset::names() const -> std::vector<std::string>
{
    std::vector<std::string> out;
    out.reserve(columns_.size());
    for (auto const& c : columns_) { out.push_back(c.name); }
    return out;
}

auto Dataset::has(std::string_view name) const -> bool
{
    return std::ranges::any_of(columns_, [&](auto const& c) { return c.name == name; });
}

auto Dataset::column(std::string_view name) const -> std::vector<double> const&
{
    for (auto const& c : columns_) {
        if (c.name == name) { return c.values; }
    }
    throw DataError("missing column '" + std::string(name) + "'");
}

auto Dataset::views() const -> std::vector<std::span<double const>>
{
    std::vector<std::span<double const>> v;
    v.reserve(columns_.size());
    for (auto const& c : columns_) { v.emplace_back(c.values); }
    return v;
}

auto Dataset::with_column(Column c) const -> Dataset
{
    auto cols = columns_;
    cols.push_back(std::move(c));
    return Dataset(std::move(cols));
}

auto Dataset::select_rows(std::span<std::size_t const> idx) const -> Dataset
{
    std::vector<Column> cols;
    for (auto const& c : columns_) {
        Column nc{c.name, {}};
        nc.values.reserve(idx.size());
        for (auto i : idx) { nc.values.push_back(c.values.at(i)); }
        cols.push_back(std::move(nc));
    }
    return Dataset(std::move(cols));
}

auto operator==(Dataset const& a, Dataset const& b) -> bool
{
    if (a.columns_.size() != b.columns_.size()) { return false; }
    for (std::size_t j = 0; j < a.columns_.size(); ++j) {
        auto const& x = a.columns_[j];
        auto const& y = b.columns_[j];
        if (x.name != y.name || x.values.size() != y.values.size()) { return false; }
        for (std::size_t i = 0; i < x.values.size(); ++i) {
            if (std::bit_cast<std::uint64_t>(x.values[i]) != std::bit_cast<std::uint64_t>(y.values[i])) { return false; }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// CSV

namespace {
auto trim(std::string_view s) -> std::string_view
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) { s.remove_prefix(1); }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) { s.remove_suffix(1); }
    return s;
}

auto split(std::string_view line) -> std::vector<std::string_view>
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto p = line.find(',', start);
        out.push_back(trim(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
        if (p == std::string_view::npos) { break; }
        start = p + 1;
    }
    return out;
}

auto parse_cell(std::string_view cell, double& v) -> bool
{
    if (!cell.empty() && cell.front() == '+') { cell.remove_prefix(1); }
    if (cell.empty()) { return false; }
    // from_chars accepts "inf"/"nan"; data cells must be finite decimals
    for (char c : cell) {
        if (std::isdigit(static_cast<unsigned char>(c)) == 0 && c != '.' && c != '-' && c != 'e' && c != 'E' && c != '+') {
            return false;
        }
    }
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v, std::chars_format::general);
    return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(v);
}
} // namespace

auto read_csv(std::istream& in) -> Dataset
{
    std::string line;
    std::size_t lineno = 0;
    std::vector<Column> cols;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) { line.erase(0, 3); }
        if (trim(line).empty()) { continue; }
        auto cells = split(line);
        if (cols.empty()) {
            for (auto c : cells) {
                if (c.empty()) { throw DataError("line " + std::to_string(lineno) + ": empty column name in header"); }
                cols.push_back(Column{std::string(c), {}});
            }
            continue;
        }
        if (cells.size() != cols.size()) {
            throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(cols.size()) + " cells, found "
                            + std::to_string(cells.size()));
        }
        std::size_t const row = cols.front().values.size() + 1;
        for (std::size_t j = 0; j < cells.size(); ++j) {
            double v{};
            if (!parse_cell(cells[j], v)) {
                throw DataError("row " + std::to_string(row) + ", column '" + cols[j].name + "': cell '"
                                + std::string(cells[j]) + "' is not a finite decimal number");
            }
            cols[j].values.push_back(v);
        }
    }
    if (cols.empty()) { throw DataError("missing header row"); }
    if (cols.front().values.empty()) { throw DataError("no rows"); }
    return Dataset(std::move(cols));
}

auto import_csv(std::filesystem::path const& path) -> Dataset
{
    std::ifstream in(path);
    if (!in) { throw DataError("cannot open '" + path.string() + "'"); }
    return read_csv(in);
}

void write_csv(Dataset const& d, std::ostream& out, int digits)
{
    digits = std::clamp(digits, 1, 17);
    auto const& cols = d.columns();
    for (std::size_t j = 0; j < cols.size(); ++j) { out << (j ? "," : "") << cols[j].name; }
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < d.rows(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.*g", digits, cols[j].values[i]);
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

void export_csv(Dataset const& d, std::filesystem::path const& path, int digits)
{
    std::ofstream out(path);
    if (!out) { throw DataError("cannot write '" + path.string() + "'"); }
    write_csv(d, out, digits);
}

// ---------------------------------------------------------------------------
// sample plans

auto PlanAxis::points() const -> std::vector<double>
{
    std::vector<double> pts;
    if (auto const* g = std::get_if<UniformGrid>(&strategy)) {
        if (g->count < 2) { throw DataError("axis '" + name + "' needs at least 2 points"); }
        auto const m = static_cast<double>(g->count - 1);
        for (std::size_t i = 0; i < g->count; ++i) {
            auto const k = static_cast<double>(i);
            // one rounding per point; symmetric plans give exactly mirrored points
            pts.push_back((low * (m - k) + high * k) / m);
        }
    } else if (auto const* c = std::get_if<ChebyshevNodes>(&strategy)) {
        if (c->count < 2) { throw DataError("axis '" + name + "' needs at least 2 points"); }
        double const mid = 0.5 * (low + high);
        double const half = 0.5 * (high - low);
        auto const n = static_cast<double>(c->count);
        for (std::size_t i = 0; i < c->count; ++i) {
            auto const k = static_cast<double>(c->count - 1 - i);
            pts.push_back(mid + half * std::cos(std::numbers::pi * (2.0 * k + 1.0) / (2.0 * n)));
        }
    } else {
        pts = std::get<ExplicitValues>(strategy).values;
        if (pts.size() < 2) { throw DataError("axis '" + name + "' needs at least 2 points"); }
    }
    return pts;
}

auto SamplePlan::size() const -> std::size_t
{
    std::size_t n = 1;
    for (auto const& a : axes) { n *= a.points().size(); }
    return n;
}

auto SamplePlan::grid() const -> Dataset
{
    if (axes.empty()) { throw DataError("sample plan has no variables"); }
    std::vector<std::vector<double>> pts;
    for (auto const& a : axes) { pts.push_back(a.points()); }
    std::size_t total = 1;
    for (auto const& p : pts) { total *= p.size(); }
    std::vector<Column> cols;
    for (auto const& a : axes) { cols.push_back(Column{a.name, std::vector<double>(total)}); }
    // row-major, last axis fastest
    std::size_t stride = total;
    for (std::size_t j = 0; j < axes.size(); ++j) {
        stride /= pts[j].size();
        for (std::size_t r = 0; r < total; ++r) { cols[j].values[r] = pts[j][(r / stride) % pts[j].size()]; }
    }
    return Dataset(std::move(cols));
}

namespace {
auto describe_bad_rows(Dataset const& d, std::vector<double> const& values) -> std::string
{
    std::ostringstream os;
    std::size_t shown = 0;
    std::size_t bad = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (std::isfinite(values[i])) { continue; }
        ++bad;
        if (shown < 5) {
            os << (shown ? "; " : "") << "row " << i + 1 << " (";
            bool first = true;
            for (auto const& c : d.columns()) {
                os << (first ? "" : ", ") << c.name << "=" << c.values[i];
                first = false;
            }
            os << ")";
            ++shown;
        }
    }
    if (bad > shown) { os << "; and " << bad - shown << " more"; }
    return os.str();
}
} // namespace

auto tabulate(Expression const& e, SamplePlan const& plan, std::string const& target) -> Dataset
{
    auto g = plan.grid();
    for (auto const& v : e.variables()) {
        if (!g.has(v)) { throw DataError("expression variable '" + v + "' is not in the sample plan"); }
    }
    auto r = evaluate_batch(e, g);
    if (!r.valid) { throw DataError("expression is not real and finite at: " + describe_bad_rows(g, r.values)); }
    return g.with_column(Column{target, std::move(r.values)});
}

auto derive_column(Dataset const& d, std::string const& name, Expression const& e) -> Dataset
{
    if (d.has(name)) { throw DataError("column '" + name + "' already exists"); }
    for (auto const& v : e.variables()) {
        if (!d.has(v)) { throw DataError("missing column '" + v + "'"); }
    }
    auto r = evaluate_batch(e, d);
    if (!r.valid) { throw DataError("derived column '" + name + "' is not real and finite at: " + describe_bad_rows(d, r.values)); }
    return d.with_column(Column{name, std::move(r.values)});
}

auto chebyshev_columns(Dataset const& d, std::string const& variable, std::size_t count, bool rescale) -> Dataset
{
    if (count == 0) { throw DataError("chebyshev column count must be positive"); }
    auto x = d.column(variable);
    auto [mn, mx] = std::ranges::minmax_element(x);
    double const lo = *mn;
    double const hi = *mx;
    if (rescale) {
        if (hi == lo) { throw DataError("cannot rescale a constant column"); }
        for (auto& v : x) { v = (2.0 * v - (lo + hi)) / (hi - lo); }
    } else if (lo < -1.0 || hi > 1.0) {
        throw DataError("column '" + variable + "' has values outside [-1, 1]; enable rescaling");
    }
    auto out = d;
    std::vector<double> prev(x.size(), 1.0);
    std::vector<double> cur = x;
    for (std::size_t k = 0; k < count; ++k) {
        std::string name = "T" + std::to_string(k);
        if (k == 0) {
            out = out.with_column(Column{name, prev});
        } else if (k == 1) {
            out = out.with_column(Column{name, cur});
        } else {
            std::vector<double> next(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) { next[i] = 2.0 * x[i] * cur[i] - prev[i]; }
            prev = std::move(cur);
            cur = std::move(next);
            out = out.with_column(Column{name, cur});
        }
    }
    return out;
}

auto trapezoid_integral(Dataset const& d, std::string const& y, std::string const& x) -> std::vector<double>
{
    auto const& ys = d.column(y);
    auto const& xs = d.column(x);
    for (std::size_t i = 1; i < xs.size(); ++i) {
        if (xs[i] < xs[i - 1]) { throw DataError("column '" + x + "' is not monotone increasing"); }
    }
    using detail::DoubleDouble;
    std::vector<double> out(xs.size(), 0.0);
    DoubleDouble acc;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        auto h = DoubleDouble::two_sum(xs[i], -xs[i - 1]);
        auto s = DoubleDouble::two_sum(ys[i], ys[i - 1]);
        auto p = DoubleDouble::two_prod(h.hi, s.hi);
        p.lo += h.hi * s.lo + h.lo * s.hi;
        acc += DoubleDouble{0.5 * p.hi, 0.5 * p.lo};
        out[i] = acc.value();
    }
    return out;
}

} // namespace srlab
