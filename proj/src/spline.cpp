// Cubic smoothing spline (Reinsch form) with GCV choice of the roughness
// penalty, used for numerical differentiation of tabulated data.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "srlab/dataset.hpp"

namespace srlab {

namespace {

// Symmetric pentadiagonal matrix stored by diagonals.
struct Penta {
    std::vector<double> d0, d1, d2; // main, first and second super-diagonals
};

struct SplineSystem {
    std::vector<double> h;  // knot spacing, n - 1
    Penta r;                // R, tridiagonal (d2 unused)
    Penta qtq;              // Q^T Q
    std::vector<double> qty; // Q^T y

    [[nodiscard]] auto m() const -> std::size_t { return qty.size(); }
};

auto build(std::vector<double> const& x, std::vector<double> const& y) -> SplineSystem
{
    std::size_t const n = x.size();
    std::size_t const m = n - 2;
    SplineSystem s;
    s.h.resize(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) { s.h[i] = x[i + 1] - x[i]; }
    s.r.d0.assign(m, 0.0);
    s.r.d1.assign(m, 0.0);
    s.r.d2.assign(m, 0.0);
    s.qtq.d0.assign(m, 0.0);
    s.qtq.d1.assign(m, 0.0);
    s.qtq.d2.assign(m, 0.0);
    s.qty.assign(m, 0.0);
    // column j of Q (interior knot j + 1) has entries a_j, b_j, c_j on rows j, j + 1, j + 2
    std::vector<double> a(m), b(m), c(m);
    for (std::size_t j = 0; j < m; ++j) {
        double const hl = s.h[j];
        double const hr = s.h[j + 1];
        a[j] = 1.0 / hl;
        b[j] = -1.0 / hl - 1.0 / hr;
        c[j] = 1.0 / hr;
        s.r.d0[j] = (hl + hr) / 3.0;
        if (j + 1 < m) { s.r.d1[j] = hr / 6.0; }
        s.qty[j] = (y[j + 2] - y[j + 1]) / hr - (y[j + 1] - y[j]) / hl;
    }
    for (std::size_t j = 0; j < m; ++j) {
        s.qtq.d0[j] = a[j] * a[j] + b[j] * b[j] + c[j] * c[j];
        if (j + 1 < m) { s.qtq.d1[j] = b[j] * a[j + 1] + c[j] * b[j + 1]; }
        if (j + 2 < m) { s.qtq.d2[j] = c[j] * a[j + 2]; }
    }
    return s;
}

struct Fit {
    std::vector<double> g;     // fitted values
    std::vector<double> gamma; // second derivatives at knots
    double gcv;
};

// Solves (R + lambda Q^T Q) gamma = Q^T y by LDL^T and evaluates the GCV score.
auto solve(SplineSystem const& s, std::vector<double> const& y, double lambda) -> Fit
{
    std::size_t const m = s.m();
    std::size_t const n = y.size();
    std::vector<double> d0(m), d1(m), d2(m);
    for (std::size_t i = 0; i < m; ++i) {
        d0[i] = s.r.d0[i] + lambda * s.qtq.d0[i];
        d1[i] = s.r.d1[i] + lambda * s.qtq.d1[i];
        d2[i] = s.qtq.d2[i] * lambda;
    }
    std::vector<double> dg(m), l1(m, 0.0), l2(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double di = d0[i];
        if (i >= 1) { di -= l1[i - 1] * l1[i - 1] * dg[i - 1]; }
        if (i >= 2) { di -= l2[i - 2] * l2[i - 2] * dg[i - 2]; }
        dg[i] = di;
        if (i + 1 < m) {
            double v = d1[i];
            if (i >= 1) { v -= l2[i - 1] * l1[i - 1] * dg[i - 1]; }
            l1[i] = v / di;
        }
        if (i + 2 < m) { l2[i] = d2[i] / di; }
    }
    // forward, diagonal, backward substitution
    std::vector<double> z = s.qty;
    for (std::size_t i = 0; i < m; ++i) {
        if (i >= 1) { z[i] -= l1[i - 1] * z[i - 1]; }
        if (i >= 2) { z[i] -= l2[i - 2] * z[i - 2]; }
    }
    for (std::size_t i = 0; i < m; ++i) { z[i] /= dg[i]; }
    for (std::size_t k = m; k-- > 0;) {
        if (k + 1 < m) { z[k] -= l1[k] * z[k + 1]; }
        if (k + 2 < m) { z[k] -= l2[k] * z[k + 2]; }
    }
    Fit f;
    f.gamma.assign(n, 0.0);
    for (std::size_t j = 0; j < m; ++j) { f.gamma[j + 1] = z[j]; }
    f.g = y;
    for (std::size_t j = 0; j < m; ++j) {
        double const hl = s.h[j];
        double const hr = s.h[j + 1];
        f.g[j] -= lambda * z[j] / hl;
        f.g[j + 1] -= lambda * z[j] * (-1.0 / hl - 1.0 / hr);
        f.g[j + 2] -= lambda * z[j] / hr;
    }
    // central band of the inverse (Hutchinson & de Hoog recursion)
    std::vector<double> s0(m), s1(m, 0.0), s2(m, 0.0);
    for (std::size_t k = m; k-- > 0;) {
        double const a1 = k + 1 < m ? l1[k] : 0.0;
        double const a2 = k + 2 < m ? l2[k] : 0.0;
        double const sk1k1 = k + 1 < m ? s0[k + 1] : 0.0;
        double const sk1k2 = k + 2 < m ? s1[k + 1] : 0.0;
        double const sk2k2 = k + 2 < m ? s0[k + 2] : 0.0;
        if (k + 2 < m) { s2[k] = -a1 * sk1k2 - a2 * sk2k2; }
        if (k + 1 < m) { s1[k] = -a1 * sk1k1 - a2 * sk1k2; }
        s0[k] = 1.0 / dg[k] - a1 * s1[k] - a2 * s2[k];
    }
    double tr = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        tr += s0[i] * s.qtq.d0[i];
        if (i + 1 < m) { tr += 2.0 * s1[i] * s.qtq.d1[i]; }
        if (i + 2 < m) { tr += 2.0 * s2[i] * s.qtq.d2[i]; }
    }
    double const df_res = lambda * tr; // n - trace(A)
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) { rss += (y[i] - f.g[i]) * (y[i] - f.g[i]); }
    auto const nn = static_cast<double>(n);
    f.gcv = df_res > 0.0 ? nn * rss / (df_res * df_res) : std::numeric_limits<double>::infinity();
    return f;
}

} // namespace

auto spline_derivative(Dataset const& d, std::string const& ycol, std::string const& xcol, int order) -> std::vector<double>
{
    if (order != 1 && order != 2) { throw DataError("spline derivative order must be 1 or 2"); }
    auto const& x = d.column(xcol);
    auto y = d.column(ycol);
    std::size_t const n = x.size();
    if (n < 5) { throw DataError("spline derivative needs at least 5 points"); }
    bool const increasing = x[1] > x[0];
    for (std::size_t i = 1; i < n; ++i) {
        if (increasing ? !(x[i] > x[i - 1]) : !(x[i] < x[i - 1])) {
            throw DataError("column '" + xcol + "' is not strictly monotone");
        }
    }
    std::vector<double> xs = x;
    if (!increasing) {
        std::ranges::reverse(xs);
        std::ranges::reverse(y);
    }
    auto const sys = build(xs, y);
    double trr = 0.0;
    double trq = 0.0;
    for (std::size_t i = 0; i < sys.m(); ++i) {
        trr += sys.r.d0[i];
        trq += sys.qtq.d0[i];
    }
    double const scale = trr / trq;

    // coarse scan of log10(lambda / scale), then golden-section refinement
    constexpr double lo = -12.0;
    constexpr double hi = 4.0;
    constexpr int steps = 64;
    double best_p = lo;
    double best_v = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= steps; ++k) {
        double p = lo + (hi - lo) * k / steps;
        double v = solve(sys, y, scale * std::pow(10.0, p)).gcv;
        if (v < best_v) {
            best_v = v;
            best_p = p;
        }
    }
    double a = std::max(lo, best_p - (hi - lo) / steps);
    double b = std::min(hi, best_p + (hi - lo) / steps);
    constexpr double phi = 0.6180339887498949;
    double c1 = b - phi * (b - a);
    double c2 = a + phi * (b - a);
    double v1 = solve(sys, y, scale * std::pow(10.0, c1)).gcv;
    double v2 = solve(sys, y, scale * std::pow(10.0, c2)).gcv;
    for (int it = 0; it < 40; ++it) {
        if (v1 < v2) {
            b = c2;
            c2 = c1;
            v2 = v1;
            c1 = b - phi * (b - a);
            v1 = solve(sys, y, scale * std::pow(10.0, c1)).gcv;
        } else {
            a = c1;
            c1 = c2;
            v1 = v2;
            c2 = a + phi * (b - a);
            v2 = solve(sys, y, scale * std::pow(10.0, c2)).gcv;
        }
    }
    double p = v1 < v2 ? c1 : c2;
    if (best_v < std::min(v1, v2)) { p = best_p; }
    auto const fit = solve(sys, y, scale * std::pow(10.0, p));

    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (order == 2) {
            out[i] = fit.gamma[i];
            continue;
        }
        if (i + 1 < n) {
            double const h = sys.h[i];
            out[i] = (fit.g[i + 1] - fit.g[i]) / h - h * (2.0 * fit.gamma[i] + fit.gamma[i + 1]) / 6.0;
        } else {
            double const h = sys.h[i - 1];
            out[i] = (fit.g[i] - fit.g[i - 1]) / h + h * (fit.gamma[i - 1] + 2.0 * fit.gamma[i]) / 6.0;
        }
    }
    if (!increasing) {
        std::ranges::reverse(out);
        // d/dx is unchanged by reversing the sample order
    }
    return out;
}

} // namespace srlab
