#ifndef SRLAB_DD_HPP
#define SRLAB_DD_HPP

// Double-double accumulation (error-free transforms).

#include <cmath>

namespace srlab::detail {

struct DoubleDouble {
    double hi{0.0};
    double lo{0.0};

    static auto two_sum(double a, double b) -> DoubleDouble
    {
        double s = a + b;
        double bb = s - a;
        double err = (a - (s - bb)) + (b - bb);
        return {s, err};
    }

    static auto two_prod(double a, double b) -> DoubleDouble
    {
        double p = a * b;
        return {p, std::fma(a, b, -p)};
    }

    auto operator+=(double x) -> DoubleDouble&
    {
        auto s = two_sum(hi, x);
        s.lo += lo;
        *this = two_sum(s.hi, s.lo);
        return *this;
    }

    auto operator+=(DoubleDouble const& x) -> DoubleDouble&
    {
        auto s = two_sum(hi, x.hi);
        s.lo += lo + x.lo;
        *this = two_sum(s.hi, s.lo);
        return *this;
    }

    /// Adds a * b without intermediate rounding of the product.
    void add_product(double a, double b)
    {
        auto p = two_prod(a, b);
        *this += p;
    }

    [[nodiscard]] auto value() const -> double { return hi + lo; }
};

} // namespace srlab::detail

#endif
