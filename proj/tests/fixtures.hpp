#ifndef SRLAB_TESTS_FIXTURES_HPP
#define SRLAB_TESTS_FIXTURES_HPP

#include <numbers>
#include <string>

#include "srlab/dataset.hpp"
#include "srlab/expr.hpp"

namespace srlab::testing {

// The obfuscated trigonometric input, equal to cos(x)^4*sin(4*x).
inline constexpr char const* kMessyTrig =
    "cos(x)^3*sin(x) + cos(x)^3*sin(x)/2 + 2*cos(x)^3*cos(2*x)*sin(x) + cos(x)^3*cos(4*x)*sin(x)/2"
    " - 3/2*cos(x)*sin(x)^3 - 2*cos(x)*cos(2*x)*sin(x)^3 - cos(x)*cos(4*x)*sin(x)^3/2";

inline auto trig_dataset() -> Dataset
{
    SamplePlan plan{{PlanAxis{"x", -std::numbers::pi, std::numbers::pi, UniformGrid{129}}}};
    return tabulate(parse(kMessyTrig, {"x"}), plan, "y");
}

inline auto max_dataset() -> Dataset
{
    SamplePlan plan{{PlanAxis{"x", -1.0, 1.0, UniformGrid{17}}, PlanAxis{"y", -1.0, 1.0, UniformGrid{17}}}};
    return tabulate(parse("max(x - y, 0) - max(y - x, 0)", {"x", "y"}), plan, "z");
}

inline auto floor_sqrt_dataset() -> Dataset
{
    SamplePlan plan{{PlanAxis{"x", 0.0, 25.0, UniformGrid{101}}}};
    return tabulate(parse("floor(sqrt(floor(x))) + floor(sqrt(x))", {"x"}), plan, "y");
}

// Dogbert W integrand, written so that no cancellation occurs near t = +-1:
// cos(pi t / 2) = sin(pi (1 - |t|) / 2).
inline constexpr char const* kDogbertIntegrand = "1/sqrt((1 - t)*(1 + t) + 2/pi*sin(pi*(1 - abs(t))/2))";

// Two leading endpoint terms (A + B t^2) / sqrt((1 - t)(1 + t)), with
// A = sqrt(2/3) * 23/24 and B = sqrt(2/3) / 24, and their exact antiderivative.
inline auto dogbert_request() -> QuadratureRequest
{
    QuadratureRequest req;
    std::vector<std::string> t{"t"};
    req.integrand = parse(kDogbertIntegrand, t);
    req.lower = Expression::real(0.0);
    req.upper = Expression::variable("x");
    req.tolerance = 1e-15;
    req.subtract = parse("sqrt(2/3)*(23/24 + t^2/24)/sqrt((1 - t)*(1 + t))", t);
    req.subtract_antiderivative = parse("sqrt(2/3)*(23/24*asin(t) + (asin(t) - t*sqrt((1 - t)*(1 + t)))/48)", t);
    return req;
}

inline auto dogbert_dataset() -> Dataset
{
    PlanAxis axis{"x", -1.0, 1.0, UniformGrid{129}};
    auto xs = axis.points();
    return quadrature(dogbert_request(), xs, "W");
}

} // namespace srlab::testing

#endif
