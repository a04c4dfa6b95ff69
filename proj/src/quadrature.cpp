// Globally adaptive 10-point Gauss / 21-point Kronrod quadrature with
// double-double accumulation and optional singularity subtraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>

#include "dd.hpp"
#include "srlab/dataset.hpp"

namespace srlab {

namespace {

// Kronrod abscissae (descending, last is the centre) and weights; Gauss
// weights apply to the odd-indexed abscissae.
constexpr std::array<double, 11> kXgk{
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452, 0.930157491355708226001207180059508,
    0.865063366688984510732096688423493, 0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784, 0.294392862701460198131126603103866,
    0.148874338981631210884826001129720, 0.000000000000000000000000000000000};
constexpr std::array<double, 11> kWgk{
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390, 0.054755896574351996031381300244580,
    0.075039674810919952767043140916190, 0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077958109831074, 0.134709217311473325928054001771707, 0.142775938577060080797094273138717,
    0.147739104901338491374841515972068, 0.149445554002916905664936468389821};
constexpr std::array<double, 5> kWg{0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
                                    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
                                    0.295524224714752870173892994651338};

struct Segment {
    double a;
    double b;
    detail::DoubleDouble value;
    double error;
    bool frozen;

    auto operator<(Segment const& o) const -> bool { return error < o.error; }
};

class Integrand {
public:
    explicit Integrand(QuadratureRequest const& req) : req_(req) {}

    auto operator()(double t) const -> double
    {
        row_[req_.variable] = t;
        auto f = evaluate(req_.integrand, row_);
        if (!f || !std::isfinite(*f)) { throw QuadratureError("integrand is not real and finite at t = " + std::to_string(t)); }
        if (!req_.subtract) { return *f; }
        auto g = evaluate(*req_.subtract, row_);
        if (!g || !std::isfinite(*g)) {
            throw QuadratureError("subtraction term is not real and finite at t = " + std::to_string(t));
        }
        return *f - *g;
    }

private:
    QuadratureRequest const& req_;
    mutable Bindings row_;
};

auto gauss_kronrod(Integrand const& f, double a, double b) -> Segment
{
    double const c = 0.5 * (a + b);
    double const h = 0.5 * (b - a);
    detail::DoubleDouble k;
    detail::DoubleDouble g;
    double const fc = f(c);
    k.add_product(kWgk[10], fc);
    for (std::size_t j = 0; j < 10; ++j) {
        double const dx = h * kXgk[j];
        double const f1 = f(c - dx);
        double const f2 = f(c + dx);
        auto s = detail::DoubleDouble::two_sum(f1, f2);
        k.add_product(kWgk[j], s.hi);
        k.add_product(kWgk[j], s.lo);
        if (j % 2 == 1) {
            g.add_product(kWg[j / 2], s.hi);
            g.add_product(kWg[j / 2], s.lo);
        }
    }
    detail::DoubleDouble kv;
    kv.add_product(k.hi, h);
    kv.add_product(k.lo, h);
    double const err = std::fabs((k.value() - g.value()) * h);
    bool const frozen = !(c > a && c < b);
    return Segment{a, b, kv, err, frozen};
}

auto integrate_interval(Integrand const& f, double a, double b, double tol, std::size_t budget)
    -> std::pair<detail::DoubleDouble, std::pair<double, std::size_t>>
{
    if (a == b) { return {{}, {0.0, 0}}; }
    std::priority_queue<Segment> heap;
    heap.push(gauss_kronrod(f, a, b));
    std::vector<Segment> done;
    auto total_error = [&] {
        double e = 0.0;
        auto copy = heap;
        while (!copy.empty()) {
            e += copy.top().error;
            copy.pop();
        }
        for (auto const& s : done) { e += s.error; }
        return e;
    };
    double err = heap.top().error;
    std::size_t count = 1;
    while (err > tol && !heap.empty()) {
        if (count >= budget) {
            throw QuadratureError("no convergence within " + std::to_string(budget) + " subdivisions (error estimate "
                                  + std::to_string(err) + ")");
        }
        auto worst = heap.top();
        heap.pop();
        if (worst.frozen) {
            done.push_back(worst);
        } else {
            double const mid = 0.5 * (worst.a + worst.b);
            heap.push(gauss_kronrod(f, worst.a, mid));
            heap.push(gauss_kronrod(f, mid, worst.b));
            ++count;
        }
        err = total_error();
        if (heap.empty()) { break; }
    }
    if (err > tol) { throw QuadratureError("error estimate " + std::to_string(err) + " exceeds tolerance"); }
    detail::DoubleDouble sum;
    std::vector<Segment> all;
    while (!heap.empty()) {
        all.push_back(heap.top());
        heap.pop();
    }
    all.insert(all.end(), done.begin(), done.end());
    // fixed summation order keeps results independent of heap internals
    std::ranges::sort(all, [](auto const& l, auto const& r) { return l.a < r.a; });
    for (auto const& s : all) { sum += s.value; }
    return {sum, {err, count}};
}

auto eval_bound(Expression const& e, std::string const& var, double x) -> double
{
    Bindings row{{var, x}};
    auto v = evaluate(e, row);
    if (!v || !std::isfinite(*v)) { throw QuadratureError("integration bound is not real at x = " + std::to_string(x)); }
    return *v;
}

} // namespace

auto integrate(QuadratureRequest const& req, double x) -> QuadratureValue
{
    if (!(req.tolerance > 0.0)) { throw QuadratureError("tolerance must be positive"); }
    if (req.subtract.has_value() != req.subtract_antiderivative.has_value()) {
        throw QuadratureError("a subtraction term needs its exact antiderivative");
    }
    double const lo = eval_bound(req.lower, req.bound_variable, x);
    double const hi = eval_bound(req.upper, req.bound_variable, x);
    Integrand f(req);
    auto [sum, info] = integrate_interval(f, std::min(lo, hi), std::max(lo, hi), req.tolerance, req.max_subdivisions);
    if (hi < lo) { sum = detail::DoubleDouble{-sum.hi, -sum.lo}; }
    if (req.subtract_antiderivative) {
        Bindings row;
        row[req.variable] = hi;
        auto gh = evaluate(*req.subtract_antiderivative, row);
        row[req.variable] = lo;
        auto gl = evaluate(*req.subtract_antiderivative, row);
        if (!gh || !gl) { throw QuadratureError("antiderivative of the subtraction term is not real at the bounds"); }
        sum += *gh;
        sum += -*gl;
    }
    return QuadratureValue{sum.value(), info.first, info.second};
}

auto quadrature(QuadratureRequest const& req, std::span<double const> xs, std::string const& target) -> Dataset
{
    std::vector<double> values;
    values.reserve(xs.size());
    for (double x : xs) { values.push_back(integrate(req, x).value); }
    return Dataset({Column{req.bound_variable, {xs.begin(), xs.end()}}, Column{target, std::move(values)}});
}

} // namespace srlab
