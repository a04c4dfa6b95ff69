#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "srlab/polish.hpp"
#include "srlab/rewrite.hpp"

using namespace srlab;

namespace {

// x^j * asin(x)^k for odd total degree up to max_degree.
auto monomial_asin_basis(int max_degree) -> std::vector<Expression>
{
    std::vector<Expression> out;
    for (int d = 1; d <= max_degree; d += 2) {
        for (int j = 0; j <= d; ++j) {
            out.push_back(parse("x^" + std::to_string(j) + "*asin(x)^" + std::to_string(d - j), {"x"}));
        }
    }
    return out;
}

auto w_data() -> Dataset const&
{
    static Dataset const d = testing::dogbert_dataset();
    return d;
}

auto seconds_since(std::chrono::steady_clock::time_point t) -> double
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

auto fitted_scale(Dataset const& d, std::string const& target) -> double
{
    double m = 0.0;
    for (double v : d.column(target)) { m = std::max(m, std::fabs(v)); }
    return m;
}

// Every p/q*g within tolerance, found by scanning all numerators.
auto brute_force_matches(double v, ConstantLibrary const& lib) -> std::size_t
{
    std::size_t n = 0;
    for (auto const& g : lib.generators) {
        for (int q = 1; q <= lib.max_denominator; ++q) {
            for (int p = -lib.max_numerator; p <= lib.max_numerator; ++p) {
                if (p == 0 || std::gcd(p, q) != 1) { continue; }
                double const c = p * g.value / q;
                if (std::fabs(c - v) <= lib.tolerance * std::fabs(v)) { ++n; }
            }
        }
    }
    return n;
}

} // namespace

TEST_CASE("linear fit on exact data")
{
    SamplePlan plan{{PlanAxis{"x", -1.0, 2.0, UniformGrid{31}}}};
    auto const d = tabulate(parse("2*x + 1", {"x"}), plan, "y");
    auto const fit = linear_fit(d, {{Expression::integer(1), Expression::variable("x")}, "y"});
    REQUIRE(fit.terms.size() == 2);
    CHECK(fit.terms[0].coefficient == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(fit.terms[1].coefficient == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(fit.max_residual <= 1e-14);
    CHECK(*evaluate(fit.model(), {{"x", 0.5}}) == doctest::Approx(2.0));

    std::ostringstream csv;
    write_fit_report(fit, csv);
    CHECK(csv.str().starts_with("term,coefficient,max_contribution\n\"1\","));
}

TEST_CASE("linear fit errors")
{
    SamplePlan plan{{PlanAxis{"x", 0.0, 1.0, UniformGrid{11}}}};
    auto const d = tabulate(parse("x^2", {"x"}), plan, "y");
    std::vector<std::string> v{"x"};
    SUBCASE("dependent terms are named")
    {
        try {
            (void)linear_fit(d, {{parse("x", v), parse("x^2", v), parse("3*x - x^2", v)}, "y"});
            FAIL("expected a rank-deficiency error");
        } catch (RankDeficientError const& e) {
            REQUIRE(e.dependent().size() == 1);
        }
        CHECK_THROWS_AS(linear_fit(d, {{parse("x", v), parse("2*x", v)}, "y"}), RankDeficientError);
    }
    SUBCASE("too few rows, invalid terms, empty basis")
    {
        std::vector<Expression> many;
        for (int k = 1; k <= 12; ++k) { many.push_back(parse("x^" + std::to_string(k), v)); }
        CHECK_THROWS_AS(linear_fit(d, {many, "y"}), PolishError);
        CHECK_THROWS_AS(linear_fit(d, {{parse("log(x)", v)}, "y"}), PolishError);
        CHECK_THROWS_AS(linear_fit(d, {{}, "y"}), PolishError);
        CHECK_THROWS_AS(linear_fit(d, {{parse("x", v)}, "nope"}), PolishError);
    }
}

TEST_CASE("pruning drops negligible terms")
{
    SamplePlan plan{{PlanAxis{"x", -1.0, 1.0, UniformGrid{41}}}};
    auto const d = tabulate(parse("3*x + 1e-15*x^3", {"x"}), plan, "y");
    std::vector<std::string> v{"x"};
    auto const fit = linear_fit(d, {{parse("x", v), parse("x^3", v), parse("x^5", v)}, "y", 1e-12});
    CHECK(fit.terms.size() == 1);
    CHECK(fit.pruned.size() == 2);
    CHECK(fit.max_residual <= 1e-14);
    auto const all = linear_fit(d, {{parse("x", v), parse("x^3", v), parse("x^5", v)}, "y", 0.0});
    CHECK(all.terms.size() == 3);
}

TEST_CASE("W dataset fits")
{
    auto const& d = w_data();
    SUBCASE("12-term odd basis")
    {
        auto const t0 = std::chrono::steady_clock::now();
        auto const fit = linear_fit(d, {monomial_asin_basis(5), "W"});
        CHECK(seconds_since(t0) < 5.0);
        CHECK(fit.max_residual <= 8e-11);
    }
    SUBCASE("20-term degree-7 basis")
    {
        auto const t0 = std::chrono::steady_clock::now();
        auto const fit = linear_fit(d, {monomial_asin_basis(7), "W"});
        CHECK(seconds_since(t0) < 5.0);
        CHECK(fit.max_residual <= 3e-11);
    }
    SUBCASE("bifocal")
    {
        auto const t0 = std::chrono::steady_clock::now();
        auto const k8 = bifocal_fit(d, 8, "W");
        CHECK(seconds_since(t0) < 5.0);
        CHECK(k8.max_residual <= 5e-15);
        CHECK(k8.unpruned_max_residual <= bifocal_fit(d, 3, "W").unpruned_max_residual);
    }
}

TEST_CASE("bifocal basis shape")
{
    auto const b = bifocal_basis(4);
    REQUIRE(b.size() == 4);
    CHECK(format(b[0]) == "asin(x)");
    CHECK(format(b[1]) == "x*sqrt((1 - x)*(1 + x))");
    CHECK(format(b[3]) == "x^5*sqrt((1 - x)*(1 + x))");
    CHECK_THROWS_AS(bifocal_basis(0), PolishError);

    SamplePlan plan{{PlanAxis{"x", -1.0, 1.0, UniformGrid{65}}}};
    auto const d = tabulate(parse("0.75*asin(x)", {"x"}), plan, "W");
    auto const k1 = bifocal_fit(d, 1, "W");
    CHECK(k1.max_residual <= 1e-14);
    CHECK(k1.terms[0].coefficient == doctest::Approx(0.75).epsilon(1e-14));

    SamplePlan wide{{PlanAxis{"x", -2.0, 2.0, UniformGrid{5}}}};
    CHECK_THROWS_AS(bifocal_fit(tabulate(parse("x", {"x"}), wide, "W"), 1, "W"), PolishError);
}

TEST_CASE("nested bases never raise the residual")
{
    auto const& d = w_data();
    double const slack = 2 * std::numeric_limits<double>::epsilon() * fitted_scale(d, "W");
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 10; ++k) {
        auto const r = bifocal_fit(d, k, "W").unpruned_max_residual;
        CHECK(r <= prev + slack);
        prev = r;
    }
    prev = std::numeric_limits<double>::infinity();
    for (int deg = 1; deg <= 7; deg += 2) {
        auto const r = linear_fit(d, {monomial_asin_basis(deg), "W"}).unpruned_max_residual;
        CHECK(r <= prev + slack);
        prev = r;
    }
}

TEST_CASE("basis order does not change the residual")
{
    auto const& d = w_data();
    double const tol = 2 * std::numeric_limits<double>::epsilon() * fitted_scale(d, "W");
    std::mt19937_64 rng(17);
    for (auto const& basis : {bifocal_basis(8), monomial_asin_basis(3)}) {
        double const ref = linear_fit(d, {basis, "W", 0.0}).max_residual;
        auto shuffled = basis;
        for (int trial = 0; trial < 20; ++trial) {
            std::ranges::shuffle(shuffled, rng);
            CHECK(std::fabs(linear_fit(d, {shuffled, "W", 0.0}).max_residual - ref) <= tol);
        }
    }
}

TEST_CASE("constant identification examples")
{
    auto first = [](double v) {
        auto const r = identify_constant(v);
        return r.empty() ? std::string("<none>") : r.front().text;
    };
    CHECK(first(0.5235987755982988) == "pi/6");
    CHECK(first(0.8660254037844386) == "sqrt(3)/2");
    CHECK(first(0.25) == "1/4");
    CHECK(first(std::numbers::sqrt2) == "sqrt(2)");
    CHECK(first(2 * std::numbers::pi / 3) == "2*pi/3");
    CHECK(first(-std::numbers::e) == "-e");
    CHECK(first(0.7816747744) == "<none>");
    CHECK(identify_constant(0.0).front().text == "0");
    auto const r = identify_constant(0.5235987755982988).front();
    CHECK(*evaluate(r.form, {}) == doctest::Approx(0.5235987755982988).epsilon(1e-15));
    CHECK(r.numerator == 1);
    CHECK(r.denominator == 6);
}

TEST_CASE("identification is exact on library members")
{
    auto const lib = ConstantLibrary::defaults();
    std::size_t misses = 0;
    for (auto const& g : lib.generators) {
        for (int q = 1; q <= lib.max_denominator; ++q) {
            for (int p = -lib.max_numerator; p <= lib.max_numerator; ++p) {
                if (p == 0 || std::gcd(p, q) != 1) { continue; }
                auto const r = identify_constant(p * g.value / q, lib);
                bool const ok = !r.empty() && r.front().numerator == p && r.front().denominator == q
                                && r.front().generator == g.name;
                if (!ok) { ++misses; }
            }
        }
    }
    CHECK(misses == 0);
}

TEST_CASE("identification false positives")
{
    auto const lib = ConstantLibrary::defaults();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    std::size_t hits = 0;
    for (int i = 0; i < 1000; ++i) {
        double const v = u(rng);
        auto const found = identify_constant(v, lib).size();
        CHECK(found == brute_force_matches(v, lib));
        if (found > 0) { ++hits; }
    }
    CHECK(hits < 10);
}

TEST_CASE("library validation")
{
    auto lib = ConstantLibrary::defaults();
    lib.generators.push_back(lib.generators[1]);
    CHECK_THROWS_AS(identify_constant(1.0, lib), PolishError);
    lib = ConstantLibrary::defaults();
    lib.generators.push_back({"inf", Expression::real(1.0), std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(identify_constant(1.0, lib), PolishError);
}

TEST_CASE("snapping")
{
    auto const lib = ConstantLibrary::defaults();
    SUBCASE("near-unit coefficient snaps to the exact form")
    {
        auto const d = testing::trig_dataset();
        auto const e = parse("0.9999999998*cos(x)^4*sin(4*x)", {"x"});
        auto const s = snap_expression(e, lib, d, "y");
        CHECK(canonicalize(s) == canonicalize(parse("cos(x)^4*sin(4*x)", {"x"})));
    }
    SUBCASE("no small form, no change")
    {
        auto const d = derive_column(w_data(), "asinx", parse("asin(x)", {"x"}));
        std::vector<std::string> w{"x", "asinx"};
        auto const e = parse("-1.870027576e-13 + 0.7816747744*x + 0.0147770774*x^3 - 0.03033616234*x^2*asinx"
                             " + 0.07586494202*x*asinx^2 + 0.0818165982*asinx^3 + 0.0009144579166*x^3*asinx^2",
                             w);
        CHECK(snap_expression(e, lib, d, "W") == e);
    }
    SUBCASE("integers stay")
    {
        auto const d = testing::trig_dataset();
        auto const e = parse("cos(x)^4*sin(4*x)", {"x"});
        CHECK(snap_expression(e, lib, d, "y") == e);
    }
    SUBCASE("pi-valued constants")
    {
        SamplePlan plan{{PlanAxis{"x", 0.0, 1.0, UniformGrid{21}}}};
        auto const d = tabulate(parse("sin(x + pi/6) + x*sqrt(3)/2", {"x"}), plan, "y");
        auto const e = parse("sin(x + 0.52359877559829882) + 0.86602540378443860*x", {"x"});
        auto const s = snap_expression(e, lib, d, "y");
        CHECK(format(s) == "sin(x + 3.1415926535897931/6) + sqrt(3)/2*x");
    }
    SUBCASE("never degrades fitness")
    {
        auto const d = testing::trig_dataset();
        SplitAssignment const all(d.rows(), Tag::Both);
        std::mt19937_64 rng(8);
        SearchConfig cfg;
        cfg.generations = 1;
        Proposer p(cfg, {{"x"}});
        int checked = 0;
        for (int i = 0; i < 300; ++i) {
            auto const e = p.random_bodies(rng)[0];
            auto const before = score(e, d, all, Metric::MaxAbsError, "y");
            if (!before) { continue; }
            auto const after = score(snap_expression(e, lib, d, "y"), d, all, Metric::MaxAbsError, "y");
            REQUIRE(after);
            CHECK(after->train <= before->train);
            ++checked;
        }
        CHECK(checked > 100);
    }
}
