#include <doctest.h>

#include <bit>
#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "gen.hpp"
#include "srlab/dataset.hpp"
#include "srlab/expr.hpp"

using namespace srlab;

namespace {
auto ulp_distance(double a, double b) -> std::int64_t
{
    auto ia = std::bit_cast<std::int64_t>(a);
    auto ib = std::bit_cast<std::int64_t>(b);
    if (ia < 0) { ia = std::numeric_limits<std::int64_t>::min() - ia; }
    if (ib < 0) { ib = std::numeric_limits<std::int64_t>::min() - ib; }
    return std::abs(ia - ib);
}

auto at(Expression const& e, double x) -> std::optional<double> { return evaluate(e, Bindings{{"x", x}}); }
} // namespace

TEST_CASE("parse builds the expected trees")
{
    auto e = parse("cos(x)^4*sin(4*x)", {"x"});
    auto x = Expression::variable("x");
    auto expected = Expression::apply(Block::Pow, {Expression::apply(Block::Cos, {x}), Expression::integer(4)})
                    * Expression::apply(Block::Sin, {Expression::integer(4) * x});
    CHECK(e == expected);

    CHECK(parse("x", {"x"}) == x);

    auto m = parse("max(x-y,0)-max(y-x,0)", {"x", "y"});
    REQUIRE(m.is_apply(Block::Sub));
    CHECK(m.child(0).is_apply(Block::Max));
    CHECK(m.child(1).is_apply(Block::Max));
}

TEST_CASE("parse precedence and literals")
{
    std::vector<std::string> v{"x", "y"};
    // ^ binds tighter than unary minus
    CHECK(parse("-x^2", v) == -parse("x^2", v));
    CHECK(parse("-3^2", v) == -Expression::apply(Block::Pow, {Expression::integer(3), Expression::integer(2)}));
    CHECK(parse("-3", v) == Expression::integer(-3));
    CHECK(parse("-2.5*x", v) == Expression::real(-2.5) * Expression::variable("x"));
    CHECK(parse("2^3^2", v) == Expression::apply(Block::Pow, {Expression::integer(2), parse("3^2", v)}));
    CHECK(parse("x-y-x", v) == (parse("x-y", v) - Expression::variable("x")));
    CHECK(parse("1e-3", v).kind() == NodeKind::RealConst);
    CHECK(parse("7", v).kind() == NodeKind::IntConst);
    CHECK(parse("COS(x)", v) == parse("cos(x)", v));
    CHECK(parse("pi", v).value() == std::numbers::pi);
}

TEST_CASE("parse errors")
{
    std::vector<std::string> v{"x"};
    CHECK_THROWS_AS(parse("sin(x", v), ParseError);
    CHECK_THROWS_AS(parse("x +", v), ParseError);
    CHECK_THROWS_AS(parse("", v), ParseError);
    CHECK_THROWS_AS(parse("z + 1", v), ParseError);
    CHECK_THROWS_AS(parse("foo(x)", v), ParseError);
    CHECK_THROWS_AS(parse("sin(x, x)", v), ParseError);
    CHECK_THROWS_AS(parse("max(x)", v), ParseError);
    try {
        parse("x + * 2", v);
        FAIL("expected a parse error");
    } catch (ParseError const& err) {
        CHECK(err.position() == 4);
    }
    // slots only when asked for
    CHECK_THROWS_AS(parse("f(x)", v), ParseError);
    ParseOptions opts{v, true};
    auto s = parse("f1(x) * f2()", opts);
    CHECK(s.has_slots());
    CHECK(s.child(0).slot_index() == 1);
    CHECK(s.child(1).children().empty());
}

TEST_CASE("format rounds constants for display only")
{
    auto e = Expression::real(0.7816747744) * Expression::variable("x");
    CHECK(format(e, 4) == "0.7817*x");
    CHECK(e.child(0).value() == 0.7816747744);
    CHECK(format(Expression::integer(2), 1) == "2");
    CHECK(format(Expression::integer(2), 17) == "2");
    // nearest double to pi, 17 significant digits
    CHECK(format(Expression::real(std::numbers::pi), 17) == "3.1415926535897931");
    CHECK(format(Expression::real(2.0), 17) == "2.0");
    // rounded text re-parses to the rounded constants
    auto back = parse(format(e, 4), {"x"});
    CHECK(back.child(0).value() == 0.7817);
}

TEST_CASE("format/parse round trip on generated trees")
{
    testing::TreeGen gen(17);
    std::vector<std::string> vars{"x", "y"};
    for (int i = 0; i < 3000; ++i) {
        auto e = gen.tree(5);
        auto text = format(e, 17);
        auto back = parse(text, vars);
        INFO(text);
        REQUIRE(back == e);
        Bindings row{{"x", gen.uniform(-2, 2)}, {"y", gen.uniform(-2, 2)}};
        auto a = evaluate(e, row);
        auto b = evaluate(back, row);
        REQUIRE(a.has_value() == b.has_value());
        if (a) { CHECK(std::bit_cast<std::uint64_t>(*a) == std::bit_cast<std::uint64_t>(*b)); }
    }
}

TEST_CASE("evaluate follows real-domain rules")
{
    auto messy = parse(testing::kMessyTrig, {"x"});
    CHECK(at(messy, 0.0).value() == 0.0);

    // Independent 50-digit evaluation at the double nearest pi/8, which equals
    // (4 sin 2x + 6 sin 4x + 4 sin 6x + sin 8x)/16 there.
    double const oracle = 0.7285533905932737;
    double const x = std::numbers::pi / 8;
    CHECK(ulp_distance(at(messy, x).value(), oracle) <= 4);
    auto reduced = parse("(4*sin(2*x) + 6*sin(4*x) + 4*sin(6*x) + sin(8*x))/16", {"x"});
    CHECK(ulp_distance(at(reduced, x).value(), oracle) <= 4);

    auto bad = parse("asin(1 + 3*x^2)", {"x"});
    CHECK_FALSE(at(bad, 1.0).has_value());
    CHECK(at(bad, 0.0).has_value());

    // invalid survives multiplication by zero
    CHECK_FALSE(at(parse("x + 0*log(x - 7)", {"x"}), 3.0).has_value());
    CHECK(at(parse("x + 0*log(x - 7)", {"x"}), 8.0).value() == 8.0);
    CHECK_FALSE(at(parse("max(log(x), 5)", {"x"}), -1.0).has_value());
    CHECK_FALSE(at(parse("1/x", {"x"}), 0.0).has_value());
    CHECK_FALSE(at(parse("sqrt(x)", {"x"}), -1e-300).has_value());
    CHECK_FALSE(at(parse("x^0.5", {"x"}), -2.0).has_value());
    CHECK(at(parse("x^2", {"x"}), -2.0).value() == 4.0);

    CHECK_THROWS_AS(evaluate(parse("x", {"x"}), Bindings{}), EvalError);
}

TEST_CASE("evaluate_batch")
{
    Dataset ten({Column{"x", std::vector<double>(10, 1.0)}});
    auto r = evaluate_batch(Expression::integer(5), ten);
    CHECK(r.valid);
    CHECK(r.values == std::vector<double>(10, 5.0));

    SamplePlan plan{{PlanAxis{"x", 0.0, 10.0, UniformGrid{11}}}};
    auto g = plan.grid();
    CHECK_FALSE(evaluate_batch(parse("log(x - 7)", {"x"}), g).valid);

    auto trig = testing::trig_dataset();
    auto fit = evaluate_batch(parse("cos(x)^4*sin(4*x)", {"x"}), trig);
    REQUIRE(fit.valid);
    auto const& y = trig.column("y");
    double worst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) { worst = std::max(worst, std::fabs(fit.values[i] - y[i])); }
    CHECK(worst <= 1e-12);

    CHECK_THROWS_AS(evaluate_batch(parse("x", {"x"}), Dataset({Column{"z", {1.0, 2.0}}})), EvalError);
}

TEST_CASE("evaluate_batch agrees with per-row evaluation")
{
    testing::TreeGen gen(99);
    gen.unary.push_back(Block::Log);
    gen.unary.push_back(Block::Sqrt);
    SamplePlan plan{{PlanAxis{"x", -2.0, 2.0, UniformGrid{9}}, PlanAxis{"y", -1.5, 1.5, UniformGrid{5}}}};
    auto d = plan.grid();
    for (int i = 0; i < 2000; ++i) {
        auto e = gen.tree(4);
        auto batch = evaluate_batch(e, d);
        bool all_ok = true;
        for (std::size_t r = 0; r < d.rows(); ++r) {
            auto v = evaluate(e, Bindings{{"x", d.column("x")[r]}, {"y", d.column("y")[r]}});
            bool const ok = v && std::isfinite(*v);
            all_ok = all_ok && ok;
            if (v) {
                REQUIRE(std::bit_cast<std::uint64_t>(*v) == std::bit_cast<std::uint64_t>(batch.values[r]));
            } else {
                REQUIRE(std::isnan(batch.values[r]));
            }
        }
        REQUIRE(batch.valid == all_ok);
    }
}

TEST_CASE("complexity")
{
    std::vector<std::string> v{"x"};
    CHECK(complexity(parse("cos(x)*cos(x)*cos(x)*cos(x)*sin(4*x)", v)) == 26);
    CHECK(complexity(parse("x", v)) == 1);
    CHECK(complexity(parse("cos(x)^4*sin(4*x)", v)) == 26);
    CHECK(complexity(parse("x^2.5", v)) == 2 + 1 + 1);

    ComplexityProfile p = ComplexityProfile::defaults();
    p.weights[Block::Sin] = 10;
    CHECK(complexity(parse("sin(x)", v), p) == 11);
    p.weights.erase(Block::Cos);
    CHECK_THROWS_AS(complexity(parse("cos(x)", v), p), ComplexityError);
}

TEST_CASE("complexity properties")
{
    testing::TreeGen gen(5);
    for (int i = 0; i < 1000; ++i) {
        auto u = gen.tree(3);
        for (std::int64_t k = 2; k <= 5; ++k) {
            auto product = u;
            for (std::int64_t j = 1; j < k; ++j) { product = product * u; }
            CHECK(complexity(Expression::apply(Block::Pow, {u, Expression::integer(k)})) == complexity(product));
        }
        // replacing a subtree with a strictly larger one never lowers the total
        auto outer = Expression::apply(Block::Sin, {u}) + Expression::variable("x");
        auto bigger = Expression::apply(Block::Sin, {u * Expression::variable("y")}) + Expression::variable("x");
        CHECK(complexity(bigger) > complexity(outer));
    }
}
