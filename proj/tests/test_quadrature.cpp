#include "doctest.h"

#include <cmath>

#include "lcft/quadrature.hpp"

using namespace lcft;
using namespace lcft::quadrature;

TEST_CASE("gauss-legendre integrates polynomials exactly") {
    for (int n : {1, 2, 5, 16, 33}) {
        const GaussRule& r = gauss_legendre(n);
        double sum = 0.0;
        for (double w : r.weights) sum += w;
        CHECK(sum == doctest::Approx(2.0).epsilon(1e-14));
    }
    auto f = [](double x) { return std::pow(x, 9) - 3.0 * x * x + 1.0; };
    CHECK(integrate(f, -1.0, 2.0, 5) == doctest::Approx(96.3).epsilon(1e-12));
    CHECK(integrate([](double x) { return std::exp(x); }, 0.0, 1.0, 16, 2) ==
          doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
}

TEST_CASE("contour rules: residues and conjugate differential") {
    const Complex c{0.3, -0.2};
    auto pole = [&](Complex x) { return 1.0 / (x - c); };
    const Complex res = contour_integral(pole, c, 0.5, 64);
    CHECK(std::abs(res - Complex(0.0, kTwoPi)) < 1e-10);
    CHECK(std::abs(contour_integral([](Complex x) { return x * x; }, c, 0.5, 64)) < 1e-12);
    // int_B d_x(x) d^2x = |B|
    const double r = 0.7;
    const Complex area = Complex(0.0, 0.5) *
                         contour_integral_conj([](Complex x) { return x; }, 0.0, r, 64);
    CHECK(std::abs(area - Complex(kPi * r * r, 0.0)) < 1e-12);
    CHECK_THROWS_AS(contour_integral(pole, c, 0.5, 4), ConfigError);
}

TEST_CASE("singular grid weights and a 1/|x| integral") {
    const NodeSet g = singular_grid({0.1, 0.2}, 0.01, 1.0, 20);
    CHECK(g.total_weight() == doctest::Approx(kPi * (1.0 - 1e-4)).epsilon(1e-12));
    double s = 0.0;
    for (std::size_t i = 0; i < g.points.size(); ++i) s += g.weights[i] / std::abs(g.points[i] - Complex(0.1, 0.2));
    CHECK(s == doctest::Approx(kTwoPi * 0.99).epsilon(1e-6));
    CHECK_THROWS_AS(singular_grid(0.0, 0.1, 1.0, 1), ConfigError);
}

TEST_CASE("ball/complement integral with a = 0 is the product of areas") {
    auto spec = SingularIntegralSpec::with_dyadic_schedule(0.0, 8);
    const auto res = ball_complement_integral(spec);
    CHECK(res.verdict == Verdict::Convergent);
    CHECK(res.limit == doctest::Approx(kPi * (16.0 - kPi)).epsilon(1e-6));
}

TEST_CASE("ball/complement integral phase boundary") {
    for (double a : {1.0, 2.0, 2.5, 2.9}) {
        CAPTURE(a);
        const auto res = ball_complement_integral(SingularIntegralSpec::with_dyadic_schedule(a));
        CHECK(res.verdict == Verdict::Convergent);
        CHECK(res.growth_exponent == doctest::Approx(-(3.0 - a)).epsilon(0.02));
    }
    CHECK(ball_complement_integral(SingularIntegralSpec::with_dyadic_schedule(3.0)).verdict == Verdict::Marginal);
    for (double a : {3.2, 4.0}) {
        const auto res = ball_complement_integral(SingularIntegralSpec::with_dyadic_schedule(a));
        CHECK(res.verdict == Verdict::Divergent);
        CHECK(res.growth_exponent == doctest::Approx(a - 3.0).epsilon(0.02));
    }
    SingularIntegralSpec bad;
    bad.cutoffs = {0.5, 0.25};
    CHECK_THROWS_AS(ball_complement_integral(bad), ConfigError);
}
