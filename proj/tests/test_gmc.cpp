#include "doctest.h"

#include <cmath>

#include "lcft/gmc.hpp"

using namespace lcft;

namespace {
std::shared_ptr<const SphereGrid> coarse() {
    static auto g = std::make_shared<const SphereGrid>(SphereGrid::gauss(32, 64));
    return g;
}
}  // namespace

TEST_CASE("gamma parameter") {
    CHECK(GammaParam(1.0).Q() == doctest::Approx(2.5));
    CHECK(GammaParam(std::sqrt(2.0)).Q() == doctest::Approx(std::sqrt(2.0) * 1.5 + 0.0).epsilon(1e-12));
    CHECK_THROWS_AS(GammaParam(0.0), ConfigError);
    CHECK_THROWS_AS(GammaParam(2.0), ConfigError);
    CHECK_THROWS_AS(GammaParam(-1.0), ConfigError);
}

TEST_CASE("vanishing gamma gives the metric mass") {
    const auto field = sample_field(coarse(), 16, 5, 0);
    const auto m = chaos_measure(field, GammaParam(1e-12));
    CHECK(m.total_mass() == doctest::Approx(4.0 * kPi).epsilon(1e-9));
    CHECK(integrate(m, [](Complex) { return 3.0; }) == doctest::Approx(12.0 * kPi).epsilon(1e-9));
    CHECK(integrate(m, [](Complex z) { return std::abs(z) < 1.0 ? 1.0 : 0.0; }) ==
          doctest::Approx(kTwoPi).epsilon(1e-9));
    CHECK_THROWS_AS(integrate(m, [](Complex) { return INFINITY; }), DomainError);
}

TEST_CASE("weights are positive and the mean mass is 4 pi") {
    FieldSampler sampler(coarse(), 16);
    std::vector<double> mass(300);
    for (std::size_t r = 0; r < mass.size(); ++r) {
        const auto m = chaos_measure(sampler.sample(9, r), GammaParam(0.5));
        for (double w : m.weights) REQUIRE(w > 0.0);
        mass[r] = m.total_mass();
    }
    const auto s = sample_stats(mass);
    CHECK(std::abs(s.mean - 4.0 * kPi) < 3.0 * s.stderr_);
    const auto again = chaos_measure(sampler.sample(9, 4), GammaParam(0.5));
    CHECK(again.total_mass() == mass[4]);
}

TEST_CASE("moment orders beyond 4/gamma^2 are refused") {
    CHECK_NOTHROW(check_moment_order(1.9, GammaParam(std::sqrt(2.0))));
    CHECK_THROWS_AS(check_moment_order(2.0, GammaParam(std::sqrt(2.0))), PreconditionError);
    CHECK_THROWS_AS(check_moment_order(4.0, GammaParam(1.0)), PreconditionError);
}

TEST_CASE("kahane harness") {
    FieldSampler sampler(coarse(), 16);
    FieldGenerator a = [&](std::uint64_t r) { return sampler.sample(21, r); };
    FieldGenerator b = shifted_generator(a, 0.3, 21);
    auto one = [](Complex) { return 1.0; };
    auto inv = [](double x) { return 1.0 / x; };
    const std::vector<std::pair<std::size_t, std::size_t>> probes{{0, 1000}, {10, 10}};

    const auto same = kahane_compare(a, a, GammaParam(1.0), one, inv, 200, 2.0, probes);
    CHECK(same.equal);
    CHECK(same.ordered);
    CHECK(same.warning.empty());

    const auto shifted = kahane_compare(a, b, GammaParam(1.0), one, inv, 400, 2.0, probes);
    CHECK(shifted.ordered);
    CHECK(shifted.warning.empty());
    // E[Z_B^-1] = E[Z_A^-1] e^{gamma^2 c}
    CHECK(std::abs(shifted.b.mean - shifted.a.mean * std::exp(0.3)) < 3.0 * shifted.b.stderr_);

    const auto linear = kahane_compare(a, b, GammaParam(1.0), one, [](double x) { return x; }, 4000);
    CAPTURE(linear.difference.mean);
    CAPTURE(linear.difference.stderr_);
    CHECK(linear.equal);

    // reversed roles violate covariance domination
    const auto reversed = kahane_compare(b, a, GammaParam(1.0), one, inv, 400, 2.0, probes);
    CHECK_FALSE(reversed.warning.empty());
}
