#include "doctest.h"

#include <cmath>
#include <sstream>

#include "lcft/parallel.hpp"
#include "lcft/sphere_gff.hpp"

using namespace lcft;

TEST_CASE("round metric values and total mass") {
    CHECK(metric_density(0.0) == 4.0);
    CHECK(metric_density(1.0) == 1.0);
    CHECK(metric_density(Complex(0.0, 2.0)) == doctest::Approx(0.16));
    CHECK(metric_density(1e4) * std::pow(1e4, 4) == doctest::Approx(4.0).epsilon(1e-6));
    CHECK(RoundMetric::log_density(Complex(0.3, 0.4)) == doctest::Approx(std::log(metric_density(Complex(0.3, 0.4)))));
    const auto grid = SphereGrid::gauss(32, 64);
    CHECK(grid.total_weight() == doctest::Approx(4.0 * kPi).epsilon(1e-12));
    // the weights are g d^2z: compare sum of w/g over |z| < 1 with pi
    double area = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k)
        if (std::abs(grid.points()[k]) < 1.0) area += grid.weights()[k];
    CHECK(area == doctest::Approx(kTwoPi).epsilon(1e-12));
}

TEST_CASE("covariance closed form") {
    CHECK(covariance(0.0, 1.0) == doctest::Approx(0.5 * std::log(2.0) - 0.5).epsilon(1e-12));
    CHECK(covariance(1.0, -1.0) == doctest::Approx(-0.5).epsilon(1e-12));
    const Complex a{0.2, -1.3}, b{-0.7, 0.4};
    CHECK(covariance(a, b) == covariance(b, a));
    CHECK(covariance(a, b) == doctest::Approx(covariance_of_cosine(sphere_cosine(a, b))).epsilon(1e-12));
    CHECK_THROWS_AS(covariance(a, a), DomainError);
}

TEST_CASE("legendre series of the covariance converges to the closed form") {
    for (double t : {-0.9, -0.3, 0.0, 0.5, 0.8}) {
        CAPTURE(t);
        const double b256 = truncation_bound(t, 256);
        CHECK(b256 < truncation_bound(t, 32));
        CHECK(b256 < 0.02);
    }
    const CovarianceTable table(64);
    for (double t : {-1.0, -0.5, 0.3, 0.99, 0.9999, 1.0})
        CHECK(table.of_cosine(t) == doctest::Approx(truncated_covariance(t, 64)).epsilon(1e-6));
}

TEST_CASE("sampler uses (L+1)^2 - 1 modes and is deterministic") {
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::gauss(16, 32));
    FieldSampler sampler(grid, 8);
    CHECK(sampler.modes() == 80u);
    const auto a = sampler.sample(7, 3);
    const auto b = sampler.sample(7, 3);
    CHECK(a.values == b.values);
    CHECK(sampler.sample(7, 4).values != a.values);
    CHECK_THROWS_AS(FieldSampler(grid, 0), ConfigError);
    // spectral grid integrates every mode with l >= 1 to zero
    for (int r = 0; r < 5; ++r) {
        const auto s = sampler.sample(1, r);
        std::vector<double> sq;
        for (double v : s.values) sq.push_back(v * v);
        const double sd = std::sqrt(pairwise_sum(sq) / sq.size());
        CHECK(std::abs(weighted_mean(s)) < 5e-2 * sd);
    }
}

TEST_CASE("single modes reproduce orthonormal harmonics") {
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::gauss(24, 48));
    FieldSampler sampler(grid, 6);
    // every unit mode vector synthesizes a function of squared L2 norm 2 pi / (l (l+1))
    std::size_t k = 0;
    for (int l = 1; l <= 6; ++l) {
        for (int j = 0; j < 2 * l + 1; ++j, ++k) {
            std::vector<double> modes(sampler.modes(), 0.0);
            modes[k] = 1.0;
            const auto v = sampler.synthesize(modes);
            double n2 = 0.0;
            for (std::size_t q = 0; q < v.size(); ++q) n2 += grid->weights()[q] * v[q] * v[q];
            CHECK(n2 == doctest::Approx(kTwoPi / (l * (l + 1.0))).epsilon(1e-10));
        }
    }
}

TEST_CASE("empirical covariance at a point pair") {
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::from_points({1.0, -1.0, Complex(0.3, 0.2)}, {1, 1, 1}));
    FieldSampler sampler(grid, 32);
    const int n = 4000;
    std::vector<double> x1(n), x2(n), x3(n);
    for (int r = 0; r < n; ++r) {
        const auto s = sampler.sample(11, r);
        x1[r] = s.values[0];
        x2[r] = s.values[1];
        x3[r] = s.values[2];
    }
    const double c = sample_covariance(x1, x2);
    CHECK(std::abs(c - truncated_covariance(-1.0, 32)) < 0.1);
    const auto m = sample_stats(x3);
    CHECK(std::abs(m.mean) < 3.0 * m.stderr_ + 1e-12);
    CHECK(m.variance == doctest::Approx(truncated_covariance(1.0, 32)).epsilon(0.08));
}

TEST_CASE("mollifier") {
    CHECK(MollifierKernel::profile(1.0) == 0.0);
    CHECK(MollifierKernel::profile(0.0) == doctest::Approx(std::exp(-1.0)));
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::gauss(96, 192));
    Mollifier mol(grid, {0.1}, 32);
    CHECK(mol.min_support() >= kMinMollifierSupport);
    FieldSample constant;
    constant.grid = grid;
    constant.values.assign(grid->size(), 2.5);
    constant.l_max = 32;
    const auto smooth = mol.apply(constant);
    for (double v : smooth.values) REQUIRE(v == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(smooth.epsilon == 0.1);
    for (double v : mol.variance()) {
        REQUIRE(v > 0.0);
        REQUIRE(v < truncated_covariance(1.0, 32));
    }
    CHECK_THROWS_AS(Mollifier(grid, {0.005}, 32), ResolutionError);
    const auto field = sample_field(grid, 32, 3, 0);
    const auto m = mollify(field, {0.1});
    CHECK(std::abs(weighted_mean(m)) < 0.05);
    CHECK_THROWS_AS(mol.apply(m), PreconditionError);
}

TEST_CASE("variance of the mollified field grows like ln(1/eps)") {
    std::vector<double> x, y;
    for (int k = 2; k <= 8; ++k) {
        const double eps = std::ldexp(1.0, -k);
        x.push_back(std::log(1.0 / eps));
        y.push_back(variance_of_mollified(0.0, eps));
    }
    const double slope = sample_covariance(x, y) / sample_covariance(x, x);
    CHECK(slope == doctest::Approx(1.0).epsilon(0.1));
    // symmetry of the chart: same variance at z and -z
    CHECK(variance_of_mollified(Complex(0.3, 0.1), 0.05) ==
          doctest::Approx(variance_of_mollified(Complex(-0.3, -0.1), 0.05)).epsilon(1e-10));
}

TEST_CASE("csv dump") {
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::from_points({0.5}, {1.0}));
    const auto s = sample_field(grid, 4, 1, 0);
    std::ostringstream os;
    write_field_csv(os, s);
    CHECK(os.str().rfind("re,im,value\n0.5,0,", 0) == 0);
}
