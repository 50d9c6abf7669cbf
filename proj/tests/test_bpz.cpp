#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lcft/bpz_ops.hpp"

using namespace lcft;

namespace {

std::string golden(const std::string& name) {
    std::ifstream in(std::string(LCFT_GOLDEN_DIR) + "/" + name);
    REQUIRE(in.good());
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(' ');
    const auto b = s.find_last_not_of(' ');
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

// Compositions of r read off the binary digits of 0..2^(r-1)-1: bit j set
// means a cut after position j + 1.
std::vector<std::vector<int>> compositions_by_cuts(int r) {
    std::vector<std::vector<int>> out;
    for (int mask = 0; mask < (1 << (r - 1)); ++mask) {
        std::vector<int> parts;
        int run = 1;
        for (int j = 0; j < r - 1; ++j) {
            if (mask & (1 << j)) {
                parts.push_back(run);
                run = 1;
            } else {
                ++run;
            }
        }
        parts.push_back(run);
        out.push_back(parts);
    }
    return out;
}

double oracle_coefficient(const std::vector<int>& n, double b2) {
    const int k = static_cast<int>(n.size());
    int r = 0;
    for (int x : n) r += x;
    double c = std::pow(b2, r - k);
    int head = 0;
    for (int j = 0; j + 1 < k; ++j) {
        head += n[static_cast<std::size_t>(j)];
        c /= head * (r - head);
    }
    return c;
}

double coeff_value(const VirasoroWord& w, double gamma) {
    return w.coeff.value([gamma](const std::string&) { return gamma; }).real();
}

bool same(const RationalExpr& a, const RationalExpr& b) {
    return (a + b * Coefficient(Rational(-1))).is_zero();
}

}  // namespace

TEST_CASE("D2 and D3 from the composition formula") {
    const SymbolicOperator d2 = build_Dr(2, 1.3);
    REQUIRE(d2.words.size() == 2);
    CHECK(d2.words[0].str() == "1 * L[-1]L[-1]");
    CHECK(d2.words[1].str() == "1/4*gamma^2 * L[-2]");

    const SymbolicOperator d3 = build_Dr(3, 1.3);
    REQUIRE(d3.words.size() == 4);
    CHECK(d3.words[0].str() == "1/4 * L[-1]L[-1]L[-1]");
    CHECK(d3.words[1].str() == "1/8*gamma^2 * L[-1]L[-2]");
    CHECK(d3.words[2].str() == "1/8*gamma^2 * L[-2]L[-1]");
    CHECK(d3.words[3].str() == "1/16*gamma^4 * L[-3]");
    CHECK(build_Dr(1, 0.7).str() == "1 * L[-1]\n");
}

TEST_CASE("operators match the cut enumeration for r up to 8") {
    for (int r = 1; r <= 8; ++r) {
        CAPTURE(r);
        const double gamma = 0.9;
        const SymbolicOperator op = build_Dr(r, gamma);
        CHECK(op.words.size() == (1u << (r - 1)));
        auto expected = compositions_by_cuts(r);
        REQUIRE(expected.size() == op.words.size());
        for (const auto& n : expected) {
            bool found = false;
            for (const VirasoroWord& w : op.words) {
                if (w.n != n) continue;
                found = true;
                CHECK(w.order() == r);
                CHECK(coeff_value(w, gamma) == doctest::Approx(oracle_coefficient(n, gamma * gamma / 4.0)).epsilon(1e-13));
                CHECK(w.coeff.rational().num() > 0);
            }
            CHECK(found);
        }
    }
    CHECK_THROWS_AS(build_Dr(0, 1.0), ConfigError);
    CHECK_THROWS_AS(build_Dr(9, 1.0), ConfigError);
    CHECK_THROWS_AS(build_Dr(2, 2.5), ConfigError);
}

TEST_CASE("golden operator tables") {
    for (int r = 1; r <= 4; ++r) CHECK(build_Dr(r, 1.0).str() == golden("bpz_D" + std::to_string(r) + ".txt"));
}

TEST_CASE("gamma/2 and 2/gamma tables coincide under the swap") {
    for (int r = 1; r <= 8; ++r) {
        const double gamma = 1.2;
        const SymbolicOperator r1 = build_Dr(r, gamma);
        const SymbolicOperator one_r = build_Dr(r, gamma, Degenerate::OneR);
        REQUIRE(r1.words.size() == one_r.words.size());
        for (std::size_t k = 0; k < r1.words.size(); ++k) {
            CHECK(r1.words[k].n == one_r.words[k].n);
            // (1, r) uses b^2 = 4/gamma^2
            const double b2 = 4.0 / (gamma * gamma);
            CHECK(coeff_value(one_r.words[k], gamma) ==
                  doctest::Approx(oracle_coefficient(one_r.words[k].n, b2)).epsilon(1e-13));
            // the symbolic coefficients are the same rational with gamma^2/4 -> 4/gamma^2
            const int p = r - static_cast<int>(r1.words[k].n.size());
            Rational four_p(1);
            for (int q = 0; q < p; ++q) four_p = four_p * Rational(16);
            CHECK(one_r.words[k].coeff.rational() == r1.words[k].coeff.rational() * four_p);
            const auto& s1 = r1.words[k].coeff.symbols();
            const auto& s2 = one_r.words[k].coeff.symbols();
            const int e1 = s1.count("gamma") ? s1.at("gamma") : 0;
            const int e2 = s2.count("gamma") ? s2.at("gamma") : 0;
            CHECK(e1 == -e2);
        }
    }
    CHECK(build_Dr(3, 1.0).degenerate_alpha() == doctest::Approx(-1.0));
    CHECK(build_Dr(3, 1.0, Degenerate::OneR).degenerate_alpha() == doctest::Approx(-4.0));
}

TEST_CASE("generators on simple functions") {
    CHECK(apply_generator(1, RationalExpr::parse("z^2", 0)).str() == "2*z");
    // the d/dz1 part kills constants
    CHECK(apply_generator(2, RationalExpr::parse("1", 1)).str() == "1*Delta1*(z1-z)^-2");
    CHECK(same(apply_generator(3, RationalExpr::parse("1", 2)), RationalExpr::parse("2*Delta1*(z1-z)^-3 + 2*Delta2*(z2-z)^-3", 2)));
    CHECK(apply_generator(1, RationalExpr::parse("7", 1)).is_zero());
    CHECK(RationalExpr::parse("3*(z-z1)^-1", 1).str() == "-3*(z1-z)^-1");
    CHECK(RationalExpr::parse("z*z - z^2", 0).is_zero());
}

TEST_CASE("operators on test functions match the hand-worked golden file") {
    std::istringstream lines(golden("bpz_toy.txt"));
    std::string line;
    int cases = 0;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string part;
        while (std::getline(ss, part, '|')) f.push_back(trim(part));
        REQUIRE(f.size() == 4);
        const int n = std::stoi(f[0]);
        const SymbolicOperator op = build_Dr(std::stoi(f[1]), 1.0);
        CAPTURE(line);
        CHECK(same(apply_to_rational(op, RationalExpr::parse(f[2], n)), RationalExpr::parse(f[3], n)));
        ++cases;
    }
    CHECK(cases == 3);
}

TEST_CASE("symbolic generators agree with numerical differentiation") {
    const std::vector<Complex> zs = {Complex(0.3, 0.4), Complex(-0.8, 0.1)};
    const Complex z(0.05, -0.2);
    const std::vector<double> weights = {0.7, 1.1};
    auto lookup = [&weights](const std::string& s) {
        if (s == "gamma") return 1.0;
        return weights[static_cast<std::size_t>(s[5] - '1')];
    };
    const RationalExpr f = RationalExpr::parse("z^2*(z1-z)^-1*(z2-z)^-2 + 3/2*(z2-z)^-1", 2);
    const double h = 1e-4;
    // holomorphic in every variable, so a complex central difference is the derivative
    auto dz = [&](auto&& g, int var) {
        auto at = [&](Complex shift) {
            Complex zz = z;
            auto p = zs;
            if (var == 0)
                zz += shift;
            else
                p[static_cast<std::size_t>(var - 1)] += shift;
            return g(zz, p);
        };
        return (at(h) - at(-h)) / (2.0 * h);
    };
    auto fval = [&](Complex zz, const std::vector<Complex>& p) { return f.value(zz, p, lookup); };
    for (int n = 1; n <= 4; ++n) {
        CAPTURE(n);
        Complex expected;
        if (n == 1) {
            expected = dz(fval, 0);
        } else {
            expected = 0.0;
            for (int i = 1; i <= 2; ++i) {
                const Complex w = zs[static_cast<std::size_t>(i - 1)] - z;
                expected += -std::pow(w, 1 - n) * dz(fval, i) +
                            weights[static_cast<std::size_t>(i - 1)] * (n - 1.0) * std::pow(w, -n) * fval(z, zs);
            }
        }
        const Complex got = apply_generator(n, f).value(z, zs, lookup);
        CHECK(std::abs(got - expected) < 1e-6 * (1.0 + std::abs(expected)));
    }
}

TEST_CASE("unsupported test functions") {
    CHECK_THROWS_AS(RationalExpr::parse("exp(z)", 1), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("(z1-z)^0.5", 1), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("z^-1", 1), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("(z3-z)^-1", 2), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("(z1+z)^-1", 1), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("0.5*z", 1), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("z1*z", 1), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("", 1), UnsupportedExpression);
    CHECK_THROWS_AS(RationalExpr::parse("z z", 1), UnsupportedExpression);
    CHECK_THROWS_AS(apply_to_rational(build_Dr(2, 1.0, Degenerate::R1, {1.0, 1.0}), RationalExpr::parse("1", 1)),
                    ConfigError);
}
