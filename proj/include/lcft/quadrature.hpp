#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lcft/common.hpp"

namespace lcft::quadrature {

/// Gauss-Legendre rule on [-1, 1].
struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// n-point Gauss-Legendre nodes and weights (Newton iteration on P_n).
/// Cached per n; safe to call concurrently.
const GaussRule& gauss_legendre(int n);

/// Integrates f over [a, b] with `panels` equal panels of an n-point rule.
double integrate(const std::function<double(double)>& f, double a, double b, int n = 16, int panels = 1);

/// Trapezoidal rule for the contour integral of f(x) dx over the circle
/// |x - center| = radius, counter-clockwise. Spectrally accurate for
/// integrands analytic in a neighbourhood of the circle.
Complex contour_integral(const std::function<Complex(Complex)>& f, Complex center, double radius, int order);

/// Same rule for f(x) dx-bar (conjugate differential), which is what the
/// area-to-boundary identity int_B d_x h d^2x = (i/2) oint h dx-bar needs.
Complex contour_integral_conj(const std::function<Complex(Complex)>& f, Complex center, double radius,
                              int order);

/// Node/weight set in the plane with Lebesgue (metric-free) weights.
struct NodeSet {
    std::vector<Complex> points;
    std::vector<double> weights;
    double total_weight() const;
};

/// Geometric radial shells between `inner` and `outer` around `center`.
/// Each shell carries a `radial_order`-point Gauss rule in r and `angular`
/// equispaced angles, staggered by half a step on odd shells. Weights are
/// exact for the area element, so they sum to pi (outer^2 - inner^2).
NodeSet singular_grid(Complex center, double inner, double outer, int levels, int radial_order = 4,
                      int angular = 16);

/// The ball/complement integral of |x - y|^-a over K x K with x in B(0, r)
/// and y outside it, K = [-h, h]^2.
struct SingularIntegralSpec {
    double exponent = 0.0;
    double ball_radius = 1.0;
    double half_width = 2.0;
    /// Decreasing inner cutoffs on |x - y|; at least three levels.
    std::vector<double> cutoffs;

    static SingularIntegralSpec with_dyadic_schedule(double exponent, int levels = 14);
};

enum class Verdict { Convergent, Marginal, Divergent };

std::string to_string(Verdict v);

struct SingularIntegralResult {
    /// Integral restricted to |x - y| > cutoffs[k].
    std::vector<double> values;
    /// values[k + 1] - values[k]: the shell between consecutive cutoffs.
    std::vector<double> increments;
    /// Mean ratio of the last consecutive increments.
    double increment_ratio = 0.0;
    /// Growth exponent g of the integral as cutoff^-g (g < 0 means the
    /// shells shrink and the integral converges).
    double growth_exponent = 0.0;
    Verdict verdict = Verdict::Convergent;
    /// Extrapolated limit (geometric tail) when convergent, else the last value.
    double limit = 0.0;
};

/// Tolerance on the growth exponent separating the three verdicts.
inline constexpr double kVerdictTolerance = 0.03;

SingularIntegralResult ball_complement_integral(const SingularIntegralSpec& spec);

}  // namespace lcft::quadrature
