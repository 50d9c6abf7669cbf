#include "lcft/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>

namespace lcft::quadrature {

namespace {

GaussRule build_gauss_legendre(int n) {
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) p0 = 1.0, p1 = x;
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        if (n == 1) {
            rule.nodes[0] = 0.0;
            rule.weights[0] = 2.0;
            return rule;
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    return rule;
}

double primitive(double rho, double a) {
    if (std::abs(a - 2.0) < 1e-14) return std::log(rho);
    if (std::isinf(rho)) return a > 2.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::pow(rho, 2.0 - a) / (2.0 - a);
}

// Distance along direction (cos d, sin d) from x to the boundary of the
// disk of radius R (x inside).
double exit_disk(double t, double theta_rel, double radius) {
    const double c = std::cos(theta_rel);
    const double s = std::sin(theta_rel);
    return -t * c + std::sqrt(std::max(0.0, radius * radius - t * t * s * s));
}

double exit_box(Complex x, double dir, double h) {
    const double dx = std::cos(dir);
    const double dy = std::sin(dir);
    double best = std::numeric_limits<double>::infinity();
    if (dx > 1e-300) best = std::min(best, (h - x.real()) / dx);
    if (dx < -1e-300) best = std::min(best, (-h - x.real()) / dx);
    if (dy > 1e-300) best = std::min(best, (h - x.imag()) / dy);
    if (dy < -1e-300) best = std::min(best, (-h - x.imag()) / dy);
    return best;
}

// Angle theta in [0, pi] (relative to the outward radial direction) at which
// the disk exit distance equals rho, if any.
void push_kink(std::vector<double>& breaks, double t, double rho, double radius) {
    if (!(rho > 0.0) || std::isinf(rho) || t <= 0.0) return;
    const double c = (radius * radius - t * t - rho * rho) / (2.0 * t * rho);
    if (c > -1.0 && c < 1.0) breaks.push_back(std::acos(c));
}

struct ShellParams {
    double a;
    double radius;
    double half_width;
    bool use_box;
};

// Integral over ray directions of int rho^{1-a} d rho for y on the ray from
// x (at distance t from the centre, polar angle psi) restricted to
// y outside the disk, inside K and lo < rho <= hi.
double direction_integral(const ShellParams& p, double t, double psi, double lo, double hi) {
    const Complex x = std::polar(t, psi);
    std::vector<double> breaks{0.0, kTwoPi};
    for (double rho : {lo, hi}) {
        std::vector<double> half;
        push_kink(half, t, rho, p.radius);
        for (double b : half) {
            breaks.push_back(b);
            breaks.push_back(kTwoPi - b);
        }
    }
    if (p.use_box) {
        for (double cx : {-p.half_width, p.half_width}) {
            for (double cy : {-p.half_width, p.half_width}) {
                double ang = std::arg(Complex(cx, cy) - x) - psi;
                ang = std::fmod(ang + 2.0 * kTwoPi, kTwoPi);
                breaks.push_back(ang);
            }
        }
    }
    std::sort(breaks.begin(), breaks.end());
    const GaussRule& rule = gauss_legendre(16);
    double total = 0.0;
    for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
        const double a0 = breaks[b];
        const double a1 = breaks[b + 1];
        if (a1 - a0 < 1e-15) continue;
        for (int sub = 0; sub < 2; ++sub) {
            const double s0 = a0 + (a1 - a0) * sub / 2.0;
            const double s1 = a0 + (a1 - a0) * (sub + 1) / 2.0;
            const double half = 0.5 * (s1 - s0);
            const double mid = 0.5 * (s1 + s0);
            for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
                const double theta = mid + half * rule.nodes[q];
                const double rho_b = exit_disk(t, theta, p.radius);
                double upper = hi;
                if (p.use_box) upper = std::min(upper, exit_box(x, psi + theta, p.half_width));
                const double lower = std::max(rho_b, lo);
                if (upper <= lower) continue;
                total += half * rule.weights[q] * (primitive(upper, p.a) - primitive(lower, p.a));
            }
        }
    }
    return total;
}

// int_{t0}^{t1} t dt f(t) on `panels` Gauss panels.
double radial_integral(const std::function<double(double)>& f, double t0, double t1, int panels) {
    const GaussRule& rule = gauss_legendre(16);
    double total = 0.0;
    for (int k = 0; k < panels; ++k) {
        const double s0 = t0 + (t1 - t0) * k / panels;
        const double s1 = t0 + (t1 - t0) * (k + 1) / panels;
        const double half = 0.5 * (s1 - s0);
        const double mid = 0.5 * (s1 + s0);
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const double t = mid + half * rule.nodes[q];
            total += half * rule.weights[q] * t * f(t);
        }
    }
    return total;
}

// Full integral over x in the disk with the box constraint (polar angle
// dependence kept; the square has an 8-fold symmetry).
double full_integral(const ShellParams& p, double lo, double hi) {
    const GaussRule& rule = gauss_legendre(16);
    auto psi_integral = [&](double t) {
        double acc = 0.0;
        const int panels = 4;
        for (int k = 0; k < panels; ++k) {
            const double s0 = (kPi / 4.0) * k / panels;
            const double s1 = (kPi / 4.0) * (k + 1) / panels;
            const double half = 0.5 * (s1 - s0);
            const double mid = 0.5 * (s1 + s0);
            for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
                acc += half * rule.weights[q] * direction_integral(p, t, mid + half * rule.nodes[q], lo, hi);
            }
        }
        return 8.0 * acc;
    };
    const double r = p.radius;
    const double knee = std::max(0.0, r - lo);
    double total = 0.0;
    if (knee > 0.0) total += radial_integral(psi_integral, 0.0, knee, 4);
    total += radial_integral(psi_integral, knee, r, 4);
    return total;
}

// Shell lo < |x - y| <= hi with hi below the gap between disk and box: the
// box never binds, so the polar angle of x drops out.
double shell_integral(const ShellParams& p, double lo, double hi) {
    ShellParams q = p;
    q.use_box = false;
    auto f = [&](double t) { return kTwoPi * direction_integral(q, t, 0.0, lo, hi); };
    const double r = p.radius;
    return radial_integral(f, r - hi, r - lo, 4) + radial_integral(f, r - lo, r, 4);
}

}  // namespace

const GaussRule& gauss_legendre(int n) {
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<GaussRule>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<GaussRule>(build_gauss_legendre(n));
    return *slot;
}

double integrate(const std::function<double(double)>& f, double a, double b, int n, int panels) {
    const GaussRule& rule = gauss_legendre(n);
    double total = 0.0;
    for (int k = 0; k < panels; ++k) {
        const double s0 = a + (b - a) * k / panels;
        const double s1 = a + (b - a) * (k + 1) / panels;
        const double half = 0.5 * (s1 - s0);
        const double mid = 0.5 * (s1 + s0);
        for (int q = 0; q < n; ++q) total += half * rule.weights[q] * f(mid + half * rule.nodes[q]);
    }
    return total;
}

Complex contour_integral(const std::function<Complex(Complex)>& f, Complex center, double radius, int order) {
    if (order < 8) throw ConfigError("contour quadrature order must be at least 8", "order");
    Complex total{0.0, 0.0};
    const double step = kTwoPi / order;
    for (int k = 0; k < order; ++k) {
        const Complex e = std::polar(1.0, step * k);
        total += f(center + radius * e) * Complex(0.0, radius) * e;
    }
    return total * step;
}

Complex contour_integral_conj(const std::function<Complex(Complex)>& f, Complex center, double radius,
                              int order) {
    if (order < 8) throw ConfigError("contour quadrature order must be at least 8", "order");
    Complex total{0.0, 0.0};
    const double step = kTwoPi / order;
    for (int k = 0; k < order; ++k) {
        const Complex e = std::polar(1.0, step * k);
        total += f(center + radius * e) * Complex(0.0, -radius) * std::conj(e);
    }
    return total * step;
}

double NodeSet::total_weight() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
}

NodeSet singular_grid(Complex center, double inner, double outer, int levels, int radial_order, int angular) {
    if (levels < 2) throw ConfigError("singular grid needs at least 2 levels", "levels");
    if (!(inner > 0.0) || !(outer > inner)) throw ConfigError("singular grid needs 0 < inner < outer", "inner");
    if (angular < 1 || radial_order < 1) throw ConfigError("singular grid resolution must be positive", "angular");
    const GaussRule& rule = gauss_legendre(radial_order);
    NodeSet out;
    out.points.reserve(static_cast<std::size_t>(levels) * radial_order * angular);
    out.weights.reserve(out.points.capacity());
    const double ratio = std::pow(outer / inner, 1.0 / levels);
    const double dphi = kTwoPi / angular;
    for (int shell = 0; shell < levels; ++shell) {
        const double r0 = inner * std::pow(ratio, shell);
        const double r1 = shell + 1 == levels ? outer : r0 * ratio;
        const double half = 0.5 * (r1 - r0);
        const double mid = 0.5 * (r1 + r0);
        const double offset = (shell % 2) * 0.5 * dphi;
        for (int q = 0; q < radial_order; ++q) {
            const double r = mid + half * rule.nodes[q];
            const double wr = half * rule.weights[q] * r * dphi;
            for (int k = 0; k < angular; ++k) {
                out.points.push_back(center + std::polar(r, offset + dphi * k));
                out.weights.push_back(wr);
            }
        }
    }
    return out;
}

SingularIntegralSpec SingularIntegralSpec::with_dyadic_schedule(double exponent, int levels) {
    SingularIntegralSpec spec;
    spec.exponent = exponent;
    for (int k = 1; k <= levels; ++k) spec.cutoffs.push_back(std::ldexp(1.0, -k));
    return spec;
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Convergent: return "convergent";
        case Verdict::Marginal: return "marginal";
        case Verdict::Divergent: return "divergent";
    }
    return "unknown";
}

SingularIntegralResult ball_complement_integral(const SingularIntegralSpec& spec) {
    if (spec.cutoffs.size() < 3) throw ConfigError("refinement schedule needs at least 3 levels", "cutoffs");
    if (spec.exponent < 0.0) throw ConfigError("exponent must be non-negative", "exponent");
    if (!(spec.ball_radius > 0.0) || !(spec.half_width > spec.ball_radius))
        throw ConfigError("need 0 < r < half width of K", "ball_radius");
    for (std::size_t k = 0; k < spec.cutoffs.size(); ++k) {
        if (!(spec.cutoffs[k] > 0.0) || (k > 0 && !(spec.cutoffs[k] < spec.cutoffs[k - 1])))
            throw ConfigError("cutoffs must be positive and strictly decreasing", "cutoffs");
    }
    const ShellParams p{spec.exponent, spec.ball_radius, spec.half_width, true};
    const double gap = spec.half_width - spec.ball_radius;

    SingularIntegralResult out;
    out.values.push_back(full_integral(p, spec.cutoffs.front(), std::numeric_limits<double>::infinity()));
    for (std::size_t k = 0; k + 1 < spec.cutoffs.size(); ++k) {
        const double hi = spec.cutoffs[k];
        const double lo = spec.cutoffs[k + 1];
        const double inc = hi < 0.99 * gap ? shell_integral(p, lo, hi) : full_integral(p, lo, hi);
        out.increments.push_back(inc);
        out.values.push_back(out.values.back() + inc);
    }

    const std::size_t m = out.increments.size();
    if (m >= 2 && out.increments[m - 2] > 0.0 && out.increments[m - 1] > 0.0) {
        double log_ratio = std::log(out.increments[m - 1] / out.increments[m - 2]);
        double log_step = std::log(spec.cutoffs[m - 1] / spec.cutoffs[m]);
        if (m >= 3 && out.increments[m - 3] > 0.0) {
            log_ratio = 0.5 * (log_ratio + std::log(out.increments[m - 2] / out.increments[m - 3]));
            log_step = 0.5 * (log_step + std::log(spec.cutoffs[m - 2] / spec.cutoffs[m - 1]));
        }
        out.increment_ratio = std::exp(log_ratio);
        out.growth_exponent = log_ratio / log_step;
    }
    if (out.growth_exponent < -kVerdictTolerance) {
        out.verdict = Verdict::Convergent;
        const double rho = out.increment_ratio;
        out.limit = out.values.back() + out.increments.back() * rho / (1.0 - rho);
    } else {
        out.verdict = out.growth_exponent > kVerdictTolerance ? Verdict::Divergent : Verdict::Marginal;
        out.limit = out.values.back();
    }
    return out;
}

}  // namespace lcft::quadrature
