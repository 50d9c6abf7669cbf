#include "lcft/gmc.hpp"

#include <algorithm>
#include <cmath>

#include "lcft/rng.hpp"

namespace lcft {

GammaParam::GammaParam(double gamma) : gamma_(gamma) {
    if (!(gamma > 0.0 && gamma < 2.0)) throw ConfigError("gamma must lie in (0, 2)", "gamma");
}

double ChaosMeasure::total_mass() const { return pairwise_sum(weights); }

ChaosMeasure chaos_measure(const FieldSample& field, GammaParam gamma) {
    if (!field.grid) throw PreconditionError("field has no grid", "field");
    if (field.variance.size() != field.values.size())
        throw PreconditionError("field carries no per-node variance", "field");
    const double g = gamma.value();
    const auto& area = field.grid->weights();
    ChaosMeasure out;
    out.grid = field.grid;
    out.gamma = g;
    out.epsilon = field.epsilon;
    out.seed = field.seed;
    out.replica = field.replica;
    out.weights.resize(field.values.size());
    for (std::size_t k = 0; k < field.values.size(); ++k)
        out.weights[k] = std::exp(g * field.values[k] - 0.5 * g * g * field.variance[k]) * area[k];
    return out;
}

double integrate(const ChaosMeasure& measure, const std::function<double(Complex)>& f) {
    const auto& pts = measure.grid->points();
    std::vector<double> terms(pts.size(), 0.0);
    for (std::size_t k = 0; k < pts.size(); ++k) {
        if (measure.weights[k] == 0.0) continue;
        const double v = f(pts[k]);
        if (!std::isfinite(v)) throw DomainError("integrand is not finite at a grid node", "f");
        terms[k] = v * measure.weights[k];
    }
    return pairwise_sum(terms);
}

void write_measure_csv(std::ostream& out, const ChaosMeasure& measure) {
    out << "re,im,weight\n";
    out.precision(17);
    const auto& pts = measure.grid->points();
    for (std::size_t k = 0; k < pts.size(); ++k)
        out << pts[k].real() << ',' << pts[k].imag() << ',' << measure.weights[k] << '\n';
}

void check_moment_order(double order, GammaParam gamma) {
    const double limit = 4.0 / (gamma.value() * gamma.value());
    if (order >= limit)
        throw PreconditionError("moment of order " + std::to_string(order) + " does not exist (needs order < " +
                                    std::to_string(limit) + ")",
                                "order");
}

FieldGenerator shifted_generator(FieldGenerator base, double c, std::uint64_t seed) {
    if (!(c >= 0.0)) throw ConfigError("shift variance must be non-negative", "c");
    return [base = std::move(base), c, seed](std::uint64_t replica) {
        FieldSample s = base(replica);
        CounterRng rng(seed, replica, Stream::ExtraGaussian);
        const double n = std::sqrt(c) * rng.normal();
        for (double& v : s.values) v += n;
        for (double& v : s.variance) v += c;
        return s;
    };
}

KahaneComparison kahane_compare(const FieldGenerator& a, const FieldGenerator& b, GammaParam gamma,
                                const std::function<double(Complex)>& f, const std::function<double(double)>& F,
                                std::size_t replicas, double sigmas,
                                const std::vector<std::pair<std::size_t, std::size_t>>& probes) {
    if (replicas < 2) throw ConfigError("need at least 2 replicas", "replicas");
    std::vector<double> fa(replicas), fb(replicas), diff(replicas);
    std::vector<std::vector<double>> cov_diff(probes.size(), std::vector<double>(replicas));
    parallel_for(replicas, [&](std::size_t r) {
        const FieldSample sa = a(r);
        const FieldSample sb = b(r);
        fa[r] = F(integrate(chaos_measure(sa, gamma), f));
        fb[r] = F(integrate(chaos_measure(sb, gamma), f));
        diff[r] = fb[r] - fa[r];
        for (std::size_t p = 0; p < probes.size(); ++p) {
            const auto [i, j] = probes[p];
            cov_diff[p][r] = sa.values[i] * sa.values[j] - sb.values[i] * sb.values[j];
        }
    });
    KahaneComparison out;
    out.a = sample_stats(fa);
    out.b = sample_stats(fb);
    out.difference = sample_stats(diff);
    const double tol = sigmas * out.difference.stderr_;
    out.ordered = out.difference.mean >= -tol;
    out.equal = std::abs(out.difference.mean) <= tol;
    for (const auto& d : cov_diff) {
        const SampleStats s = sample_stats(d);
        if (s.stderr_ > 0.0) out.domination_excess = std::max(out.domination_excess, s.mean / s.stderr_);
    }
    if (out.domination_excess > 3.0)
        out.warning = "empirical covariance of A exceeds that of B by " + std::to_string(out.domination_excess) +
                      " standard errors on a probe pair";
    return out;
}

}  // namespace lcft
