#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "lcft/parallel.hpp"
#include "lcft/sphere_gff.hpp"

namespace lcft {

/// Chaos parameter gamma in (0, 2) and the background charge Q.
class GammaParam {
  public:
    explicit GammaParam(double gamma);
    double value() const { return gamma_; }
    double Q() const { return 2.0 / gamma_ + gamma_ / 2.0; }

  private:
    double gamma_;
};

/// Atomized regularized chaos: w_k = exp(gamma X_k - gamma^2 Var_k / 2) * (area weight g d^2z).
struct ChaosMeasure {
    std::shared_ptr<const SphereGrid> grid;
    std::vector<double> weights;
    double gamma = 0.0;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;

    double total_mass() const;
};

ChaosMeasure chaos_measure(const FieldSample& field, GammaParam gamma);

/// sum_k f(z_k) w_k. A non-finite f at a node with positive weight throws
/// DomainError.
double integrate(const ChaosMeasure& measure, const std::function<double(Complex)>& f);

/// CSV dump with columns re, im, weight.
void write_measure_csv(std::ostream& out, const ChaosMeasure& measure);

/// Positive moments of order >= 4 / gamma^2 of chaos masses do not exist;
/// throws PreconditionError for such orders.
void check_moment_order(double order, GammaParam gamma);

/// Field generator indexed by replica.
using FieldGenerator = std::function<FieldSample(std::uint64_t replica)>;

/// B = A + N(0, c) with the extra Gaussian drawn from its own stream;
/// variance metadata is raised by c.
FieldGenerator shifted_generator(FieldGenerator base, double c, std::uint64_t seed);

struct KahaneComparison {
    SampleStats a;
    SampleStats b;
    /// Replica-wise difference F_B - F_A (common random numbers).
    SampleStats difference;
    /// a <= b within `sigmas` standard errors of the paired difference.
    bool ordered = false;
    /// |a - b| within `sigmas` standard errors.
    bool equal = false;
    /// Largest excess of empirical Cov_A over Cov_B on the probe pairs, in
    /// standard errors; non-empty warning when it exceeds 3.
    double domination_excess = 0.0;
    std::string warning;
};

/// Estimates E F(int f dM) for two fields. Probe pairs (node indices) are
/// used to check empirically that Cov_A <= Cov_B.
KahaneComparison kahane_compare(const FieldGenerator& a, const FieldGenerator& b, GammaParam gamma,
                                const std::function<double(Complex)>& f, const std::function<double(double)>& F,
                                std::size_t replicas, double sigmas = 2.0,
                                const std::vector<std::pair<std::size_t, std::size_t>>& probes = {});

}  // namespace lcft
