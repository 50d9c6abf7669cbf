#pragma once

#include <cstdint>
#include <memory>
#include <ostream>
#include <vector>

#include "lcft/common.hpp"

namespace lcft {

/// Round metric g(z) = 4 / (1 + |z|^2)^2 in the stereographic chart.
struct RoundMetric {
    static constexpr double curvature = 2.0;
    static double density(Complex z);
    static double log_density(Complex z);
};

double metric_density(Complex z);

/// Zero-mean Green function of the round sphere:
/// ln(1/|a-b|) - (ln g(a) + ln g(b)) / 4 + ln 2 - 1/2. Throws DomainError
/// when a == b.
double covariance(Complex a, Complex b);

/// Cosine of the angle between the unit vectors of a and b.
double sphere_cosine(Complex a, Complex b);

/// Covariance as a function of that cosine: -ln((1-t)/2)/2 - 1/2.
double covariance_of_cosine(double t);

/// Spectral truncation of the covariance at degree l_max:
/// sum_{l=1..l_max} (2l+1) / (2 l (l+1)) P_l(t).
double truncated_covariance(double t, int l_max);

/// Tail of the Legendre expansion, |C(t) - C_L(t)|; infinite at t = 1.
double truncation_bound(double t, int l_max);

/// C_L tabulated against the half chord s = sqrt((1-t)/2) with linear
/// interpolation; C_L is smooth in s on the scale 1/L, so 2^16 intervals
/// keep the error well below 1e-6 for L <= 128.
class CovarianceTable {
  public:
    explicit CovarianceTable(int l_max, int intervals = 1 << 16);

    double of_cosine(double t) const;
    double operator()(Complex a, Complex b) const { return of_cosine(sphere_cosine(a, b)); }
    int l_max() const { return l_max_; }

  private:
    int l_max_;
    std::vector<double> values_;
};

/// Stereographic chart: colatitude theta (0 at z = 0), longitude phi.
Complex chart_point(double theta, double phi);
double colatitude(Complex z);

/// Quadrature nodes on the sphere grouped in rings of common colatitude.
/// Weights are area weights of the unit sphere, i.e. g(z) d^2z.
class SphereGrid {
  public:
    struct Ring {
        double cos_theta = 1.0;
        double sin_theta = 0.0;
        std::size_t offset = 0;  // first node
        std::size_t count = 0;
        double phi0 = 0.0;   // longitude of the first node
        double dphi = 0.0;   // spacing (0 for a single node)
    };

    /// Gauss-Legendre in cos(theta) times n_phi equispaced longitudes.
    static SphereGrid gauss(int n_theta, int n_phi);

    /// Default resolution used by the experiments.
    static SphereGrid standard() { return gauss(96, 192); }

    /// Arbitrary points with given weights (one ring per point).
    static SphereGrid from_points(const std::vector<Complex>& points, const std::vector<double>& weights);

    /// Appends a point set; returns the index of its first node.
    std::size_t append(const std::vector<Complex>& points, const std::vector<double>& weights);

    const std::vector<Complex>& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<Ring>& rings() const { return rings_; }
    std::size_t size() const { return points_.size(); }
    double total_weight() const;

    /// Typical angular node spacing (pi / n_theta); 0 for a pure point set.
    double spacing() const { return spacing_; }

    /// True when a rotation by one longitude step maps the grid onto itself
    /// (pure Gauss grids), so ring-wise quantities need one node per ring.
    bool rotation_symmetric() const { return symmetric_; }

  private:
    void add_ring(double cos_theta, double phi0, double dphi, std::size_t count);

    std::vector<Complex> points_;
    std::vector<double> weights_;
    std::vector<Ring> rings_;
    double spacing_ = 0.0;
    bool symmetric_ = false;
};

/// A realization of the (possibly mollified) field on a grid.
struct FieldSample {
    std::shared_ptr<const SphereGrid> grid;
    std::vector<double> values;
    /// Var of the field at each node (exact for the regularization used).
    std::vector<double> variance;
    int l_max = 0;
    double epsilon = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;
};

/// Spherical-harmonic sampler with Legendre tables precomputed per ring.
/// X = sqrt(2 pi) sum_{l=1..L} sum_m X_lm Y_lm / sqrt(l(l+1)); the
/// (L+1)^2 - 1 normals are drawn in the order l = 1.., m = 0, (1,c), (1,s),...
/// so samplers with different L share their leading modes.
class FieldSampler {
  public:
    FieldSampler(std::shared_ptr<const SphereGrid> grid, int l_max);

    FieldSample sample(std::uint64_t seed, std::uint64_t replica) const;

    /// Samples the field from supplied mode coefficients (length modes()).
    std::vector<double> synthesize(const std::vector<double>& modes) const;

    std::size_t modes() const { return static_cast<std::size_t>((l_max_ + 1) * (l_max_ + 1) - 1); }
    int l_max() const { return l_max_; }
    const std::shared_ptr<const SphereGrid>& grid() const { return grid_; }

  private:
    std::shared_ptr<const SphereGrid> grid_;
    int l_max_;
    std::vector<std::vector<double>> legendre_;  // per ring, packed (l, m) with m <= l
};

FieldSample sample_field(std::shared_ptr<const SphereGrid> grid, int l_max, std::uint64_t seed,
                         std::uint64_t replica);

/// rho_eps(z) = eps^-2 rho(|z|^2 / eps^2) / N with rho(t) = exp(-1/(1-t)) on
/// [0, 1) and N chosen so the kernel integrates to one.
struct MollifierKernel {
    double epsilon = 0.05;

    static double profile(double t);
    /// pi * int_0^1 rho(t) dt.
    static double normalization();
    double operator()(Complex d) const;
};

/// Discrete convolution in the plane chart (the inverted chart w = 1/z for
/// nodes with |z| > 1). Neighbour lists and per-node variances are built
/// once; apply() is then a sparse matrix-vector product.
class Mollifier {
  public:
    Mollifier(std::shared_ptr<const SphereGrid> grid, MollifierKernel kernel, int l_max);

    FieldSample apply(const FieldSample& field) const;

    /// Var of the mollified truncated field at each node.
    const std::vector<double>& variance() const { return variance_; }
    const MollifierKernel& kernel() const { return kernel_; }
    /// Smallest number of grid nodes inside any kernel support.
    std::size_t min_support() const { return min_support_; }

  private:
    std::shared_ptr<const SphereGrid> grid_;
    MollifierKernel kernel_;
    int l_max_;
    std::vector<std::size_t> row_start_;
    std::vector<std::size_t> columns_;
    std::vector<double> coefficients_;
    std::vector<double> variance_;
    std::size_t min_support_ = 0;
};

/// Minimum number of nodes a kernel support must contain.
inline constexpr std::size_t kMinMollifierSupport = 12;

FieldSample mollify(const FieldSample& field, const MollifierKernel& kernel);

/// Var (rho_eps * X)(z) for the exact (untruncated) field, by quadrature.
double variance_of_mollified(Complex z, double epsilon);

/// Area-weighted mean of a sample: sum w_k X_k / sum w_k.
double weighted_mean(const FieldSample& field);

/// CSV dump with columns re, im, value.
void write_field_csv(std::ostream& out, const FieldSample& field);

}  // namespace lcft
