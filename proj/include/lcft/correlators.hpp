#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lcft/gmc.hpp"
#include "lcft/parallel.hpp"
#include "lcft/sphere_gff.hpp"

namespace lcft {

/// s = (sum alpha - 2Q) / gamma when alpha_i < Q for all i and
/// sum alpha > 2Q; otherwise throws SeibergError.
double validate_seiberg(const std::vector<double>& alphas, double gamma);

/// B = 4 exp(-((ln 2 - 1/2) / 2) (s gamma)^2).
double b_factor(double s, double gamma);

struct InsertionConfig {
    std::vector<Complex> points;
    std::vector<double> alphas;
    double gamma = 1.0;
    double mu = 1.0;

    double Q() const { return 2.0 / gamma + gamma / 2.0; }
    /// (sum alpha - 2Q) / gamma, without validation.
    double s() const;
    double B() const { return b_factor(s(), gamma); }
    /// Minimum pairwise distance of the insertions.
    double delta() const;
    /// Factor relating the chaos normalization to the vertex normalization,
    /// exp(-gamma^2 (ln 2 - 1/2) / 2). Every gamma-insertion generated from
    /// mu M(d^2x) carries mu * kappa with the reduction constants as stated.
    double kappa() const;
    double mu_effective() const { return mu * kappa(); }

    /// Checks gamma, mu, distinct finite points and the Seiberg bounds.
    void validate() const;
    /// Insertions sorted by (re, im, alpha).
    InsertionConfig canonical() const;
    /// Appends gamma-momentum insertions at the given points.
    InsertionConfig with_gamma_insertions(const std::vector<Complex>& extra) const;
};

/// prod_i (g(x)^(-1/4) / |x - z_i|)^(gamma alpha_i). Throws DomainError at
/// an insertion.
double singular_weight(Complex x, const InsertionConfig& config);

/// Orientation of the insertion kernel 1/(x - z) versus 1/(z - x).
enum class KernelSign { XMinusZ, ZMinusX };
Complex insertion_kernel(Complex x, Complex z, KernelSign sign);

struct MCConfig {
    std::uint64_t seed = 1;
    std::size_t replicas = 1000;
    int l_max = 32;
    /// Global grid resolution; 0 picks max(48, 3 l_max / 2) rings and twice
    /// as many longitudes.
    int n_theta = 0;
    int n_phi = 0;
    /// Log-polar subgrids on B(z_i, delta/4).
    bool refine = true;
    int local_levels = 16;
    int local_radial = 2;
    int local_angular = 24;
    /// inner radius of the subgrid relative to its outer radius
    double local_inner = 1.0 / 256.0;

    std::string describe() const;
};

/// High-resolution patch for probes at separations far below 1/l_max.
///
/// Nodes inside the patch carry X_L + Y, with Y an independent Gaussian field
/// of covariance C_{l_fine} - C_L (sampled by Cholesky on the patch nodes), so
/// the model covariance between two patch points is C_{l_fine}. Points outside
/// keep C_L. The patch is a log-polar grid around `center`; each focus gets an
/// extra log-polar subgrid of its own radius.
struct FinePatch {
    Complex center{0.0, 0.0};
    double radius = 0.125;
    int l_fine = 4096;
    int levels_per_octave = 6;
    int angular = 32;
    double inner = 1.0 / 4096.0;
    std::vector<Complex> foci;
    std::vector<double> focus_radii;
    int focus_levels_per_octave = 2;
    int focus_radial = 2;
    int focus_angular = 12;
    double focus_inner = 1.0 / 16384.0;
    /// Circles around the center whose field averages are recorded per
    /// replica (zero-weight nodes); used for tilted sampling.
    std::vector<double> probe_radii;
    int probe_points = 64;

    bool contains(Complex p) const { return std::abs(p - center) < radius; }
    std::string describe() const;
};

struct CorrelationEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    std::size_t replicas = 0;
    std::uint64_t seed = 0;
    std::uint64_t fingerprint = 0;
    int l_max = 0;
    std::size_t nodes = 0;
};

/// Hash of every parameter that determines an estimate.
std::uint64_t config_fingerprint(const InsertionConfig& config, const MCConfig& mc,
                                 const std::vector<Complex>& extra = {});

/// Regularized correlator model shared by all estimators.
///
/// The field is the spectral truncation X_L, and every |a - b|^-1 of the
/// reduction formula that involves a gamma-insertion is replaced by P_L(a, b) = exp(C_L(a, b) - C(a, b)) / |a - b|,
/// which is what a gamma-insertion produces under Cameron-Martin for the
/// truncated field. P_L -> |a - b|^-1 as L grows, and with it the model
/// satisfies the insertion (Girsanov) identities exactly, also after
/// discretization on the node set.
///
/// Replicas are drawn once; G(z), G(x; z) for batches of x, contour values
/// and the Girsanov moments all reuse them (common random numbers).
class ChaosEnsemble {
  public:
    ChaosEnsemble(const InsertionConfig& config, const MCConfig& mc);
    /// Patches must be disjoint and share l_fine; their Y fields are independent.
    ChaosEnsemble(const InsertionConfig& config, const MCConfig& mc, const std::vector<FinePatch>& patches);

    const InsertionConfig& config() const { return config_; }
    const MCConfig& mc() const { return mc_; }
    double s() const { return s_; }
    std::size_t replicas() const { return log_scale_.size(); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Complex>& nodes() const { return nodes_; }
    /// Area weights g d^2z after the partition of unity.
    const std::vector<double>& area() const { return area_; }

    /// Covariance of the model field between two points; C_L unless both lie
    /// in the same fine patch.
    double model_covariance(Complex a, Complex b) const;
    /// ln P_L(a, b) = C_model(a, b) + (ln g(a) + ln g(b)) / 4 - (ln 2 - 1/2).
    double log_pair_kernel(Complex a, Complex b) const;
    /// ln F_L(u) = sum_i gamma alpha_i ln(g(u)^(-1/4) P_L(u, z_i)).
    double log_F(Complex u) const;
    /// ln of 2 B mu^-s gamma^-1 Gamma(s) prod_{i<j} |z_i - z_j|^(-alpha_i alpha_j). The
    /// deterministic insertion-insertion factor takes the exact kernel: no
    /// Girsanov identity involves it, and its z-derivative is then free of
    /// truncation oscillations.
    double log_prefactor() const { return log_prefactor_; }

    /// Per replica: nu_k = F_L(u_k) M(du_k) / exp(log_scale[r]) (column r).
    const Eigen::MatrixXd& scaled_density() const { return density_; }
    const std::vector<double>& log_scale() const { return log_scale_; }
    /// ln int F_L dM per replica.
    const std::vector<double>& log_mass() const { return log_mass_; }

    /// Per-replica values of G(z).
    std::vector<double> samples() const;
    /// Per-replica values of G(z; extra) with gamma-insertions at `extra`,
    /// evaluated directly from the extended reduction formula.
    std::vector<double> samples_with_insertions(const std::vector<Complex>& extra) const;
    /// Exponential tilt (Cameron-Martin shift) of the stored replicas along
    /// recorded circle averages l_a: X -> X + sum_a c_a Cov(X, l_a), with
    /// likelihood-ratio weights, so the estimate is unbiased for any c. With
    /// c = -2 (2 gamma - Q) the radial process of a merging pair gets the
    /// reflected drift, which removes its rare-event structure.
    struct ProbeTilt {
        std::size_t patch = 0;
        std::size_t probe = 0;
        double strength = 0.0;
    };
    using Tilt = std::vector<ProbeTilt>;
    std::vector<double> samples_with_insertions(const std::vector<Complex>& extra, const Tilt& tilt) const;
    /// Field average on a probe circle, per replica.
    const std::vector<double>& probe_values(std::size_t patch, std::size_t probe) const;

    /// Per-replica values of G(x_j; z): row j, column r. Batched over x with
    /// dense products.
    Eigen::MatrixXd single_insertion_samples(const std::vector<Complex>& xs) const;

    /// Girsanov moments. For h of m variables,
    ///   int h(x) G(x_1..x_m; z) prod d^2x_a
    ///     = Gamma(s+m)/Gamma(s) mu_eff^-m K0 E[Z^(-s-m) int h prod F_L(x_a) M(dx_a)],
    /// returned per replica. `rows`/`cols` restrict the node sums (empty = all).
    std::vector<Complex> moment1(const std::function<Complex(Complex)>& h,
                                 const std::vector<std::size_t>& rows = {}) const;
    std::vector<Complex> moment2(const std::function<Complex(Complex, Complex)>& h,
                                 const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) const;

    /// Mean estimate of G(z) with provenance.
    CorrelationEstimate estimate() const;

    /// Index of the first fine-patch node (size() without patches).
    std::size_t fine_begin() const { return patch_begin_.front(); }

  private:
    void setup();
    void build_nodes();
    void add_patch_nodes(SphereGrid& grid, std::size_t p);
    void draw_replicas();
    void add_fine_field(std::size_t r0, std::size_t count, std::vector<std::vector<double>>& values) const;
    int patch_of(Complex x) const;
    double node_covariance(std::size_t k, Complex x) const;
    double node_pair_covariance(std::size_t k, std::size_t l) const;
    int patch_of_node(std::size_t k) const;
    std::vector<double> insertion_samples(const std::vector<Complex>& extra, const Eigen::VectorXd* log_shift,
                                          const std::vector<double>* log_weight) const;

    InsertionConfig config_;
    MCConfig mc_;
    double s_ = 0.0;
    double log_prefactor_ = 0.0;
    std::shared_ptr<const CovarianceTable> table_;
    std::vector<FinePatch> patches_;
    std::shared_ptr<const CovarianceTable> fine_table_;
    std::vector<Eigen::MatrixXd> fine_factor_;
    std::vector<std::size_t> patch_begin_;  // node ranges, size patches + 1
    struct Probe {
        std::vector<std::size_t> nodes;
        std::vector<double> values;
    };
    std::vector<std::vector<Probe>> probes_;
    std::shared_ptr<const SphereGrid> grid_;
    std::vector<Complex> nodes_;
    std::vector<double> area_;
    std::vector<double> log_F_;
    Eigen::MatrixXd density_;
    std::vector<double> log_scale_;
    std::vector<double> log_mass_;
};

/// Estimate of G(z) with gamma-insertions at `extra` (may be empty).
CorrelationEstimate estimate_correlation(const InsertionConfig& config, const std::vector<Complex>& extra,
                                         const MCConfig& mc);

struct RatioEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
};

/// Ratio of means of paired replica values with delta-method error.
RatioEstimate ratio_of_means(const std::vector<double>& num, const std::vector<double>& den);

struct KpzResult {
    /// mu gamma int G(x; z) d^2x (with the stated mu).
    SampleStats lhs;
    /// (sum alpha - 2Q) G(z).
    SampleStats rhs;
    /// lhs / rhs, raw constants.
    RatioEstimate raw_ratio;
    /// Same with mu replaced by mu * kappa on the left.
    RatioEstimate ratio;
    /// exp(gamma^2 (ln 2 - 1/2) / 2): expected raw ratio.
    double raw_expected = 0.0;
    bool pass = false;
    std::uint64_t fingerprint = 0;
};

/// KPZ identity with x-quadrature over the ensemble node set. Passes when
/// the corrected ratio is within 3 propagated standard errors of 1.
KpzResult kpz_check(const InsertionConfig& config, const MCConfig& mc);
KpzResult kpz_check(const ChaosEnsemble& ensemble);

/// Weyl anomaly: A(phi) = ((c_L - 1) / 24 pi) int (|d_z phi|^2 + g R_g phi / 2) d^2z
/// with c_L - 1 = 6 Q^2, on two grid resolutions. Throws DegeneracyError when
/// they disagree by more than `tolerance` (absolute, in A).
double weyl_anomaly(const std::function<double(Complex)>& phi, double Q, double tolerance = 1e-6);

struct WeylTransformed {
    CorrelationEstimate estimate;
    double anomaly = 0.0;
    std::string metric_tag;
};

WeylTransformed weyl_transform(const CorrelationEstimate& estimate, const std::function<double(Complex)>& phi,
                               double Q, const std::string& phi_name = "phi");

}  // namespace lcft
