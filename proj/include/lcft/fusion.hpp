#pragma once

#include <cstdint>
#include <limits>
#include <ostream>
#include <vector>

#include "lcft/correlators.hpp"

namespace lcft {

/// Closed annulus {inner <= |x - center| <= outer}.
struct Annulus {
    Complex center{0.0, 0.0};
    double inner = 0.0;
    double outer = 0.0;

    bool contains(Complex x) const;
    bool overlaps(const Annulus& other) const;
};

enum class LogCorrection {
    Auto,   // Fixed when 2 gamma > Q, None otherwise
    None,
    Fixed,  // ln G + (3/2) ln|ln t| is fitted
    Free,   // beta ln|ln t| is a fitted nuisance
};

/// Pair j sits on the boundary of the ball B(z_{anchor_j}, r_j): its midpoint
/// is z + r_j e^{i theta_j}, x_j = midpoint - (t/2) e^{i theta_j} inside the
/// ball, y_j = midpoint + (t/2) e^{i theta_j} outside. Each pair gets a fine
/// patch around its midpoint; A_j is the annulus around the anchor holding it.
struct FusionProbeConfig {
    InsertionConfig base;
    std::vector<std::size_t> anchors{0};
    /// r_j; empty means 0.45 delta for every pair.
    std::vector<double> ball_radii;
    /// theta_j; empty means pi/2.
    std::vector<double> directions;
    /// Strictly decreasing.
    std::vector<double> separations;
    int l_fine = 4096;
    /// Radial-drift tilt along the circle of radius t; NaN picks
    /// -2 max(0, 2 gamma - Q).
    double tilt = std::numeric_limits<double>::quiet_NaN();
    LogCorrection log_correction = LogCorrection::Auto;

    std::size_t pairs() const { return anchors.size(); }
    double radius(std::size_t j) const;
    double direction(std::size_t j) const;
    Complex midpoint(std::size_t j) const;
    /// Fine-patch radius for pair j: 90% of the room left by the insertion
    /// subgrids, at most 0.2.
    double patch_radius(std::size_t j) const;
    Annulus annulus(std::size_t j) const;
    std::vector<Complex> pair(std::size_t j, double t) const;

    /// Geometry and Seiberg checks; ConfigError on overlapping annuli.
    void validate() const;
    double tilt_strength() const;
};

struct FusionPoint {
    double separation = 0.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
};

struct SlopeFit {
    double slope = 0.0;
    double stderr_ = 0.0;
    double intercept = 0.0;
    /// beta of the ln|ln t| term (fixed or fitted); 0 without correction.
    double log_coefficient = 0.0;
};

struct FusionResult {
    std::vector<FusionPoint> points;  // pair 0
    SlopeFit fit;
    double ci_low = 0.0;
    double ci_high = 0.0;
    /// Ordinary least-squares slope of ln G on ln t, no log term.
    double plain_slope = 0.0;
    bool log_corrected = false;
    /// -gamma^2 + (2 gamma - Q)^2 / 2.
    double predicted = 0.0;
    bool inconclusive = false;
    /// 2 gamma - Q - (q/n) gamma with q = 2n + s; negative for valid inputs.
    double series_exponent = 0.0;

    // n = 2: joint scaling at (t, t) against the sum of the marginal slopes.
    bool product_checked = false;
    std::vector<FusionPoint> joint_points;
    double joint_slope = 0.0;
    double marginal_slope_sum = 0.0;
    double product_stderr = 0.0;
    bool product_consistent = false;

    std::uint64_t fingerprint = 0;
};

/// -gamma^2 + (2 gamma - Q)^2 / 2.
double predicted_fusion_slope(double gamma);

/// Least squares of y on ln t (plus the log term) with the slope error from
/// the full covariance of y. Throws ConfigError for fewer than 4 points.
SlopeFit fit_log_slope(const std::vector<double>& t, const std::vector<double>& y,
                       const Eigen::MatrixXd& covariance, LogCorrection mode);

/// Estimates G(x, y; z) along the separations with common random numbers and
/// fits the log-log slope. mc.l_max sets the coarse field.
FusionResult fusion_scaling_probe(const FusionProbeConfig& probe, const MCConfig& mc);

/// CSV with columns separation, estimate, stderr.
void write_fusion_csv(std::ostream& out, const std::vector<FusionPoint>& points);

struct RadialProcessConfig {
    double gamma = 1.4142135623730951;
    /// NaN means 2 gamma - Q.
    double drift = std::numeric_limits<double>::quiet_NaN();
    double horizon = 4.0;
    double q = 1.0;
    int band = 1;
    std::size_t replicas = 20000;
    /// 0 means horizon / 2048.
    double time_step = 0.0;
    /// Log-variance of the per-step lognormal lateral mass (unit mean).
    double lateral_variance = 0.25;
    std::uint64_t seed = 1;

    double effective_drift() const;
    double effective_step() const;
    /// ResolutionError when the step exceeds horizon/100, ConfigError otherwise.
    void validate() const;
};

struct RadialEstimate {
    int band = 0;
    double horizon = 0.0;
    double value = 0.0;
    double stderr_ = 0.0;
    /// q = 0 moment: probability of the band.
    double probability = 0.0;
    double probability_stderr = 0.0;
};

/// E[1{max_{[0,r]} P in band k} (int_0^r int e^{gamma P_s} mu_Y)^(-q)] for
/// P_s = B_s + drift s. Band 0 is {max <= 0}, band k >= 1 is (k-1, k].
/// Paths are drawn from an equal mixture of drifts +drift and -drift with
/// the exact likelihood ratio (bounded by 2), which keeps low bands
/// estimable at large r.
RadialEstimate radial_band_moment(const RadialProcessConfig& cfg);
/// Bands 0..k_max from the same paths.
std::vector<RadialEstimate> radial_band_moments(const RadialProcessConfig& cfg, int k_max);

/// (k + 1) e^{(drift - q gamma) k} r^(-3/2) e^{-drift^2 r / 2}.
double radial_lemma_shape(double gamma, double drift, double q, int band, double horizon);

struct RadialLemmaCell {
    RadialEstimate estimate;
    double shape = 0.0;
    double ratio = 0.0;  // estimate / shape
};

struct RadialLemmaFit {
    std::vector<RadialLemmaCell> cells;
    /// Single constant fitted on the calibration cells (largest ratio plus
    /// two standard errors).
    double constant = 0.0;
    /// Cells beyond the calibration set exceeding constant * shape by more
    /// than three standard errors.
    std::size_t violations = 0;
    bool dominated = false;
};

/// Fits C on the cells with band <= calibration_band and checks every cell
/// against C times the shape.
RadialLemmaFit fit_radial_lemma(const RadialProcessConfig& cfg, const std::vector<double>& horizons, int k_max,
                                int calibration_band = 2);

struct DecouplingReport {
    std::size_t pairs = 0;
    /// E[(W_1 + W_2)^-q] over the same with W_2 from an independent replica.
    double constant = 1.0;
    double stderr_ = 0.0;
    /// Range of the model covariance between the two integration annuli.
    double cross_min = 0.0;
    double cross_max = 0.0;
    /// Kahane bounds exp((q^2 + q) gamma^2 c / 2) for c = min(cross_min, 0)
    /// and max(cross_max, 0).
    double lower_bound = 1.0;
    double upper_bound = 1.0;
    double q = 0.0;
    bool pass = true;
};

/// Decoupling step of the n-pair estimate at the smallest separation: W_j is
/// the chaos integral of |x - x_j|^-gamma^2 |x - y_j|^-gamma^2 over the
/// annulus around x_j between |x_j - y_j| and half the patch radius.
DecouplingReport kahane_decoupling_check(const FusionProbeConfig& probe, const MCConfig& mc);

}  // namespace lcft
