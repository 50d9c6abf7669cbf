#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "lcft/correlators.hpp"
#include "lcft/terms.hpp"

namespace lcft {

/// Requested derivative order above the configured maximum.
class DepthError : public PreconditionError {
    using PreconditionError::PreconditionError;
};

/// d^n/dz_{i(1)}..dz_{i(n)} G(z) (or the conjugate derivatives).
struct DerivativeRequest {
    std::vector<int> indices;  // i(1..n), 1-based
    InsertionConfig config;
    /// Radius of B_1; NaN picks delta / 4. Ball j has radius r / j around z_{i(j)}.
    double r = std::numeric_limits<double>::quiet_NaN();
    bool conjugate = false;
    int max_order = 4;

    int order() const { return static_cast<int>(indices.size()); }
    double radius() const;
    /// ConfigError for bad indices or r >= delta/2, DepthError beyond max_order.
    void validate() const;
    BallGeometry geometry() const;
};

/// Geometry helpers on the support of a term. Each variable is constrained
/// to the intersection of its regions (inside/outside a ball, or on a
/// circle); F_j(x_a, x_b) implies x_a in B_j and x_b outside.
struct Region {
    enum class Kind { In, Out, On };
    Kind kind = Kind::In;
    int ball = 1;
};
std::vector<Region> variable_support(const Term& term, int var);
/// True when |x - z| stays away from zero on the support.
bool separated(const std::vector<Region>& x, Complex z, const BallGeometry& geom);
/// True when |x - y| stays away from zero on the supports.
bool separated(const std::vector<Region>& x, const std::vector<Region>& y, const BallGeometry& geom);
/// False when some variable has an empty support.
bool feasible(const Term& term, const BallGeometry& geom);
/// Drops indicators implied by the others.
void drop_redundant_indicators(Term& term, const BallGeometry& geom);

/// Structural membership in the class F_n: distinct F indices j <= n with
/// a != b, at most 2n gamma-insertions, indicator and contour balls <= n, and
/// every kernel (including those inside phi) bounded on the support.
bool f_class_check(const Term& term, int n, const BallGeometry& geom);

/// In(a, L) (x_a - x_b)^-1 Phi  ->  F_L(x_a, x_b) Phi
///                                + 1/2 In(a, L) In(b, L) DQ(a, b, Phi_dep) Phi_indep,
/// where Phi_dep collects every factor that mentions x_a or x_b. The second
/// term is dropped when the quotient vanishes identically.
TermList symmetrize(const Term& term, int a, int b, int level, const BallGeometry& geom);

/// Removes the kernel (x_k - z_i)^-1 by the insertion identity on B_level
/// (centered at z_i): the outside part, the other insertion kernels, the
/// pair kernels (symmetrized), the chaos term with a new variable, the
/// derivative of the x_k-dependent factors and a contour term on dB_level.
/// A term without that kernel is returned unchanged.
TermList reduce_insertion_kernel(const Term& term, int k, int i, int level, const InsertionConfig& config,
                                 const BallGeometry& geom, bool conjugate = false);

/// d/dz_i of every term (balls frozen), followed by reduction at `level`
/// and canonicalization.
TermList differentiate(const TermList& list, int i, int level, const InsertionConfig& config,
                       const BallGeometry& geom);

struct Expansion {
    TermList terms;
    /// Global factor applied by evaluation; fixed by the finite-difference
    /// comparison at n = 1 (the derivation gives 1).
    double calibration = 1.0;
    std::string calibration_note;
};

/// Canonical expansion of the requested derivative in terms of convergent
/// integrals and contour integrals.
Expansion expand_derivative(const DerivativeRequest& req);

/// Convergence verdict with one certificate line per singular factor.
struct ConvergenceCertificate {
    bool convergent = true;
    double zeta = 0.0;
    std::vector<std::string> lines;
};

/// zeta = 2 - gamma^2 + max(0, 2 gamma - Q)^2 / 2: the pair G(x, y) behaves
/// like |x - y|^(zeta - 2).
double fusion_zeta(double gamma);

ConvergenceCertificate check_absolutely_convergent(const Term& term, const InsertionConfig& config,
                                                   const BallGeometry& geom);

/// Numeric value of a phi expression at the given variable values.
/// `conjugate` evaluates kernels in x-bar.
Complex evaluate_phi(const Phi& phi, const std::vector<Complex>& x, const std::vector<Complex>& z,
                     const BallGeometry& geom, bool conjugate = false);

struct ComplexEstimate {
    Complex value{0.0, 0.0};
    double stderr_re = 0.0;
    double stderr_im = 0.0;
    std::size_t replicas = 0;
};
ComplexEstimate summarize(const std::vector<Complex>& samples);

/// Evaluates terms on one ensemble (common random numbers across terms).
/// Insertion labels follow the request, not the ensemble's sorted order.
class TermEvaluator {
  public:
    TermEvaluator(std::shared_ptr<const ChaosEnsemble> ensemble, const DerivativeRequest& req);

    /// Points on each contour (trapezoid rule).
    int contour_points = 256;

    /// Per-replica values. Throws DomainError for shapes outside
    /// {no variable, one or two integrated variables, one contour variable}
    /// and PreconditionError (with the certificate) for non-convergent terms.
    std::vector<Complex> samples(const Term& term) const;
    std::vector<Complex> samples(const TermList& list, double calibration = 1.0) const;

    const ChaosEnsemble& ensemble() const { return *ensemble_; }

  private:
    Complex coefficient(const Term& t) const;
    std::vector<std::size_t> nodes_in(const std::vector<Region>& support) const;

    std::shared_ptr<const ChaosEnsemble> ensemble_;
    InsertionConfig config_;
    BallGeometry geom_;
    bool conjugate_;
};

ComplexEstimate evaluate_term(const Term& term, const TermEvaluator& evaluator);
ComplexEstimate evaluate_expansion(const Expansion& expansion, const TermEvaluator& evaluator);

/// Central differences of G along Re z_i and Im z_i on four ensembles with
/// a shared seed, combined into d/dz_i = (d_x - i d_y) / 2 (or d/dz-bar_i
/// with the + sign). Per-replica values are kept for paired comparisons.
struct FiniteDifference {
    ComplexEstimate estimate;
    std::vector<Complex> samples;
    double step = 0.0;
};
FiniteDifference finite_difference_derivative(const InsertionConfig& config, int i, double h, const MCConfig& mc,
                                              bool conjugate = false);

}  // namespace lcft
