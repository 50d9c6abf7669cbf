#pragma once

#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "lcft/terms.hpp"

namespace lcft {

/// Test function outside the supported rational class.
class UnsupportedExpression : public ConfigError {
    using ConfigError::ConfigError;
};

/// Which degenerate field: (r, 1) has momentum -(r-1) gamma/2, (1, r) has
/// -2(r-1)/gamma and its operator uses 2/gamma in place of gamma/2.
enum class Degenerate { R1, OneR };

/// Delta_alpha = (alpha/2)(Q - alpha/2).
double conformal_weight(double alpha, double gamma);

/// c * L_{-n1} ... L_{-nk}. The coefficient is a rational times a power of
/// gamma (an even power: (gamma^2/4)^p or (4/gamma^2)^p).
struct VirasoroWord {
    std::vector<int> n;
    Coefficient coeff;

    int order() const;
    /// "c * L[-n1]...L[-nk]"
    std::string str() const;
};

struct SymbolicOperator {
    int r = 1;
    Degenerate kind = Degenerate::R1;
    double gamma = 1.0;
    std::vector<VirasoroWord> words;  // compositions of r, lexicographic
    std::vector<double> alphas;       // momenta of the other insertions
    std::vector<double> weights;      // Delta_{alpha_i}

    double degenerate_alpha() const;
    /// Symbol values for evaluation: gamma and Delta1..DeltaN.
    double symbol(const std::string& name) const;
    /// One word per line.
    std::string str() const;
};

/// D_r as a sum over the compositions (n1..nk) of r with coefficient
/// b^(2(r-k)) / prod_{j<k} (n1+..+nj)(n_{j+1}+..+nk), b = gamma/2 for (r, 1)
/// and 2/gamma for (1, r). ConfigError unless 1 <= r <= 8.
SymbolicOperator build_Dr(int r, double gamma, Degenerate kind = Degenerate::R1, std::vector<double> alphas = {});

/// Finite sums of c * z^a * prod_i (z_i - z)^(e_i) with a >= 0, e_i integers
/// and c a rational times a monomial in symbols (gamma, Delta1..).
class RationalExpr {
  public:
    struct Powers {
        int z = 0;
        std::vector<int> w;  // exponent of (z_i - z), size N

        bool operator<(const Powers& o) const { return std::tie(z, w) < std::tie(o.z, o.w); }
        bool operator==(const Powers& o) const { return z == o.z && w == o.w; }
    };

    explicit RationalExpr(int insertions = 0) : n_(insertions) {}
    static RationalExpr constant(int insertions, const Coefficient& c);
    static RationalExpr monomial(int insertions, const Coefficient& c, Powers p);
    /// Parses e.g. "3/2*z^2*(z1-z)^-1 + Delta1*(z2-z)^-2". (z - zi)^e is
    /// accepted and turned around. UnsupportedExpression for anything else
    /// (non-integer powers, functions, unknown variables).
    static RationalExpr parse(const std::string& text, int insertions);

    int insertions() const { return n_; }
    bool is_zero() const { return terms_.empty(); }
    std::size_t size() const { return terms_.size(); }

    RationalExpr operator+(const RationalExpr& o) const;
    RationalExpr operator*(const Coefficient& c) const;
    /// Multiplies by c * (z_i - z)^e (i is 1-based).
    RationalExpr times_w(int i, int e, const Coefficient& c) const;

    /// d/dz and d/dz_i (i is 1-based).
    RationalExpr d_z() const;
    RationalExpr d_zi(int i) const;

    Complex value(Complex z, const std::vector<Complex>& zs,
                  const std::function<double(const std::string&)>& lookup) const;

    /// Sorted terms joined by " + ", "0" when empty.
    std::string str() const;

  private:
    void add(const Powers& p, const Coefficient& c);

    int n_;
    // (powers, symbol monomial) -> coefficient
    std::map<std::pair<Powers, std::string>, Coefficient> terms_;
};

/// L_{-1} = d/dz, L_{-n} = sum_i ( -(z_i - z)^(1-n) d/dz_i + Delta_i (n-1) (z_i - z)^-n ),
/// with Delta_i kept as the symbol "Delta<i>".
RationalExpr apply_generator(int n, const RationalExpr& f);
/// L_{-n1} ... L_{-nk} f: L_{-nk} acts first, L_{-n1} last.
RationalExpr apply_word(const VirasoroWord& w, const RationalExpr& f);
RationalExpr apply_to_rational(const SymbolicOperator& op, const RationalExpr& f);

}  // namespace lcft
