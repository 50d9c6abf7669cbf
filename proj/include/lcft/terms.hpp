#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lcft/common.hpp"

namespace lcft {

/// A rewrite rule was applied outside its precondition.
class RewriteError : public PreconditionError {
    using PreconditionError::PreconditionError;
};

/// Malformed serialized terms.
class ParseError : public ConfigError {
    using ConfigError::ConfigError;
};

/// Exact rational with 64-bit parts; overflow throws DomainError.
class Rational {
  public:
    Rational(std::int64_t num = 0, std::int64_t den = 1);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    bool is_zero() const { return num_ == 0; }
    double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    Rational operator+(const Rational& o) const;
    Rational operator-() const { return Rational(-num_, den_); }
    Rational operator-(const Rational& o) const { return *this + (-o); }
    Rational operator*(const Rational& o) const;
    Rational operator/(const Rational& o) const;
    bool operator==(const Rational& o) const { return num_ == o.num_ && den_ == o.den_; }
    bool operator!=(const Rational& o) const { return !(*this == o); }

    std::string str() const;
    static Rational parse(const std::string& text);

  private:
    std::int64_t num_;
    std::int64_t den_;
};

/// Rational times a monomial in named symbols with integer exponents:
/// mu, gamma, a1..aN (the momenta) and i (imaginary unit, reduced mod 4).
class Coefficient {
  public:
    Coefficient(Rational q = Rational(1)) : q_(q) {}
    static Coefficient symbol(const std::string& name, int power = 1);

    const Rational& rational() const { return q_; }
    const std::map<std::string, int>& symbols() const { return sym_; }
    bool is_zero() const { return q_.is_zero(); }

    Coefficient operator*(const Coefficient& o) const;
    Coefficient operator*(const Rational& o) const;
    Coefficient with_rational(Rational q) const;

    /// The symbol part only, e.g. "a1*mu^2*i".
    std::string monomial() const;
    std::string str() const;
    static Coefficient parse(const std::string& text);

    /// Numeric value; `lookup` maps symbol names (other than i) to numbers.
    Complex value(const std::function<double(const std::string&)>& lookup) const;

  private:
    Rational q_;
    std::map<std::string, int> sym_;
};

/// Argument of a kernel: a gamma-insertion x_k or a momentum insertion z_i
/// (both 1-based).
struct Slot {
    bool z = false;
    int index = 0;

    static Slot x(int k) { return {false, k}; }
    static Slot zi(int i) { return {true, i}; }
    bool operator==(const Slot& o) const { return z == o.z && index == o.index; }
    bool operator!=(const Slot& o) const { return !(*this == o); }
    bool operator<(const Slot& o) const { return z != o.z ? z : index < o.index; }
    std::string str() const;
};

/// (u - v)^(-power). Stored oriented: x before z, lower index first.
struct Kernel {
    Slot u;
    Slot v;
    int power = 1;

    bool operator==(const Kernel& o) const { return u == o.u && v == o.v && power == o.power; }
    std::string str() const;
};

/// F_j(x_a, x_b) = 1_{B_j}(x_a) 1_{B_j^c}(x_b) / (x_a - x_b).
struct FFactor {
    int ball = 1;
    int a = 1;
    int b = 2;

    bool operator==(const FFactor& o) const { return ball == o.ball && a == o.a && b == o.b; }
    std::string str() const;
};

/// 1_{B_j}(x_var) when inside, 1_{B_j^c}(x_var) otherwise.
struct Indicator {
    int var = 1;
    int ball = 1;
    bool inside = true;

    bool operator==(const Indicator& o) const { return var == o.var && ball == o.ball && inside == o.inside; }
    std::string str() const;
};

/// x_var is bound to the circle dB_j (measure dx-bar, or dx for conjugate
/// expansions).
struct Contour {
    int var = 1;
    int ball = 1;

    bool operator==(const Contour& o) const { return var == o.var && ball == o.ball; }
};

/// Bounded smooth factor phi as an explicit expression, so terms stay
/// numerically evaluable.
///   Ind   1_{B_ball}(x_a) or its complement
///   Ker   (u - v)^-power
///   F     F_ball(x_a, x_b)
///   Mul   product of args
///   DQ    (E - E[x_a <-> x_b]) / (x_a - x_b), E = args[0]
///   D     d/du E (Wirtinger, holomorphic direction), E = args[0]
struct PhiNode;
using Phi = std::shared_ptr<const PhiNode>;

struct PhiNode {
    enum class Op { Ind, Ker, F, Mul, DQ, D };
    Op op = Op::Mul;
    Slot u;  // Ker first slot, D variable, DQ/Ind/F first var (x)
    Slot v;  // Ker second slot, DQ/F second var
    int ball = 0;
    int power = 1;
    bool inside = true;
    std::vector<Phi> args;
};

Phi phi_indicator(int var, int ball, bool inside);
Phi phi_kernel(Slot u, Slot v, int power);
Phi phi_F(int ball, int a, int b);
Phi phi_mul(std::vector<Phi> args);
Phi phi_dq(int a, int b, Phi e);
Phi phi_d(Slot u, Phi e);

std::string phi_str(const Phi& p);
/// True when the expression mentions the slot.
bool phi_depends(const Phi& p, Slot s);
/// Exchanges x_a and x_b (or renames x_a -> x_b when b is absent).
Phi phi_swap(const Phi& p, int a, int b);
Phi phi_relabel(const Phi& p, const std::vector<int>& perm);
/// Sorted products, oriented kernels, DQ with a < b.
Phi phi_normalize(const Phi& p);

/// Geometry of the balls B_j = B(z_{center_j}, r / j).
struct BallGeometry {
    std::vector<Complex> z;
    std::vector<int> centers;  // ball j -> insertion index, both 1-based
    double r = 0.25;

    int balls() const { return static_cast<int>(centers.size()); }
    Complex center(int j) const { return z.at(static_cast<std::size_t>(centers.at(static_cast<std::size_t>(j - 1)) - 1)); }
    double radius(int j) const { return r / j; }
    /// Closed annulus A_j around dB_j of width r / (4 j (j + 1)).
    std::pair<double, double> annulus(int j) const;
};

/// One summand: coefficient times a product of factors, integrated against
/// G(x_1..x_m; z) over C for free variables and over circles for contour
/// variables.
struct Term {
    Coefficient coeff;
    int vars = 0;
    std::vector<Kernel> kernels;
    std::vector<FFactor> fs;
    std::vector<Indicator> inds;
    std::vector<Contour> contours;
    std::vector<Phi> phis;

    bool is_contour() const { return !contours.empty(); }
    bool on_contour(int var) const;
    int contour_ball(int var) const;

    /// Multiplies by (u - v)^-power, merging powers and orienting.
    void add_kernel(Slot u, Slot v, int power = 1);
    /// Throws RewriteError for a = b.
    void add_F(int ball, int a, int b);
    void add_indicator(int var, int ball, bool inside);

    /// Sorted factor lists, oriented kernels, normalized phis. Variable
    /// labels are kept.
    void sort();
    /// Everything except the coefficient, as serialized.
    std::string structure() const;
    std::string str() const;
    static Term parse(const std::string& line);
};

/// Terms with the ball table they refer to.
struct TermList {
    std::vector<int> centers;  // ball j -> insertion index (1-based)
    bool conjugate = false;
    std::vector<Term> terms;

    /// Stable text format, one term per line:
    ///   coeff | kernels | indicators | contours | phi
    /// preceded by a header "# terms balls=<c1,c2,..> conj=<0|1>".
    std::string serialize() const;
    static TermList parse(const std::string& text);
};

/// Canonical variable labels (smallest structure over relabelings that keep
/// the variable signatures sorted), merged coefficients, zero terms removed.
/// A term that equals minus itself under a relabeling is zero (G is
/// symmetric in the gamma-insertions).
Term canonical_term(const Term& t, bool* vanishes = nullptr);
TermList canonicalize(const TermList& list);

}  // namespace lcft
