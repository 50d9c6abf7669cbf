// Second derivation path for d^2/dz1^2 on three insertions: both balls are
// centered at z1, so every support is an interval of |x - z1| and the
// geometry reduces to comparing radii. Rules are written out directly from
// the integration by parts identities; only parsing and the final
// canonicalization are shared with the library.
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lcft/deriv_calculus.hpp"

using namespace lcft;

namespace {

constexpr double kR = 0.25;
constexpr double kInf = std::numeric_limits<double>::infinity();

double rad(int ball) { return kR / ball; }

struct Interval {
    double lo = 0.0;
    double hi = kInf;
    bool point = false;
};

// Support of x_v as an interval of |x_v - z1|.
Interval support(const Term& t, int v) {
    Interval s;
    auto in = [&s](int ball) { s.hi = std::min(s.hi, rad(ball)); };
    auto out = [&s](int ball) { s.lo = std::max(s.lo, rad(ball)); };
    for (const Indicator& i : t.inds)
        if (i.var == v) {
            if (i.inside)
                in(i.ball);
            else
                out(i.ball);
        }
    for (const FFactor& f : t.fs) {
        if (f.a == v) in(f.ball);
        if (f.b == v) out(f.ball);
    }
    for (const Contour& c : t.contours)
        if (c.var == v) {
            // a point p = r/j must sit strictly inside the open constraints
            const double p = rad(c.ball);
            s.point = true;
            s.lo = std::max(s.lo, p);
            s.hi = std::min(s.hi, p);
            if (s.lo > p || s.hi < p) s.hi = -1.0;
        }
    return s;
}

bool nonempty(const Term& t, int v) {
    const Interval s = support(t, v);
    if (!s.point) return s.lo < s.hi;
    // on a circle: every other constraint must be strict at the radius
    const double p = rad(t.contour_ball(v));
    for (const Indicator& i : t.inds)
        if (i.var == v && std::abs(rad(i.ball) - p) < 1e-15) return false;
    for (const FFactor& f : t.fs)
        if ((f.a == v || f.b == v) && std::abs(rad(f.ball) - p) < 1e-15) return false;
    return s.hi >= 0.0 && s.lo <= p && p <= s.hi;
}

bool away_from_z1(const Term& t, int v) {
    if (t.on_contour(v)) return true;
    return support(t, v).lo > 0.0;
}

Term kill_indicator(Term t, const Indicator& ind) {
    t.inds.erase(std::remove(t.inds.begin(), t.inds.end(), ind), t.inds.end());
    return t;
}

void emit(std::vector<Term>& out, Term t) {
    t.sort();
    if (t.coeff.is_zero()) return;
    for (int v = 1; v <= t.vars; ++v)
        if (!nonempty(t, v)) return;
    // an indicator implied by the rest of the support goes away
    for (bool again = true; again;) {
        again = false;
        for (const Indicator& i : t.inds) {
            const Term rest = kill_indicator(t, i);
            const Interval s = support(rest, i.var);
            const bool implied = i.inside ? s.hi <= rad(i.ball) : s.lo >= rad(i.ball);
            if (implied) {
                t = rest;
                again = true;
                break;
            }
        }
    }
    out.push_back(t);
}

Coefficient c(const std::string& s) { return Coefficient::parse(s); }

// Strips one power of (x_a - x_b) or (x_a - z_i), returning the sign of the
// stored orientation.
Term strip(const Term& t, Slot a, Slot b) {
    Term r = t;
    for (auto it = r.kernels.begin(); it != r.kernels.end(); ++it) {
        const bool fwd = it->u == a && it->v == b;
        const bool back = it->u == b && it->v == a;
        if (!fwd && !back) continue;
        if (back) r.coeff = r.coeff * Rational(-1);
        if (--it->power == 0) r.kernels.erase(it);
        return r;
    }
    FAIL("missing kernel");
    return r;
}

// Everything in t that touches one of `vs` becomes a list of phi factors.
std::vector<Phi> pull(Term& t, const std::vector<int>& vs, bool with_indicators) {
    auto touches = [&vs](Slot s) { return !s.z && std::count(vs.begin(), vs.end(), s.index) > 0; };
    std::vector<Phi> dep;
    std::vector<Kernel> ks;
    for (const Kernel& k : t.kernels) {
        if (touches(k.u) || touches(k.v))
            dep.push_back(phi_kernel(k.u, k.v, k.power));
        else
            ks.push_back(k);
    }
    std::vector<FFactor> fs;
    std::vector<Indicator> extra;
    for (const FFactor& f : t.fs) {
        const bool ta = touches(Slot::x(f.a)), tb = touches(Slot::x(f.b));
        if (!ta && !tb) {
            fs.push_back(f);
            continue;
        }
        dep.push_back(phi_F(f.ball, f.a, f.b));
        if (!ta) extra.push_back({f.a, f.ball, true});
        if (!tb) extra.push_back({f.b, f.ball, false});
    }
    std::vector<Indicator> is;
    for (const Indicator& i : t.inds) {
        if (with_indicators && touches(Slot::x(i.var)))
            dep.push_back(phi_indicator(i.var, i.ball, i.inside));
        else
            is.push_back(i);
    }
    std::vector<Phi> ps;
    for (const Phi& p : t.phis) {
        const bool d = std::any_of(vs.begin(), vs.end(), [&p](int v) { return phi_depends(p, Slot::x(v)); });
        (d ? dep : ps).push_back(p);
    }
    t.kernels = ks;
    t.fs = fs;
    t.inds = is;
    for (const Indicator& i : extra) t.add_indicator(i.var, i.ball, i.inside);
    t.phis = ps;
    return dep;
}

Phi product(const std::vector<Phi>& f) { return f.size() == 1 ? f[0] : phi_mul(f); }

// In(a, L) (x_a - x_b)^-1 rest with both variables integrated.
void split_pair(std::vector<Term>& out, const Term& t, int a, int b, int level) {
    const Term rest = kill_indicator(strip(t, Slot::x(a), Slot::x(b)), {a, level, true});
    Term far = rest;
    far.add_F(level, a, b);
    emit(out, far);

    Term near = rest;
    std::vector<Phi> dep = pull(near, {a, b}, true);
    std::vector<Phi> keep;
    for (const Phi& p : dep) {
        // with |x| < r/level: In(j) holds when j <= level, Out(j) fails
        if (p->op == PhiNode::Op::Ind) {
            if (p->ball <= level) {
                if (!p->inside) return;
                continue;
            }
        }
        if (p->op == PhiNode::Op::F) {
            const bool outer_is_ours = p->v.index == a || p->v.index == b;
            if (outer_is_ours && p->ball <= level) return;
        }
        keep.push_back(p);
    }
    if (keep.empty()) return;
    near.coeff = near.coeff * Rational(1, 2);
    near.add_indicator(a, level, true);
    near.add_indicator(b, level, true);
    near.phis.push_back(phi_dq(a, b, product(keep)));
    emit(out, near);
}

// Removes (x_k - z1)^-1 on B_level.
void reduce(std::vector<Term>& out, const Term& t, int k, int level) {
    const Term base = strip(t, Slot::x(k), Slot::zi(1));
    Term outside = t;
    outside.add_indicator(k, level, false);
    emit(out, outside);

    Term in = base;
    in.add_indicator(k, level, true);
    for (int j : {2, 3}) {
        Term s = in;
        s.add_kernel(Slot::x(k), Slot::zi(j));
        s.coeff = s.coeff * c("-1*a1^-1*a" + std::to_string(j));
        emit(out, s);
    }
    auto pair = [&](Term s, int l) {
        s.add_kernel(Slot::x(k), Slot::x(l));
        s.sort();
        if (s.coeff.is_zero()) return;
        if (s.on_contour(l))
            emit(out, s);
        else
            split_pair(out, s, k, l, level);
    };
    for (int l = 1; l <= base.vars; ++l) {
        if (l == k) continue;
        Term s = in;
        s.coeff = s.coeff * c("-1*a1^-1*gamma");
        pair(s, l);
    }
    {
        Term s = in;
        s.vars += 1;
        s.coeff = s.coeff * c("1*a1^-1*gamma*mu");
        pair(s, s.vars);
    }
    {
        Term s = base;
        s.contours.push_back({k, level});
        s.coeff = s.coeff * c("-1*a1^-1*gamma^-1*i");
        emit(out, s);
    }
    {
        Term s = in;
        std::vector<Phi> dep = pull(s, {k}, false);
        if (!dep.empty()) {
            s.coeff = s.coeff * c("2*a1^-1*gamma^-1");
            s.phis.push_back(phi_d(Slot::x(k), product(dep)));
            emit(out, s);
        }
    }
}

std::vector<Term> d_dz1(const std::vector<Term>& terms, int level) {
    std::vector<Term> out;
    for (const Term& t : terms) {
        for (int j : {2, 3}) {
            Term s = t;
            s.add_kernel(Slot::zi(1), Slot::zi(j));
            s.coeff = s.coeff * c("-1/2*a1*a" + std::to_string(j));
            emit(out, s);
        }
        // d/dz1 (x - z1)^-p = p (x - z1)^-(p+1),  d/dz1 (z1 - z)^-p = -p (z1 - z)^-(p+1)
        for (std::size_t q = 0; q < t.kernels.size(); ++q) {
            const Kernel kr = t.kernels[q];
            if (kr.u != Slot::zi(1) && kr.v != Slot::zi(1)) continue;
            Term s = t;
            s.kernels[q].power += 1;
            s.coeff = s.coeff * Rational(kr.v == Slot::zi(1) ? kr.power : -kr.power);
            emit(out, s);
        }
        for (int v = 1; v <= t.vars; ++v) {
            Term s = t;
            s.add_kernel(Slot::x(v), Slot::zi(1));
            s.coeff = s.coeff * c("1/2*a1*gamma");
            if (away_from_z1(s, v))
                emit(out, s);
            else
                reduce(out, s, v, level);
        }
        Term s = t;
        s.vars += 1;
        s.add_kernel(Slot::x(s.vars), Slot::zi(1));
        s.coeff = s.coeff * c("-1/2*a1*gamma*mu");
        reduce(out, s, s.vars, level);
    }
    return out;
}

}  // namespace

TEST_CASE("second derivative in z1 matches an independent derivation") {
    // first derivative written out by hand
    const std::vector<std::string> first = {
        "-1/2*a1*gamma*mu | (x1-z1)^-1 | out(x1,B1) | - | -",
        "1/2*a2*gamma*mu | (x1-z2)^-1 | in(x1,B1) | - | -",
        "1/2*a3*gamma*mu | (x1-z3)^-1 | in(x1,B1) | - | -",
        "-1/2*a1*a2 | (z1-z2)^-1 | - | - | -",
        "-1/2*a1*a3 | (z1-z3)^-1 | - | - | -",
        "1/2*i*mu | - | - | x1@dB1 | -",
        "-1/2*gamma^2*mu^2 | F1(x1,x2) | - | - | -",
    };
    DerivativeRequest req;
    req.config.points = {0.0, 1.0, -1.0};
    req.config.alphas = {2, 2, 2};
    req.config.gamma = 1.0;
    req.r = kR;
    req.indices = {1};
    TermList n1;
    n1.centers = {1};
    for (const std::string& l : first) n1.terms.push_back(Term::parse(l));
    CHECK(expand_derivative(req).terms.serialize() == canonicalize(n1).serialize());

    req.indices = {1, 1};
    TermList oracle;
    oracle.centers = {1, 1};
    oracle.terms = d_dz1(n1.terms, 2);
    const TermList expected = canonicalize(oracle);
    const TermList got = expand_derivative(req).terms;
    CHECK(got.terms.size() == expected.terms.size());
    CHECK(got.serialize() == expected.serialize());
}
