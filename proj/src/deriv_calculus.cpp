#include "lcft/deriv_calculus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace lcft {

namespace {

constexpr double kGeomEps = 1e-12;

Complex zpos(const BallGeometry& g, int i) { return g.z.at(static_cast<std::size_t>(i - 1)); }

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

}  // namespace

// ---------------------------------------------------------------- request

double DerivativeRequest::radius() const { return std::isnan(r) ? config.delta() / 4.0 : r; }

void DerivativeRequest::validate() const {
    if (order() > max_order)
        throw DepthError("derivative order " + std::to_string(order()) + " exceeds the maximum " +
                         std::to_string(max_order));
    const int n = static_cast<int>(config.points.size());
    for (int i : indices)
        if (i < 1 || i > n) throw ConfigError("derivative index out of range", "indices");
    const double rad = radius();
    if (!(rad > 0.0) || rad >= config.delta() / 2.0) throw ConfigError("ball radius must satisfy 0 < r < delta/2", "r");
    const BallGeometry g = geometry();
    for (int j = 1; j <= g.balls(); ++j)
        for (int k = j + 1; k <= g.balls(); ++k) {
            if (g.centers[static_cast<std::size_t>(j - 1)] != g.centers[static_cast<std::size_t>(k - 1)]) continue;
            if (g.annulus(j).first <= g.annulus(k).second) throw ConfigError("annuli A_j overlap", "r");
        }
}

BallGeometry DerivativeRequest::geometry() const {
    BallGeometry g;
    g.z = config.points;
    g.centers = indices;
    g.r = radius();
    return g;
}

// ---------------------------------------------------------------- geometry

std::vector<Region> variable_support(const Term& term, int var) {
    std::vector<Region> out;
    for (const Indicator& i : term.inds)
        if (i.var == var) out.push_back({i.inside ? Region::Kind::In : Region::Kind::Out, i.ball});
    for (const FFactor& f : term.fs) {
        if (f.a == var) out.push_back({Region::Kind::In, f.ball});
        if (f.b == var) out.push_back({Region::Kind::Out, f.ball});
    }
    for (const Contour& c : term.contours)
        if (c.var == var) out.push_back({Region::Kind::On, c.ball});
    return out;
}

namespace {

using K = Region::Kind;

// Region x stays away from region y.
bool apart(const Region& x, const Region& y, const BallGeometry& g) {
    const double d = std::abs(g.center(x.ball) - g.center(y.ball));
    const double rx = g.radius(x.ball), ry = g.radius(y.ball);
    const double e = kGeomEps * g.r;
    if (x.kind == K::Out && y.kind == K::Out) return false;
    if (x.kind == K::Out) return apart(y, x, g);
    if (x.kind == K::In && y.kind == K::In) return d > rx + ry + e;
    if (x.kind == K::In && y.kind == K::Out) return d + rx < ry - e;
    if (x.kind == K::In && y.kind == K::On) return apart(y, x, g);
    // x on a circle
    if (y.kind == K::In) return d > rx + ry + e || rx - d > ry + e;
    if (y.kind == K::Out) return d + rx < ry - e;
    return d > rx + ry + e || std::abs(rx - ry) > d + e;
}

// Both regions can hold the same point (with positive measure).
bool compatible(const Region& x, const Region& y, const BallGeometry& g) {
    const double d = std::abs(g.center(x.ball) - g.center(y.ball));
    const double rx = g.radius(x.ball), ry = g.radius(y.ball);
    const double e = kGeomEps * g.r;
    if (x.kind == K::Out && y.kind == K::Out) return true;
    if (x.kind == K::Out || (x.kind == K::In && y.kind == K::On)) return compatible(y, x, g);
    if (x.kind == K::In && y.kind == K::In) return d < rx + ry - e;
    if (x.kind == K::In && y.kind == K::Out) return d + rx > ry + e;
    if (y.kind == K::In) return std::abs(d - rx) < ry - e;
    if (y.kind == K::Out) return d + rx > ry + e;
    return x.ball == y.ball;
}

// Region x lies inside region y.
bool implies(const Region& x, const Region& y, const BallGeometry& g) {
    const double d = std::abs(g.center(x.ball) - g.center(y.ball));
    const double rx = g.radius(x.ball), ry = g.radius(y.ball);
    const double e = kGeomEps * g.r;
    if (x.kind == y.kind && x.ball == y.ball) return true;
    if (y.kind == K::On) return false;
    if (y.kind == K::In) {
        if (x.kind == K::In) return d + rx <= ry + e;
        if (x.kind == K::On) return d + rx < ry - e;
        return false;
    }
    // y = complement of a disk: x must avoid the disk.
    if (x.kind == K::Out) return d + ry <= rx + e;
    if (x.kind == K::In) return d >= rx + ry - e;
    return d > rx + ry + e || rx - d > ry + e;
}

bool point_apart(const Region& x, Complex z, const BallGeometry& g) {
    const double d = std::abs(g.center(x.ball) - z);
    const double rad = g.radius(x.ball);
    const double e = kGeomEps * g.r;
    switch (x.kind) {
        case K::In: return d > rad + e;
        case K::Out: return d < rad - e;
        case K::On: return std::abs(d - rad) > e;
    }
    return false;
}

}  // namespace

bool separated(const std::vector<Region>& x, Complex z, const BallGeometry& geom) {
    return std::any_of(x.begin(), x.end(), [&](const Region& r) { return point_apart(r, z, geom); });
}

bool separated(const std::vector<Region>& x, const std::vector<Region>& y, const BallGeometry& geom) {
    for (const Region& a : x)
        for (const Region& b : y)
            if (apart(a, b, geom)) return true;
    return false;
}

bool feasible(const Term& term, const BallGeometry& geom) {
    for (int v = 1; v <= term.vars; ++v) {
        const auto s = variable_support(term, v);
        for (std::size_t a = 0; a < s.size(); ++a)
            for (std::size_t b = a + 1; b < s.size(); ++b)
                if (!compatible(s[a], s[b], geom)) return false;
    }
    return true;
}

void drop_redundant_indicators(Term& term, const BallGeometry& geom) {
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t k = 0; k < term.inds.size() && !changed; ++k) {
            const Indicator ind = term.inds[k];
            const Region me{ind.inside ? K::In : K::Out, ind.ball};
            Term rest = term;
            rest.inds.erase(rest.inds.begin() + static_cast<std::ptrdiff_t>(k));
            for (const Region& r : variable_support(rest, ind.var))
                if (implies(r, me, geom)) {
                    term = rest;
                    changed = true;
                    break;
                }
        }
    }
}

// ---------------------------------------------------------------- class check

namespace {

std::vector<Region> slot_support(const Term& t, Slot s) { return s.z ? std::vector<Region>{} : variable_support(t, s.index); }

bool kernel_bounded(const Term& t, Slot u, Slot v, const BallGeometry& g,
                    const std::vector<Region>& extra_u = {}, const std::vector<Region>& extra_v = {}) {
    if (u.z && v.z) return true;
    auto su = slot_support(t, u);
    su.insert(su.end(), extra_u.begin(), extra_u.end());
    if (v.z) return separated(su, zpos(g, v.index), g);
    auto sv = slot_support(t, v);
    sv.insert(sv.end(), extra_v.begin(), extra_v.end());
    if (u.z) return separated(sv, zpos(g, u.index), g);
    return separated(su, sv, g);
}

// Every Ind/F boundary in e that involves variable `var` stays away from its support.
bool boundaries_avoid(const Term& t, const Phi& e, int var, const BallGeometry& g) {
    switch (e->op) {
        case PhiNode::Op::Ind:
            if (e->u.index != var) return true;
            return separated(variable_support(t, var), std::vector<Region>{{K::On, e->ball}}, g);
        case PhiNode::Op::F:
            if (e->u.index != var && e->v.index != var) return true;
            return separated(variable_support(t, var), std::vector<Region>{{K::On, e->ball}}, g);
        default:
            for (const Phi& a : e->args)
                if (!boundaries_avoid(t, a, var, g)) return false;
            return true;
    }
}

bool phi_bounded(const Term& t, const Phi& p, const BallGeometry& g) {
    switch (p->op) {
        case PhiNode::Op::Ind:
            return true;
        case PhiNode::Op::Ker:
            return kernel_bounded(t, p->u, p->v, g);
        case PhiNode::Op::F:
            return kernel_bounded(t, p->u, p->v, g, {{K::In, p->ball}}, {{K::Out, p->ball}});
        case PhiNode::Op::Mul:
            return std::all_of(p->args.begin(), p->args.end(), [&](const Phi& a) { return phi_bounded(t, a, g); });
        case PhiNode::Op::DQ: {
            const Phi& e = p->args[0];
            return phi_bounded(t, e, g) && phi_bounded(t, phi_swap(e, p->u.index, p->v.index), g) &&
                   boundaries_avoid(t, e, p->u.index, g) && boundaries_avoid(t, e, p->v.index, g);
        }
        case PhiNode::Op::D:
            return phi_bounded(t, p->args[0], g) && (p->u.z || boundaries_avoid(t, p->args[0], p->u.index, g));
    }
    return false;
}

}  // namespace

bool f_class_check(const Term& term, int n, const BallGeometry& geom) {
    if (term.vars > 2 * n) return false;
    std::set<int> fballs;
    for (const FFactor& f : term.fs) {
        if (f.a == f.b || f.ball < 1 || f.ball > n || f.a > term.vars || f.b > term.vars) return false;
        if (!fballs.insert(f.ball).second) return false;
    }
    for (const Indicator& i : term.inds)
        if (i.ball < 1 || i.ball > n || i.var > term.vars) return false;
    for (const Contour& c : term.contours)
        if (c.ball < 1 || c.ball > n || c.var > term.vars) return false;
    for (const Kernel& k : term.kernels) {
        if ((!k.u.z && k.u.index > term.vars) || (!k.v.z && k.v.index > term.vars)) return false;
        if (!kernel_bounded(term, k.u, k.v, geom)) return false;
    }
    for (const Phi& p : term.phis)
        if (!phi_bounded(term, p, geom)) return false;
    return true;
}

double fusion_zeta(double gamma) {
    const double Q = 2.0 / gamma + gamma / 2.0;
    const double excess = std::max(0.0, 2.0 * gamma - Q);
    return 2.0 - gamma * gamma + 0.5 * excess * excess;
}

ConvergenceCertificate check_absolutely_convergent(const Term& term, const InsertionConfig& config,
                                                   const BallGeometry& geom) {
    ConvergenceCertificate c;
    c.zeta = fusion_zeta(config.gamma);
    auto fail = [&c](const std::string& line) {
        c.convergent = false;
        c.lines.push_back(line + " FAIL");
    };
    for (const FFactor& f : term.fs) {
        const double a = 3.0 - c.zeta;
        const auto ann = geom.annulus(f.ball);
        const std::string line = f.str() + ": annulus A_" + std::to_string(f.ball) + " [" + fmt(ann.first) + ", " +
                                 fmt(ann.second) + "], exponent " + fmt(a) + " < 3";
        if (a < 3.0)
            c.lines.push_back(line);
        else
            fail(line);
    }
    for (int v = 1; v <= term.vars; ++v) {
        std::vector<int> balls;
        for (const FFactor& f : term.fs)
            if (f.a == v || f.b == v) balls.push_back(f.ball);
        if (balls.size() > 1) {
            std::string line = "x" + std::to_string(v) + " in F factors on balls";
            for (int b : balls) line += " " + std::to_string(b);
            c.lines.push_back(line + ": disjoint annuli, at most one singular at a time (otherwise the integrand vanishes)");
        }
    }
    for (const Kernel& k : term.kernels) {
        if (kernel_bounded(term, k.u, k.v, geom)) continue;
        if (k.v.z) {
            const double alpha = config.alphas.at(static_cast<std::size_t>(k.v.index - 1));
            const double a = k.power + config.gamma * alpha;
            const std::string line = k.str() + ": unseparated insertion kernel, exponent " + fmt(a) + " vs 2";
            if (a < 2.0)
                c.lines.push_back(line);
            else
                fail(line);
            continue;
        }
        const auto su = variable_support(term, k.u.index), sv = variable_support(term, k.v.index);
        bool straddle = false;
        for (const Region& a : su)
            for (const Region& b : sv)
                if (a.ball == b.ball && a.kind != b.kind) straddle = true;
        const double a = k.power + 2.0 - c.zeta;
        const double threshold = straddle ? 3.0 : 2.0;
        const std::string line = k.str() + ": unseparated pair kernel" + (straddle ? " across a ball boundary" : "") +
                                 ", exponent " + fmt(a) + " vs " + fmt(threshold);
        if (a < threshold)
            c.lines.push_back(line);
        else
            fail(line);
    }
    for (const Phi& p : term.phis)
        if (!phi_bounded(term, p, geom)) fail(phi_str(p) + ": unbounded factor");
    return c;
}

// ---------------------------------------------------------------- rewrite rules

namespace {

Coefficient sym(const std::string& name, int p = 1) { return Coefficient::symbol(name, p); }
Coefficient alpha(int i, int p = 1) { return sym("a" + std::to_string(i), p); }

// term = (u - v)^-1 * result
Term without_kernel(const Term& term, Slot u, Slot v) {
    Term base = term;
    for (std::size_t k = 0; k < base.kernels.size(); ++k) {
        Kernel& kr = base.kernels[k];
        const bool same = kr.u == u && kr.v == v, flipped = kr.u == v && kr.v == u;
        if (!same && !flipped) continue;
        if (flipped) base.coeff = base.coeff * Rational(-1);
        if (--kr.power == 0) base.kernels.erase(base.kernels.begin() + static_cast<std::ptrdiff_t>(k));
        return base;
    }
    throw RewriteError("term has no kernel (" + u.str() + "-" + v.str() + ")^-1");
}

bool has_kernel(const Term& t, Slot u, Slot v) {
    return std::any_of(t.kernels.begin(), t.kernels.end(), [&](const Kernel& k) {
        return (k.u == u && k.v == v) || (k.u == v && k.v == u);
    });
}

void remove_indicator(Term& t, int var, int ball, bool inside) {
    const Indicator ind{var, ball, inside};
    t.inds.erase(std::remove(t.inds.begin(), t.inds.end(), ind), t.inds.end());
}

// Moves every kernel, F factor and phi that mentions one of `vars` into a
// list of phi expressions. Indicators on `vars` move too when
// `move_indicators`. F factors leave their implied indicator on the other
// variable behind.
std::vector<Phi> extract_dependent(Term& t, const std::vector<int>& vars, bool move_indicators) {
    auto hit = [&vars](Slot s) { return !s.z && std::find(vars.begin(), vars.end(), s.index) != vars.end(); };
    std::vector<Phi> dep;
    std::vector<Kernel> ks;
    for (const Kernel& k : t.kernels) {
        if (hit(k.u) || hit(k.v))
            dep.push_back(phi_kernel(k.u, k.v, k.power));
        else
            ks.push_back(k);
    }
    t.kernels = ks;
    std::vector<FFactor> fs;
    for (const FFactor& f : t.fs) {
        const bool ha = hit(Slot::x(f.a)), hb = hit(Slot::x(f.b));
        if (!ha && !hb) {
            fs.push_back(f);
            continue;
        }
        dep.push_back(phi_F(f.ball, f.a, f.b));
        if (!ha) t.add_indicator(f.a, f.ball, true);
        if (!hb) t.add_indicator(f.b, f.ball, false);
    }
    t.fs = fs;
    if (move_indicators) {
        std::vector<Indicator> is;
        for (const Indicator& i : t.inds) {
            if (hit(Slot::x(i.var)))
                dep.push_back(phi_indicator(i.var, i.ball, i.inside));
            else
                is.push_back(i);
        }
        t.inds = is;
    }
    std::vector<Phi> ps;
    for (const Phi& p : t.phis) {
        bool d = false;
        for (int v : vars) d = d || phi_depends(p, Slot::x(v));
        (d ? dep : ps).push_back(p);
    }
    t.phis = ps;
    return dep;
}

// Value of an indicator-like factor on x in `region`, when determined.
// Returns 1, 0, or -1 (undetermined).
int decided(const Region& region, int ball, bool inside, const BallGeometry& g) {
    const Region in{K::In, ball}, out{K::Out, ball};
    if (implies(region, in, g)) return inside ? 1 : 0;
    if (implies(region, out, g)) return inside ? 0 : 1;
    return -1;
}

void finish(TermList& out, Term t, const BallGeometry& g) {
    if (t.coeff.is_zero()) return;
    t.sort();
    if (t.coeff.is_zero() || !feasible(t, g)) return;
    drop_redundant_indicators(t, g);
    out.terms.push_back(std::move(t));
}

}  // namespace

TermList symmetrize(const Term& term, int a, int b, int level, const BallGeometry& geom) {
    if (a == b) throw RewriteError("symmetrize needs two distinct variables");
    if (term.on_contour(a) || term.on_contour(b)) throw RewriteError("symmetrize acts on integrated variables only");
    const Indicator in_a{a, level, true};
    if (std::find(term.inds.begin(), term.inds.end(), in_a) == term.inds.end())
        throw RewriteError("symmetrize needs the indicator " + in_a.str());
    Term base = without_kernel(term, Slot::x(a), Slot::x(b));
    remove_indicator(base, a, level, true);

    TermList out;
    Term f = base;
    f.add_F(level, a, b);
    finish(out, f, geom);

    // Both variables inside B_level: the factors of x_a, x_b go into the
    // difference quotient.
    Term q = base;
    std::vector<Phi> dep = extract_dependent(q, {a, b}, true);
    const Region inside{K::In, level};
    std::vector<Phi> kept;
    bool zero = false;
    for (const Phi& p : dep) {
        if (p->op == PhiNode::Op::Ind) {
            const int v = decided(inside, p->ball, p->inside, geom);
            if (v == 1) continue;
            if (v == 0) zero = true;
        }
        if (p->op == PhiNode::Op::F && (p->u.index == a || p->u.index == b) &&
            decided(inside, p->ball, true, geom) == 0)
            zero = true;
        if (p->op == PhiNode::Op::F && (p->v.index == a || p->v.index == b) &&
            decided(inside, p->ball, false, geom) == 0)
            zero = true;
        kept.push_back(p);
    }
    if (!zero && !kept.empty()) {
        q.coeff = q.coeff * Rational(1, 2);
        q.add_indicator(a, level, true);
        q.add_indicator(b, level, true);
        q.phis.push_back(phi_dq(a, b, kept.size() == 1 ? kept[0] : phi_mul(kept)));
        finish(out, q, geom);
    }
    out.centers = geom.centers;
    return out;
}

TermList reduce_insertion_kernel(const Term& term, int k, int i, int level, const InsertionConfig& config,
                                 const BallGeometry& geom, bool conjugate) {
    TermList out;
    out.centers = geom.centers;
    out.conjugate = conjugate;
    const Slot xk = Slot::x(k), zi = Slot::zi(i);
    if (!has_kernel(term, xk, zi)) {
        out.terms.push_back(term);
        return out;
    }
    if (level < 1 || level > geom.balls() || geom.centers[static_cast<std::size_t>(level - 1)] != i)
        throw RewriteError("ball B_" + std::to_string(level) + " is not centered at z" + std::to_string(i));
    if (term.on_contour(k)) throw RewriteError("cannot reduce a contour variable");
    for (const Kernel& kr : term.kernels)
        if (((kr.u == xk && kr.v == zi) || (kr.u == zi && kr.v == xk)) && kr.power != 1)
            throw RewriteError("insertion kernel with power " + std::to_string(kr.power));
    const int N = static_cast<int>(config.points.size());
    const Term base = without_kernel(term, xk, zi);
    const Coefficient inv_ai = alpha(i, -1);
    const Coefficient inv_gamma = sym("gamma", -1);

    // outside B_level the kernel is bounded
    {
        Term t = base;
        t.add_kernel(xk, zi);
        t.add_indicator(k, level, false);
        finish(out, t, geom);
    }
    Term inner = base;
    inner.add_indicator(k, level, true);
    // other insertions
    for (int j = 1; j <= N; ++j) {
        if (j == i) continue;
        Term t = inner;
        t.add_kernel(xk, Slot::zi(j));
        t.coeff = t.coeff * Rational(-1) * alpha(j) * inv_ai;
        finish(out, t, geom);
    }
    // other gamma-insertions
    auto pair_term = [&](Term t, int l) {
        t.add_kernel(xk, Slot::x(l));
        if (t.on_contour(l)) {
            finish(out, t, geom);
            return;
        }
        t.sort();
        if (t.coeff.is_zero()) return;
        for (Term& s : symmetrize(t, k, l, level, geom).terms) finish(out, s, geom);
    };
    for (int l = 1; l <= base.vars; ++l) {
        if (l == k) continue;
        Term t = inner;
        t.coeff = t.coeff * Rational(-1) * sym("gamma") * inv_ai;
        pair_term(t, l);
    }
    // chaos term: a new gamma-insertion
    {
        Term t = inner;
        t.vars += 1;
        t.coeff = t.coeff * sym("mu") * sym("gamma") * inv_ai;
        pair_term(t, t.vars);
    }
    // boundary of B_level
    {
        Term t = base;
        t.contours.push_back({k, level});
        t.coeff = t.coeff * Rational(conjugate ? 1 : -1) * sym("i") * inv_gamma * inv_ai;
        finish(out, t, geom);
    }
    // derivative of the x_k-dependent factors
    {
        Term t = inner;
        std::vector<Phi> dep = extract_dependent(t, {k}, false);
        if (!dep.empty()) {
            t.coeff = t.coeff * Rational(2) * inv_gamma * inv_ai;
            t.phis.push_back(phi_d(xk, dep.size() == 1 ? dep[0] : phi_mul(dep)));
            finish(out, t, geom);
        }
    }
    return out;
}

TermList differentiate(const TermList& list, int i, int level, const InsertionConfig& config,
                       const BallGeometry& geom) {
    const int N = static_cast<int>(config.points.size());
    const Slot zi = Slot::zi(i);
    TermList raw;
    raw.centers = geom.centers;
    raw.conjugate = list.conjugate;
    auto reduce = [&](const Term& t, int v) {
        for (Term& r : reduce_insertion_kernel(t, v, i, level, config, geom, list.conjugate).terms)
            finish(raw, r, geom);
    };
    for (const Term& term : list.terms) {
        // insertion-insertion interaction
        for (int j = 1; j <= N; ++j) {
            if (j == i) continue;
            Term t = term;
            t.add_kernel(zi, Slot::zi(j));
            t.coeff = t.coeff * Rational(-1, 2) * alpha(i) * alpha(j);
            finish(raw, t, geom);
        }
        // explicit z_i dependence
        for (std::size_t k = 0; k < term.kernels.size(); ++k) {
            const Kernel& kr = term.kernels[k];
            if (kr.u != zi && kr.v != zi) continue;
            Term t = term;
            t.kernels[k].power += 1;
            t.coeff = t.coeff * Rational(kr.u == zi ? -kr.power : kr.power);
            finish(raw, t, geom);
        }
        for (std::size_t k = 0; k < term.phis.size(); ++k) {
            if (!phi_depends(term.phis[k], zi)) continue;
            Term t = term;
            t.phis[k] = phi_d(zi, t.phis[k]);
            finish(raw, t, geom);
        }
        // gamma-insertions seen from z_i
        for (int v = 1; v <= term.vars; ++v) {
            Term t = term;
            t.add_kernel(Slot::x(v), zi);
            t.coeff = t.coeff * Rational(1, 2) * alpha(i) * sym("gamma");
            if (t.on_contour(v) || separated(variable_support(t, v), zpos(geom, i), geom))
                finish(raw, t, geom);
            else
                reduce(t, v);
        }
        // chaos term
        {
            Term t = term;
            t.vars += 1;
            t.add_kernel(Slot::x(t.vars), zi);
            t.coeff = t.coeff * Rational(-1, 2) * alpha(i) * sym("mu") * sym("gamma");
            reduce(t, t.vars);
        }
    }
    return canonicalize(raw);
}

Expansion expand_derivative(const DerivativeRequest& req) {
    req.validate();
    const BallGeometry geom = req.geometry();
    Expansion e;
    e.terms.centers = req.indices;
    e.terms.conjugate = req.conjugate;
    e.terms.terms.push_back(Term());
    for (int s = 1; s <= req.order(); ++s)
        e.terms = differentiate(e.terms, req.indices[static_cast<std::size_t>(s - 1)], s, req.config, geom);
    e.terms.centers = req.indices;
    e.calibration = 1.0;
    e.calibration_note = "constants from the Gaussian integration by parts seed (alpha_i alpha_j, mu); "
                         "calibration factor 1, checked against finite differences at n = 1";
    return e;
}

// ---------------------------------------------------------------- phi values

namespace {

struct PhiEnv {
    std::vector<Complex> x;  // 1-based: x[0] unused
    std::vector<Complex> z;
    const BallGeometry* g;
    bool conj;

    Complex at(Slot s) const {
        return s.z ? z.at(static_cast<std::size_t>(s.index - 1)) : x.at(static_cast<std::size_t>(s.index));
    }
    Complex& ref(Slot s) { return s.z ? z.at(static_cast<std::size_t>(s.index - 1)) : x.at(static_cast<std::size_t>(s.index)); }
    bool inside(Complex p, int ball) const { return std::abs(p - g->center(ball)) < g->radius(ball); }
    Complex inv(Complex d, int p) const {
        if (conj) d = std::conj(d);
        return std::pow(d, -p);
    }
};

Complex eval(const Phi& p, PhiEnv& env) {
    switch (p->op) {
        case PhiNode::Op::Ind:
            return env.inside(env.at(p->u), p->ball) == p->inside ? 1.0 : 0.0;
        case PhiNode::Op::Ker:
            return env.inv(env.at(p->u) - env.at(p->v), p->power);
        case PhiNode::Op::F: {
            const Complex a = env.at(p->u), b = env.at(p->v);
            if (!env.inside(a, p->ball) || env.inside(b, p->ball)) return 0.0;
            return env.inv(a - b, 1);
        }
        case PhiNode::Op::Mul: {
            Complex v = 1.0;
            for (const Phi& a : p->args) {
                v *= eval(a, env);
                if (v == 0.0) break;
            }
            return v;
        }
        case PhiNode::Op::DQ: {
            Complex& xa = env.ref(p->u);
            Complex& xb = env.ref(p->v);
            if (xa == xb) return 0.0;
            const Complex e1 = eval(p->args[0], env);
            std::swap(xa, xb);
            const Complex e2 = eval(p->args[0], env);
            std::swap(xa, xb);
            return (e1 - e2) * env.inv(xa - xb, 1);
        }
        case PhiNode::Op::D: {
            // Wirtinger derivative by Richardson-extrapolated central differences.
            Complex& u = env.ref(p->u);
            const Complex u0 = u;
            auto wirtinger = [&](double h) {
                u = u0 + h;
                const Complex fp = eval(p->args[0], env);
                u = u0 - h;
                const Complex fm = eval(p->args[0], env);
                u = u0 + Complex(0.0, h);
                const Complex gp = eval(p->args[0], env);
                u = u0 - Complex(0.0, h);
                const Complex gm = eval(p->args[0], env);
                u = u0;
                const Complex dx = (fp - fm) / (2.0 * h), dy = (gp - gm) / (2.0 * h);
                return env.conj ? 0.5 * (dx + Complex(0.0, 1.0) * dy) : 0.5 * (dx - Complex(0.0, 1.0) * dy);
            };
            const double h = 1e-3 * env.g->r / std::max(1, env.g->balls());
            return (4.0 * wirtinger(0.5 * h) - wirtinger(h)) / 3.0;
        }
    }
    return 0.0;
}

}  // namespace

Complex evaluate_phi(const Phi& phi, const std::vector<Complex>& x, const std::vector<Complex>& z,
                     const BallGeometry& geom, bool conjugate) {
    PhiEnv env{std::vector<Complex>(x.size() + 1), z, &geom, conjugate};
    std::copy(x.begin(), x.end(), env.x.begin() + 1);
    return eval(phi, env);
}

// ---------------------------------------------------------------- evaluation

ComplexEstimate summarize(const std::vector<Complex>& samples) {
    ComplexEstimate e;
    e.replicas = samples.size();
    if (samples.empty()) return e;
    Complex mean = 0.0;
    for (const Complex& s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    double vr = 0.0, vi = 0.0;
    for (const Complex& s : samples) {
        vr += std::pow(s.real() - mean.real(), 2);
        vi += std::pow(s.imag() - mean.imag(), 2);
    }
    const double n = static_cast<double>(samples.size());
    e.value = mean;
    if (samples.size() > 1) {
        e.stderr_re = std::sqrt(vr / (n - 1.0) / n);
        e.stderr_im = std::sqrt(vi / (n - 1.0) / n);
    }
    return e;
}

TermEvaluator::TermEvaluator(std::shared_ptr<const ChaosEnsemble> ensemble, const DerivativeRequest& req)
    : ensemble_(std::move(ensemble)), config_(req.config), geom_(req.geometry()), conjugate_(req.conjugate) {
    if (!ensemble_) throw ConfigError("evaluator needs an ensemble");
    if (ensemble_->config().canonical().points != config_.canonical().points ||
        ensemble_->config().canonical().alphas != config_.canonical().alphas)
        throw ConfigError("ensemble was built for a different configuration");
}

Complex TermEvaluator::coefficient(const Term& t) const {
    const InsertionConfig& c = config_;
    return t.coeff.value([&c](const std::string& name) -> double {
        if (name == "mu") return c.mu_effective();
        if (name == "gamma") return c.gamma;
        if (name.size() > 1 && name[0] == 'a') {
            const int i = std::stoi(name.substr(1));
            if (i >= 1 && i <= static_cast<int>(c.alphas.size())) return c.alphas[static_cast<std::size_t>(i - 1)];
        }
        throw DomainError("unknown symbol '" + name + "' in a coefficient");
    });
}

std::vector<std::size_t> TermEvaluator::nodes_in(const std::vector<Region>& support) const {
    std::vector<std::size_t> rows;
    const auto& nodes = ensemble_->nodes();
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        bool ok = ensemble_->area()[k] > 0.0;
        for (const Region& r : support) {
            if (!ok) break;
            const bool in = std::abs(nodes[k] - geom_.center(r.ball)) < geom_.radius(r.ball);
            if (r.kind == K::In) ok = in;
            if (r.kind == K::Out) ok = !in;
        }
        if (ok) rows.push_back(k);
    }
    return rows;
}

std::vector<Complex> TermEvaluator::samples(const Term& term) const {
    const InsertionConfig& config = config_;
    if (!term.is_contour()) {
        const ConvergenceCertificate cert = check_absolutely_convergent(term, config, geom_);
        if (!cert.convergent) {
            std::string msg = "term is not absolutely convergent:";
            for (const std::string& l : cert.lines) msg += "\n  " + l;
            throw PreconditionError(msg);
        }
    }
    const Complex coeff = coefficient(term);
    const std::size_t R = ensemble_->replicas();
    const std::vector<Complex> z = config.points;
    const int m = term.vars;

    // Product of all factors at x (1-based, x[0] unused).
    PhiEnv env{std::vector<Complex>(static_cast<std::size_t>(m) + 1), z, &geom_, conjugate_};
    auto h = [&]() {
        Complex v = coeff;
        for (const Kernel& k : term.kernels) v *= env.inv(env.at(k.u) - env.at(k.v), k.power);
        for (const FFactor& f : term.fs) {
            const Complex a = env.x[static_cast<std::size_t>(f.a)], b = env.x[static_cast<std::size_t>(f.b)];
            if (!env.inside(a, f.ball) || env.inside(b, f.ball)) return Complex(0.0);
            v *= env.inv(a - b, 1);
        }
        for (const Indicator& i : term.inds)
            if (env.inside(env.x[static_cast<std::size_t>(i.var)], i.ball) != i.inside) return Complex(0.0);
        for (const Phi& p : term.phis) {
            if (v == 0.0) break;
            v *= eval(p, env);
        }
        return v;
    };

    if (m == 0) {
        const std::vector<double> g = ensemble_->samples();
        const Complex v = h();
        std::vector<Complex> out(R);
        for (std::size_t r = 0; r < R; ++r) out[r] = v * g[r];
        return out;
    }
    if (term.contours.size() == 1 && m == 1) {
        const int ball = term.contours[0].ball;
        const Complex c = geom_.center(ball);
        const double rho = geom_.radius(ball);
        const int M = contour_points;
        std::vector<Complex> xs(static_cast<std::size_t>(M));
        std::vector<Complex> w(static_cast<std::size_t>(M));
        const double dth = 2.0 * M_PI / M;
        for (int q = 0; q < M; ++q) {
            const double th = (q + 0.5) * dth;
            const Complex e = std::polar(1.0, th);
            xs[static_cast<std::size_t>(q)] = c + rho * e;
            // dx-bar = -i rho e^{-i th} dth, dx = i rho e^{i th} dth
            const Complex dmeasure = conjugate_ ? Complex(0.0, rho) * e * dth : Complex(0.0, -rho) * std::conj(e) * dth;
            env.x[1] = xs[static_cast<std::size_t>(q)];
            w[static_cast<std::size_t>(q)] = h() * dmeasure;
        }
        const Eigen::MatrixXd s = ensemble_->single_insertion_samples(xs);
        std::vector<Complex> out(R, 0.0);
        for (int q = 0; q < M; ++q) {
            const Complex wq = w[static_cast<std::size_t>(q)];
            if (wq == 0.0) continue;
            for (std::size_t r = 0; r < R; ++r) out[r] += wq * s(q, static_cast<Eigen::Index>(r));
        }
        return out;
    }
    if (term.is_contour())
        throw DomainError("contour terms with integrated variables are not evaluable: " + term.str());
    if (m == 1) {
        const auto rows = nodes_in(variable_support(term, 1));
        if (rows.empty()) return std::vector<Complex>(R, 0.0);
        return ensemble_->moment1(
            [&](Complex x) {
                env.x[1] = x;
                return h();
            },
            rows);
    }
    if (m == 2) {
        const auto rows = nodes_in(variable_support(term, 1));
        const auto cols = nodes_in(variable_support(term, 2));
        if (rows.empty() || cols.empty()) return std::vector<Complex>(R, 0.0);
        return ensemble_->moment2(
            [&](Complex x1, Complex x2) {
                if (x1 == x2) return Complex(0.0);
                env.x[1] = x1;
                env.x[2] = x2;
                return h();
            },
            rows, cols);
    }
    throw DomainError("terms with " + std::to_string(m) + " integrated variables are not evaluable: " + term.str());
}

std::vector<Complex> TermEvaluator::samples(const TermList& list, double calibration) const {
    std::vector<Complex> total(ensemble_->replicas(), 0.0);
    for (const Term& t : list.terms) {
        const auto s = samples(t);
        for (std::size_t r = 0; r < total.size(); ++r) total[r] += calibration * s[r];
    }
    return total;
}

ComplexEstimate evaluate_term(const Term& term, const TermEvaluator& evaluator) {
    return summarize(evaluator.samples(term));
}

ComplexEstimate evaluate_expansion(const Expansion& expansion, const TermEvaluator& evaluator) {
    return summarize(evaluator.samples(expansion.terms, expansion.calibration));
}

FiniteDifference finite_difference_derivative(const InsertionConfig& config, int i, double h, const MCConfig& mc,
                                              bool conjugate) {
    config.validate();
    const int N = static_cast<int>(config.points.size());
    if (i < 1 || i > N) throw ConfigError("derivative index out of range", "i");
    if (!(h > 0.0) || h >= config.delta() / 10.0) throw ConfigError("finite-difference step must satisfy 0 < h < delta/10", "h");
    const Complex shifts[4] = {Complex(h, 0.0), Complex(-h, 0.0), Complex(0.0, h), Complex(0.0, -h)};
    std::vector<std::vector<double>> g(4);
    for (int s = 0; s < 4; ++s) {
        InsertionConfig c = config;
        c.points[static_cast<std::size_t>(i - 1)] += shifts[s];
        c.validate();
        g[static_cast<std::size_t>(s)] = ChaosEnsemble(c, mc).samples();
    }
    FiniteDifference fd;
    fd.step = h;
    fd.samples.resize(g[0].size());
    const Complex I(0.0, 1.0);
    for (std::size_t r = 0; r < fd.samples.size(); ++r) {
        const double dx = (g[0][r] - g[1][r]) / (2.0 * h);
        const double dy = (g[2][r] - g[3][r]) / (2.0 * h);
        fd.samples[r] = conjugate ? 0.5 * (dx + I * dy) : 0.5 * (dx - I * dy);
    }
    fd.estimate = summarize(fd.samples);
    return fd;
}

}  // namespace lcft
