#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>

#include "experiment_detail.hpp"
#include "lcft/bpz_ops.hpp"
#include "lcft/correlators.hpp"
#include "lcft/deriv_calculus.hpp"
#include "lcft/fusion.hpp"
#include "lcft/gmc.hpp"
#include "lcft/parallel.hpp"
#include "lcft/quadrature.hpp"
#include "lcft/sphere_gff.hpp"

namespace lcft::detail {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

const double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tag for the extra Gaussian of the shifted Kahane field.
constexpr std::uint64_t kShiftStream = 0x5eed5eed5eedULL;

double read_gamma(ParamReader& r, double def) {
    const double g = r.real("gamma", def);
    r.check(g > 0.0 && g < 2.0, "gamma", "gamma must lie in (0, 2), got " + fmt("%g", g));
    return g;
}

int read_l_max(ParamReader& r, long def, long hi = 256) {
    const long l = r.integer("l_max", def);
    r.check(l >= 1 && l <= hi, "l_max", "l_max must lie in 1.." + std::to_string(hi));
    return static_cast<int>(l);
}

InsertionConfig read_insertions(ParamReader& r, const std::vector<Complex>& points, double alpha, double gamma) {
    InsertionConfig c;
    c.points = r.points("points", points);
    c.alphas = r.reals("alphas", std::vector<double>(c.points.size(), alpha));
    c.gamma = read_gamma(r, gamma);
    c.mu = r.real("mu", 1.0);
    r.check(c.mu > 0.0, "mu", "mu must be positive");
    r.check(c.points.size() >= 3, "points", "at least three insertions are needed on the sphere");
    r.check(c.points.size() <= 8, "points", "at most eight insertions are supported");
    r.check(c.alphas.size() == c.points.size(), "alphas", "one momentum per insertion point required");
    return c;
}

MCConfig mc_config(const ExperimentConfig& cfg, int l_max, bool refine = true) {
    MCConfig mc;
    mc.seed = cfg.seed;
    mc.replicas = cfg.replicas;
    mc.l_max = l_max;
    mc.refine = refine;
    return mc;
}

Series series(std::string name, std::vector<std::string> columns) { return Series{std::move(name), std::move(columns), {}}; }

// ---------------------------------------------------------------- gff-cov

struct GffCovParams {
    int l_max = 64;
    std::vector<std::pair<Complex, Complex>> pairs;
    double sigmas = 3.0;
};

const std::vector<std::pair<Complex, Complex>>& default_pairs() {
    static const std::vector<std::pair<Complex, Complex>> p = {
        {0.0, 1.0},
        {1.0, -1.0},
        {0.0, Complex(0.0, 1.0)},
        {0.5, -0.5},
        {Complex(0.3, 0.2), Complex(-0.7, 0.1)},
        {2.0, Complex(0.0, -0.5)},
        {0.1, 0.2},
        {Complex(1.0, 1.0), Complex(1.0, -1.0)},
        {0.0, 10.0},
        {Complex(-3.0, 1.0), Complex(0.0, 0.25)},
    };
    return p;
}

GffCovParams parse_gff_cov(ParamReader& r, const ExperimentConfig&) {
    GffCovParams p;
    p.l_max = read_l_max(r, 64, 512);
    p.pairs = r.point_pairs("pairs", default_pairs());
    p.sigmas = r.real("sigmas", 3.0);
    r.finish();
    r.check(!p.pairs.empty(), "pairs", "need at least one pair");
    r.check(p.sigmas > 0.0, "sigmas", "sigmas must be positive");
    for (std::size_t k = 0; k < p.pairs.size(); ++k) {
        const auto [a, b] = p.pairs[k];
        const std::string where = "pairs[" + std::to_string(k) + "]";
        r.check(std::isfinite(std::abs(a)) && std::isfinite(std::abs(b)), where, "points must be finite");
        r.check(std::abs(a - b) > 1e-9, where, "the two points of a pair must differ");
    }
    return p;
}

void run_gff_cov(const GffCovParams& p, const ExperimentConfig& cfg, ResultRecord& rec) {
    std::vector<Complex> pts;
    auto index = [&pts](Complex z) {
        for (std::size_t k = 0; k < pts.size(); ++k)
            if (pts[k] == z) return k;
        pts.push_back(z);
        return pts.size() - 1;
    };
    std::vector<std::pair<std::size_t, std::size_t>> idx;
    for (const auto& [a, b] : p.pairs) {
        const std::size_t ia = index(a);
        idx.emplace_back(ia, index(b));
    }
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::from_points(pts, std::vector<double>(pts.size(), 1.0)));
    const FieldSampler sampler(grid, p.l_max);
    const std::size_t n = cfg.replicas;
    std::vector<std::vector<double>> prod(idx.size(), std::vector<double>(n));
    parallel_for(n, [&](std::size_t r) {
        const FieldSample s = sampler.sample(cfg.seed, r);
        for (std::size_t k = 0; k < idx.size(); ++k) prod[k][r] = s.values[idx[k].first] * s.values[idx[k].second];
    });
    // the field has mean zero, so the replica mean of X_a X_b is unbiased
    Series out = series("pairs", {"a_re", "a_im", "b_re", "b_im", "empirical", "stderr", "exact", "truncated",
                                  "truncation_bound", "deviation"});
    double worst = 0.0;
    std::size_t fails = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto [a, b] = p.pairs[k];
        const SampleStats st = sample_stats(prod[k]);
        const double exact = covariance(a, b);
        const double t = sphere_cosine(a, b);
        const double bound = truncation_bound(t, p.l_max);
        const double dev = std::abs(st.mean - exact) / (st.stderr_ + bound);
        worst = std::max(worst, dev);
        if (!(dev <= p.sigmas)) ++fails;
        out.rows.push_back({a.real(), a.imag(), b.real(), b.imag(), st.mean, st.stderr_, exact,
                            truncated_covariance(t, p.l_max), bound, dev});
        rec.scalars.push_back({"cov[" + std::to_string(k) + "]", st.mean, st.stderr_});
    }
    rec.scalars.push_back({"max_deviation", worst, kNaN});
    rec.checks.push_back({"covariance within sigmas*(stderr + truncation bound)", fails == 0,
                          std::to_string(fails) + " of " + std::to_string(idx.size()) +
                              " pairs outside; largest deviation " + fmt("%.3f", worst)});
    rec.series.push_back(std::move(out));
}

// ---------------------------------------------------------------- gmc-mass

struct GmcParams {
    std::vector<double> gammas;
    int l_max = 32;
    int n_theta = 64;
    double epsilon = 0.1;
    double sigmas = 3.0;
};

GmcParams parse_gmc(ParamReader& r, const ExperimentConfig&) {
    GmcParams p;
    p.gammas = r.reals("gammas", {0.25, 0.5, 1.0, std::sqrt(2.0)});
    p.l_max = read_l_max(r, 32, 128);
    const long nt = r.integer("n_theta", 64);
    p.epsilon = r.real("epsilon", 0.1);
    p.sigmas = r.real("sigmas", 3.0);
    r.finish();
    r.check(!p.gammas.empty(), "gammas", "need at least one gamma");
    for (std::size_t k = 0; k < p.gammas.size(); ++k)
        r.check(p.gammas[k] > 0.0 && p.gammas[k] < 2.0, "gammas[" + std::to_string(k) + "]",
                "gamma must lie in (0, 2), got " + fmt("%g", p.gammas[k]));
    r.check(nt >= 8 && nt <= 512, "n_theta", "n_theta must lie in 8..512");
    r.check(nt >= p.l_max, "n_theta", "n_theta must be at least l_max to resolve the field");
    p.n_theta = static_cast<int>(nt);
    r.check(p.epsilon > 0.0 && p.epsilon <= 0.5, "epsilon", "mollifier radius must lie in (0, 0.5]");
    r.check(p.sigmas > 0.0, "sigmas", "sigmas must be positive");
    // cheap to build; a kernel support with too few nodes is refused here
    prefixed([&] {
        auto grid = std::make_shared<const SphereGrid>(SphereGrid::gauss(p.n_theta, 2 * p.n_theta));
        Mollifier(grid, MollifierKernel{p.epsilon}, p.l_max);
    });
    return p;
}

void run_gmc(const GmcParams& p, const ExperimentConfig& cfg, ResultRecord& rec) {
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::gauss(p.n_theta, 2 * p.n_theta));
    const FieldSampler sampler(grid, p.l_max);
    std::unique_ptr<Mollifier> moll;
    prefixed([&] { moll = std::make_unique<Mollifier>(grid, MollifierKernel{p.epsilon}, p.l_max); });
    const std::size_t n = cfg.replicas, g = p.gammas.size();
    std::vector<std::vector<double>> spec(g, std::vector<double>(n)), mol(g, std::vector<double>(n));
    parallel_for(n, [&](std::size_t r) {
        const FieldSample f = sampler.sample(cfg.seed, r);
        const FieldSample m = moll->apply(f);
        for (std::size_t k = 0; k < g; ++k) {
            spec[k][r] = chaos_measure(f, GammaParam(p.gammas[k])).total_mass();
            mol[k][r] = chaos_measure(m, GammaParam(p.gammas[k])).total_mass();
        }
    });
    Series out = series("mass", {"gamma", "backend", "l_max", "mean", "stderr", "expected"});
    for (std::size_t k = 0; k < g; ++k) {
        const SampleStats a = sample_stats(spec[k]), b = sample_stats(mol[k]);
        const std::string tag = fmt("%g", p.gammas[k]);
        rec.scalars.push_back({"mass_spectral[" + tag + "]", a.mean, a.stderr_});
        rec.scalars.push_back({"mass_mollified[" + tag + "]", b.mean, b.stderr_});
        out.rows.push_back({p.gammas[k], "spectral", p.l_max, a.mean, a.stderr_, kFourPi});
        out.rows.push_back({p.gammas[k], "mollified", p.l_max, b.mean, b.stderr_, kFourPi});
        const double da = std::abs(a.mean - kFourPi) / a.stderr_;
        const double db = std::abs(b.mean - kFourPi) / b.stderr_;
        const double comb = std::hypot(a.stderr_, b.stderr_);
        const double dab = std::abs(a.mean - b.mean) / comb;
        rec.checks.push_back({"spectral mass 4 pi (gamma=" + tag + ")", da <= p.sigmas, fmt("%.2f stderr", da)});
        rec.checks.push_back({"mollified mass 4 pi (gamma=" + tag + ")", db <= p.sigmas, fmt("%.2f stderr", db)});
        rec.checks.push_back(
            {"backends agree (gamma=" + tag + ")", dab <= p.sigmas, fmt("%.2f combined stderr", dab)});
    }
    rec.series.push_back(std::move(out));
}

// ---------------------------------------------------------------- kahane

struct KahaneParams {
    double gamma = 1.0;
    int l_max = 16;
    int n_theta = 32;
    double shift = 0.3;
    std::vector<std::string> functionals;
    double sigmas = 2.0;
};

KahaneParams parse_kahane(ParamReader& r, const ExperimentConfig&) {
    KahaneParams p;
    p.gamma = read_gamma(r, 1.0);
    p.l_max = read_l_max(r, 16, 128);
    const long nt = r.integer("n_theta", 32);
    p.shift = r.real("shift", 0.3);
    p.sigmas = r.real("sigmas", 2.0);
    const std::vector<std::string> fs = r.strings("functionals", {"inverse", "square"});
    r.finish();
    r.check(!fs.empty(), "functionals", "need at least one functional");
    for (std::size_t k = 0; k < fs.size(); ++k)
        r.check(fs[k] == "inverse" || fs[k] == "square", "functionals[" + std::to_string(k) + "]",
                "functional must be inverse or square");
    p.functionals = fs;
    r.check(nt >= 8 && nt <= 256 && nt >= p.l_max, "n_theta", "n_theta must lie in max(8, l_max)..256");
    p.n_theta = static_cast<int>(nt);
    r.check(p.shift > 0.0 && p.shift <= 4.0, "shift", "shift variance must lie in (0, 4]");
    r.check(p.sigmas > 0.0, "sigmas", "sigmas must be positive");
    for (const std::string& f : fs)
        if (f == "square") prefixed([&] { check_moment_order(2.0, GammaParam(p.gamma)); });
    return p;
}

void run_kahane(const KahaneParams& p, const ExperimentConfig& cfg, ResultRecord& rec) {
    auto grid = std::make_shared<const SphereGrid>(SphereGrid::gauss(p.n_theta, 2 * p.n_theta));
    const FieldSampler sampler(grid, p.l_max);
    const FieldGenerator a = [&](std::uint64_t r) { return sampler.sample(cfg.seed, r); };
    const FieldGenerator b = shifted_generator(a, p.shift, cfg.seed ^ kShiftStream);
    const std::vector<std::pair<std::size_t, std::size_t>> probes{{0, grid->size() / 2}, {10, 10}, {1, 2}};
    auto one = [](Complex) { return 1.0; };
    Series out = series("kahane", {"functional", "field", "mean", "stderr"});
    for (const std::string& f : p.functionals) {
        const std::function<double(double)> F =
            f == "inverse" ? std::function<double(double)>([](double x) { return 1.0 / x; })
                           : std::function<double(double)>([](double x) { return x * x; });
        const KahaneComparison c = kahane_compare(a, b, GammaParam(p.gamma), one, F, cfg.replicas, p.sigmas, probes);
        rec.scalars.push_back({"E F(A) [" + f + "]", c.a.mean, c.a.stderr_});
        rec.scalars.push_back({"E F(B) [" + f + "]", c.b.mean, c.b.stderr_});
        rec.scalars.push_back({"difference [" + f + "]", c.difference.mean, c.difference.stderr_});
        out.rows.push_back({f, "A", c.a.mean, c.a.stderr_});
        out.rows.push_back({f, "B", c.b.mean, c.b.stderr_});
        rec.checks.push_back({"E F(A) <= E F(B) for F = " + std::string(f == "inverse" ? "x^-1" : "x^2"), c.ordered,
                              fmt("difference %.4g +- %.2g", c.difference.mean, c.difference.stderr_)});
        rec.checks.push_back({"covariance domination on probes (" + f + ")", c.warning.empty(),
                              c.warning.empty() ? fmt("excess %.2f stderr", c.domination_excess) : c.warning});
    }
    rec.series.push_back(std::move(out));
}

// ---------------------------------------------------------------- correlator / kpz

struct CorrelatorParams {
    InsertionConfig config;
    std::vector<Complex> extra;
    int l_max = 32;
    bool refine = true;
};

CorrelatorParams parse_correlator(ParamReader& r, const ExperimentConfig&) {
    CorrelatorParams p;
    p.config = read_insertions(r, {0.0, 1.0, -1.0}, 2.0, 1.0);
    p.extra = r.points("extra", {});
    p.l_max = read_l_max(r, 32, 128);
    p.refine = r.flag("refine", true);
    r.finish();
    r.check(p.extra.size() <= 4, "extra", "at most four gamma-insertions");
    prefixed([&] { p.config.validate(); });
    for (std::size_t k = 0; k < p.extra.size(); ++k)
        for (Complex z : p.config.points)
            r.check(std::abs(p.extra[k] - z) > 1e-9, "extra[" + std::to_string(k) + "]",
                    "gamma-insertion coincides with an insertion point");
    return p;
}

void run_correlator(const CorrelatorParams& p, const ExperimentConfig& cfg, ResultRecord& rec) {
    CorrelationEstimate e;
    prefixed([&] { e = estimate_correlation(p.config, p.extra, mc_config(cfg, p.l_max, p.refine)); });
    rec.scalars.push_back({"G", e.value, e.stderr_});
    rec.scalars.push_back({"s", p.config.s(), kNaN});
    Series out = series("estimate", {"value", "stderr", "replicas", "l_max", "nodes"});
    out.rows.push_back({e.value, e.stderr_, e.replicas, e.l_max, e.nodes});
    rec.series.push_back(std::move(out));
    rec.checks.push_back({"estimate positive and finite", e.value > 0.0 && std::isfinite(e.value),
                          fmt("G = %.6g +- %.2g", e.value, e.stderr_)});
}

struct KpzParams {
    InsertionConfig config;
    int l_max = 32;
    double target = 0.05;
};

KpzParams parse_kpz(ParamReader& r, const ExperimentConfig&) {
    KpzParams p;
    p.config = read_insertions(r, {0.0, 1.0, -1.0}, 2.0, 1.0);
    p.l_max = read_l_max(r, 32, 128);
    p.target = r.real("target_error", 0.05);
    r.finish();
    r.check(p.target > 0.0, "target_error", "target_error must be positive");
    prefixed([&] { p.config.validate(); });
    return p;
}

void run_kpz(const KpzParams& p, const ExperimentConfig& cfg, ResultRecord& rec) {
    KpzResult k;
    prefixed([&] { k = kpz_check(p.config, mc_config(cfg, p.l_max)); });
    rec.scalars.push_back({"lhs", k.lhs.mean, k.lhs.stderr_});
    rec.scalars.push_back({"rhs", k.rhs.mean, k.rhs.stderr_});
    rec.scalars.push_back({"ratio", k.ratio.value, k.ratio.stderr_});
    rec.scalars.push_back({"raw_ratio", k.raw_ratio.value, k.raw_ratio.stderr_});
    rec.scalars.push_back({"raw_expected", k.raw_expected, kNaN});
    rec.scalars.push_back({"kappa", p.config.kappa(), kNaN});
    Series out = series("ratio", {"convention", "value", "stderr", "expected"});
    out.rows.push_back({"mu*kappa", k.ratio.value, k.ratio.stderr_, 1.0});
    out.rows.push_back({"raw", k.raw_ratio.value, k.raw_ratio.stderr_, k.raw_expected});
    rec.series.push_back(std::move(out));
    const double dev = std::abs(k.ratio.value - 1.0) / k.ratio.stderr_;
    rec.checks.push_back({"ratio within 3 propagated stderr of 1", k.pass,
                          fmt("ratio %.4f +- %.4f (%.2f stderr)", k.ratio.value, k.ratio.stderr_, dev)});
    rec.checks.push_back({"propagated error within target", k.ratio.stderr_ <= p.target,
                          fmt("%.4f vs %.4f", k.ratio.stderr_, p.target)});
}

// ---------------------------------------------------------------- fusion

struct FusionParams {
    FusionProbeConfig probe;
    int l_max = 32;
    double window = 0.25;
};

FusionParams parse_fusion(ParamReader& r, const ExperimentConfig&) {
    FusionParams p;
    p.probe.base = read_insertions(r, {0.0, 1.0, -1.0}, 1.75, 1.0);
    const std::vector<long> anchors = r.integers("anchors", {1});
    p.probe.ball_radii = r.reals("ball_radii", {});
    p.probe.directions = r.reals("directions", {});
    std::vector<double> seps;
    for (int k = 3; k <= 9; ++k) seps.push_back(std::ldexp(1.0, -k));
    p.probe.separations = r.reals("separations", seps);
    p.l_max = read_l_max(r, 32, 128);
    const long lf = r.integer("l_fine", 4096);
    const auto tilt = r.optional_real("tilt");
    const std::string lc = r.choice("log_correction", "auto", {"auto", "none", "fixed", "free"});
    p.window = r.real("window", 0.25);
    r.finish();
    r.check(!anchors.empty() && anchors.size() <= 2, "anchors", "one or two pairs are supported");
    for (std::size_t k = 0; k < anchors.size(); ++k)
        r.check(anchors[k] >= 1 && anchors[k] <= static_cast<long>(p.probe.base.points.size()),
                "anchors[" + std::to_string(k) + "]", "anchor is a 1-based insertion index");
    p.probe.anchors.clear();
    for (long a : anchors) p.probe.anchors.push_back(static_cast<std::size_t>(a - 1));
    r.check(lf > p.l_max && lf <= 16384, "l_fine", "l_fine must exceed l_max and be at most 16384");
    p.probe.l_fine = static_cast<int>(lf);
    if (tilt) p.probe.tilt = *tilt;
    p.probe.log_correction = lc == "none" ? LogCorrection::None
                           : lc == "fixed" ? LogCorrection::Fixed
                           : lc == "free" ? LogCorrection::Free
                                          : LogCorrection::Auto;
    r.check(p.window > 0.0, "window", "window must be positive");
    r.check(p.probe.separations.size() <= 16, "separations", "at most 16 separations");
    for (std::size_t k = 0; k < p.probe.separations.size(); ++k)
        r.check(p.probe.separations[k] >= 1e-6, "separations[" + std::to_string(k) + "]",
                "separations below 1e-6 are not resolved");
    prefixed([&] {
        p.probe.base.validate();
        p.probe.validate();
    });
    return p;
}

void points_series(Series& s, const std::vector<FusionPoint>& pts) {
    for (const FusionPoint& pt : pts) s.rows.push_back({pt.separation, pt.estimate, pt.stderr_});
}

void run_fusion(const FusionParams& p, const ExperimentConfig& cfg, ResultRecord& rec) {
    const MCConfig mc = mc_config(cfg, p.l_max);
    FusionResult f;
    prefixed([&] { f = fusion_scaling_probe(p.probe, mc); });
    rec.scalars.push_back({"slope", f.fit.slope, f.fit.stderr_});
    rec.scalars.push_back({"intercept", f.fit.intercept, kNaN});
    rec.scalars.push_back({"log_coefficient", f.fit.log_coefficient, kNaN});
    rec.scalars.push_back({"plain_slope", f.plain_slope, kNaN});
    rec.scalars.push_back({"predicted", f.predicted, kNaN});
    rec.scalars.push_back({"ci_low", f.ci_low, kNaN});
    rec.scalars.push_back({"ci_high", f.ci_high, kNaN});
    rec.scalars.push_back({"series_exponent", f.series_exponent, kNaN});
    Series pts = series("points", {"separation", "estimate", "stderr"});
    points_series(pts, f.points);
    rec.series.push_back(std::move(pts));
    const double gap = std::abs(f.fit.slope - f.predicted);
    rec.checks.push_back({"slope within window of the prediction", gap <= p.window,
                          fmt("slope %.4f, predicted %.4f, window %.2f", f.fit.slope, f.predicted, p.window)});
    rec.checks.push_back({"slope above -2", f.fit.slope > -2.0, fmt("slope %.4f", f.fit.slope)});
    if (f.product_checked) {
        rec.scalars.push_back({"joint_slope", f.joint_slope, f.product_stderr});
        rec.scalars.push_back({"marginal_slope_sum", f.marginal_slope_sum, kNaN});
        Series joint = series("joint", {"separation", "estimate", "stderr"});
        points_series(joint, f.joint_points);
        rec.series.push_back(std::move(joint));
        rec.checks.push_back({"joint slope matches the sum of marginal slopes", f.product_consistent,
                              fmt("joint %.4f, sum %.4f, stderr %.4f", f.joint_slope, f.marginal_slope_sum,
                                  f.product_stderr)});
        DecouplingReport d;
        prefixed([&] { d = kahane_decoupling_check(p.probe, mc); });
        rec.scalars.push_back({"decoupling_constant", d.constant, d.stderr_});
        rec.checks.push_back({"decoupling constant within Kahane bounds", d.pass,
                              fmt("%.4f in [%.4f, %.4f]", d.constant, d.lower_bound, d.upper_bound)});
    }
}

// ---------------------------------------------------------------- radial

struct RadialParams {
    RadialProcessConfig process;
    std::vector<double> horizons;
    int k_max = 6;
    int calibration_band = 2;
};

RadialParams parse_radial(ParamReader& r, const ExperimentConfig& cfg) {
    RadialParams p;
    p.process.gamma = read_gamma(r, std::sqrt(2.0));
    p.process.q = r.real("q", 1.0);
    if (const auto d = r.optional_real("drift")) p.process.drift = *d;
    p.horizons = r.reals("horizons", {2.0, 4.0, 8.0, 16.0});
    const long k = r.integer("k_max", 6);
    const long cb = r.integer("calibration_band", 2);
    p.process.time_step = r.real("time_step", 0.0);
    p.process.lateral_variance = r.real("lateral_variance", 0.25);
    r.finish();
    r.check(k >= 0 && k <= 20, "k_max", "k_max must lie in 0..20");
    r.check(cb >= 0 && cb <= k, "calibration_band", "calibration_band must lie in 0..k_max");
    r.check(!p.horizons.empty() && p.horizons.size() <= 12, "horizons", "need 1..12 horizons");
    for (std::size_t j = 0; j < p.horizons.size(); ++j)
        r.check(p.horizons[j] > 0.0 && p.horizons[j] <= 1000.0, "horizons[" + std::to_string(j) + "]",
                "horizon must lie in (0, 1000]");
    if (p.process.drift == p.process.drift)
        r.check(std::isfinite(p.process.drift), "drift", "drift must be finite");
    p.k_max = static_cast<int>(k);
    p.calibration_band = static_cast<int>(cb);
    p.process.replicas = cfg.replicas;
    p.process.seed = cfg.seed;
    for (double h : p.horizons) {
        RadialProcessConfig c = p.process;
        c.horizon = h;
        prefixed([&] { c.validate(); });
    }
    return p;
}

void run_radial(const RadialParams& p, const ExperimentConfig&, ResultRecord& rec) {
    RadialLemmaFit fit;
    prefixed([&] { fit = fit_radial_lemma(p.process, p.horizons, p.k_max, p.calibration_band); });
    rec.scalars.push_back({"constant", fit.constant, kNaN});
    rec.scalars.push_back({"violations", static_cast<double>(fit.violations), kNaN});
    rec.scalars.push_back({"drift", p.process.effective_drift(), kNaN});
    Series out = series("cells", {"horizon", "band", "estimate", "stderr", "probability", "probability_stderr",
                                  "shape", "ratio"});
    for (const RadialLemmaCell& c : fit.cells)
        out.rows.push_back({c.estimate.horizon, c.estimate.band, c.estimate.value, c.estimate.stderr_,
                            c.estimate.probability, c.estimate.probability_stderr, c.shape, c.ratio});
    rec.series.push_back(std::move(out));
    rec.checks.push_back({"single constant dominates every cell", fit.dominated,
                          fmt("C = %.4g, %.0f violations", fit.constant, static_cast<double>(fit.violations))});
}

// ---------------------------------------------------------------- derivative

struct DerivativeParams {
    DerivativeRequest req;
    int l_max = 16;
    double h = 0.01;
    int contour_points = 256;
    bool evaluate = true;
    double sigmas = 3.0;
};

DerivativeParams parse_derivative(ParamReader& r, const ExperimentConfig&) {
    DerivativeParams p;
    p.req.config = read_insertions(r, {0.0, 1.0, -1.0}, 2.0, 1.0);
    const std::vector<long> idx = r.integers("indices", {1});
    p.req.conjugate = r.flag("conjugate", false);
    if (const auto rad = r.optional_real("r")) p.req.r = *rad;
    p.l_max = read_l_max(r, 16, 128);
    p.h = r.real("h", 0.01);
    const long cp = r.integer("contour_points", 256);
    p.evaluate = r.flag("evaluate", true);
    p.sigmas = r.real("sigmas", 3.0);
    r.finish();
    r.check(!idx.empty(), "indices", "need at least one derivative index");
    p.req.indices.assign(idx.begin(), idx.end());
    r.check(cp >= 8 && cp <= 65536, "contour_points", "contour_points must lie in 8..65536");
    p.contour_points = static_cast<int>(cp);
    r.check(p.sigmas > 0.0, "sigmas", "sigmas must be positive");
    prefixed([&] {
        p.req.config.validate();
        p.req.validate();
    });
    if (p.evaluate) {
        r.check(p.req.order() == 1, "evaluate", "numerical evaluation covers first derivatives; set evaluate to false");
        r.check(p.h > 0.0 && p.h < p.req.config.delta() / 10.0, "h",
                "finite-difference step must satisfy 0 < h < delta/10");
    }
    return p;
}

void run_derivative(const DerivativeParams& p, const ExperimentConfig& cfg, ResultRecord& rec) {
    Expansion e;
    prefixed([&] { e = expand_derivative(p.req); });
    const BallGeometry geom = p.req.geometry();
    const auto& terms = e.terms.terms;
    std::size_t bad = 0;
    std::vector<bool> ok(terms.size(), true);
    for (std::size_t k = 0; k < terms.size(); ++k) {
        if (!terms[k].contours.empty()) continue;
        ok[k] = check_absolutely_convergent(terms[k], p.req.config, geom).convergent;
        if (!ok[k]) ++bad;
    }
    rec.scalars.push_back({"terms", static_cast<double>(terms.size()), kNaN});
    rec.text.emplace_back("expansion", e.terms.serialize());
    rec.checks.push_back({"non-contour terms absolutely convergent", bad == 0,
                          std::to_string(bad) + " of " + std::to_string(terms.size()) + " terms fail"});
    Series ts = series("terms", {"index", "re", "im", "stderr_re", "stderr_im", "convergent", "contour"});
    if (!p.evaluate) {
        for (std::size_t k = 0; k < terms.size(); ++k)
            ts.rows.push_back({k, nullptr, nullptr, nullptr, nullptr, ok[k], !terms[k].contours.empty()});
        rec.series.push_back(std::move(ts));
        return;
    }
    const MCConfig mc = mc_config(cfg, p.l_max);
    std::vector<Complex> total(cfg.replicas, 0.0);
    FiniteDifference fd;
    prefixed([&] {
        auto ens = std::make_shared<const ChaosEnsemble>(p.req.config, mc);
        TermEvaluator ev(ens, p.req);
        ev.contour_points = p.contour_points;
        for (std::size_t k = 0; k < terms.size(); ++k) {
            const std::vector<Complex> s = ev.samples(terms[k]);
            const ComplexEstimate est = summarize(s);
            for (std::size_t r = 0; r < s.size(); ++r) total[r] += e.calibration * s[r];
            ts.rows.push_back({k, est.value.real(), est.value.imag(), est.stderr_re, est.stderr_im, ok[k],
                               !terms[k].contours.empty()});
        }
        fd = finite_difference_derivative(p.req.config, p.req.indices[0], p.h, mc, p.req.conjugate);
    });
    rec.series.push_back(std::move(ts));
    const ComplexEstimate ex = summarize(total);
    std::vector<Complex> diff(total.size());
    for (std::size_t r = 0; r < diff.size(); ++r) diff[r] = total[r] - fd.samples[r];
    const ComplexEstimate d = summarize(diff);
    const ComplexEstimate& f = fd.estimate;
    rec.scalars.push_back({"expansion_re", ex.value.real(), ex.stderr_re});
    rec.scalars.push_back({"expansion_im", ex.value.imag(), ex.stderr_im});
    rec.scalars.push_back({"fd_re", f.value.real(), f.stderr_re});
    rec.scalars.push_back({"fd_im", f.value.imag(), f.stderr_im});
    rec.scalars.push_back({"difference_re", d.value.real(), d.stderr_re});
    rec.scalars.push_back({"difference_im", d.value.imag(), d.stderr_im});
    Series ag = series("agreement", {"part", "expansion", "expansion_stderr", "fd", "fd_stderr", "difference",
                                     "difference_stderr"});
    ag.rows.push_back({"re", ex.value.real(), ex.stderr_re, f.value.real(), f.stderr_re, d.value.real(), d.stderr_re});
    ag.rows.push_back({"im", ex.value.imag(), ex.stderr_im, f.value.imag(), f.stderr_im, d.value.imag(), d.stderr_im});
    rec.series.push_back(std::move(ag));
    auto agree = [&](const char* part, double diffv, double se, double se_ex, double se_fd) {
        const double unpaired = std::hypot(se_ex, se_fd);
        rec.checks.push_back({std::string(part) + " part: expansion matches finite difference",
                              std::abs(diffv) <= p.sigmas * se,
                              fmt("difference %.3g, paired stderr %.3g, unpaired %.3g", diffv, se, unpaired)});
    };
    agree("Re", d.value.real(), d.stderr_re, ex.stderr_re, f.stderr_re);
    agree("Im", d.value.imag(), d.stderr_im, ex.stderr_im, f.stderr_im);
}

// ---------------------------------------------------------------- bpz

struct BpzParams {
    int r = 2;
    double gamma = 1.0;
    Degenerate kind = Degenerate::R1;
    std::vector<double> alphas;
    std::string test_function;
};

BpzParams parse_bpz(ParamReader& r, const ExperimentConfig&) {
    BpzParams p;
    const long order = r.integer("r", 2);
    p.gamma = read_gamma(r, 1.0);
    const std::string k = r.choice("degenerate", "r1", {"r1", "1r"});
    p.alphas = r.reals("alphas", {});
    p.test_function = r.text("test_function", "");
    r.finish();
    r.check(order >= 1 && order <= 8, "r", "operator order must lie in 1..8");
    p.r = static_cast<int>(order);
    p.kind = k == "1r" ? Degenerate::OneR : Degenerate::R1;
    r.check(p.alphas.size() <= 8, "alphas", "at most eight insertions");
    if (!p.test_function.empty()) {
        try {
            RationalExpr::parse(p.test_function, static_cast<int>(p.alphas.size()));
        } catch (const ConfigError& e) {
            r.fail("test_function", e.what());
        }
    }
    return p;
}

// Words from the cut positions of r: bit j set cuts after position j + 1.
std::vector<std::pair<std::vector<int>, double>> cut_oracle(int r, double b2) {
    std::vector<std::pair<std::vector<int>, double>> out;
    for (int mask = 0; mask < (1 << (r - 1)); ++mask) {
        std::vector<int> parts;
        int run = 1;
        for (int j = 0; j < r - 1; ++j) {
            if (mask & (1 << j)) {
                parts.push_back(run);
                run = 1;
            } else {
                ++run;
            }
        }
        parts.push_back(run);
        double c = std::pow(b2, r - static_cast<int>(parts.size()));
        int head = 0;
        for (std::size_t j = 0; j + 1 < parts.size(); ++j) {
            head += parts[j];
            c /= head * (r - head);
        }
        out.emplace_back(parts, c);
    }
    return out;
}

void run_bpz(const BpzParams& p, const ExperimentConfig&, ResultRecord& rec) {
    const SymbolicOperator op = build_Dr(p.r, p.gamma, p.kind, p.alphas);
    const SymbolicOperator other =
        build_Dr(p.r, p.gamma, p.kind == Degenerate::R1 ? Degenerate::OneR : Degenerate::R1, p.alphas);
    auto value = [&op](const VirasoroWord& w) {
        return w.coeff.value([&op](const std::string& s) { return op.symbol(s); }).real();
    };
    rec.scalars.push_back({"words", static_cast<double>(op.words.size()), kNaN});
    rec.scalars.push_back({"degenerate_alpha", op.degenerate_alpha(), kNaN});
    rec.text.emplace_back("operator", op.str());
    Series out = series("words", {"index", "word", "length", "coefficient", "value"});
    for (std::size_t k = 0; k < op.words.size(); ++k) {
        const VirasoroWord& w = op.words[k];
        std::string word;
        for (int n : w.n) word += "L[-" + std::to_string(n) + "]";
        out.rows.push_back({k, word, w.n.size(), w.coeff.str(), value(w)});
    }
    rec.series.push_back(std::move(out));

    const double b2 = p.kind == Degenerate::R1 ? p.gamma * p.gamma / 4.0 : 4.0 / (p.gamma * p.gamma);
    const auto oracle = cut_oracle(p.r, b2);
    std::size_t matched = 0;
    for (const auto& [n, c] : oracle)
        for (const VirasoroWord& w : op.words)
            if (w.n == n && std::abs(value(w) - c) <= 1e-12 * std::abs(c)) ++matched;
    rec.checks.push_back({"word count 2^(r-1)", op.words.size() == (1u << (p.r - 1)),
                          std::to_string(op.words.size()) + " words"});
    rec.checks.push_back({"coefficients match the cut enumeration", matched == oracle.size() && matched == op.words.size(),
                          std::to_string(matched) + " of " + std::to_string(oracle.size()) + " words"});
    // (r,1) and (1,r) differ by gamma^2/4 <-> 4/gamma^2 in every coefficient
    bool swap = other.words.size() == op.words.size();
    for (std::size_t k = 0; swap && k < op.words.size(); ++k) {
        const auto& a = op.words[k].coeff.symbols();
        const auto& b = other.words[k].coeff.symbols();
        const int ea = a.count("gamma") ? a.at("gamma") : 0;
        const int eb = b.count("gamma") ? b.at("gamma") : 0;
        const int p2 = p.r - static_cast<int>(op.words[k].n.size());
        Rational f(1);
        for (int q = 0; q < p2; ++q) f = f * Rational(16);
        const bool r1 = p.kind == Degenerate::R1;
        const Rational& small = r1 ? op.words[k].coeff.rational() : other.words[k].coeff.rational();
        const Rational& big = r1 ? other.words[k].coeff.rational() : op.words[k].coeff.rational();
        swap = op.words[k].n == other.words[k].n && ea == -eb && small * f == big;
    }
    rec.checks.push_back({"gamma/2 <-> 2/gamma swap", swap, "compared with the dual operator"});
    if (!p.test_function.empty()) {
        const int n = static_cast<int>(p.alphas.size());
        const RationalExpr f = RationalExpr::parse(p.test_function, n);
        rec.text.emplace_back("applied", apply_to_rational(op, f).str() + "\n");
    }
}

// ---------------------------------------------------------------- lemma-integral

struct LemmaParams {
    std::vector<double> exponents;
    int levels = 14;
    double ball_radius = 1.0;
    double half_width = 2.0;
};

LemmaParams parse_lemma(ParamReader& r, const ExperimentConfig&) {
    LemmaParams p;
    p.exponents = r.reals("exponents", {0.0, 1.0, 2.0, 2.5, 2.9, 3.0, 3.2, 4.0});
    const long lv = r.integer("levels", 14);
    p.ball_radius = r.real("ball_radius", 1.0);
    p.half_width = r.real("half_width", 2.0);
    r.finish();
    r.check(!p.exponents.empty() && p.exponents.size() <= 32, "exponents", "need 1..32 exponents");
    for (std::size_t k = 0; k < p.exponents.size(); ++k)
        r.check(p.exponents[k] >= 0.0 && p.exponents[k] <= 6.0, "exponents[" + std::to_string(k) + "]",
                "exponent must lie in [0, 6]");
    r.check(lv >= 3 && lv <= 20, "levels", "levels must lie in 3..20");
    p.levels = static_cast<int>(lv);
    r.check(p.ball_radius > 0.0 && p.ball_radius < p.half_width, "ball_radius", "need 0 < ball_radius < half_width");
    r.check(p.half_width <= 100.0, "half_width", "half_width must be at most 100");
    return p;
}

std::string expected_verdict(double a) {
    if (a < 3.0) return "convergent";
    if (a > 3.0) return "divergent";
    return "marginal";
}

void run_lemma(const LemmaParams& p, const ExperimentConfig&, ResultRecord& rec) {
    Series verdicts = series("verdicts",
                             {"exponent", "growth_exponent", "increment_ratio", "limit", "verdict", "expected"});
    Series values = series("values", {"exponent", "cutoff", "value"});
    std::vector<quadrature::SingularIntegralResult> res(p.exponents.size());
    parallel_for(p.exponents.size(), [&](std::size_t k) {
        auto spec = quadrature::SingularIntegralSpec::with_dyadic_schedule(p.exponents[k], p.levels);
        spec.ball_radius = p.ball_radius;
        spec.half_width = p.half_width;
        res[k] = quadrature::ball_complement_integral(spec);
    });
    std::size_t wrong = 0;
    std::string detail;
    for (std::size_t k = 0; k < res.size(); ++k) {
        const double a = p.exponents[k];
        const std::string v = quadrature::to_string(res[k].verdict);
        const std::string want = expected_verdict(a);
        if (v != want) {
            ++wrong;
            detail += fmt(" a=%g", a) + ":" + v;
        }
        verdicts.rows.push_back({a, res[k].growth_exponent, res[k].increment_ratio, res[k].limit, v, want});
        const auto spec = quadrature::SingularIntegralSpec::with_dyadic_schedule(a, p.levels);
        for (std::size_t j = 0; j < res[k].values.size(); ++j)
            values.rows.push_back({a, spec.cutoffs[j], res[k].values[j]});
        rec.scalars.push_back({"growth[" + fmt("%g", a) + "]", res[k].growth_exponent, kNaN});
    }
    rec.series.push_back(std::move(verdicts));
    rec.series.push_back(std::move(values));
    rec.checks.push_back({"verdicts follow the a = 3 boundary", wrong == 0,
                          wrong == 0 ? "all verdicts as expected" : std::to_string(wrong) + " unexpected:" + detail});
}

template <class P>
void handle(ExperimentConfig& cfg, ResultRecord* rec, P (*parse)(ParamReader&, const ExperimentConfig&),
            void (*run)(const P&, const ExperimentConfig&, ResultRecord&)) {
    ParamReader reader(cfg.params, "params");
    const P params = parse(reader, cfg);
    cfg.params = reader.normalized();
    if (rec) {
        rec->config = cfg;
        run(params, cfg, *rec);
    }
}

}  // namespace

std::size_t default_replicas(const std::string& kind) {
    static const std::map<std::string, std::size_t> n = {
        {"gff-cov", 10000}, {"gmc-mass", 1000}, {"kahane", 2000},  {"correlator", 1000}, {"kpz", 2000},
        {"fusion", 4000},   {"radial", 20000},  {"derivative", 2000}, {"bpz", 0},        {"lemma-integral", 0},
    };
    return n.at(kind);
}

std::size_t max_replicas(const std::string& kind) {
    if (kind == "gff-cov" || kind == "radial") return 2000000;
    if (kind == "gmc-mass" || kind == "kahane") return 200000;
    return 50000;
}

void dispatch(ExperimentConfig& cfg, ResultRecord* rec) {
    const std::string& k = cfg.kind;
    if (k == "gff-cov") return handle(cfg, rec, parse_gff_cov, run_gff_cov);
    if (k == "gmc-mass") return handle(cfg, rec, parse_gmc, run_gmc);
    if (k == "kahane") return handle(cfg, rec, parse_kahane, run_kahane);
    if (k == "correlator") return handle(cfg, rec, parse_correlator, run_correlator);
    if (k == "kpz") return handle(cfg, rec, parse_kpz, run_kpz);
    if (k == "fusion") return handle(cfg, rec, parse_fusion, run_fusion);
    if (k == "radial") return handle(cfg, rec, parse_radial, run_radial);
    if (k == "derivative") return handle(cfg, rec, parse_derivative, run_derivative);
    if (k == "bpz") return handle(cfg, rec, parse_bpz, run_bpz);
    if (k == "lemma-integral") return handle(cfg, rec, parse_lemma, run_lemma);
    throw ConfigError("unknown experiment kind '" + k + "'", "kind");
}

}  // namespace lcft::detail
