#include "lcft/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lcft/hash.hpp"
#include "lcft/rng.hpp"

namespace lcft {

bool Annulus::contains(Complex x) const {
    const double d = std::abs(x - center);
    return d >= inner && d <= outer;
}

bool Annulus::overlaps(const Annulus& other) const {
    const double d = std::abs(center - other.center);
    if (d > outer + other.outer) return false;
    if (d + other.outer < inner || d + outer < other.inner) return false;  // inside the other's hole
    return true;
}

// ---------------------------------------------------------------- probe geometry

double FusionProbeConfig::radius(std::size_t j) const {
    if (!ball_radii.empty()) return ball_radii.at(j);
    return 0.45 * (base.points.size() > 1 ? base.delta() : 1.0);
}

double FusionProbeConfig::direction(std::size_t j) const {
    return directions.empty() ? kPi / 2.0 : directions.at(j);
}

Complex FusionProbeConfig::midpoint(std::size_t j) const {
    return base.points.at(anchors.at(j)) + std::polar(radius(j), direction(j));
}

double FusionProbeConfig::patch_radius(std::size_t j) const {
    const Complex m = midpoint(j);
    const double guard = base.points.size() > 1 ? base.delta() / 4.0 : 0.25;
    double room = std::numeric_limits<double>::infinity();
    for (const Complex& z : base.points) room = std::min(room, std::abs(m - z) - guard);
    return std::min(0.2, 0.9 * room);
}

Annulus FusionProbeConfig::annulus(std::size_t j) const {
    const double r = radius(j);
    const double R = patch_radius(j);
    return {base.points.at(anchors.at(j)), std::max(0.0, r - R), r + R};
}

std::vector<Complex> FusionProbeConfig::pair(std::size_t j, double t) const {
    const Complex m = midpoint(j);
    const Complex u = std::polar(0.5 * t, direction(j));
    return {m - u, m + u};
}

void FusionProbeConfig::validate() const {
    base.validate();
    if (anchors.empty() || anchors.size() > 2) throw ConfigError("fusion probes support one or two pairs", "anchors");
    for (std::size_t a : anchors)
        if (a >= base.points.size()) throw ConfigError("anchor index out of range", "anchors");
    if (!ball_radii.empty() && ball_radii.size() != anchors.size())
        throw ConfigError("one ball radius per pair required", "ball_radii");
    if (!directions.empty() && directions.size() != anchors.size())
        throw ConfigError("one direction per pair required", "directions");
    if (separations.size() < 4) throw ConfigError("slope fit needs at least 4 separations", "separations");
    for (std::size_t i = 0; i < separations.size(); ++i) {
        if (!(separations[i] > 0.0)) throw ConfigError("separations must be positive", "separations");
        if (i > 0 && !(separations[i] < separations[i - 1]))
            throw ConfigError("separations must be strictly decreasing", "separations");
    }
    if (l_fine < 64) throw ConfigError("l_fine must be at least 64", "l_fine");
    const double half_delta = base.points.size() > 1 ? base.delta() / 2.0 : 0.5;
    for (std::size_t j = 0; j < anchors.size(); ++j) {
        const double r = radius(j);
        if (!(r > 0.0 && r < half_delta)) throw ConfigError("ball radius must lie in (0, delta/2)", "ball_radii");
        const double R = patch_radius(j);
        if (!(R > 0.0)) throw ConfigError("no room for a fine patch around the pair", "ball_radii");
        // x and y subgrids of radius t/8 must fit inside half the patch.
        if (!(0.625 * separations.front() <= 0.5 * R) || !(separations.front() < r))
            throw ConfigError("largest separation too large for the pair geometry", "separations");
    }
    for (std::size_t i = 0; i < anchors.size(); ++i)
        for (std::size_t j = i + 1; j < anchors.size(); ++j)
            if (annulus(i).overlaps(annulus(j))) throw ConfigError("pair annuli overlap", "anchors");
}

double FusionProbeConfig::tilt_strength() const {
    if (!std::isnan(tilt)) return tilt;
    return -2.0 * std::max(0.0, 2.0 * base.gamma - base.Q());
}

double predicted_fusion_slope(double gamma) {
    const double Q = 2.0 / gamma + gamma / 2.0;
    const double d = 2.0 * gamma - Q;
    return -gamma * gamma + 0.5 * d * d;
}

// ---------------------------------------------------------------- fit

SlopeFit fit_log_slope(const std::vector<double>& t, const std::vector<double>& y_in,
                       const Eigen::MatrixXd& covariance, LogCorrection mode) {
    const std::size_t n = t.size();
    if (n < 4 || y_in.size() != n) throw ConfigError("slope fit needs at least 4 points", "separations");
    const bool log_term = mode == LogCorrection::Fixed || mode == LogCorrection::Free;
    const int cols = mode == LogCorrection::Free ? 3 : 2;
    if (mode == LogCorrection::Free && n < 5) throw ConfigError("free log term needs at least 5 points", "separations");
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n), cols);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (log_term && !(t[i] < 1.0)) throw ConfigError("log correction needs separations below 1", "separations");
        const double ll = log_term ? std::log(-std::log(t[i])) : 0.0;
        X(r, 0) = 1.0;
        X(r, 1) = std::log(t[i]);
        if (cols == 3) X(r, 2) = ll;
        y[r] = y_in[i] + (mode == LogCorrection::Fixed ? 1.5 * ll : 0.0);
    }
    // Rows of the least-squares operator; slope = c . y.
    const Eigen::MatrixXd op = (X.transpose() * X).ldlt().solve(X.transpose());
    const Eigen::VectorXd beta = op * y;
    const Eigen::VectorXd c = op.row(1).transpose();
    SlopeFit fit;
    fit.intercept = beta[0];
    fit.slope = beta[1];
    fit.stderr_ = std::sqrt(std::max(0.0, c.dot(covariance * c)));
    fit.log_coefficient = mode == LogCorrection::Fixed ? -1.5 : (cols == 3 ? beta[2] : 0.0);
    return fit;
}

namespace {

// ln of the means and their delta-method covariance, for sample rows that
// share replicas.
struct LogMeans {
    std::vector<double> value;
    std::vector<double> mean;
    std::vector<double> stderr_;
    Eigen::MatrixXd covariance;
};

LogMeans log_means(const std::vector<std::vector<double>>& rows) {
    LogMeans out;
    const std::size_t m = rows.size();
    out.covariance.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (const auto& r : rows) {
        const SampleStats st = sample_stats(r);
        out.mean.push_back(st.mean);
        out.stderr_.push_back(st.stderr_);
        out.value.push_back(st.mean > 0.0 ? std::log(st.mean) : std::numeric_limits<double>::quiet_NaN());
    }
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b <= a; ++b) {
            const double n = static_cast<double>(rows[a].size());
            const double c = sample_covariance(rows[a], rows[b]) / (n * out.mean[a] * out.mean[b]);
            out.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = c;
            out.covariance(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = c;
        }
    return out;
}

std::string describe_probe(const FusionProbeConfig& p) {
    std::ostringstream os;
    os.precision(17);
    os << "fusion";
    for (std::size_t j = 0; j < p.pairs(); ++j)
        os << ";anchor=" << p.anchors[j] << ";r=" << p.radius(j) << ";theta=" << p.direction(j);
    for (double t : p.separations) os << ";t=" << t;
    os << ";lf=" << p.l_fine << ";tilt=" << p.tilt_strength() << ";log=" << static_cast<int>(p.log_correction);
    return os.str();
}

std::vector<FinePatch> probe_patches(const FusionProbeConfig& probe, const std::vector<double>& separations,
                                     bool probes) {
    std::vector<FinePatch> patches;
    for (std::size_t j = 0; j < probe.pairs(); ++j) {
        FinePatch p;
        p.center = probe.midpoint(j);
        p.radius = probe.patch_radius(j);
        p.l_fine = probe.l_fine;
        for (double t : separations) {
            for (const Complex& x : probe.pair(j, t)) {
                p.foci.push_back(x);
                p.focus_radii.push_back(t / 8.0);
            }
            if (probes) p.probe_radii.push_back(t);
        }
        patches.push_back(std::move(p));
    }
    return patches;
}

}  // namespace

FusionResult fusion_scaling_probe(const FusionProbeConfig& probe, const MCConfig& mc) {
    probe.validate();
    const InsertionConfig& base = probe.base;
    const double g = base.gamma;
    const std::size_t n_pairs = probe.pairs();
    const auto& ts = probe.separations;
    const ChaosEnsemble ensemble(base, mc, probe_patches(probe, ts, true));
    const double c = probe.tilt_strength();

    FusionResult out;
    out.predicted = predicted_fusion_slope(g);
    const double q = 2.0 * static_cast<double>(n_pairs) + base.s();
    out.series_exponent = 2.0 * g - base.Q() - q / static_cast<double>(n_pairs) * g;
    if (!(out.series_exponent < 0.0))
        throw DegeneracyError("band series does not converge for these momenta", "alphas");

    LogCorrection mode = probe.log_correction;
    if (mode == LogCorrection::Auto) mode = 2.0 * g > base.Q() ? LogCorrection::Fixed : LogCorrection::None;
    out.log_corrected = mode != LogCorrection::None;

    // rows: pair 0 for every t, then pair 1 and joint for n = 2.
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < ts.size(); ++i)
        rows.push_back(ensemble.samples_with_insertions(probe.pair(0, ts[i]), {{0, i, c}}));
    if (n_pairs == 2) {
        for (std::size_t i = 0; i < ts.size(); ++i)
            rows.push_back(ensemble.samples_with_insertions(probe.pair(1, ts[i]), {{1, i, c}}));
        for (std::size_t i = 0; i < ts.size(); ++i) {
            auto pts = probe.pair(0, ts[i]);
            const auto second = probe.pair(1, ts[i]);
            pts.insert(pts.end(), second.begin(), second.end());
            rows.push_back(ensemble.samples_with_insertions(pts, {{0, i, c}, {1, i, c}}));
        }
    }
    const LogMeans lm = log_means(rows);
    const std::size_t T = ts.size();
    bool finite = true;
    for (double v : lm.value) finite = finite && std::isfinite(v);
    for (std::size_t i = 0; i < T; ++i) out.points.push_back({ts[i], lm.mean[i], lm.stderr_[i]});
    if (!finite) {
        out.inconclusive = true;
        return out;
    }

    auto block = [&](std::size_t k) {
        return std::vector<double>(lm.value.begin() + static_cast<std::ptrdiff_t>(k * T),
                                   lm.value.begin() + static_cast<std::ptrdiff_t>((k + 1) * T));
    };
    auto cov_block = [&](std::size_t k) {
        return Eigen::MatrixXd(lm.covariance.block(static_cast<Eigen::Index>(k * T), static_cast<Eigen::Index>(k * T),
                                                   static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T)));
    };
    out.fit = fit_log_slope(ts, block(0), cov_block(0), mode);
    out.plain_slope = fit_log_slope(ts, block(0), cov_block(0), LogCorrection::None).slope;
    out.ci_low = out.fit.slope - 1.96 * out.fit.stderr_;
    out.ci_high = out.fit.slope + 1.96 * out.fit.stderr_;
    out.inconclusive = !(out.fit.stderr_ < std::abs(out.fit.slope));

    if (n_pairs == 2) {
        // Plain slopes: the log terms of the joint scaling are the sum of the
        // marginal ones, so they cancel in the comparison.
        Eigen::VectorXd weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * T));
        Eigen::MatrixXd X(static_cast<Eigen::Index>(T), 2);
        for (std::size_t i = 0; i < T; ++i) X.row(static_cast<Eigen::Index>(i)) << 1.0, std::log(ts[i]);
        const Eigen::VectorXd op = (X.transpose() * X).ldlt().solve(X.transpose()).row(1).transpose();
        weights.segment(0, static_cast<Eigen::Index>(T)) = -op;
        weights.segment(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T)) = -op;
        weights.segment(static_cast<Eigen::Index>(2 * T), static_cast<Eigen::Index>(T)) = op;
        const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(lm.value.data(), static_cast<Eigen::Index>(3 * T));
        out.product_checked = true;
        out.joint_slope = op.dot(y.segment(static_cast<Eigen::Index>(2 * T), static_cast<Eigen::Index>(T)));
        out.marginal_slope_sum = op.dot(y.segment(0, static_cast<Eigen::Index>(T))) +
                                 op.dot(y.segment(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T)));
        out.product_stderr = std::sqrt(std::max(0.0, weights.dot(lm.covariance * weights)));
        out.product_consistent = std::abs(out.joint_slope - out.marginal_slope_sum) <= 3.0 * out.product_stderr;
        for (std::size_t i = 0; i < T; ++i) out.joint_points.push_back({ts[i], lm.mean[2 * T + i], lm.stderr_[2 * T + i]});
    }
    out.fingerprint = config_fingerprint(base, mc) ^ fnv1a64(describe_probe(probe));
    return out;
}

void write_fusion_csv(std::ostream& out, const std::vector<FusionPoint>& points) {
    out << "separation,estimate,stderr\n";
    out.precision(17);
    for (const FusionPoint& p : points) out << p.separation << ',' << p.estimate << ',' << p.stderr_ << '\n';
}

// ---------------------------------------------------------------- radial process

double RadialProcessConfig::effective_drift() const {
    if (!std::isnan(drift)) return drift;
    return 2.0 * gamma - (2.0 / gamma + gamma / 2.0);
}

double RadialProcessConfig::effective_step() const { return time_step > 0.0 ? time_step : horizon / 2048.0; }

void RadialProcessConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 2.0)) throw ConfigError("gamma must lie in (0, 2)", "gamma");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive", "horizon");
    if (!(q >= 0.0)) throw ConfigError("moment order must be non-negative", "q");
    if (band < 0) throw ConfigError("band index must be non-negative", "band");
    if (replicas < 2) throw ConfigError("need at least 2 replicas", "replicas");
    if (time_step < 0.0) throw ConfigError("time step must be positive", "time_step");
    if (!(lateral_variance >= 0.0)) throw ConfigError("lateral variance must be non-negative", "lateral_variance");
    if (effective_step() > horizon / 100.0)
        throw ResolutionError("time step " + std::to_string(effective_step()) + " exceeds horizon/100",
                              "time_step");
}

std::vector<RadialEstimate> radial_band_moments(const RadialProcessConfig& cfg, int k_max) {
    cfg.validate();
    if (k_max < 0) throw ConfigError("k_max must be non-negative", "band");
    const double mu = cfg.effective_drift();
    const auto steps = static_cast<std::size_t>(std::ceil(cfg.horizon / cfg.effective_step() - 1e-9));
    const double dt = cfg.horizon / static_cast<double>(steps);
    const double sq = std::sqrt(dt);
    const double sigma = std::sqrt(cfg.lateral_variance);
    const std::size_t R = cfg.replicas;
    const auto bands = static_cast<std::size_t>(k_max + 1);

    std::vector<int> band(R);
    std::vector<double> value(R), weight(R);
    parallel_for(R, [&](std::size_t r) {
        CounterRng path(cfg.seed, r, Stream::BrownianPath);
        CounterRng lateral(cfg.seed, r, Stream::LateralNoise);
        // Even replicas use drift +mu, odd ones -mu.
        const double drift = (r % 2 == 0) ? mu : -mu;
        double p = 0.0, top = 0.0;
        // Integral in log form: running log-sum-exp of gamma P + ln L.
        double log_int = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < steps; ++i) {
            const double term = cfg.gamma * p + sigma * lateral.normal() - 0.5 * cfg.lateral_variance;
            log_int = log_int > term ? log_int + std::log1p(std::exp(term - log_int))
                                     : term + std::log1p(std::exp(log_int - term));
            p += drift * dt + sq * path.normal();
            top = std::max(top, p);
        }
        log_int += std::log(kTwoPi * dt);
        band[r] = top <= 0.0 ? 0 : static_cast<int>(std::ceil(top));
        // p_mu / (p_mu/2 + p_-mu/2) at the endpoint.
        weight[r] = 2.0 / (1.0 + std::exp(-2.0 * mu * p));
        value[r] = weight[r] * std::exp(-cfg.q * log_int);
    });

    std::vector<RadialEstimate> out(bands);
    std::vector<double> f(R), w(R);
    for (std::size_t k = 0; k < bands; ++k) {
        for (std::size_t r = 0; r < R; ++r) {
            const bool in = band[r] == static_cast<int>(k);
            f[r] = in ? value[r] : 0.0;
            w[r] = in ? weight[r] : 0.0;
        }
        const SampleStats a = sample_stats(f);
        const SampleStats b = sample_stats(w);
        out[k] = {static_cast<int>(k), cfg.horizon, a.mean, a.stderr_, b.mean, b.stderr_};
    }
    return out;
}

RadialEstimate radial_band_moment(const RadialProcessConfig& cfg) {
    if (cfg.band < 0) throw ConfigError("band index must be non-negative", "band");
    return radial_band_moments(cfg, cfg.band).back();
}

double radial_lemma_shape(double gamma, double drift, double q, int band, double horizon) {
    const double k = band;
    return (k + 1.0) * std::exp((drift - q * gamma) * k) * std::pow(horizon, -1.5) *
           std::exp(-0.5 * drift * drift * horizon);
}

RadialLemmaFit fit_radial_lemma(const RadialProcessConfig& cfg, const std::vector<double>& horizons, int k_max,
                                int calibration_band) {
    if (horizons.empty()) throw ConfigError("need at least one horizon", "horizon");
    RadialLemmaFit fit;
    const double mu = cfg.effective_drift();
    for (double r : horizons) {
        RadialProcessConfig c = cfg;
        c.horizon = r;
        for (const RadialEstimate& e : radial_band_moments(c, k_max)) {
            RadialLemmaCell cell;
            cell.estimate = e;
            cell.shape = radial_lemma_shape(cfg.gamma, mu, cfg.q, e.band, r);
            cell.ratio = e.value / cell.shape;
            fit.cells.push_back(cell);
        }
    }
    for (const RadialLemmaCell& c : fit.cells)
        if (c.estimate.band <= calibration_band)
            fit.constant = std::max(fit.constant, (c.estimate.value + 2.0 * c.estimate.stderr_) / c.shape);
    for (const RadialLemmaCell& c : fit.cells)
        if (c.estimate.value - 3.0 * c.estimate.stderr_ > fit.constant * c.shape) ++fit.violations;
    fit.dominated = fit.violations == 0 && fit.constant > 0.0 && std::isfinite(fit.constant);
    return fit;
}

// ---------------------------------------------------------------- decoupling

DecouplingReport kahane_decoupling_check(const FusionProbeConfig& probe, const MCConfig& mc) {
    probe.validate();
    DecouplingReport out;
    out.pairs = probe.pairs();
    if (out.pairs == 1) return out;

    const InsertionConfig& base = probe.base;
    const double g = base.gamma;
    const double t = probe.separations.back();
    const ChaosEnsemble ensemble(base, mc, probe_patches(probe, {t}, false));
    out.q = 4.0 + base.s();

    const std::size_t R = ensemble.replicas();
    const Eigen::MatrixXd& density = ensemble.scaled_density();
    std::vector<std::vector<double>> log_w(2, std::vector<double>(R));
    std::vector<Annulus> rings;
    for (std::size_t j = 0; j < 2; ++j) {
        const auto xy = probe.pair(j, t);
        const Annulus D{xy[0], t, 0.5 * probe.patch_radius(j)};
        rings.push_back(D);
        // ln of (chaos weight without F) * kernel, relative to the density.
        std::vector<std::size_t> idx;
        std::vector<double> a;
        for (std::size_t k = 0; k < ensemble.size(); ++k) {
            const Complex u = ensemble.nodes()[k];
            if (!(ensemble.area()[k] > 0.0) || !D.contains(u)) continue;
            const double ak = -ensemble.log_F(u) - g * g * (std::log(std::abs(u - xy[0])) + std::log(std::abs(u - xy[1])));
            if (!std::isfinite(ak)) continue;  // y_j itself lies on the inner circle
            idx.push_back(k);
            a.push_back(ak);
        }
        if (idx.empty()) throw ResolutionError("no nodes in the decoupling annulus", "separations");
        const double top = *std::max_element(a.begin(), a.end());
        for (std::size_t r = 0; r < R; ++r) {
            double s = 0.0;
            for (std::size_t m = 0; m < idx.size(); ++m)
                s += density(static_cast<Eigen::Index>(idx[m]), static_cast<Eigen::Index>(r)) * std::exp(a[m] - top);
            log_w[j][r] = ensemble.log_scale()[r] + top + std::log(s);
        }
    }
    auto log_moment = [&](double l1, double l2) {
        const double hi = std::max(l1, l2);
        return -out.q * (hi + std::log1p(std::exp(std::min(l1, l2) - hi)));
    };
    std::vector<double> dep(R), ind(R);
    double offset = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < R; ++r) {
        dep[r] = log_moment(log_w[0][r], log_w[1][r]);
        ind[r] = log_moment(log_w[0][r], log_w[1][(r + 1) % R]);
        offset = std::max({offset, dep[r], ind[r]});
    }
    for (std::size_t r = 0; r < R; ++r) {
        dep[r] = std::exp(dep[r] - offset);
        ind[r] = std::exp(ind[r] - offset);
    }
    const RatioEstimate k = ratio_of_means(dep, ind);
    out.constant = k.value;
    out.stderr_ = k.stderr_;

    out.cross_min = std::numeric_limits<double>::infinity();
    out.cross_max = -std::numeric_limits<double>::infinity();
    auto ring_points = [](const Annulus& A) {
        std::vector<Complex> pts;
        for (int i = 0; i < 3; ++i) {
            const double rho = A.inner + (A.outer - A.inner) * i / 2.0;
            for (int j = 0; j < 16; ++j) pts.push_back(A.center + std::polar(rho, kTwoPi * j / 16.0));
        }
        return pts;
    };
    for (const Complex& u : ring_points(rings[0]))
        for (const Complex& v : ring_points(rings[1])) {
            const double c = ensemble.model_covariance(u, v);
            out.cross_min = std::min(out.cross_min, c);
            out.cross_max = std::max(out.cross_max, c);
        }
    const double factor = 0.5 * (out.q * out.q + out.q) * g * g;
    out.lower_bound = std::exp(factor * std::min(out.cross_min, 0.0));
    out.upper_bound = std::exp(factor * std::max(out.cross_max, 0.0));
    out.pass = out.constant >= out.lower_bound - 3.0 * out.stderr_ && out.constant <= out.upper_bound + 3.0 * out.stderr_;
    return out;
}

}  // namespace lcft
