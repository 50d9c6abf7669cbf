#include "lcft/correlators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "lcft/hash.hpp"
#include "lcft/quadrature.hpp"
#include "lcft/rng.hpp"

namespace lcft {

double validate_seiberg(const std::vector<double>& alphas, double gamma) {
    if (!(gamma > 0.0 && gamma < 2.0)) throw ConfigError("gamma must lie in (0, 2)", "gamma");
    const double Q = 2.0 / gamma + gamma / 2.0;
    std::vector<int> bad;
    for (std::size_t i = 0; i < alphas.size(); ++i)
        if (!(alphas[i] < Q)) bad.push_back(static_cast<int>(i));
    if (!bad.empty()) {
        std::string list;
        for (int i : bad) list += (list.empty() ? "" : ", ") + std::to_string(i);
        throw SeibergError("local Seiberg bound alpha_i < Q violated at index " + list, bad);
    }
    const double total = std::accumulate(alphas.begin(), alphas.end(), 0.0);
    if (!(total > 2.0 * Q))
        throw SeibergError("total charge bound sum(alpha) > 2Q violated: " + std::to_string(total) +
                               " <= " + std::to_string(2.0 * Q),
                           {-1});
    return (total - 2.0 * Q) / gamma;
}

double b_factor(double s, double gamma) {
    const double sg = s * gamma;
    return 4.0 * std::exp(-0.5 * kGreenConstant * sg * sg);
}

double InsertionConfig::s() const {
    return (std::accumulate(alphas.begin(), alphas.end(), 0.0) - 2.0 * Q()) / gamma;
}

double InsertionConfig::delta() const {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = i + 1; j < points.size(); ++j) d = std::min(d, std::abs(points[i] - points[j]));
    return d;
}

double InsertionConfig::kappa() const { return std::exp(-0.5 * gamma * gamma * kGreenConstant); }

void InsertionConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 2.0)) throw ConfigError("gamma must lie in (0, 2)", "gamma");
    if (!(mu > 0.0)) throw ConfigError("mu must be positive", "mu");
    if (points.size() != alphas.size()) throw ConfigError("points and momenta differ in length", "alphas");
    for (const Complex& z : points)
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
            throw ConfigError("insertion points must be finite", "points");
    if (points.size() > 1 && !(delta() > 0.0)) throw PreconditionError("insertion points must be distinct", "points");
    validate_seiberg(alphas, gamma);
}

InsertionConfig InsertionConfig::canonical() const {
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (points[a].real() != points[b].real()) return points[a].real() < points[b].real();
        if (points[a].imag() != points[b].imag()) return points[a].imag() < points[b].imag();
        return alphas[a] < alphas[b];
    });
    InsertionConfig out = *this;
    for (std::size_t k = 0; k < order.size(); ++k) {
        out.points[k] = points[order[k]];
        out.alphas[k] = alphas[order[k]];
    }
    return out;
}

InsertionConfig InsertionConfig::with_gamma_insertions(const std::vector<Complex>& extra) const {
    InsertionConfig out = *this;
    for (const Complex& x : extra) {
        out.points.push_back(x);
        out.alphas.push_back(gamma);
    }
    return out;
}

double singular_weight(Complex x, const InsertionConfig& config) {
    const double lg = RoundMetric::log_density(x);
    double log_value = 0.0;
    for (std::size_t i = 0; i < config.points.size(); ++i) {
        const double a = config.gamma * config.alphas[i];
        if (a == 0.0) continue;
        const double d = std::abs(x - config.points[i]);
        if (d == 0.0) throw DomainError("singular weight evaluated at an insertion", "x");
        log_value += a * (-0.25 * lg - std::log(d));
    }
    return std::exp(log_value);
}

Complex insertion_kernel(Complex x, Complex z, KernelSign sign) {
    if (x == z) throw DomainError("insertion kernel evaluated at its pole", "x");
    return sign == KernelSign::XMinusZ ? 1.0 / (x - z) : 1.0 / (z - x);
}

std::string MCConfig::describe() const {
    std::ostringstream os;
    os << "seed=" << seed << ";replicas=" << replicas << ";l_max=" << l_max << ";n_theta=" << n_theta
       << ";n_phi=" << n_phi << ";refine=" << refine << ";levels=" << local_levels << ";radial=" << local_radial
       << ";angular=" << local_angular << ";inner=" << local_inner;
    return os.str();
}

std::uint64_t config_fingerprint(const InsertionConfig& config, const MCConfig& mc, const std::vector<Complex>& extra) {
    std::ostringstream os;
    os.precision(17);
    const InsertionConfig c = config.canonical();
    os << "gamma=" << c.gamma << ";mu=" << c.mu;
    for (std::size_t i = 0; i < c.points.size(); ++i)
        os << ";z=" << c.points[i].real() << ',' << c.points[i].imag() << ";a=" << c.alphas[i];
    for (const Complex& x : extra) os << ";x=" << x.real() << ',' << x.imag();
    os << ';' << mc.describe();
    return fnv1a64(os.str());
}

// ---------------------------------------------------------------- ensemble

namespace {

// Smooth step: 1 for r <= a, 0 for r >= b.
double cutoff(double r, double a, double b) {
    if (r <= a) return 1.0;
    if (r >= b) return 0.0;
    auto psi = [](double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; };
    const double u = (b - r) / (b - a);
    const double p = psi(u);
    return p / (p + psi(1.0 - u));
}

double log_sum(const Eigen::Ref<const Eigen::VectorXd>& v) {
    std::vector<double> tmp(v.data(), v.data() + v.size());
    return std::log(pairwise_sum(tmp));
}

}  // namespace

std::string FinePatch::describe() const {
    std::ostringstream os;
    os.precision(17);
    os << "patch=" << center.real() << ',' << center.imag() << ";R=" << radius << ";lf=" << l_fine
       << ";lpo=" << levels_per_octave << ";ang=" << angular << ";in=" << inner;
    for (std::size_t i = 0; i < foci.size(); ++i)
        os << ";f=" << foci[i].real() << ',' << foci[i].imag() << ',' << focus_radii[i];
    os << ";flpo=" << focus_levels_per_octave << ";frad=" << focus_radial << ";fang=" << focus_angular
       << ";fin=" << focus_inner;
    return os.str();
}

ChaosEnsemble::ChaosEnsemble(const InsertionConfig& config, const MCConfig& mc)
    : config_(config.canonical()), mc_(mc) {
    setup();
}

ChaosEnsemble::ChaosEnsemble(const InsertionConfig& config, const MCConfig& mc,
                             const std::vector<FinePatch>& patches)
    : config_(config.canonical()), mc_(mc), patches_(patches) {
    for (const FinePatch& p : patches_) {
        if (!(p.radius > 0.0) || !(p.inner > 0.0) || !(p.inner < p.radius))
            throw ConfigError("fine patch radii must satisfy 0 < inner < radius", "patch");
        if (p.l_fine <= mc.l_max) throw ConfigError("fine patch degree must exceed l_max", "patch");
        if (p.l_fine != patches_.front().l_fine) throw ConfigError("fine patches must share l_fine", "patch");
        if (p.foci.size() != p.focus_radii.size()) throw ConfigError("one radius per focus required", "patch");
        for (std::size_t i = 0; i < p.foci.size(); ++i) {
            if (std::abs(p.foci[i] - p.center) + p.focus_radii[i] > 0.5 * p.radius)
                throw ConfigError("focus subgrid must lie inside half the patch radius", "patch");
            if (!(p.focus_inner < p.focus_radii[i])) throw ConfigError("focus radius too small", "patch");
        }
    }
    for (std::size_t i = 0; i < patches_.size(); ++i)
        for (std::size_t j = i + 1; j < patches_.size(); ++j)
            if (std::abs(patches_[i].center - patches_[j].center) < patches_[i].radius + patches_[j].radius)
                throw ConfigError("fine patches overlap", "patch");
    setup();
}

void ChaosEnsemble::setup() {
    config_.validate();
    if (mc_.replicas < 2) throw ConfigError("need at least 2 replicas", "replicas");
    if (mc_.l_max < 1) throw ConfigError("l_max must be at least 1", "l_max");
    if (mc_.n_theta <= 0) mc_.n_theta = std::max(48, (3 * mc_.l_max + 1) / 2);
    if (mc_.n_phi <= 0) mc_.n_phi = 2 * mc_.n_theta;
    s_ = config_.s();
    table_ = std::make_shared<const CovarianceTable>(mc_.l_max);
    if (!patches_.empty()) {
        const double zr = config_.points.size() > 1 ? config_.delta() / 4.0 : 0.25;
        for (const FinePatch& p : patches_)
            for (const Complex& z : config_.points)
                if (std::abs(z - p.center) < p.radius + (mc_.refine ? zr : 0.0))
                    throw ConfigError("fine patch overlaps an insertion neighbourhood", "patch");
        fine_table_ = std::make_shared<const CovarianceTable>(patches_.front().l_fine, 1 << 18);
    }

    const double g = config_.gamma;
    log_prefactor_ = std::log(2.0 * config_.B()) - s_ * std::log(config_.mu) - std::log(g) + std::lgamma(s_);
    for (std::size_t i = 0; i < config_.points.size(); ++i)
        for (std::size_t j = i + 1; j < config_.points.size(); ++j)
            log_prefactor_ -=
                config_.alphas[i] * config_.alphas[j] * std::log(std::abs(config_.points[i] - config_.points[j]));

    build_nodes();
    draw_replicas();
}

int ChaosEnsemble::patch_of(Complex x) const {
    for (std::size_t p = 0; p < patches_.size(); ++p)
        if (patches_[p].contains(x)) return static_cast<int>(p);
    return -1;
}

double ChaosEnsemble::model_covariance(Complex a, Complex b) const {
    const int p = patch_of(a);
    if (p >= 0 && patch_of(b) == p) return (*fine_table_)(a, b);
    return (*table_)(a, b);
}

double ChaosEnsemble::node_covariance(std::size_t k, Complex x) const {
    for (std::size_t p = 0; p < patches_.size(); ++p)
        if (k >= patch_begin_[p] && k < patch_begin_[p + 1])
            return patches_[p].contains(x) ? (*fine_table_)(nodes_[k], x) : (*table_)(nodes_[k], x);
    return (*table_)(nodes_[k], x);
}

double ChaosEnsemble::log_pair_kernel(Complex a, Complex b) const {
    return model_covariance(a, b) + 0.25 * (RoundMetric::log_density(a) + RoundMetric::log_density(b)) -
           kGreenConstant;
}

double ChaosEnsemble::log_F(Complex u) const {
    double v = 0.0;
    for (std::size_t i = 0; i < config_.points.size(); ++i) {
        const Complex z = config_.points[i];
        v += config_.gamma * config_.alphas[i] * ((*table_)(u, z) + 0.25 * RoundMetric::log_density(z) - kGreenConstant);
    }
    return v;
}

void ChaosEnsemble::build_nodes() {
    auto grid = std::make_shared<SphereGrid>(SphereGrid::gauss(mc_.n_theta, mc_.n_phi));
    const std::size_t n_global = grid->size();
    const double radius = config_.points.size() > 1 ? config_.delta() / 4.0 : 0.25;

    std::vector<std::size_t> owner;
    if (mc_.refine) {
        for (std::size_t i = 0; i < config_.points.size(); ++i) {
            const Complex z = config_.points[i];
            const double inner = radius * mc_.local_inner;
            auto local = quadrature::singular_grid(z, inner, radius, mc_.local_levels, mc_.local_radial,
                                                   mc_.local_angular);
            local.points.push_back(z);
            local.weights.push_back(kPi * inner * inner);
            std::vector<double> w(local.points.size());
            for (std::size_t k = 0; k < w.size(); ++k) w[k] = local.weights[k] * RoundMetric::density(local.points[k]);
            grid->append(local.points, w);
            owner.insert(owner.end(), local.points.size(), i);
        }
    }
    patch_begin_.assign(1, grid->size());
    for (std::size_t p = 0; p < patches_.size(); ++p) {
        add_patch_nodes(*grid, p);
        patch_begin_.push_back(grid->size());
    }
    nodes_ = grid->points();
    area_ = grid->weights();
    const std::size_t n_local = patch_begin_.front();
    for (std::size_t k = 0; k < n_global; ++k) {
        double chi = 0.0;
        if (mc_.refine)
            for (const Complex& z : config_.points) chi += cutoff(std::abs(nodes_[k] - z), 0.5 * radius, radius);
        for (const FinePatch& p : patches_) chi += cutoff(std::abs(nodes_[k] - p.center), 0.5 * p.radius, p.radius);
        area_[k] *= std::max(0.0, 1.0 - chi);
    }
    for (std::size_t k = n_global; k < n_local; ++k) {
        const Complex z = config_.points[owner[k - n_global]];
        area_[k] *= cutoff(std::abs(nodes_[k] - z), 0.5 * radius, radius);
    }
    log_F_.resize(nodes_.size());
    for (std::size_t k = 0; k < nodes_.size(); ++k) log_F_[k] = log_F(nodes_[k]);
    grid_ = grid;
}

// Patch nodes first, then one subgrid per focus. Weights get the partition
// of unity here; the global nodes are trimmed by the caller.
void ChaosEnsemble::add_patch_nodes(SphereGrid& grid, std::size_t index) {
    const FinePatch& p = patches_[index];
    auto levels_for = [](double inner, double outer, int per_octave) {
        return std::max(1, static_cast<int>(std::ceil(std::log2(outer / inner) * per_octave)));
    };
    std::vector<Complex> pts;
    std::vector<double> lebesgue;
    std::vector<int> owner;  // -1 for the patch grid, else the focus
    {
        auto set = quadrature::singular_grid(p.center, p.inner, p.radius,
                                             levels_for(p.inner, p.radius, p.levels_per_octave), 1, p.angular);
        set.points.push_back(p.center);
        set.weights.push_back(kPi * p.inner * p.inner);
        pts.insert(pts.end(), set.points.begin(), set.points.end());
        lebesgue.insert(lebesgue.end(), set.weights.begin(), set.weights.end());
        owner.insert(owner.end(), set.points.size(), -1);
    }
    for (std::size_t f = 0; f < p.foci.size(); ++f) {
        const double outer = p.focus_radii[f];
        auto set = quadrature::singular_grid(p.foci[f], p.focus_inner, outer,
                                             levels_for(p.focus_inner, outer, p.focus_levels_per_octave),
                                             p.focus_radial, p.focus_angular);
        set.points.push_back(p.foci[f]);
        set.weights.push_back(kPi * p.focus_inner * p.focus_inner);
        pts.insert(pts.end(), set.points.begin(), set.points.end());
        lebesgue.insert(lebesgue.end(), set.weights.begin(), set.weights.end());
        owner.insert(owner.end(), set.points.size(), static_cast<int>(f));
    }
    std::vector<Probe> probes(p.probe_radii.size());
    for (std::size_t q = 0; q < probes.size(); ++q) {
        if (!(p.probe_radii[q] > 0.0 && p.probe_radii[q] < p.radius))
            throw ConfigError("probe circle must lie inside the patch", "patch");
        for (int j = 0; j < p.probe_points; ++j) {
            probes[q].nodes.push_back(grid.size() + pts.size());
            pts.push_back(p.center + std::polar(p.probe_radii[q], kTwoPi * (j + 0.5) / p.probe_points));
            lebesgue.push_back(0.0);
            owner.push_back(-2);
        }
    }
    probes_.push_back(std::move(probes));
    std::vector<double> w(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) {
        double chi = 0.0;
        if (owner[k] == -2) {
            chi = 0.0;
        } else if (owner[k] < 0) {
            for (std::size_t f = 0; f < p.foci.size(); ++f)
                chi += cutoff(std::abs(pts[k] - p.foci[f]), 0.5 * p.focus_radii[f], p.focus_radii[f]);
            chi = std::max(0.0, 1.0 - chi) * cutoff(std::abs(pts[k] - p.center), 0.5 * p.radius, p.radius);
        } else {
            const auto f = static_cast<std::size_t>(owner[k]);
            chi = cutoff(std::abs(pts[k] - p.foci[f]), 0.5 * p.focus_radii[f], p.focus_radii[f]);
        }
        w[k] = lebesgue[k] * RoundMetric::density(pts[k]) * chi;
    }
    grid.append(pts, w);

    // Y covariance C_fine - C_L on the patch nodes.
    const auto nf = static_cast<Eigen::Index>(pts.size());
    Eigen::MatrixXd cov(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a)
        for (Eigen::Index b = 0; b <= a; ++b) {
            const double t = sphere_cosine(pts[static_cast<std::size_t>(a)], pts[static_cast<std::size_t>(b)]);
            cov(a, b) = fine_table_->of_cosine(t) - table_->of_cosine(t);
        }
    const double diag = cov(0, 0);
    double jitter = 0.0;
    for (int attempt = 0; attempt < 7; ++attempt) {
        Eigen::LLT<Eigen::MatrixXd> llt(cov.selfadjointView<Eigen::Lower>());
        if (llt.info() == Eigen::Success) {
            fine_factor_.push_back(llt.matrixL());
            return;
        }
        const double next = diag * std::pow(10.0, -8 + attempt);
        cov.diagonal().array() += next - jitter;
        jitter = next;
    }
    throw DegeneracyError("fine patch covariance is not positive definite", "patch");
}

void ChaosEnsemble::add_fine_field(std::size_t r0, std::size_t count, std::vector<std::vector<double>>& values) const {
    std::vector<CounterRng> rngs;
    for (std::size_t j = 0; j < count; ++j) rngs.emplace_back(mc_.seed, r0 + j, Stream::LocalPatch);
    for (std::size_t p = 0; p < patches_.size(); ++p) {
        const Eigen::Index nf = fine_factor_[p].rows();
        Eigen::MatrixXd xi(nf, static_cast<Eigen::Index>(count));
        for (std::size_t j = 0; j < count; ++j)
            for (Eigen::Index a = 0; a < nf; ++a) xi(a, static_cast<Eigen::Index>(j)) = rngs[j].normal();
        const Eigen::MatrixXd y = fine_factor_[p].triangularView<Eigen::Lower>() * xi;
        for (std::size_t j = 0; j < count; ++j)
            for (Eigen::Index a = 0; a < nf; ++a)
                values[j][patch_begin_[p] + static_cast<std::size_t>(a)] += y(a, static_cast<Eigen::Index>(j));
    }
}

void ChaosEnsemble::draw_replicas() {
    const FieldSampler sampler(grid_, mc_.l_max);
    const std::size_t n = nodes_.size();
    const std::size_t R = mc_.replicas;
    const double g = config_.gamma;
    std::vector<double> log_base(n);
    for (std::size_t k = 0; k < n; ++k)
        log_base[k] = area_[k] > 0.0 ? std::log(area_[k]) + log_F_[k] : -std::numeric_limits<double>::infinity();

    density_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(R));
    log_scale_.assign(R, 0.0);
    log_mass_.assign(R, 0.0);
    std::vector<double> variance(n, truncated_covariance(1.0, mc_.l_max));
    if (!patches_.empty())
        for (std::size_t k = patch_begin_.front(); k < n; ++k) variance[k] = fine_table_->of_cosine(1.0);
    const std::size_t block = 128;
    for (std::size_t r0 = 0; r0 < R; r0 += block) {
        const std::size_t count = std::min(block, R - r0);
        std::vector<std::vector<double>> values(count);
        parallel_for(count, [&](std::size_t j) { values[j] = sampler.sample(mc_.seed, r0 + j).values; });
        if (!patches_.empty()) add_fine_field(r0, count, values);
        for (auto& per_patch : probes_)
            for (Probe& probe : per_patch) {
                probe.values.resize(R);
                for (std::size_t j = 0; j < count; ++j) {
                    double sum = 0.0;
                    for (std::size_t k : probe.nodes) sum += values[j][k];
                    probe.values[r0 + j] = sum / static_cast<double>(probe.nodes.size());
                }
            }
        parallel_for(count, [&](std::size_t j) {
            const std::size_t r = r0 + j;
            auto col = density_.col(static_cast<Eigen::Index>(r));
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < n; ++k) {
                const double v = log_base[k] + g * values[j][k] - 0.5 * g * g * variance[k];
                col[static_cast<Eigen::Index>(k)] = v;
                top = std::max(top, v);
            }
            if (!std::isfinite(top))
                throw DegeneracyError("chaos integral has no finite weight in replica " + std::to_string(r),
                                      "replicas");
            for (std::size_t k = 0; k < n; ++k) {
                auto& v = col[static_cast<Eigen::Index>(k)];
                v = std::exp(v - top);
            }
            log_scale_[r] = top;
            log_mass_[r] = top + log_sum(col);
        });
    }
}

std::vector<double> ChaosEnsemble::samples() const {
    std::vector<double> out(replicas());
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = std::exp(log_prefactor_ - s_ * log_mass_[r]);
    return out;
}

std::vector<double> ChaosEnsemble::samples_with_insertions(const std::vector<Complex>& extra) const {
    if (extra.empty()) return samples();
    return insertion_samples(extra, nullptr, nullptr);
}

const std::vector<double>& ChaosEnsemble::probe_values(std::size_t patch, std::size_t probe) const {
    if (patch >= probes_.size() || probe >= probes_[patch].size())
        throw ConfigError("no such probe circle", "probe");
    return probes_[patch][probe].values;
}

int ChaosEnsemble::patch_of_node(std::size_t k) const {
    for (std::size_t p = 0; p < patches_.size(); ++p)
        if (k >= patch_begin_[p] && k < patch_begin_[p + 1]) return static_cast<int>(p);
    return -1;
}

double ChaosEnsemble::node_pair_covariance(std::size_t k, std::size_t l) const {
    const int p = patch_of_node(k);
    if (p >= 0 && patch_of_node(l) == p) return (*fine_table_)(nodes_[k], nodes_[l]);
    return (*table_)(nodes_[k], nodes_[l]);
}

std::vector<double> ChaosEnsemble::samples_with_insertions(const std::vector<Complex>& extra, const Tilt& tilt) const {
    const double g = config_.gamma;
    const std::size_t n = nodes_.size();
    const auto N = static_cast<Eigen::Index>(n);
    const std::size_t R = replicas();
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(N);
    std::vector<double> log_weight(R, 0.0);
    std::vector<const Probe*> used;
    for (const ProbeTilt& t : tilt) used.push_back(&probes_.at(t.patch).at(t.probe));

    for (std::size_t a = 0; a < tilt.size(); ++a) {
        const Probe& probe = *used[a];
        const double c = tilt[a].strength;
        const double inv = 1.0 / static_cast<double>(probe.nodes.size());
        Eigen::VectorXd cov(N);
        parallel_for(n, [&](std::size_t k) {
            double acc = 0.0;
            if (area_[k] > 0.0)
                for (std::size_t j : probe.nodes) acc += node_pair_covariance(k, j);
            cov[static_cast<Eigen::Index>(k)] = acc * inv;
        });
        shift += g * c * cov;
        // Var of sum_a c_a l_a, diagonal and cross terms.
        double quad = 0.0;
        for (std::size_t b = 0; b <= a; ++b) {
            const Probe& other = *used[b];
            double v = 0.0;
            for (std::size_t i : probe.nodes)
                for (std::size_t j : other.nodes) v += node_pair_covariance(i, j);
            v /= static_cast<double>(probe.nodes.size() * other.nodes.size());
            quad += (a == b ? 0.5 : 1.0) * c * tilt[b].strength * v;
        }
        for (std::size_t r = 0; r < R; ++r) log_weight[r] += -c * probe.values[r] - quad;
    }
    return insertion_samples(extra, &shift, &log_weight);
}

std::vector<double> ChaosEnsemble::insertion_samples(const std::vector<Complex>& extra,
                                                     const Eigen::VectorXd* log_shift,
                                                     const std::vector<double>* log_weight) const {
    const InsertionConfig ext = config_.with_gamma_insertions(extra);
    ext.validate();
    const double g = config_.gamma;
    const double s_ext = ext.s();
    double log_pref = std::log(2.0 * ext.B()) - s_ext * std::log(ext.mu) - std::log(g) + std::lgamma(s_ext);
    // Pairs of momentum insertions keep the exact kernel (as in log_prefactor);
    // pairs involving an extra gamma-insertion use the model kernel.
    const std::size_t n_base = config_.points.size();
    for (std::size_t a = 0; a < ext.points.size(); ++a)
        for (std::size_t b = a + 1; b < ext.points.size(); ++b)
            log_pref += ext.alphas[a] * ext.alphas[b] *
                        (b < n_base ? -std::log(std::abs(ext.points[a] - ext.points[b]))
                                    : log_pair_kernel(ext.points[a], ext.points[b]));

    // Extra factor of F_ext / F at each node, times the tilt.
    const std::size_t n = nodes_.size();
    Eigen::VectorXd factor(static_cast<Eigen::Index>(n));
    double shift = 0.0;
    for (const Complex& x : extra) shift += g * g * (0.25 * RoundMetric::log_density(x) - kGreenConstant);
    for (std::size_t k = 0; k < n; ++k) {
        double v = log_shift ? (*log_shift)[static_cast<Eigen::Index>(k)] : 0.0;
        for (const Complex& x : extra) v += g * g * node_covariance(k, x);
        factor[static_cast<Eigen::Index>(k)] = std::exp(v);
    }
    const Eigen::VectorXd sums = density_.transpose() * factor;
    std::vector<double> out(replicas());
    for (std::size_t r = 0; r < out.size(); ++r) {
        const double log_z = log_scale_[r] + std::log(sums[static_cast<Eigen::Index>(r)]) + shift;
        out[r] = std::exp(log_pref - s_ext * log_z + (log_weight ? (*log_weight)[r] : 0.0));
    }
    return out;
}

Eigen::MatrixXd ChaosEnsemble::single_insertion_samples(const std::vector<Complex>& xs) const {
    const double g = config_.gamma;
    const double s1 = s_ + 1.0;
    const double base = std::log(2.0 * b_factor(s1, g)) - s1 * std::log(config_.mu) - std::log(g) + std::lgamma(s1) +
                        (log_prefactor_ - std::log(2.0 * config_.B()) + s_ * std::log(config_.mu) + std::log(g) -
                         std::lgamma(s_));
    const std::size_t n = nodes_.size();
    const std::size_t R = replicas();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(R));
    const std::size_t block = 64;
    std::vector<std::size_t> starts;
    for (std::size_t j0 = 0; j0 < xs.size(); j0 += block) starts.push_back(j0);
    parallel_for(starts.size(), [&](std::size_t b) {
        const std::size_t j0 = starts[b];
        const std::size_t m = std::min(block, xs.size() - j0);
        Eigen::MatrixXd kernel(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < n; ++k)
                kernel(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                    std::exp(g * g * node_covariance(k, xs[j0 + j]));
        const Eigen::MatrixXd sums = kernel.transpose() * density_;
        for (std::size_t j = 0; j < m; ++j) {
            const Complex x = xs[j0 + j];
            double log_pref = base;
            for (std::size_t i = 0; i < config_.points.size(); ++i)
                log_pref += g * config_.alphas[i] * log_pair_kernel(x, config_.points[i]);
            const double shift = g * g * (0.25 * RoundMetric::log_density(x) - kGreenConstant);
            for (std::size_t r = 0; r < R; ++r) {
                const double log_z =
                    log_scale_[r] + std::log(sums(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(r))) + shift;
                out(static_cast<Eigen::Index>(j0 + j), static_cast<Eigen::Index>(r)) = std::exp(log_pref - s1 * log_z);
            }
        }
    });
    return out;
}

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace

std::vector<Complex> ChaosEnsemble::moment1(const std::function<Complex(Complex)>& h,
                                            const std::vector<std::size_t>& rows_in) const {
    const auto rows = rows_in.empty() ? all_indices(nodes_.size()) : rows_in;
    Eigen::VectorXcd hv(static_cast<Eigen::Index>(rows.size()));
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(replicas()));
    for (std::size_t q = 0; q < rows.size(); ++q) {
        hv[static_cast<Eigen::Index>(q)] = area_[rows[q]] > 0.0 ? h(nodes_[rows[q]]) : Complex(0.0);
        sub.row(static_cast<Eigen::Index>(q)) = density_.row(static_cast<Eigen::Index>(rows[q]));
    }
    const Eigen::VectorXcd sums = sub.transpose().cast<Complex>() * hv;
    const double log_c = std::lgamma(s_ + 1.0) - std::lgamma(s_) - std::log(config_.mu_effective()) + log_prefactor_;
    std::vector<Complex> out(replicas());
    for (std::size_t r = 0; r < out.size(); ++r)
        out[r] = sums[static_cast<Eigen::Index>(r)] * std::exp(log_c - (s_ + 1.0) * log_mass_[r] + log_scale_[r]);
    return out;
}

std::vector<Complex> ChaosEnsemble::moment2(const std::function<Complex(Complex, Complex)>& h,
                                            const std::vector<std::size_t>& rows_in,
                                            const std::vector<std::size_t>& cols_in) const {
    const auto rows = rows_in.empty() ? all_indices(nodes_.size()) : rows_in;
    const auto cols = cols_in.empty() ? all_indices(nodes_.size()) : cols_in;
    const auto R = static_cast<Eigen::Index>(replicas());
    Eigen::MatrixXd left(static_cast<Eigen::Index>(rows.size()), R);
    for (std::size_t q = 0; q < rows.size(); ++q)
        left.row(static_cast<Eigen::Index>(q)) = density_.row(static_cast<Eigen::Index>(rows[q]));
    const std::size_t block = 512;
    std::vector<std::size_t> starts;
    for (std::size_t c0 = 0; c0 < cols.size(); c0 += block) starts.push_back(c0);
    std::vector<Eigen::VectorXcd> partial(starts.size());
    parallel_for(starts.size(), [&](std::size_t b) {
        const std::size_t c0 = starts[b];
        const std::size_t m = std::min(block, cols.size() - c0);
        Eigen::MatrixXcd H(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m));
        Eigen::MatrixXd right(static_cast<Eigen::Index>(m), R);
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t l = cols[c0 + j];
            right.row(static_cast<Eigen::Index>(j)) = density_.row(static_cast<Eigen::Index>(l));
            for (std::size_t q = 0; q < rows.size(); ++q) {
                const std::size_t k = rows[q];
                H(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j)) =
                    (area_[k] > 0.0 && area_[l] > 0.0) ? h(nodes_[k], nodes_[l]) : Complex(0.0);
            }
        }
        const Eigen::MatrixXcd hr = H * right.cast<Complex>();
        partial[b] = (hr.array() * left.cast<Complex>().array()).colwise().sum().transpose();
    });
    Eigen::VectorXcd sums = Eigen::VectorXcd::Zero(R);
    for (const auto& p : partial) sums += p;
    const double log_c =
        std::lgamma(s_ + 2.0) - std::lgamma(s_) - 2.0 * std::log(config_.mu_effective()) + log_prefactor_;
    std::vector<Complex> out(replicas());
    for (std::size_t r = 0; r < out.size(); ++r)
        out[r] = sums[static_cast<Eigen::Index>(r)] *
                 std::exp(log_c - (s_ + 2.0) * log_mass_[r] + 2.0 * log_scale_[r]);
    return out;
}

CorrelationEstimate ChaosEnsemble::estimate() const {
    const auto v = samples();
    const SampleStats st = sample_stats(v);
    CorrelationEstimate e;
    e.value = st.mean;
    e.stderr_ = st.stderr_;
    e.replicas = v.size();
    e.seed = mc_.seed;
    e.fingerprint = config_fingerprint(config_, mc_);
    e.l_max = mc_.l_max;
    e.nodes = nodes_.size();
    return e;
}

CorrelationEstimate estimate_correlation(const InsertionConfig& config, const std::vector<Complex>& extra,
                                         const MCConfig& mc) {
    config.with_gamma_insertions(extra).validate();
    const ChaosEnsemble ensemble(config, mc);
    CorrelationEstimate e = ensemble.estimate();
    if (!extra.empty()) {
        const SampleStats st = sample_stats(ensemble.samples_with_insertions(extra));
        e.value = st.mean;
        e.stderr_ = st.stderr_;
        e.fingerprint = config_fingerprint(config, mc, extra);
    }
    if (!(e.value > 0.0) || !std::isfinite(e.value))
        throw DegeneracyError("correlator estimate is not a positive finite number", "replicas");
    return e;
}

RatioEstimate ratio_of_means(const std::vector<double>& num, const std::vector<double>& den) {
    const SampleStats a = sample_stats(num);
    const SampleStats b = sample_stats(den);
    RatioEstimate out;
    out.value = a.mean / b.mean;
    const double cov = sample_covariance(num, den);
    const double var = (a.variance - 2.0 * out.value * cov + out.value * out.value * b.variance) /
                       (static_cast<double>(num.size()) * b.mean * b.mean);
    out.stderr_ = std::sqrt(std::max(0.0, var));
    return out;
}

KpzResult kpz_check(const ChaosEnsemble& ensemble) {
    const InsertionConfig& c = ensemble.config();
    std::vector<Complex> xs;
    std::vector<double> dx;
    for (std::size_t k = 0; k < ensemble.size(); ++k) {
        if (ensemble.area()[k] <= 0.0) continue;
        xs.push_back(ensemble.nodes()[k]);
        dx.push_back(ensemble.area()[k] / RoundMetric::density(ensemble.nodes()[k]));
    }
    const Eigen::MatrixXd g = ensemble.single_insertion_samples(xs);
    const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(dx.data(), static_cast<Eigen::Index>(dx.size()));
    const Eigen::VectorXd integral = g.transpose() * w;
    const auto base = ensemble.samples();
    const double coeff = c.gamma * ensemble.s();
    std::vector<double> lhs(base.size()), rhs(base.size()), lhs_corrected(base.size());
    for (std::size_t r = 0; r < base.size(); ++r) {
        lhs[r] = c.mu * c.gamma * integral[static_cast<Eigen::Index>(r)];
        lhs_corrected[r] = lhs[r] * c.kappa();
        rhs[r] = coeff * base[r];
    }
    KpzResult out;
    out.lhs = sample_stats(lhs);
    out.rhs = sample_stats(rhs);
    out.raw_ratio = ratio_of_means(lhs, rhs);
    out.ratio = ratio_of_means(lhs_corrected, rhs);
    out.raw_expected = 1.0 / c.kappa();
    out.pass = std::abs(out.ratio.value - 1.0) <= 3.0 * out.ratio.stderr_;
    out.fingerprint = config_fingerprint(c, ensemble.mc());
    return out;
}

KpzResult kpz_check(const InsertionConfig& config, const MCConfig& mc) { return kpz_check(ChaosEnsemble(config, mc)); }

// ---------------------------------------------------------------- Weyl anomaly

namespace {

double anomaly_on(const SphereGrid& grid, const std::function<double(Complex)>& phi, double Q) {
    std::vector<double> terms(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        const Complex z = grid.points()[k];
        const double h = 1e-5 * std::max(1.0, std::abs(z));
        const double px = (phi(z + h) - phi(z - h)) / (2.0 * h);
        const double py = (phi(z + Complex(0.0, h)) - phi(z - Complex(0.0, h))) / (2.0 * h);
        const double dz2 = 0.25 * (px * px + py * py);  // |d_z phi|^2
        const double p = phi(z);
        if (!std::isfinite(dz2) || !std::isfinite(p)) throw DomainError("phi is not finite on the grid", "phi");
        terms[k] = grid.weights()[k] * (dz2 / RoundMetric::density(z) + p);
    }
    return Q * Q / (4.0 * kPi) * pairwise_sum(terms);
}

}  // namespace

double weyl_anomaly(const std::function<double(Complex)>& phi, double Q, double tolerance) {
    const double coarse = anomaly_on(SphereGrid::gauss(64, 128), phi, Q);
    const double fine = anomaly_on(SphereGrid::gauss(128, 256), phi, Q);
    if (!(std::abs(fine - coarse) <= tolerance))
        throw DegeneracyError("Weyl anomaly quadrature not converged: " + std::to_string(coarse) + " vs " +
                                  std::to_string(fine),
                              "phi");
    return fine;
}

WeylTransformed weyl_transform(const CorrelationEstimate& estimate, const std::function<double(Complex)>& phi,
                               double Q, const std::string& phi_name) {
    WeylTransformed out;
    out.anomaly = weyl_anomaly(phi, Q);
    const double f = std::exp(out.anomaly);
    out.estimate = estimate;
    out.estimate.value *= f;
    out.estimate.stderr_ *= f;
    out.metric_tag = "exp(" + phi_name + ") g";
    return out;
}

}  // namespace lcft
