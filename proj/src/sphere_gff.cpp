#include "lcft/sphere_gff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "lcft/parallel.hpp"
#include "lcft/quadrature.hpp"
#include "lcft/rng.hpp"

namespace lcft {

double RoundMetric::density(Complex z) {
    const double q = 1.0 + std::norm(z);
    return 4.0 / (q * q);
}

double RoundMetric::log_density(Complex z) { return std::log(4.0) - 2.0 * std::log1p(std::norm(z)); }

double metric_density(Complex z) { return RoundMetric::density(z); }

double covariance(Complex a, Complex b) {
    const double d = std::abs(a - b);
    if (d == 0.0) throw DomainError("covariance is singular at coincident points", "z2");
    return -std::log(d) - 0.25 * (RoundMetric::log_density(a) + RoundMetric::log_density(b)) + kGreenConstant;
}

double sphere_cosine(Complex a, Complex b) {
    const double chord2 = 4.0 * std::norm(a - b) / ((1.0 + std::norm(a)) * (1.0 + std::norm(b)));
    return 1.0 - 0.5 * chord2;
}

double covariance_of_cosine(double t) {
    if (t >= 1.0) return std::numeric_limits<double>::infinity();
    return -0.5 * std::log(0.5 * (1.0 - t)) - 0.5;
}

double truncated_covariance(double t, int l_max) {
    double p0 = 1.0;
    double p1 = t;
    double sum = 0.0;
    for (int l = 1; l <= l_max; ++l) {
        sum += (2.0 * l + 1.0) / (2.0 * l * (l + 1.0)) * p1;
        const double p2 = ((2.0 * l + 1.0) * t * p1 - l * p0) / (l + 1.0);
        p0 = p1;
        p1 = p2;
    }
    return sum;
}

double truncation_bound(double t, int l_max) {
    if (t >= 1.0) return std::numeric_limits<double>::infinity();
    return std::abs(covariance_of_cosine(t) - truncated_covariance(t, l_max));
}

CovarianceTable::CovarianceTable(int l_max, int intervals) : l_max_(l_max), values_(intervals + 1) {
    if (l_max < 1) throw ConfigError("l_max must be at least 1", "l_max");
    for (int k = 0; k <= intervals; ++k) {
        const double s = static_cast<double>(k) / intervals;
        values_[k] = truncated_covariance(1.0 - 2.0 * s * s, l_max);
    }
}

double CovarianceTable::of_cosine(double t) const {
    const double s = std::sqrt(std::clamp(0.5 * (1.0 - t), 0.0, 1.0));
    const double x = s * static_cast<double>(values_.size() - 1);
    const std::size_t k = std::min(static_cast<std::size_t>(x), values_.size() - 2);
    const double f = x - static_cast<double>(k);
    return values_[k] + f * (values_[k + 1] - values_[k]);
}

Complex chart_point(double theta, double phi) { return std::polar(std::tan(0.5 * theta), phi); }

double colatitude(Complex z) { return 2.0 * std::atan(std::abs(z)); }

// ---------------------------------------------------------------- grid

void SphereGrid::add_ring(double cos_theta, double phi0, double dphi, std::size_t count) {
    Ring r;
    r.cos_theta = cos_theta;
    r.sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    r.offset = points_.size();
    r.count = count;
    r.phi0 = phi0;
    r.dphi = dphi;
    rings_.push_back(r);
}

SphereGrid SphereGrid::gauss(int n_theta, int n_phi) {
    if (n_theta < 2 || n_phi < 4) throw ConfigError("sphere grid too coarse", "grid");
    const auto& rule = quadrature::gauss_legendre(n_theta);
    SphereGrid grid;
    grid.spacing_ = kPi / n_theta;
    grid.symmetric_ = true;
    const double dphi = kTwoPi / n_phi;
    for (int i = 0; i < n_theta; ++i) {
        const double x = rule.nodes[i];
        const double phi0 = (i % 2) * 0.5 * dphi;
        grid.add_ring(x, phi0, dphi, static_cast<std::size_t>(n_phi));
        const double radius = std::sqrt(1.0 - x * x) / (1.0 + x);
        for (int j = 0; j < n_phi; ++j) {
            grid.points_.push_back(std::polar(radius, phi0 + dphi * j));
            grid.weights_.push_back(rule.weights[i] * dphi);
        }
    }
    return grid;
}

SphereGrid SphereGrid::from_points(const std::vector<Complex>& points, const std::vector<double>& weights) {
    SphereGrid grid;
    grid.append(points, weights);
    return grid;
}

std::size_t SphereGrid::append(const std::vector<Complex>& points, const std::vector<double>& weights) {
    if (points.size() != weights.size()) throw ConfigError("points and weights differ in length", "weights");
    const std::size_t first = points_.size();
    if (!points.empty()) symmetric_ = false;
    for (std::size_t k = 0; k < points.size(); ++k) {
        const Complex z = points[k];
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
            throw DomainError("grid point must be finite", "points");
        const double q = std::norm(z);
        add_ring((1.0 - q) / (1.0 + q), std::arg(z), 0.0, 1);
        points_.push_back(z);
        weights_.push_back(weights[k]);
    }
    return first;
}

double SphereGrid::total_weight() const { return pairwise_sum(weights_); }

// ---------------------------------------------------------------- sampler

namespace {

std::size_t packed(int l, int m) { return static_cast<std::size_t>(l * (l + 1) / 2 + m); }

// Orthonormal associated Legendre functions (including the 1/(4 pi)
// factor), packed by (l, m).
std::vector<double> normalized_legendre(double x, double sx, int l_max) {
    std::vector<double> p(packed(l_max, l_max) + 1, 0.0);
    double pmm = std::sqrt(1.0 / (4.0 * kPi));
    for (int m = 0; m <= l_max; ++m) {
        if (m > 0) pmm *= -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * sx;
        p[packed(m, m)] = pmm;
        if (m + 1 > l_max) break;
        p[packed(m + 1, m)] = x * std::sqrt(2.0 * m + 3.0) * pmm;
        for (int l = m + 2; l <= l_max; ++l) {
            const double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
            const double b = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
            p[packed(l, m)] = a * (x * p[packed(l - 1, m)] - b * p[packed(l - 2, m)]);
        }
    }
    return p;
}

}  // namespace

FieldSampler::FieldSampler(std::shared_ptr<const SphereGrid> grid, int l_max) : grid_(std::move(grid)), l_max_(l_max) {
    if (l_max < 1) throw ConfigError("l_max must be at least 1", "l_max");
    if (!grid_) throw ConfigError("sampler needs a grid", "grid");
    const auto& rings = grid_->rings();
    legendre_.resize(rings.size());
    for (std::size_t r = 0; r < rings.size(); ++r)
        legendre_[r] = normalized_legendre(rings[r].cos_theta, rings[r].sin_theta, l_max);
}

std::vector<double> FieldSampler::synthesize(const std::vector<double>& modes) const {
    if (modes.size() != this->modes()) throw ConfigError("mode vector has the wrong length", "modes");
    const int L = l_max_;
    // Split into cosine and sine coefficient tables scaled by 1/sqrt(l(l+1)).
    std::vector<double> ac(packed(L, L) + 1, 0.0);
    std::vector<double> as(packed(L, L) + 1, 0.0);
    std::size_t k = 0;
    for (int l = 1; l <= L; ++l) {
        const double scale = 1.0 / std::sqrt(l * (l + 1.0));
        ac[packed(l, 0)] = modes[k++] * scale;
        for (int m = 1; m <= l; ++m) {
            ac[packed(l, m)] = modes[k++] * scale * std::sqrt(2.0);
            as[packed(l, m)] = modes[k++] * scale * std::sqrt(2.0);
        }
    }
    const double root = std::sqrt(kTwoPi);
    std::vector<double> out(grid_->size());
    const auto& rings = grid_->rings();
    std::vector<double> cm(L + 1);
    std::vector<double> sm(L + 1);
    for (std::size_t r = 0; r < rings.size(); ++r) {
        const auto& p = legendre_[r];
        for (int m = 0; m <= L; ++m) {
            double c = 0.0;
            double s = 0.0;
            for (int l = std::max(1, m); l <= L; ++l) {
                c += ac[packed(l, m)] * p[packed(l, m)];
                s += as[packed(l, m)] * p[packed(l, m)];
            }
            cm[m] = c;
            sm[m] = s;
        }
        const auto& ring = rings[r];
        for (std::size_t j = 0; j < ring.count; ++j) {
            const double phi = ring.phi0 + ring.dphi * static_cast<double>(j);
            const Complex step = std::polar(1.0, phi);
            Complex e = step;
            double v = cm[0];
            for (int m = 1; m <= L; ++m) {
                v += cm[m] * e.real() + sm[m] * e.imag();
                e *= step;
            }
            out[ring.offset + j] = root * v;
        }
    }
    return out;
}

FieldSample FieldSampler::sample(std::uint64_t seed, std::uint64_t replica) const {
    CounterRng rng(seed, replica, Stream::SphereModes);
    std::vector<double> modes(this->modes());
    for (double& x : modes) x = rng.normal();
    FieldSample out;
    out.grid = grid_;
    out.values = synthesize(modes);
    out.variance.assign(grid_->size(), truncated_covariance(1.0, l_max_));
    out.l_max = l_max_;
    out.seed = seed;
    out.replica = replica;
    return out;
}

FieldSample sample_field(std::shared_ptr<const SphereGrid> grid, int l_max, std::uint64_t seed,
                         std::uint64_t replica) {
    return FieldSampler(std::move(grid), l_max).sample(seed, replica);
}

// ---------------------------------------------------------------- mollifier

double MollifierKernel::profile(double t) {
    if (t < 0.0 || t >= 1.0) return 0.0;
    return std::exp(-1.0 / (1.0 - t));
}

double MollifierKernel::normalization() {
    static const double value = kPi * quadrature::integrate(profile, 0.0, 1.0, 32, 8);
    return value;
}

double MollifierKernel::operator()(Complex d) const {
    return profile(std::norm(d) / (epsilon * epsilon)) / (epsilon * epsilon * normalization());
}

namespace {

// Chart used to mollify around a node: the plane chart inside the unit
// disk, the inverted chart outside. The round metric is invariant under
// inversion so area elements are w_k / g in either chart.
Complex chart_coordinate(Complex z, int chart) {
    if (chart == 0) return z;
    if (std::norm(z) < 1e-300) return {1e300, 1e300};
    return 1.0 / z;
}

std::int64_t cell_key(Complex c, double size) {
    const auto ix = static_cast<std::int64_t>(std::floor(c.real() / size));
    const auto iy = static_cast<std::int64_t>(std::floor(c.imag() / size));
    return (ix << 32) ^ (iy & 0xffffffff);
}

std::array<double, 3> unit_vector(Complex z) {
    const double q = std::norm(z);
    return {2.0 * z.real() / (1.0 + q), 2.0 * z.imag() / (1.0 + q), (1.0 - q) / (1.0 + q)};
}

}  // namespace

Mollifier::Mollifier(std::shared_ptr<const SphereGrid> grid, MollifierKernel kernel, int l_max)
    : grid_(std::move(grid)), kernel_(kernel), l_max_(l_max) {
    if (!(kernel_.epsilon > 0.0)) throw ConfigError("mollifier radius must be positive", "epsilon");
    if (kernel_.epsilon > 0.5) throw ConfigError("mollifier radius must be below 0.5", "epsilon");
    const auto& pts = grid_->points();
    const auto& w = grid_->weights();
    const double eps = kernel_.epsilon;

    std::array<std::unordered_map<std::int64_t, std::vector<std::size_t>>, 2> cells;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        for (int chart = 0; chart < 2; ++chart) {
            const Complex c = chart_coordinate(pts[k], chart);
            if (std::abs(c) <= 1.0 + 2.0 * eps) cells[chart][cell_key(c, eps)].push_back(k);
        }
    }

    row_start_.assign(1, 0);
    min_support_ = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const int chart = std::abs(pts[i]) <= 1.0 ? 0 : 1;
        const Complex ci = chart_coordinate(pts[i], chart);
        const auto ix = static_cast<std::int64_t>(std::floor(ci.real() / eps));
        const auto iy = static_cast<std::int64_t>(std::floor(ci.imag() / eps));
        const std::size_t begin = columns_.size();
        double norm = 0.0;
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            for (std::int64_t dy = -1; dy <= 1; ++dy) {
                const auto it = cells[chart].find(((ix + dx) << 32) ^ ((iy + dy) & 0xffffffff));
                if (it == cells[chart].end()) continue;
                for (std::size_t k : it->second) {
                    const Complex ck = chart_coordinate(pts[k], chart);
                    const double rho = kernel_(ci - ck);
                    if (rho <= 0.0) continue;
                    const double c = rho * w[k] / RoundMetric::density(ck);
                    columns_.push_back(k);
                    coefficients_.push_back(c);
                    norm += c;
                }
            }
        }
        for (std::size_t q = begin; q < columns_.size(); ++q) coefficients_[q] /= norm;
        min_support_ = std::min(min_support_, columns_.size() - begin);
        row_start_.push_back(columns_.size());
    }
    if (min_support_ < kMinMollifierSupport)
        throw ResolutionError("mollifier radius below grid resolution: a kernel support holds only " +
                                  std::to_string(min_support_) + " nodes",
                              "epsilon");

    std::vector<std::array<double, 3>> unit(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) unit[k] = unit_vector(pts[k]);
    const CovarianceTable table(l_max_);
    variance_.assign(pts.size(), 0.0);
    std::vector<std::size_t> targets;
    for (const auto& ring : grid_->rings()) {
        if (grid_->rotation_symmetric()) {
            targets.push_back(ring.offset);
        } else {
            for (std::size_t j = 0; j < ring.count; ++j) targets.push_back(ring.offset + j);
        }
    }
    parallel_for(targets.size(), [&](std::size_t n) {
        const std::size_t i = targets[n];
        double v = 0.0;
        for (std::size_t a = row_start_[i]; a < row_start_[i + 1]; ++a) {
            const auto& ua = unit[columns_[a]];
            double inner = 0.0;
            for (std::size_t b = row_start_[i]; b < row_start_[i + 1]; ++b) {
                const auto& ub = unit[columns_[b]];
                const double t = ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2];
                inner += coefficients_[b] * table.of_cosine(t);
            }
            v += coefficients_[a] * inner;
        }
        variance_[i] = v;
    });
    if (grid_->rotation_symmetric()) {
        for (const auto& ring : grid_->rings())
            for (std::size_t j = 1; j < ring.count; ++j) variance_[ring.offset + j] = variance_[ring.offset];
    }
}

FieldSample Mollifier::apply(const FieldSample& field) const {
    if (field.grid != grid_ && (field.grid == nullptr || field.grid->size() != grid_->size()))
        throw PreconditionError("field lives on a different grid", "field");
    if (field.epsilon != 0.0) throw PreconditionError("field is already mollified", "field");
    FieldSample out;
    out.grid = grid_;
    out.values.assign(grid_->size(), 0.0);
    for (std::size_t i = 0; i + 1 < row_start_.size(); ++i) {
        double v = 0.0;
        for (std::size_t q = row_start_[i]; q < row_start_[i + 1]; ++q) v += coefficients_[q] * field.values[columns_[q]];
        out.values[i] = v;
    }
    out.variance = variance_;
    out.l_max = field.l_max;
    out.epsilon = kernel_.epsilon;
    out.seed = field.seed;
    out.replica = field.replica;
    return out;
}

FieldSample mollify(const FieldSample& field, const MollifierKernel& kernel) {
    if (!field.grid) throw PreconditionError("field has no grid", "field");
    return Mollifier(field.grid, kernel, field.l_max).apply(field);
}

double variance_of_mollified(Complex z, double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("mollifier radius must be positive", "epsilon");
    const MollifierKernel kernel{epsilon};
    // Radial density of |u - z| under rho_eps.
    auto p = [&](double r) { return kTwoPi * r * kernel(Complex(r, 0.0)); };
    // E ln max(R1, R2): the angular average of ln|u - v| for radii r1, r2 is
    // ln max(r1, r2).
    auto inner = [&](double r1) {
        const double below = quadrature::integrate(p, 0.0, r1, 32, 2);
        const double above =
            quadrature::integrate([&](double r2) { return p(r2) * std::log(r2); }, r1, epsilon, 32, 2);
        return p(r1) * (std::log(r1) * below + above);
    };
    const double log_term = quadrature::integrate(inner, 0.0, epsilon, 32, 4);
    // Smooth part: int rho_eps(u - z) ln(1 + |u|^2) d^2u.
    const int n_angle = 64;
    auto ring = [&](double r) {
        double acc = 0.0;
        for (int k = 0; k < n_angle; ++k) acc += std::log1p(std::norm(z + std::polar(r, kTwoPi * k / n_angle)));
        return p(r) * acc / n_angle;
    };
    const double smooth = quadrature::integrate(ring, 0.0, epsilon, 32, 4);
    return -log_term + smooth - 0.5;
}

double weighted_mean(const FieldSample& field) {
    const auto& w = field.grid->weights();
    std::vector<double> prod(w.size());
    for (std::size_t k = 0; k < w.size(); ++k) prod[k] = w[k] * field.values[k];
    return pairwise_sum(prod) / field.grid->total_weight();
}

void write_field_csv(std::ostream& out, const FieldSample& field) {
    out << "re,im,value\n";
    out.precision(17);
    const auto& pts = field.grid->points();
    for (std::size_t k = 0; k < pts.size(); ++k)
        out << pts[k].real() << ',' << pts[k].imag() << ',' << field.values[k] << '\n';
}

}  // namespace lcft
