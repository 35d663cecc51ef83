#include "bfusion/estimator.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <string>

namespace bfusion {

namespace {

constexpr double kMeanFloor = 1e-12;
// Smallest default NB dispersion; below it the 1/p(k) factor dominates the variance.
constexpr double kDispersionFloor = 10.0;

ControlVariates::Anchor make_anchor(const LogisticSubPosterior& sp, const Vector& point) {
    ControlVariates::Anchor a;
    a.point = point;
    a.grad = sp.grad_log_density(point);
    a.lap = sp.laplacian_log_density(point);
    a.phi = 0.5 * (a.grad.squaredNorm() + a.lap);
    const auto terms = static_cast<Eigen::Index>(sp.datum_count() + 1);
    a.term_grads.resize(point.size(), terms);
    a.term_laps.resize(terms);
    for (Eigen::Index i = 0; i < terms; ++i) {
        a.term_grads.col(i) = sp.term_gradient(static_cast<std::size_t>(i), point);
        a.term_laps[i] = sp.term_laplacian(static_cast<std::size_t>(i), point);
    }
    return a;
}

// Widen bounds by a hair so rounding in phi never lands outside them.
PhiBounds pad(PhiBounds b) {
    const double eps = 1e-12 * (1.0 + std::max(std::abs(b.lower), std::abs(b.upper)));
    return {b.lower - eps, b.upper + eps};
}

std::pair<double, double> product_range(double a_lo, double a_hi, double b_lo, double b_hi) {
    const double p[] = {a_lo * b_lo, a_lo * b_hi, a_hi * b_lo, a_hi * b_hi};
    return {*std::min_element(std::begin(p), std::end(p)), *std::max_element(std::begin(p), std::end(p))};
}

PhiBounds anchor_bounds(const LogisticSubPosterior& sp, const ControlVariates::Anchor& a, const Box& rect) {
    const auto d = rect.dim();
    const std::size_t terms = sp.datum_count() + 1;
    const double scale = static_cast<double>(terms);
    std::vector<Vector> alpha_lo(terms);
    std::vector<Vector> alpha_hi(terms);
    std::vector<double> div_lo(terms);
    std::vector<double> div_hi(terms);
    Vector hull_lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
    Vector hull_hi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
    Vector g_lo;
    Vector g_hi;
    for (std::size_t i = 0; i < terms; ++i) {
        double l_lo = 0.0;
        double l_hi = 0.0;
        sp.term_bounds(i, rect, g_lo, g_hi, l_lo, l_hi);
        const auto col = static_cast<Eigen::Index>(i);
        alpha_lo[i] = scale * (g_lo - a.term_grads.col(col));
        alpha_hi[i] = scale * (g_hi - a.term_grads.col(col));
        div_lo[i] = scale * (l_lo - a.term_laps[col]);
        div_hi[i] = scale * (l_hi - a.term_laps[col]);
        hull_lo = hull_lo.cwiseMin(alpha_lo[i]);
        hull_hi = hull_hi.cwiseMax(alpha_hi[i]);
    }
    double lower = std::numeric_limits<double>::infinity();
    double upper = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < terms; ++i) {
        double lo = div_lo[i];
        double hi = div_hi[i];
        for (Eigen::Index k = 0; k < d; ++k) {
            const auto [p_lo, p_hi] =
                product_range(alpha_lo[i][k], alpha_hi[i][k], 2.0 * a.grad[k] + hull_lo[k], 2.0 * a.grad[k] + hull_hi[k]);
            lo += p_lo;
            hi += p_hi;
        }
        lower = std::min(lower, 0.5 * lo + a.phi);
        upper = std::max(upper, 0.5 * hi + a.phi);
    }
    return {lower, upper};
}

double log_nb_factor(long long kappa, double mean, double r) {
    // log of Gamma(r)(m+r)^{r+k} / (Gamma(r+k) r^r m^k), i.e. 1/(k! p(k)).
    const double k = static_cast<double>(kappa);
    double out = std::lgamma(r) - std::lgamma(r + k) + (r + k) * std::log(mean + r) - r * std::log(r);
    if (kappa > 0) {
        out -= k * std::log(mean);
    }
    return out;
}

} // namespace

ControlVariates::ControlVariates(const LogisticSubPosterior& sp, const Vector& local_anchor, const Vector& global_anchor)
    : local_(make_anchor(sp, local_anchor)), global_(make_anchor(sp, global_anchor)) {}

const ControlVariates::Anchor& ControlVariates::nearest(const Vector& x) const {
    return (x - local_.point).squaredNorm() <= (x - global_.point).squaredNorm() ? local_ : global_;
}

void EstimatorConfig::validate(std::size_t components) const {
    if (dispersion && !(*dispersion > 0.0)) {
        throw InvalidArgument("estimator: dispersion must be positive");
    }
    if (subsample_draws < 1) {
        throw InvalidArgument("estimator: subsample_draws must be at least 1");
    }
    if (!(granularity > 0.0)) {
        throw InvalidArgument("estimator: granularity must be positive");
    }
    if (layer_cap < 1 || kappa_cap < 1) {
        throw InvalidArgument("estimator: caps must be positive");
    }
    if (kind == EstimatorKind::Subsampled && control_variates.size() != components) {
        throw InvalidArgument("estimator: subsampled kind needs one control-variate set per sub-posterior");
    }
}

const QuadratureRule& gauss_legendre_unit(int n) {
    if (n < 1 || n > 256) {
        throw InvalidArgument("gauss_legendre_unit: n must be in [1, 256]");
    }
    static std::mutex mu;
    static std::map<int, QuadratureRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) {
        return it->second;
    }
    // Golub-Welsch: eigen-decomposition of the Jacobi matrix of Legendre polynomials.
    Matrix jacobi = Matrix::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        const double b = i / std::sqrt(4.0 * i * i - 1.0);
        jacobi(i, i - 1) = b;
        jacobi(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jacobi);
    QuadratureRule rule;
    for (int i = 0; i < n; ++i) {
        const double v0 = eig.eigenvectors()(0, i);
        rule.nodes.push_back(0.5 * (eig.eigenvalues()[i] + 1.0));
        rule.weights.push_back(v0 * v0);
    }
    return cache.emplace(n, std::move(rule)).first->second;
}

double chord_phi_integral(const Segment& segment, const SubPosterior& sp) {
    static const QuadratureRule& rule = gauss_legendre_unit(16);
    double acc = 0.0;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        const double w = rule.nodes[q];
        acc += rule.weights[q] * sp.phi((1.0 - w) * segment.x_start + w * segment.x_end);
    }
    return acc * segment.duration();
}

double ue_b_mean(const Segment& segment, const SubPosterior& sp, double upper, MeanRule rule) {
    const double dt = segment.duration();
    double integral = 0.0;
    if (rule == MeanRule::ExactIntegral) {
        integral = chord_phi_integral(segment, sp);
    } else {
        integral = 0.5 * dt * (sp.phi(segment.x_start) + sp.phi(segment.x_end));
    }
    return std::max(dt * upper - integral, kMeanFloor);
}

double optimal_intensity_reference(const Segment& segment, const SubPosterior& sp, double upper, int quad_points) {
    const QuadratureRule& rule = gauss_legendre_unit(quad_points);
    double acc = 0.0;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
        const double w = rule.nodes[q];
        const double gap = upper - sp.phi((1.0 - w) * segment.x_start + w * segment.x_end);
        acc += rule.weights[q] * gap * gap;
    }
    return segment.duration() * std::sqrt(acc);
}

double subsampled_phi(const LogisticSubPosterior& sp, const ControlVariates& cv, const Vector& x, int draws,
                      Rng& rng) {
    if (draws < 1) {
        throw InvalidArgument("subsampled_phi: draws must be at least 1");
    }
    const ControlVariates::Anchor& a = cv.nearest(x);
    const std::size_t terms = sp.datum_count() + 1;
    const double scale = static_cast<double>(terms);
    auto pick = [&]() {
        return std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(terms)), terms - 1);
    };
    double acc = 0.0;
    for (int r = 0; r < draws; ++r) {
        const std::size_t i = pick();
        const std::size_t j = pick();
        const auto ci = static_cast<Eigen::Index>(i);
        const auto cj = static_cast<Eigen::Index>(j);
        const Vector alpha_i = scale * (sp.term_gradient(i, x) - a.term_grads.col(ci));
        const Vector alpha_j = scale * (sp.term_gradient(j, x) - a.term_grads.col(cj));
        const double div_i = scale * (sp.term_laplacian(i, x) - a.term_laps[ci]);
        acc += 0.5 * (alpha_i.dot(2.0 * a.grad + alpha_j) + div_i) + a.phi;
    }
    return acc / draws;
}

PhiBounds subsampled_phi_bounds(const LogisticSubPosterior& sp, const ControlVariates& cv, const Box& rect) {
    const PhiBounds a = anchor_bounds(sp, cv.local(), rect);
    const PhiBounds b = anchor_bounds(sp, cv.global(), rect);
    return {std::min(a.lower, b.lower), std::max(a.upper, b.upper)};
}

RhoDraw rho_tilde_component(const Segment& segment, const SubPosterior& sp, const EstimatorConfig& cfg,
                            const ControlVariates* cv, Rng& rng) {
    const double dt = segment.duration();
    RhoDraw out;
    const Layer layer = simulate_layer(segment, cfg.granularity, rng, cfg.layer_cap);
    out.max_layer = layer.max_index();
    const Box box = layer.box();

    const LogisticSubPosterior* logistic = nullptr;
    PhiBounds bounds{};
    if (cfg.kind == EstimatorKind::Subsampled) {
        logistic = dynamic_cast<const LogisticSubPosterior*>(&sp);
        if (logistic == nullptr || cv == nullptr) {
            throw InvalidArgument("rho_tilde: subsampled estimator needs logistic sub-posteriors and control variates");
        }
        bounds = pad(subsampled_phi_bounds(*logistic, *cv, box));
    } else {
        bounds = pad(sp.phi_bounds(box));
    }
    const double L = bounds.lower;
    const double U = bounds.upper;

    long long kappa = 0;
    double nb_mean = 0.0;
    double nb_r = 0.0;
    if (cfg.kind == EstimatorKind::UeB) {
        nb_mean = ue_b_mean(segment, sp, U, cfg.mean_rule);
        out.phi_evaluations += cfg.mean_rule == MeanRule::ExactIntegral ? 16 : 2;
        nb_r = cfg.dispersion.value_or(std::max(nb_mean, kDispersionFloor));
        kappa = negative_binomial(rng, nb_mean, nb_r);
    } else {
        kappa = poisson(rng, dt * (U - L));
    }
    if (kappa > cfg.kappa_cap) {
        throw SimulationLimit("rho_tilde: kappa " + std::to_string(kappa) + " exceeds cap " +
                              std::to_string(cfg.kappa_cap) + "; the mesh is far too coarse");
    }
    out.kappa = kappa;

    std::vector<double> times(static_cast<std::size_t>(kappa));
    for (auto& u : times) {
        u = segment.t_start + dt * uniform01(rng);
    }
    const std::vector<Vector> points = simulate_points_given_layer(layer, times, rng);

    double log_prod = 0.0;
    for (const auto& x : points) {
        double value = 0.0;
        if (logistic != nullptr) {
            value = subsampled_phi(*logistic, *cv, x, cfg.subsample_draws, rng);
        } else {
            value = sp.phi(x);
        }
        ++out.phi_evaluations;
        log_prod += std::log(std::max(U - value, 0.0));
    }

    if (cfg.kind == EstimatorKind::UeB) {
        out.log_value = static_cast<double>(kappa) * std::log(dt) - U * dt + log_nb_factor(kappa, nb_mean, nb_r) + log_prod;
    } else {
        out.log_value = -L * dt - static_cast<double>(kappa) * std::log(U - L) + log_prod;
    }
    return out;
}

RhoDraw rho_tilde(const Matrix& from, const Matrix& to, double s, double t, const SubPosteriorList& sps,
                  const EstimatorConfig& cfg, Rng& rng) {
    require_dim("rho_tilde", static_cast<Eigen::Index>(sps.size()), from.cols());
    require_dim("rho_tilde", from.cols(), to.cols());
    require_dim("rho_tilde", from.rows(), to.rows());
    if (!(t > s)) {
        throw InvalidArgument("rho_tilde: need t > s");
    }
    RhoDraw total;
    for (Eigen::Index c = 0; c < from.cols(); ++c) {
        Segment seg{from.col(c), to.col(c), s, t};
        const ControlVariates* cv =
            cfg.control_variates.empty() ? nullptr : &cfg.control_variates[static_cast<std::size_t>(c)];
        const RhoDraw part = rho_tilde_component(seg, *sps[static_cast<std::size_t>(c)], cfg, cv, rng);
        total.log_value += part.log_value;
        total.kappa += part.kappa;
        total.phi_evaluations += part.phi_evaluations;
        total.max_layer = std::max(total.max_layer, part.max_layer);
    }
    return total;
}

} // namespace bfusion
