#include "bfusion/estimator.hpp"
#include "bfusion/proposal.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace bfusion;

namespace {

/// One-dimensional density whose phi is a fixed affine function of x.
class AffinePhi final : public SubPosterior {
public:
    AffinePhi(double intercept, double slope) : c0_(intercept), c1_(slope) {}
    int dim() const override { return 1; }
    double log_density(const Vector&) const override { return 0.0; }
    Vector grad_log_density(const Vector&) const override { return Vector::Zero(1); }
    double laplacian_log_density(const Vector&) const override { return 0.0; }
    double phi(const Vector& x) const override { return c0_ + c1_ * x[0]; }
    PhiBounds phi_bounds(const Box& r) const override {
        const double a = phi(r.lo);
        const double b = phi(r.hi);
        return {std::min(a, b), std::max(a, b)};
    }
    std::optional<double> phi_lower_bound() const override { return std::nullopt; }

protected:
    SampleBank draw_fresh(std::size_t, std::uint64_t) const override { return {}; }

private:
    double c0_;
    double c1_;
};

/// E exp(-int_0^dt phi(B_s) ds) for a Brownian bridge 0 -> 0 with the
/// Gaussian phi of N(0, v): Cameron-Martin formula.
double gaussian_bridge_expectation(double v, double dt) {
    const double a = dt / v;
    return std::exp(dt / (2 * v)) * std::sqrt(a / std::sinh(a));
}

std::vector<double> rho_draws(const SubPosterior& sp, const Segment& seg, const EstimatorConfig& cfg, int n,
                              std::uint64_t seed) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng = make_stream(seed, StreamTag::Test, static_cast<std::uint64_t>(i));
        out.push_back(std::exp(rho_tilde_component(seg, sp, cfg, nullptr, rng).log_value));
    }
    return out;
}

double variance(const std::vector<double>& v) {
    const auto ms = oracle::mean_se(v);
    return ms.se * ms.se * static_cast<double>(v.size());
}

} // namespace

TEST_CASE("constant phi gives a deterministic estimate") {
    AffinePhi flat(2.5, 0.0);
    const Segment seg{Vector::Constant(1, 0.0), Vector::Constant(1, 1.0), 0.0, 0.2};
    for (EstimatorKind kind : {EstimatorKind::UeA, EstimatorKind::UeB}) {
        EstimatorConfig cfg;
        cfg.kind = kind;
        for (int i = 0; i < 200; ++i) {
            Rng rng = make_stream(1, StreamTag::Test, static_cast<std::uint64_t>(i));
            const RhoDraw r = rho_tilde_component(seg, flat, cfg, nullptr, rng);
            CHECK(r.kappa == 0);
            CHECK(r.log_value == doctest::Approx(-2.5 * 0.2).epsilon(1e-9));
        }
    }
}

TEST_CASE("ue-a empty product and upper bound") {
    GaussianSubPosterior g(Vector::Constant(1, 0.0), 0.05);
    const Segment seg{Vector::Constant(1, 0.1), Vector::Constant(1, -0.05), 0.0, 0.02};
    EstimatorConfig cfg;
    cfg.kind = EstimatorKind::UeA;
    int empties = 0;
    for (int i = 0; i < 5000; ++i) {
        Rng rng = make_stream(2, StreamTag::Test, static_cast<std::uint64_t>(i));
        Rng replay = rng;
        const Layer layer = simulate_layer(seg, cfg.granularity, replay, cfg.layer_cap);
        const double L = g.phi_bounds(layer.box()).lower;
        const RhoDraw r = rho_tilde_component(seg, g, cfg, nullptr, rng);
        CHECK(r.log_value <= -L * 0.02 + 1e-9);
        CHECK(std::isfinite(r.log_value));
        if (r.kappa == 0) {
            ++empties;
            CHECK(r.log_value == doctest::Approx(-L * 0.02).epsilon(1e-9));
        }
    }
    CHECK(empties > 0);
}

TEST_CASE("estimates are unbiased for the gaussian path integral") {
    const double v = 0.01;
    const double dt = 0.01;
    GaussianSubPosterior g(Vector::Constant(1, 0.3), v);
    const Segment seg{Vector::Constant(1, 0.3), Vector::Constant(1, 0.3), 0.0, dt};
    const double truth = gaussian_bridge_expectation(v, dt);
    CHECK(truth == doctest::Approx(1.5209).epsilon(1e-4));
    for (EstimatorKind kind : {EstimatorKind::UeA, EstimatorKind::UeB}) {
        EstimatorConfig cfg;
        cfg.kind = kind;
        const auto draws = rho_draws(g, seg, cfg, 100000, kind == EstimatorKind::UeA ? 10 : 11);
        const auto ms = oracle::mean_se(draws);
        CAPTURE(static_cast<int>(kind));
        CHECK(std::abs(ms.mean - truth) < 3 * ms.se);
        CHECK(std::abs(ms.mean / truth - 1) < 0.01);
        for (double r : draws) {
            CHECK(r >= 0.0);
        }
    }

    // Endpoint-average mean rule and explicit dispersion remain unbiased.
    EstimatorConfig alt;
    alt.kind = EstimatorKind::UeB;
    alt.mean_rule = MeanRule::EndpointAverage;
    alt.dispersion = 3.0;
    const auto ms = oracle::mean_se(rho_draws(g, seg, alt, 100000, 12));
    CHECK(std::abs(ms.mean - truth) < 3 * ms.se);
}

TEST_CASE("two-component estimate with non-trivial endpoints") {
    // Product of the per-component expectations for bridges between distinct
    // endpoints, checked against a fine discretisation.
    GaussianSubPosterior g1(Vector::Constant(1, -0.1), 0.02);
    GaussianSubPosterior g2(Vector::Constant(1, 0.1), 0.02);
    const SubPosteriorList sps{std::make_shared<GaussianSubPosterior>(g1), std::make_shared<GaussianSubPosterior>(g2)};
    Matrix from(1, 2);
    Matrix to(1, 2);
    from << -0.05, 0.12;
    to << 0.0, 0.08;
    const double dt = 0.02;

    const int paths = 100000;
    const int steps = 200;
    std::vector<double> ref;
    for (int p = 0; p < paths; ++p) {
        Rng rng = make_stream(20, StreamTag::Test, static_cast<std::uint64_t>(p));
        double total = 1.0;
        for (int c = 0; c < 2; ++c) {
            // Brownian bridge by conditioning a random walk.
            std::vector<double> w(steps + 1, 0.0);
            const double h = dt / steps;
            for (int k = 1; k <= steps; ++k) {
                w[static_cast<std::size_t>(k)] = w[static_cast<std::size_t>(k - 1)] + std::sqrt(h) * std_normal(rng);
            }
            double integral = 0.0;
            for (int k = 0; k <= steps; ++k) {
                const double s = k * h;
                const double x = from(0, c) + (to(0, c) - from(0, c)) * s / dt + w[static_cast<std::size_t>(k)] -
                                 s / dt * w[static_cast<std::size_t>(steps)];
                const double wt = (k == 0 || k == steps) ? 0.5 : 1.0;
                integral += wt * h * sps[static_cast<std::size_t>(c)]->phi(Vector::Constant(1, x));
            }
            total *= std::exp(-integral);
        }
        ref.push_back(total);
    }
    const auto r = oracle::mean_se(ref);
    for (EstimatorKind kind : {EstimatorKind::UeA, EstimatorKind::UeB}) {
        EstimatorConfig cfg;
        cfg.kind = kind;
        std::vector<double> draws;
        for (int i = 0; i < 100000; ++i) {
            Rng rng = make_stream(21, StreamTag::Test, static_cast<std::uint64_t>(i));
            draws.push_back(std::exp(rho_tilde(from, to, 0.0, dt, sps, cfg, rng).log_value));
        }
        const auto e = oracle::mean_se(draws);
        CHECK(std::abs(e.mean - r.mean) < 3 * std::hypot(e.se, r.se) + 1e-3 * r.mean);
    }
}

TEST_CASE("optimal intensity reference") {
    const Segment seg{Vector::Constant(1, 1.0), Vector::Constant(1, 4.0), 0.0, 0.5};
    AffinePhi line(0.0, 1.0);
    CHECK(optimal_intensity_reference(seg, line, 4.0) == doctest::Approx(0.5 * 3.0 / std::sqrt(3.0)).epsilon(1e-12));
    AffinePhi flat(4.0, 0.0);
    CHECK(optimal_intensity_reference(seg, flat, 4.0) == doctest::Approx(0.0));
    GaussianSubPosterior g(Vector::Constant(1, 0.0), 0.3);
    const auto b = g.phi_bounds(Box{Vector::Constant(1, -1.0), Vector::Constant(1, 4.5)});
    const double lam = optimal_intensity_reference(seg, g, b.upper);
    CHECK(lam <= 0.5 * (b.upper - b.lower) + 1e-12);
}

TEST_CASE("ue-b mean") {
    AffinePhi flat(1.5, 0.0);
    const Segment seg{Vector::Constant(1, 0.0), Vector::Constant(1, 1.0), 0.0, 0.4};
    CHECK(ue_b_mean(seg, flat, 1.5) == doctest::Approx(1e-12));

    GaussianSubPosterior g(Vector::Constant(1, 0.7), 0.01);
    const Segment still{Vector::Constant(1, 0.7), Vector::Constant(1, 0.7), 0.0, 0.01};
    const double U = g.phi_bounds(Box{Vector::Constant(1, 0.6), Vector::Constant(1, 0.8)}).upper;
    CHECK(ue_b_mean(still, g, U) == doctest::Approx(0.01 * (U - *g.phi_lower_bound())).epsilon(1e-12));

    GaussianSubPosterior g3(Vector{{0.1, -0.2, 0.3}}, 0.2);
    const Segment chord{Vector{{1.0, 0.0, -1.0}}, Vector{{-0.5, 0.4, 2.0}}, 0.3, 0.55};
    const Vector e0 = chord.x_start - g3.mean();
    const Vector delta = chord.x_end - chord.x_start;
    const double sq = e0.squaredNorm() + e0.dot(delta) + delta.squaredNorm() / 3.0;
    const double analytic = 0.25 * (0.5 * sq / (0.2 * 0.2) - 0.5 * 3 / 0.2);
    CHECK(chord_phi_integral(chord, g3) == doctest::Approx(analytic).epsilon(1e-12));
}

TEST_CASE("gauss-legendre rule") {
    const auto& rule = gauss_legendre_unit(16);
    for (int p = 0; p <= 31; ++p) {
        double acc = 0.0;
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            acc += rule.weights[q] * std::pow(rule.nodes[q], p);
        }
        CHECK(acc == doctest::Approx(1.0 / (p + 1)).epsilon(1e-13));
    }
    CHECK_THROWS(gauss_legendre_unit(0));
}

TEST_CASE("subsampled phi") {
    LogisticProblem prob = make_logistic_problem(400, 2, Vector{{-1.0, 0.5}}, 5);
    const auto& sp = *prob.shards[0];
    const Vector local = sp.find_mode();
    const Vector global = prob.full->find_mode();
    const ControlVariates cv(sp, local, global);

    CHECK((cv.local().grad - sp.grad_log_density(local)).norm() < 1e-10);
    CHECK(std::abs(cv.global().lap - sp.laplacian_log_density(global)) < 1e-10);

    Rng rng = make_stream(3, StreamTag::Test);
    CHECK(subsampled_phi(sp, cv, local, 1, rng) == doctest::Approx(sp.phi(local)).epsilon(1e-12));

    Rng pick = make_stream(4, StreamTag::Test);
    for (int t = 0; t < 10; ++t) {
        Vector x = local;
        x[0] += 0.6 * (uniform01(pick) - 0.5);
        x[1] += 0.6 * (uniform01(pick) - 0.5);
        std::vector<double> vals;
        vals.reserve(1'000'000);
        Rng r = make_stream(5, StreamTag::Test, static_cast<std::uint64_t>(t));
        for (int i = 0; i < 1'000'000; ++i) {
            vals.push_back(subsampled_phi(sp, cv, x, 1, r));
        }
        const auto ms = oracle::mean_se(vals);
        CHECK(std::abs(ms.mean - sp.phi(x)) < 3 * ms.se);
        const Box box{(x.array() - 0.05).matrix(), (x.array() + 0.05).matrix()};
        const auto b = subsampled_phi_bounds(sp, cv, box);
        for (std::size_t i = 0; i < 1000; ++i) {
            CHECK(vals[i] >= b.lower - 1e-9);
            CHECK(vals[i] <= b.upper + 1e-9);
        }
    }
}

TEST_CASE("subsampled estimator keeps the mean") {
    LogisticProblem prob = make_logistic_problem(300, 1, Vector{{-1.0, 0.5}}, 6);
    const auto& sp = *prob.shards[0];
    const Vector mode = sp.find_mode();
    const SubPosteriorList sps{prob.shards[0]};
    Matrix from(2, 1);
    Matrix to(2, 1);
    from.col(0) = mode + Vector{{0.02, -0.01}};
    to.col(0) = mode + Vector{{-0.01, 0.015}};
    const double dt = 0.002;

    EstimatorConfig exact;
    exact.kind = EstimatorKind::UeB;
    EstimatorConfig sub = exact;
    sub.kind = EstimatorKind::Subsampled;
    sub.control_variates = {ControlVariates(sp, mode, mode)};
    sub.validate(1);

    std::vector<double> a, b;
    for (int i = 0; i < 40000; ++i) {
        Rng r1 = make_stream(30, StreamTag::Test, static_cast<std::uint64_t>(i));
        Rng r2 = make_stream(31, StreamTag::Test, static_cast<std::uint64_t>(i));
        a.push_back(std::exp(rho_tilde(from, to, 0.0, dt, sps, exact, r1).log_value));
        b.push_back(std::exp(rho_tilde(from, to, 0.0, dt, sps, sub, r2).log_value));
    }
    const auto ma = oracle::mean_se(a);
    const auto mb = oracle::mean_se(b);
    CHECK(std::abs(ma.mean - mb.mean) < 3 * std::hypot(ma.se, mb.se));

    EstimatorConfig missing;
    missing.kind = EstimatorKind::Subsampled;
    CHECK_THROWS(missing.validate(1));
}

TEST_CASE("ue-b variance is competitive") {
    // SH-style segment: identical Gaussian components, short interval.
    GaussianSubPosterior g(Vector::Constant(1, 0.0), 0.01);
    const Segment seg{Vector::Constant(1, 0.05), Vector::Constant(1, -0.03), 0.0, 0.004};
    EstimatorConfig a;
    a.kind = EstimatorKind::UeA;
    EstimatorConfig b;
    b.kind = EstimatorKind::UeB;
    const double va = variance(rho_draws(g, seg, a, 50000, 40));
    const double vb = variance(rho_draws(g, seg, b, 50000, 41));
    CHECK(vb <= 1.5 * va);

    // SSH late iteration: trajectories near the fused mean, far from a_c.
    GaussianSubPosterior far(Vector::Constant(1, 0.25), 0.002);
    const Segment late{Vector::Constant(1, 0.03), Vector::Constant(1, 0.01), 0.8, 0.8004};
    const double la = variance(rho_draws(far, late, a, 50000, 42));
    const double lb = variance(rho_draws(far, late, b, 50000, 43));
    CHECK(lb < la);
}

TEST_CASE("estimator config validation") {
    EstimatorConfig c;
    c.dispersion = 0.0;
    CHECK_THROWS(c.validate(1));
    c.dispersion = 1.0;
    c.subsample_draws = 0;
    CHECK_THROWS(c.validate(1));
    c.subsample_draws = 1;
    c.kappa_cap = 0;
    CHECK_THROWS(c.validate(1));
}
