#include "bfusion/proposal.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace bfusion;

namespace {

Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) {
        m(0, i++) = e;
    }
    return m;
}

/// Weighted mean and its ESS-based standard error.
struct WeightedStat {
    double mean;
    double se;
};
WeightedStat weighted_stat(const std::vector<double>& x, const std::vector<double>& log_w) {
    const double mx = *std::max_element(log_w.begin(), log_w.end());
    double sw = 0.0;
    double sw2 = 0.0;
    double swx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = std::exp(log_w[i] - mx);
        sw += w;
        sw2 += w * w;
        swx += w * x[i];
    }
    const double mean = swx / sw;
    double var = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double w = std::exp(log_w[i] - mx) / sw;
        var += w * (x[i] - mean) * (x[i] - mean);
    }
    const double ess = sw * sw / sw2;
    return {mean, std::sqrt(var / ess)};
}

} // namespace

TEST_CASE("rho0") {
    CHECK(rho0_log(ParticleState(row({0.3, 0.3, 0.3})), 0.1) == 0.0);
    CHECK(rho0_log(ParticleState(row({0.0, 1.0})), 1.0) == doctest::Approx(-0.25));
    CHECK(std::exp(rho0_log(ParticleState(row({0.0, 1.0})), 1.0)) == doctest::Approx(0.7788).epsilon(1e-4));
    CHECK(std::abs(rho0_log(ParticleState(row({0.0, 1.0})), 1e12)) < 1e-12);
    CHECK_THROWS(rho0_log(ParticleState(row({0.0, 1.0})), 0.0));
    double prev = 1.0;
    for (double spread : {0.0, 0.1, 0.5, 1.0, 3.0}) {
        const double v = rho0_log(ParticleState(row({-spread, spread})), 0.7);
        CHECK(v <= prev);
        prev = v;
    }
    prev = -1e300;
    for (double T : {0.01, 0.1, 1.0, 10.0}) {
        const double v = rho0_log(ParticleState(row({-1.0, 2.0})), T);
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("particle mean") {
    ParticleState s(row({1.0, 2.0, 6.0}));
    CHECK(s.mean[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("tilted initial weight") {
    const Vector theta = Vector::Constant(1, 0.4);
    ParticleState s(row({0.4, 0.6}));
    CHECK(TiltedInitialSampler::log_weight(s, theta, 0.1) == doctest::Approx(0.1).epsilon(1e-12));
    ParticleState at(row({0.2, 0.6}));
    CHECK(TiltedInitialSampler::log_weight(at, theta, 1e6) == doctest::Approx(0.0));
}

TEST_CASE("tilted initialisation matches plain weighting") {
    const double T = 1.0;
    const std::size_t N = 100000;
    GaussianSubPosterior f1(Vector::Constant(1, -0.5), 1.0);
    GaussianSubPosterior f2(Vector::Constant(1, 0.5), 1.0);
    const Vector theta = Vector::Constant(1, 0.2);

    std::vector<double> plain_bar, plain_sq, plain_lw;
    const SampleBank d1 = f1.sample_initial(N, 31);
    const SampleBank d2 = f2.sample_initial(N, 32);
    for (std::size_t i = 0; i < N; ++i) {
        Matrix pos(1, 2);
        pos << d1.draws[i][0], d2.draws[i][0];
        ParticleState s(pos);
        plain_bar.push_back(s.mean[0]);
        plain_sq.push_back(s.mean[0] * s.mean[0]);
        plain_lw.push_back(rho0_log(s, T));
    }

    TiltedInitialSampler sampler({f1.sample_initial(1'000'000, 41), f2.sample_initial(1'000'000, 42)}, theta, T);
    Rng rng = make_stream(43, StreamTag::Test);
    std::vector<double> tilt_bar, tilt_sq, tilt_lw;
    for (std::size_t i = 0; i < N; ++i) {
        const ParticleState s = sampler.draw(rng);
        tilt_bar.push_back(s.mean[0]);
        tilt_sq.push_back(s.mean[0] * s.mean[0]);
        tilt_lw.push_back(s.log_weight);
    }
    CHECK(sampler.accepted() == 2 * N);

    // Product of N(-0.5,1) and N(0.5,1) tilted by rho0 with T=1: xbar ~ N(0, 1/2).
    for (auto [a, b] : {std::pair{&plain_bar, &tilt_bar}, std::pair{&plain_sq, &tilt_sq}}) {
        const auto p = weighted_stat(*a, plain_lw);
        const auto q = weighted_stat(*b, tilt_lw);
        CHECK(std::abs(p.mean - q.mean) < 3.0 * std::hypot(p.se, q.se));
    }
}

TEST_CASE("transition spec") {
    const auto spec = TransitionSpec::make(0.0, 0.5, 1.0, 2);
    ParticleState s(row({0.0, 1.0}));
    const Matrix M = spec.component_means(s);
    CHECK(M(0, 0) == doctest::Approx(0.25));
    CHECK(M(0, 1) == doctest::Approx(0.75));
    CHECK(spec.cov_diag == doctest::Approx(0.375));
    CHECK(spec.cov_offdiag == doctest::Approx(0.125));

    const auto full = TransitionSpec::make(0.0, 2.0, 2.0, 4);
    CHECK(full.cov_diag == doctest::Approx(0.5));
    CHECK(full.cov_offdiag == doctest::Approx(0.5));
    const Matrix Mf = full.component_means(ParticleState(row({0.0, 1.0, 2.0, 5.0})));
    for (int c = 0; c < 4; ++c) {
        CHECK(Mf(0, c) == doctest::Approx(2.0));
    }

    const auto tiny = TransitionSpec::make(0.3, 0.3 + 1e-14, 1.0, 3);
    CHECK(tiny.cov_diag < 1e-13);
    CHECK(tiny.mean_self == doctest::Approx(1.0));

    // Identities for the component variance and cross-covariance.
    for (auto [s0, t0, T, C] : {std::tuple{0.0, 0.1, 1.0, 3}, std::tuple{0.2, 0.7, 0.9, 5}, std::tuple{0.5, 0.6, 2.0, 2}}) {
        const auto sp = TransitionSpec::make(s0, t0, T, C);
        const double D = t0 - s0;
        CHECK(sp.cov_diag == doctest::Approx(D * D / (C * (T - s0)) + (T - t0) * D / (T - s0)).epsilon(1e-12));
        CHECK(sp.cov_offdiag == doctest::Approx(D * D / (C * (T - s0))).epsilon(1e-12));
        CHECK(sp.cov_diag >= sp.cov_offdiag);
    }
    CHECK_THROWS(TransitionSpec::make(0.5, 0.4, 1.0, 2));
    CHECK_THROWS(TransitionSpec::make(0.0, 1.5, 1.0, 2));
}

TEST_CASE("factorised propagation moments") {
    const auto spec = TransitionSpec::make(0.1, 0.4, 1.0, 3);
    Matrix pos(2, 3);
    pos << 0.0, 1.0, -2.0, 0.5, 0.5, 3.0;
    ParticleState s(pos);
    const Matrix M = spec.component_means(s);
    const int N = 200000;
    std::vector<double> x0, x1, prod, x0b;
    for (int i = 0; i < N; ++i) {
        Rng rng = make_stream(5, StreamTag::Test, static_cast<std::uint64_t>(i));
        const ParticleState out = propagate_factorized(s, spec, rng);
        x0.push_back(out.positions(0, 0));
        x1.push_back(out.positions(0, 1));
        x0b.push_back(out.positions(1, 0));
        prod.push_back((out.positions(0, 0) - M(0, 0)) * (out.positions(0, 1) - M(0, 1)));
        CHECK(out.mean.isApprox(out.positions.rowwise().mean(), 1e-12));
    }
    const auto a = oracle::mean_se(x0);
    const auto b = oracle::mean_se(x1);
    const auto c = oracle::mean_se(prod);
    CHECK(std::abs(a.mean - M(0, 0)) < 4 * a.se);
    CHECK(std::abs(b.mean - M(0, 1)) < 4 * b.se);
    CHECK(std::abs(c.mean - spec.cov_offdiag) < 4 * c.se);
    std::vector<double> sq;
    for (double v : x0) {
        sq.push_back((v - M(0, 0)) * (v - M(0, 0)));
    }
    const auto v = oracle::mean_se(sq);
    CHECK(std::abs(v.mean - spec.cov_diag) < 4 * v.se);
    // Coordinates are independent.
    std::vector<double> cross;
    for (int i = 0; i < N; ++i) {
        cross.push_back((x0[static_cast<std::size_t>(i)] - M(0, 0)) * (x0b[static_cast<std::size_t>(i)] - M(1, 0)));
    }
    const auto cr = oracle::mean_se(cross);
    CHECK(std::abs(cr.mean) < 4 * cr.se);
}

TEST_CASE("coalescence at the horizon") {
    const auto spec = TransitionSpec::make(0.6, 1.0, 1.0, 4);
    Matrix pos = Matrix::Random(3, 4);
    ParticleState s(pos);
    for (int i = 0; i < 100; ++i) {
        Rng rng = make_stream(9, StreamTag::Test, static_cast<std::uint64_t>(i));
        const auto f = propagate_factorized(s, spec, rng);
        const auto j = propagate_joint(s, spec, rng);
        for (int c = 1; c < 4; ++c) {
            CHECK((f.positions.col(c) - f.positions.col(0)).norm() == 0.0);
            CHECK((j.positions.col(c) - j.positions.col(0)).norm() == 0.0);
        }
    }
}

TEST_CASE("chapman kolmogorov") {
    ParticleState s(row({-1.0, 0.0, 2.0}));
    const double T = 1.0;
    const int N = 100000;
    std::vector<double> direct, stepped, direct_sq, stepped_sq;
    for (int i = 0; i < N; ++i) {
        Rng rng = make_stream(17, StreamTag::Test, static_cast<std::uint64_t>(i));
        const auto a = propagate_factorized(s, TransitionSpec::make(0.0, 0.7, T, 3), rng);
        const auto b1 = propagate_factorized(s, TransitionSpec::make(0.0, 0.3, T, 3), rng);
        const auto b = propagate_joint(b1, TransitionSpec::make(0.3, 0.7, T, 3), rng);
        direct.push_back(a.positions(0, 0));
        stepped.push_back(b.positions(0, 0));
        direct_sq.push_back(a.positions(0, 0) * a.positions(0, 0));
        stepped_sq.push_back(b.positions(0, 0) * b.positions(0, 0));
    }
    for (auto [x, y] : {std::pair{&direct, &stepped}, std::pair{&direct_sq, &stepped_sq}}) {
        const auto p = oracle::mean_se(*x);
        const auto q = oracle::mean_se(*y);
        CHECK(std::abs(p.mean - q.mean) < 4 * std::hypot(p.se, q.se));
    }
}

TEST_CASE("bridge point") {
    const Vector xs = Vector::Zero(1);
    const Vector xt = Vector::Ones(1);
    const int N = 200000;
    for (double u : {0.5, 0.3}) {
        std::vector<double> v, sq;
        for (int i = 0; i < N; ++i) {
            Rng rng = make_stream(3, StreamTag::Test, static_cast<std::uint64_t>(i));
            v.push_back(bridge_point(xs, xt, 0.0, 1.0, u, rng)[0]);
        }
        const auto m = oracle::mean_se(v);
        const double var = u * (1 - u);
        CHECK(std::abs(m.mean - u) < 3 * m.se);
        for (double x : v) {
            sq.push_back((x - u) * (x - u));
        }
        const auto s = oracle::mean_se(sq);
        CHECK(std::abs(s.mean - var) < 3 * s.se);
    }
    Rng rng = make_stream(4, StreamTag::Test);
    CHECK(std::abs(bridge_point(xs, xt, 0.0, 1.0, 1e-14, rng)[0]) < 1e-5);
    CHECK_THROWS(bridge_point(xs, xt, 0.0, 1.0, 1.5, rng));
}
