#include "bfusion/baselines.hpp"
#include "bfusion/diagnostics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace bfusion;

namespace {

SampleBank bank_of(std::initializer_list<double> xs) {
    SampleBank b;
    for (double x : xs) {
        b.draws.push_back(Vector::Constant(1, x));
    }
    return b;
}

SubPosteriorList pair(double mu, double var) {
    return {std::make_shared<GaussianSubPosterior>(Vector::Constant(1, -mu / 2), var),
            std::make_shared<GaussianSubPosterior>(Vector::Constant(1, mu / 2), var)};
}

} // namespace

TEST_CASE("consensus monte carlo") {
    const SampleBank a = bank_of({0.1, -2.0, 3.5, 0.7});
    const auto single = consensus_monte_carlo({a});
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(single.points[i][0] == doctest::Approx(a.draws[i][0]));
    }

    // Two banks with the same sample variance pair draws 0 and 1 into 0.5.
    const SampleBank b1 = bank_of({0.0, 2.0, -2.0, 0.0});
    const SampleBank b2 = bank_of({1.0, 3.0, -1.0, 1.0});
    const auto w = CmcWeights::from_banks({b1, b2});
    CHECK(w.W[0](0, 0) == doctest::Approx(w.W[1](0, 0)));
    const auto fused = consensus_monte_carlo({b1, b2});
    CHECK(fused.points[0][0] == doctest::Approx(0.5));
    CHECK(fused.weights.sum() == doctest::Approx(1.0));

    const auto trunc = consensus_monte_carlo({b1, bank_of({1.0, 3.0, -1.0})});
    CHECK(trunc.size() == 3);

    CHECK_THROWS(CmcWeights::from_banks({bank_of({1.0, 1.0, 1.0})}));
}

TEST_CASE("consensus monte carlo is exact for gaussians") {
    GaussianSubPosterior g1(Vector{{0.0, 1.0}}, 0.5);
    GaussianSubPosterior g2(Vector{{1.0, -1.0}}, 1.5);
    const std::size_t n = 50000;
    const auto fused = consensus_monte_carlo({g1.sample_initial(n, 1), g2.sample_initial(n, 2)});
    // Precisions 2 and 2/3.
    const double var = 1.0 / (2.0 + 2.0 / 3.0);
    const Vector mean = var * (2.0 * Vector{{0.0, 1.0}} + (2.0 / 3.0) * Vector{{1.0, -1.0}});
    const Moments m = weighted_moments(fused);
    for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(m.mean[k] - mean[k]) < 3 * m.se[k]);
        CHECK(std::abs(m.covariance(k, k) - var) < 3 * var * std::sqrt(2.0 / n) + 0.01 * var);
    }
}

TEST_CASE("monte carlo fusion acceptance") {
    McfConfig cfg;
    cfg.T = 1e-6;
    cfg.max_proposals = 2000;
    const SubPosteriorList one{std::make_shared<GaussianSubPosterior>(Vector::Zero(1), 1.0)};
    CHECK(monte_carlo_fusion(one, cfg).acceptance_rate() > 0.99);

    cfg.T = 1.0;
    cfg.max_proposals = 20000;
    double prev = 1.1;
    for (double mu : {0.0, 1.0, 2.0, 3.0}) {
        const auto r = monte_carlo_fusion(pair(mu, 1.0), cfg);
        CAPTURE(mu);
        CHECK(r.acceptance_rate() < prev);
        prev = r.acceptance_rate();
    }

    McfConfig bad;
    bad.T = 0.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("monte carlo fusion draws from the product") {
    McfConfig cfg;
    cfg.T = 1.0;
    cfg.target_accepted = 10000;
    cfg.max_proposals = 1'000'000;
    cfg.seed = 3;
    const auto r = monte_carlo_fusion(pair(1.0, 1.0), cfg);
    REQUIRE(r.accepted == 10000);
    // N(-1/2, 1) x N(1/2, 1) is N(0, 1/2).
    GaussianSubPosterior target(Vector::Zero(1), 0.5);
    const auto direct = target.sample_initial(10000, 77);
    std::vector<double> a, b;
    for (const auto& p : r.sample.points) {
        a.push_back(p[0]);
    }
    for (const auto& p : direct.draws) {
        b.push_back(p[0]);
    }
    CHECK(kolmogorov_pvalue(ks_two_sample(a, b), 5000) > 0.001);
}

TEST_CASE("monte carlo fusion reports empty runs") {
    McfConfig cfg;
    cfg.T = 1.0;
    cfg.max_proposals = 5;
    const auto r = monte_carlo_fusion(pair(40.0, 0.01), cfg);
    CHECK(r.accepted == 0);
    CHECK_FALSE(r.diagnostic.empty());
}
