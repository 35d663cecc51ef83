#include "bfusion/diagnostics.hpp"
#include "bfusion/smc.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace bfusion;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) {
        x[i++] = e;
    }
    return x;
}

HeterogeneitySpec sh_spec(int C, int d, double m) {
    HeterogeneitySpec s;
    s.regime = Regime::SH;
    s.C = C;
    s.d = d;
    s.m = m;
    return s;
}

FusionRun run_family(const GaussianFamily& fam, const HeterogeneitySpec& spec, std::size_t N, std::uint64_t seed,
                     unsigned workers = 1) {
    const double T = recommend_T(spec);
    SmcConfig cfg;
    cfg.N = N;
    cfg.seed = seed;
    cfg.workers = workers;
    return run_fusion(fam.as_list(), recommend_mesh(spec, T), cfg);
}

} // namespace

TEST_CASE("ess and cess") {
    CHECK(ess(vec({0.25, 0.25, 0.25, 0.25})) == doctest::Approx(4.0));
    CHECK(ess(vec({0.0, 1.0, 0.0})) == doctest::Approx(1.0));
    CHECK(ess(vec({0.5, 0.25, 0.25})) == doctest::Approx(1.0 / 0.375));
    CHECK(ess(vec({0.5, 0.25, 0.25})) == doctest::Approx(2.6667).epsilon(1e-4));

    CHECK(cess(vec({2.0, 2.0, 2.0})) == doctest::Approx(3.0));
    CHECK(cess(vec({0.0, 5.0, 0.0})) == doctest::Approx(1.0));
    CHECK(cess(vec({1.0, 2.0, 3.0})) == doctest::Approx(36.0 / 14.0));
    CHECK(cess_from_log(vec({0.0, std::log(2.0), std::log(3.0)})) == doctest::Approx(36.0 / 14.0));
    CHECK(cess_from_log(vec({-2000.0, -2000.0 + std::log(2.0), -2000.0 + std::log(3.0)})) ==
          doctest::Approx(36.0 / 14.0));
    const double ninf = -std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(cess_from_log(vec({ninf, ninf})), WeightCollapse);
    CHECK(weighted_cess_from_log(vec({0.5, 0.5}), vec({0.0, 0.0})) == doctest::Approx(2.0));
}

TEST_CASE("normalise log weights") {
    Vector w;
    const double lse = normalise_log_weights(vec({-1000.0, -1000.0 + std::log(3.0)}), w, 2);
    CHECK(w[0] == doctest::Approx(0.25));
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(lse == doctest::Approx(-1000.0 + std::log(4.0)));
    const double ninf = -std::numeric_limits<double>::infinity();
    try {
        normalise_log_weights(vec({ninf, ninf}), w, 7);
        FAIL("expected collapse");
    } catch (const WeightCollapse& e) {
        CHECK(e.iteration() == 7);
    }
}

TEST_CASE("resampling") {
    const std::vector<ResamplingScheme> schemes{ResamplingScheme::Multinomial, ResamplingScheme::Systematic,
                                                ResamplingScheme::Stratified, ResamplingScheme::Residual};
    Rng rng = make_stream(1, StreamTag::Test);
    const auto counts_of = [](const std::vector<std::size_t>& idx, std::size_t n) {
        std::vector<int> c(n, 0);
        for (auto i : idx) {
            ++c[i];
        }
        return c;
    };
    for (auto s : schemes) {
        const auto idx = resample_indices(Vector::Constant(6, 1.0 / 6), ResamplingScheme::Systematic, rng);
        for (int c : counts_of(idx, 6)) {
            CHECK(c == 1);
        }
        const auto one = resample_indices(vec({1.0, 0.0, 0.0, 0.0}), s, rng);
        for (auto i : one) {
            CHECK(i == 0);
        }
    }

    const Vector w = vec({0.05, 0.4, 0.15, 0.3, 0.1});
    const int reps = 100000;
    for (auto s : schemes) {
        std::vector<std::vector<double>> counts(5);
        for (int r = 0; r < reps; ++r) {
            Rng g = make_stream(2, StreamTag::Test, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(s));
            const auto c = counts_of(resample_indices(w, s, g), 5);
            for (int i = 0; i < 5; ++i) {
                counts[static_cast<std::size_t>(i)].push_back(c[static_cast<std::size_t>(i)]);
            }
        }
        for (int i = 0; i < 5; ++i) {
            const auto ms = oracle::mean_se(counts[static_cast<std::size_t>(i)]);
            const double target = 5 * w[i];
            CAPTURE(to_string(s));
            if (ms.se == 0.0) {
                CHECK(ms.mean == doctest::Approx(target));
            } else {
                CHECK(std::abs(ms.mean - target) < 3 * ms.se);
            }
        }
    }
    CHECK(parse_resampling("systematic") == ResamplingScheme::Systematic);
    CHECK_THROWS(parse_resampling("bogus"));
}

TEST_CASE("gaussian fusion recovers the product") {
    const auto spec = sh_spec(4, 2, 1000);
    const auto fam = make_gaussian_family(spec);
    const FusionRun run = run_family(fam, spec, 10000, 3);
    CHECK(run.records.size() == static_cast<std::size_t>(run.partition.intervals()));
    CHECK(run.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    const Moments m = weighted_moments(WeightedSample::from_run(run));
    for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(m.mean[k] - fam.fused_mean[k]) < 3 * m.se[k]);
        CHECK(std::abs(m.covariance(k, k) / fam.fused_variance - 1) < 0.1);
    }
}

TEST_CASE("single component reproduces its density") {
    GaussianSubPosterior g(vec({0.4}), 0.01);
    const SubPosteriorList sps{std::make_shared<GaussianSubPosterior>(g)};
    SmcConfig cfg;
    cfg.N = 10000;
    cfg.seed = 4;
    const FusionRun run = run_fusion(sps, TemporalPartition::regular(0.01, 3), cfg);
    const Moments m = weighted_moments(WeightedSample::from_run(run));
    const SampleBank direct = g.sample_initial(10000, 99);
    const double direct_se = std::sqrt(direct.covariance()(0, 0) / 10000.0);
    CHECK(std::abs(m.mean[0] - direct.mean()[0]) < 3 * std::hypot(m.se[0], direct_se));
    CHECK(std::abs(m.covariance(0, 0) / 0.01 - 1) < 0.1);
}

TEST_CASE("ssh pair fuses to zero mean") {
    HeterogeneitySpec spec;
    spec.regime = Regime::SSH;
    spec.C = 2;
    spec.m = 1000;
    spec.constant = 0.0625;
    const auto fam = make_gaussian_family(spec);
    const FusionRun run = run_family(fam, spec, 5000, 5);
    const Moments m = weighted_moments(WeightedSample::from_run(run));
    CHECK(std::abs(m.mean[0]) < 3 * m.se[0]);
}

TEST_CASE("determinism across workers") {
    const auto spec = sh_spec(3, 1, 500);
    const auto fam = make_gaussian_family(spec);
    const FusionRun a = run_family(fam, spec, 500, 6, 1);
    const FusionRun b = run_family(fam, spec, 500, 6, 4);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i] == b.samples[i]);
        CHECK(a.weights[static_cast<Eigen::Index>(i)] == b.weights[static_cast<Eigen::Index>(i)]);
    }
    CHECK(a.log_normalizer == b.log_normalizer);
}

TEST_CASE("raising the ess threshold never resamples less") {
    const auto spec = sh_spec(4, 1, 1000);
    const auto fam = make_gaussian_family(spec);
    std::size_t prev = 0;
    for (double th : {0.0, 0.3, 0.6, 0.9, 1.0}) {
        SmcConfig cfg;
        cfg.N = 400;
        cfg.seed = 8;
        cfg.ess_threshold = th;
        const auto run = run_fusion(fam.as_list(), TemporalPartition::regular(0.02, 6), cfg);
        CHECK(run.resample_count >= prev);
        prev = run.resample_count;
    }
    CHECK(prev == 6);
}

TEST_CASE("normaliser estimate does not depend on the partition") {
    HeterogeneitySpec spec;
    spec.regime = Regime::SSH;
    spec.C = 2;
    spec.m = 100;
    spec.constant = 0.1;
    const auto fam = make_gaussian_family(spec);
    std::vector<double> coarse, fine;
    for (int r = 0; r < 50; ++r) {
        SmcConfig cfg;
        cfg.N = 500;
        cfg.seed = 1000 + static_cast<std::uint64_t>(r);
        cfg.ess_threshold = 0.0;
        coarse.push_back(std::exp(run_fusion(fam.as_list(), TemporalPartition::regular(0.05, 1), cfg).log_normalizer));
        cfg.seed = 5000 + static_cast<std::uint64_t>(r);
        cfg.ess_threshold = 0.5;
        fine.push_back(std::exp(run_fusion(fam.as_list(), TemporalPartition::regular(0.05, 5), cfg).log_normalizer));
    }
    const auto a = oracle::mean_se(coarse);
    const auto b = oracle::mean_se(fine);
    CHECK(std::abs(a.mean - b.mean) < 3 * std::hypot(a.se, b.se));
}

TEST_CASE("tilted initialisation and joint propagation still fuse correctly") {
    const auto spec = sh_spec(3, 1, 1000);
    const auto fam = make_gaussian_family(spec);
    const double T = recommend_T(spec);
    SmcConfig cfg;
    cfg.N = 5000;
    cfg.seed = 12;
    cfg.tilt_center = fam.fused_mean;
    cfg.joint_propagation = true;
    const auto run = run_fusion(fam.as_list(), recommend_mesh(spec, T), cfg);
    CHECK(run.initial_proposals >= 5000);
    const Moments m = weighted_moments(WeightedSample::from_run(run));
    CHECK(std::abs(m.mean[0] - fam.fused_mean[0]) < 3 * m.se[0]);
    CHECK(std::abs(m.covariance(0, 0) / fam.fused_variance - 1) < 0.1);
}

TEST_CASE("config validation") {
    SmcConfig cfg;
    cfg.N = 1;
    CHECK_THROWS(cfg.validate(2));
    cfg.N = 10;
    cfg.ess_threshold = 1.5;
    CHECK_THROWS(cfg.validate(2));
    const auto fam = make_gaussian_family(sh_spec(2, 1, 100));
    SmcConfig ok;
    CHECK_THROWS(run_fusion({fam.members[0], std::make_shared<GaussianSubPosterior>(Vector::Zero(2), 1.0)},
                            TemporalPartition::regular(0.1, 2), ok));
}
