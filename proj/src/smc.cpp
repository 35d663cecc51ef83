#include "bfusion/smc.hpp"

#include "bfusion/logging.hpp"
#include "bfusion/proposal.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

namespace bfusion {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

double log_sum_exp(const Vector& v) {
    const double top = v.maxCoeff();
    if (!std::isfinite(top)) {
        return top;
    }
    return top + std::log((v.array() - top).exp().sum());
}

// Runs body(i) for i in [0, count) over `workers` threads in contiguous
// blocks. Results must be written to per-index slots.
template <typename Body>
void parallel_for(std::size_t count, unsigned workers, Body&& body) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    const std::size_t chunk = (count + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) {
            break;
        }
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) {
                    body(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace

void SmcConfig::validate(std::size_t components) const {
    if (N < 2) {
        throw InvalidArgument("N must be at least 2");
    }
    if (!(ess_threshold >= 0.0 && ess_threshold <= 1.0)) {
        throw InvalidArgument("ess_threshold must lie in [0, 1]");
    }
    estimator.validate(components);
}

double FusionRun::mean_cess_fraction() const {
    if (records.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (const auto& r : records) {
        acc += r.cess;
    }
    return acc / static_cast<double>(records.size()) / static_cast<double>(N);
}

long long FusionRun::total_phi_evaluations() const {
    long long acc = 0;
    for (const auto& r : records) {
        acc += r.phi_evaluations;
    }
    return acc;
}

long long FusionRun::total_segments() const {
    return static_cast<long long>(records.size()) * static_cast<long long>(N) * components;
}

double ess(const Vector& weights) {
    const double sq = weights.squaredNorm();
    if (!(sq > 0.0)) {
        throw InvalidArgument("ess: weights are all zero");
    }
    return 1.0 / sq;
}

double cess_from_log(const Vector& log_increments) {
    const double top = log_increments.maxCoeff();
    if (!std::isfinite(top)) {
        throw WeightCollapse(-1);
    }
    const Eigen::ArrayXd r = (log_increments.array() - top).exp();
    const double s = r.sum();
    return s * s / r.square().sum();
}

double cess(const Vector& increments) {
    if ((increments.array() < 0.0).any()) {
        throw InvalidArgument("cess: increments must be non-negative");
    }
    const double sq = increments.squaredNorm();
    if (!(sq > 0.0)) {
        throw WeightCollapse(-1);
    }
    const double s = increments.sum();
    return s * s / sq;
}

double weighted_cess_from_log(const Vector& weights, const Vector& log_increments) {
    const double top = log_increments.maxCoeff();
    if (!std::isfinite(top)) {
        throw WeightCollapse(-1);
    }
    const Eigen::ArrayXd r = (log_increments.array() - top).exp();
    const double num = (weights.array() * r).sum();
    const double den = (weights.array() * r.square()).sum();
    return static_cast<double>(weights.size()) * num * num / den;
}

double normalise_log_weights(const Vector& log_w, Vector& weights, int iteration) {
    const double lse = log_sum_exp(log_w);
    if (!std::isfinite(lse)) {
        throw WeightCollapse(iteration);
    }
    weights = (log_w.array() - lse).exp();
    weights /= weights.sum();
    return lse;
}

std::vector<std::size_t> resample_indices(const Vector& weights, ResamplingScheme scheme, Rng& rng) {
    const auto n = static_cast<std::size_t>(weights.size());
    std::vector<std::size_t> out;
    out.reserve(n);
    if (n == 0) {
        return out;
    }
    const double total = weights.sum();
    std::vector<double> cdf(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += weights[static_cast<Eigen::Index>(i)] / total;
        cdf[i] = acc;
    }
    cdf.back() = 1.0;
    auto locate = [&](double u) {
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        return std::min(static_cast<std::size_t>(it - cdf.begin()), n - 1);
    };
    const double nd = static_cast<double>(n);
    switch (scheme) {
    case ResamplingScheme::Multinomial: {
        std::vector<double> u(n);
        for (auto& v : u) {
            v = uniform01(rng);
        }
        std::sort(u.begin(), u.end());
        std::size_t k = 0;
        for (double v : u) {
            while (k + 1 < n && cdf[k] <= v) {
                ++k;
            }
            out.push_back(k);
        }
        break;
    }
    case ResamplingScheme::Systematic: {
        const double u0 = uniform01(rng);
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back(locate((static_cast<double>(i) + u0) / nd));
        }
        break;
    }
    case ResamplingScheme::Stratified: {
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back(locate((static_cast<double>(i) + uniform01(rng)) / nd));
        }
        break;
    }
    case ResamplingScheme::Residual: {
        std::vector<double> residual(n);
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double expected = nd * weights[static_cast<Eigen::Index>(i)] / total;
            const auto copies = static_cast<std::size_t>(std::floor(expected));
            out.insert(out.end(), copies, i);
            assigned += copies;
            residual[i] = expected - static_cast<double>(copies);
        }
        const std::size_t rest = n - assigned;
        if (rest > 0) {
            Vector rw = Eigen::Map<Vector>(residual.data(), static_cast<Eigen::Index>(n));
            std::vector<double> rcdf(n);
            double racc = 0.0;
            const double rsum = rw.sum();
            for (std::size_t i = 0; i < n; ++i) {
                racc += residual[i] / rsum;
                rcdf[i] = racc;
            }
            rcdf.back() = 1.0;
            for (std::size_t r = 0; r < rest; ++r) {
                const double v = uniform01(rng);
                const auto it = std::upper_bound(rcdf.begin(), rcdf.end(), v);
                out.push_back(std::min(static_cast<std::size_t>(it - rcdf.begin()), n - 1));
            }
        }
        break;
    }
    }
    return out;
}

ResamplingScheme parse_resampling(const std::string& name) {
    if (name == "multinomial") {
        return ResamplingScheme::Multinomial;
    }
    if (name == "systematic") {
        return ResamplingScheme::Systematic;
    }
    if (name == "stratified") {
        return ResamplingScheme::Stratified;
    }
    if (name == "residual") {
        return ResamplingScheme::Residual;
    }
    throw InvalidArgument("unknown resampling scheme '" + name + "'");
}

std::string to_string(ResamplingScheme scheme) {
    switch (scheme) {
    case ResamplingScheme::Multinomial:
        return "multinomial";
    case ResamplingScheme::Systematic:
        return "systematic";
    case ResamplingScheme::Stratified:
        return "stratified";
    case ResamplingScheme::Residual:
        return "residual";
    }
    return "multinomial";
}

FusionRun run_fusion(const SubPosteriorList& sps, const TemporalPartition& partition, const SmcConfig& cfg) {
    const auto start = Clock::now();
    if (sps.empty()) {
        throw InvalidArgument("run_fusion: no sub-posteriors");
    }
    cfg.validate(sps.size());
    const int d = sps.front()->dim();
    for (const auto& sp : sps) {
        require_dim("run_fusion", d, sp->dim());
    }
    const std::size_t N = cfg.N;
    const auto C = static_cast<Eigen::Index>(sps.size());
    const double T = partition.horizon();

    FusionRun run;
    run.config = cfg;
    run.partition = partition;
    run.N = N;
    run.components = static_cast<int>(C);

    // Initialisation.
    std::vector<SampleBank> initial;
    initial.reserve(sps.size());
    for (std::size_t c = 0; c < sps.size(); ++c) {
        SampleBank bank = sps[c]->sample_initial(N, mix64(cfg.seed ^ mix64(c + 1)));
        bank.validate(d);
        for (const auto& w : bank.warnings) {
            log_message(LogLevel::Info, "sub-posterior " + std::to_string(c) + ": " + w);
        }
        initial.push_back(std::move(bank));
    }
    std::vector<ParticleState> particles(N);
    Vector log_w(static_cast<Eigen::Index>(N));
    if (cfg.tilt_center) {
        require_dim("tilt_center", d, cfg.tilt_center->size());
        TiltedInitialSampler sampler(initial, *cfg.tilt_center, T);
        Rng rng = make_stream(cfg.seed, StreamTag::Initial, 0x7117);
        for (std::size_t i = 0; i < N; ++i) {
            particles[i] = sampler.draw(rng);
            log_w[static_cast<Eigen::Index>(i)] = particles[i].log_weight;
        }
        run.initial_proposals = sampler.proposals();
    } else {
        for (std::size_t i = 0; i < N; ++i) {
            Matrix pos(d, C);
            for (Eigen::Index c = 0; c < C; ++c) {
                pos.col(c) = initial[static_cast<std::size_t>(c)].draws[i];
            }
            particles[i] = ParticleState(std::move(pos));
            particles[i].log_weight = rho0_log(particles[i], T);
            log_w[static_cast<Eigen::Index>(i)] = particles[i].log_weight;
        }
    }
    run.cess0 = cess_from_log(log_w);
    Vector weights;
    run.log_normalizer = normalise_log_weights(log_w, weights, 0) - std::log(static_cast<double>(N));
    run.ess0 = ess(weights);

    Vector increments(static_cast<Eigen::Index>(N));
    std::vector<RhoDraw> draws(N);
    for (int j = 1; j <= partition.intervals(); ++j) {
        const auto step_start = Clock::now();
        IterationRecord rec;
        rec.j = j;
        if (ess(weights) < cfg.ess_threshold * static_cast<double>(N)) {
            Rng rng = make_stream(cfg.seed, StreamTag::Resample, static_cast<std::uint64_t>(j));
            const auto idx = resample_indices(weights, cfg.scheme, rng);
            std::vector<ParticleState> next(N);
            for (std::size_t i = 0; i < N; ++i) {
                next[i] = particles[idx[i]];
            }
            particles = std::move(next);
            for (auto& p : particles) {
                p.refresh_mean();
            }
            weights.setConstant(1.0 / static_cast<double>(N));
            rec.resampled = true;
            ++run.resample_count;
        }
        const double s = partition.knot(j - 1);
        const double t = partition.knot(j);
        const TransitionSpec spec = TransitionSpec::make(s, t, T, static_cast<int>(C));
        parallel_for(N, cfg.workers, [&](std::size_t i) {
            Rng rng = make_stream(cfg.seed, StreamTag::Propagate, i, static_cast<std::uint64_t>(j));
            ParticleState next = cfg.joint_propagation ? propagate_joint(particles[i], spec, rng)
                                                       : propagate_factorized(particles[i], spec, rng);
            draws[i] = rho_tilde(particles[i].positions, next.positions, s, t, sps, cfg.estimator, rng);
            particles[i] = std::move(next);
        });
        for (std::size_t i = 0; i < N; ++i) {
            double v = draws[i].log_value;
            if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
                v = -std::numeric_limits<double>::infinity();
                ++rec.dropped;
            }
            increments[static_cast<Eigen::Index>(i)] = v;
            rec.kappa += draws[i].kappa;
            rec.phi_evaluations += draws[i].phi_evaluations;
        }
        if (!std::isfinite(increments.maxCoeff())) {
            throw WeightCollapse(j);
        }
        rec.cess = cfg.weighted_cess ? weighted_cess_from_log(weights, increments) : cess_from_log(increments);
        const Vector updated = weights.array().log().matrix() + increments;
        run.log_normalizer += normalise_log_weights(updated, weights, j);
        rec.ess = ess(weights);
        rec.wall_ms = elapsed_ms(step_start);
        if (rec.dropped > 0) {
            log_message(LogLevel::Info, "iteration " + std::to_string(j) + ": " + std::to_string(rec.dropped) +
                                            " non-finite increments dropped");
        }
        log_message(LogLevel::Debug, "iteration " + std::to_string(j) + " CESS/N " +
                                         std::to_string(rec.cess / static_cast<double>(N)));
        run.records.push_back(rec);
    }

    run.samples.reserve(N);
    for (const auto& p : particles) {
        run.samples.push_back(p.positions.col(0));
    }
    run.weights = weights;
    run.wall_ms = elapsed_ms(start);
    return run;
}

} // namespace bfusion
