#include "bfusion/baselines.hpp"

#include "bfusion/estimator.hpp"
#include "bfusion/logging.hpp"
#include "bfusion/proposal.hpp"
#include "bfusion/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace bfusion {

CmcWeights CmcWeights::from_banks(const std::vector<SampleBank>& banks) {
    CmcWeights w;
    for (const auto& bank : banks) {
        if (bank.size() < 2) {
            throw InvalidArgument("CMC: each bank needs at least two draws");
        }
        const Matrix cov = bank.covariance();
        Eigen::LDLT<Matrix> ldlt(cov);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 0.0) {
            throw FusionError("CMC: singular sample covariance in bank " + bank.provenance);
        }
        w.W.push_back(ldlt.solve(Matrix::Identity(cov.rows(), cov.cols())));
    }
    return w;
}

WeightedSample consensus_monte_carlo(const std::vector<SampleBank>& banks) {
    return consensus_monte_carlo(banks, CmcWeights::from_banks(banks));
}

WeightedSample consensus_monte_carlo(const std::vector<SampleBank>& banks, const CmcWeights& weights) {
    if (banks.empty()) {
        throw InvalidArgument("CMC: no banks");
    }
    if (weights.W.size() != banks.size()) {
        throw InvalidArgument("CMC: one weight matrix per bank is required");
    }
    const Eigen::Index d = banks.front().dim();
    std::size_t n = banks.front().size();
    for (const auto& bank : banks) {
        bank.validate(d);
        n = std::min(n, bank.size());
    }
    Matrix total = Matrix::Zero(d, d);
    for (const auto& W : weights.W) {
        require_dim("CMC weight", d, W.rows());
        total += W;
    }
    Eigen::FullPivLU<Matrix> lu(total);
    if (!lu.isInvertible()) {
        throw FusionError("CMC: sum of weight matrices is singular");
    }
    const Matrix total_inv = lu.inverse();
    std::vector<Vector> fused;
    fused.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vector acc = Vector::Zero(d);
        for (std::size_t c = 0; c < banks.size(); ++c) {
            acc.noalias() += weights.W[c] * banks[c].draws[i];
        }
        fused.emplace_back(total_inv * acc);
    }
    return WeightedSample::uniform(std::move(fused));
}

void McfConfig::validate() const {
    if (!(T > 0.0) || !std::isfinite(T)) {
        throw InvalidArgument("MCF: T must be positive");
    }
    if (max_proposals == 0 || batch == 0) {
        throw InvalidArgument("MCF: max_proposals and batch must be positive");
    }
    if (!(granularity > 0.0) || layer_cap < 1) {
        throw InvalidArgument("MCF: granularity and layer_cap must be positive");
    }
}

McfResult monte_carlo_fusion(const SubPosteriorList& sps, const McfConfig& cfg) {
    cfg.validate();
    if (sps.empty()) {
        throw InvalidArgument("MCF: no sub-posteriors");
    }
    const auto start = std::chrono::steady_clock::now();
    const auto C = static_cast<int>(sps.size());
    const int d = sps.front()->dim();
    std::vector<double> floors;
    for (const auto& sp : sps) {
        require_dim("MCF", d, sp->dim());
        const auto floor = sp->phi_lower_bound();
        if (!floor) {
            throw InvalidArgument("MCF: every sub-posterior needs a global lower bound on phi");
        }
        floors.push_back(*floor);
    }

    EstimatorConfig est;
    est.kind = EstimatorKind::UeA;
    est.granularity = cfg.granularity;
    est.layer_cap = cfg.layer_cap;
    est.kappa_cap = std::numeric_limits<long long>::max();

    McfResult out;
    std::vector<Vector> accepted;
    std::vector<SampleBank> pools(sps.size());
    std::size_t in_batch = cfg.batch;
    std::uint64_t refill = 0;
    const double y_sd = std::sqrt(cfg.T / C);

    while (out.proposals < cfg.max_proposals && (cfg.target_accepted == 0 || out.accepted < cfg.target_accepted)) {
        if (in_batch == cfg.batch) {
            for (std::size_t c = 0; c < sps.size(); ++c) {
                pools[c] = sps[c]->sample_initial(cfg.batch, mix64(cfg.seed ^ mix64((refill << 16) + c + 1)));
            }
            ++refill;
            in_batch = 0;
        }
        Rng rng = make_stream(cfg.seed, StreamTag::Baseline, out.proposals);
        Matrix x0(d, C);
        for (int c = 0; c < C; ++c) {
            x0.col(c) = pools[static_cast<std::size_t>(c)].draws[in_batch];
        }
        ++in_batch;
        ++out.proposals;

        ParticleState state(x0);
        if (std::log(uniform01(rng)) > rho0_log(state, cfg.T)) {
            continue;
        }
        Vector y(d);
        for (int k = 0; k < d; ++k) {
            y[k] = state.mean[k] + y_sd * std_normal(rng);
        }
        bool keep = true;
        for (int c = 0; c < C && keep; ++c) {
            const Segment seg{x0.col(c), y, 0.0, cfg.T};
            const RhoDraw r = rho_tilde_component(seg, *sps[static_cast<std::size_t>(c)], est, nullptr, rng);
            ++out.segments;
            out.phi_evaluations += r.phi_evaluations;
            const double log_accept = std::min(0.0, r.log_value + floors[static_cast<std::size_t>(c)] * cfg.T);
            keep = std::log(uniform01(rng)) <= log_accept;
        }
        if (keep) {
            accepted.push_back(std::move(y));
            ++out.accepted;
        }
    }

    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (accepted.empty()) {
        out.diagnostic = "no proposals accepted after " + std::to_string(out.proposals) + " attempts";
        log_message(LogLevel::Info, "MCF: " + out.diagnostic);
        return out;
    }
    out.sample = WeightedSample::uniform(std::move(accepted));
    return out;
}

} // namespace bfusion
