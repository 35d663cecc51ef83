#pragma once

#include "bfusion/core.hpp"
#include "bfusion/diagnostics.hpp"
#include "bfusion/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bfusion {

/// Consensus Monte Carlo weight matrices, one d x d matrix per bank.
struct CmcWeights {
    std::vector<Matrix> W;

    /// Inverse sample covariance of each bank.
    static CmcWeights from_banks(const std::vector<SampleBank>& banks);
};

/// Fused draw i = (sum W_c)^{-1} sum W_c x_{c,i}, uniform weights. Banks of
/// unequal size are truncated to the shortest.
WeightedSample consensus_monte_carlo(const std::vector<SampleBank>& banks);
WeightedSample consensus_monte_carlo(const std::vector<SampleBank>& banks, const CmcWeights& weights);

struct McfConfig {
    double T = 1.0;
    std::size_t max_proposals = 1'000'000;
    /// Stop once this many draws are accepted (0: run all proposals).
    std::size_t target_accepted = 0;
    std::uint64_t seed = 1;
    /// Initial draws requested from each sub-posterior per refill.
    std::size_t batch = 10'000;
    double granularity = 1.0;
    int layer_cap = 50;

    void validate() const;
};

struct McfResult {
    WeightedSample sample;
    std::size_t proposals = 0;
    std::size_t accepted = 0;
    /// Bridge segments simulated across all proposals.
    long long segments = 0;
    long long phi_evaluations = 0;
    double wall_ms = 0.0;
    /// Set when nothing was accepted.
    std::string diagnostic;

    double acceptance_rate() const {
        return proposals == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposals);
    }
};

/// Rejection sampler over the single interval [0, T]: x_0^c from f_c,
/// y ~ N(xbar, T/C), accept with probability rho_0 times a Poisson
/// estimate of prod_c exp{-int (phi_c - Phi_c)}.
McfResult monte_carlo_fusion(const SubPosteriorList& sps, const McfConfig& cfg);

} // namespace bfusion
