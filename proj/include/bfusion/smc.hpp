#pragma once

#include "bfusion/core.hpp"
#include "bfusion/estimator.hpp"
#include "bfusion/model.hpp"
#include "bfusion/partition.hpp"
#include "bfusion/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bfusion {

enum class ResamplingScheme { Multinomial, Systematic, Stratified, Residual };

struct SmcConfig {
    std::size_t N = 1000;
    EstimatorConfig estimator;
    /// Resample when ESS < ess_threshold * N.
    double ess_threshold = 0.5;
    ResamplingScheme scheme = ResamplingScheme::Multinomial;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    /// Tilted initialisation around this point instead of plain f_c draws.
    std::optional<Vector> tilt_center;
    /// Use the joint (dense covariance) propagator instead of the factorised one.
    bool joint_propagation = false;
    /// Report the weight-aware CESS variant instead of the raw one.
    bool weighted_cess = false;

    void validate(std::size_t components) const;
};

struct IterationRecord {
    int j = 0;
    double cess = 0.0;
    double ess = 0.0;
    bool resampled = false;
    double wall_ms = 0.0;
    /// Particles whose increment was non-finite and set to zero weight.
    std::size_t dropped = 0;
    long long kappa = 0;
    long long phi_evaluations = 0;
};

struct FusionRun {
    SmcConfig config;
    TemporalPartition partition;
    std::size_t N = 0;
    int components = 0;
    double cess0 = 0.0;
    double ess0 = 0.0;
    std::vector<IterationRecord> records;
    std::vector<Vector> samples;
    Vector weights;
    /// Unbiased estimate of log [K * integral prod f_c] via the telescoping
    /// product of average increments.
    double log_normalizer = 0.0;
    std::size_t resample_count = 0;
    double wall_ms = 0.0;
    /// Draws proposed by the tilted initialisation (0 when unused).
    std::size_t initial_proposals = 0;

    double mean_cess_fraction() const;
    long long total_phi_evaluations() const;
    long long total_segments() const;
};

/// Runs the sequential Monte Carlo fusion sampler over `partition`.
FusionRun run_fusion(const SubPosteriorList& sps, const TemporalPartition& partition, const SmcConfig& cfg);

/// (sum w^2)^{-1} for normalised weights.
double ess(const Vector& weights);

/// (sum rho)^2 / sum rho^2 computed from log increments. Throws
/// WeightCollapse (iteration -1) when every increment is zero.
double cess_from_log(const Vector& log_increments);
double cess(const Vector& increments);

/// N * (sum w rho)^2 / sum w rho^2 with normalised weights w.
double weighted_cess_from_log(const Vector& weights, const Vector& log_increments);

/// Normalises log weights in place (max-shift); returns log of the sum.
/// Throws WeightCollapse(iteration) when every weight is zero.
double normalise_log_weights(const Vector& log_w, Vector& weights, int iteration);

std::vector<std::size_t> resample_indices(const Vector& weights, ResamplingScheme scheme, Rng& rng);

ResamplingScheme parse_resampling(const std::string& name);
std::string to_string(ResamplingScheme scheme);

} // namespace bfusion
