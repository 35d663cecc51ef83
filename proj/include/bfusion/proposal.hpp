#pragma once

#include "bfusion/core.hpp"
#include "bfusion/model.hpp"
#include "bfusion/rng.hpp"

#include <vector>

namespace bfusion {

/// One particle: C trajectory positions (columns of a d x C matrix), their
/// average and the log of its unnormalised weight.
struct ParticleState {
    Matrix positions;
    Vector mean;
    double log_weight = 0.0;
    int iteration = 0;

    ParticleState() = default;
    explicit ParticleState(Matrix pos, int iter = 0);

    int components() const { return static_cast<int>(positions.cols()); }
    int dim() const { return static_cast<int>(positions.rows()); }
    void refresh_mean() { mean = positions.rowwise().mean(); }
};

/// Gaussian law of the C coupled trajectories at time t given time s:
/// component means M_c = mean_self * X_s^c + mean_bar * Xbar_s and
/// covariance Sigma (x) I_d with the given diagonal and off-diagonal.
struct TransitionSpec {
    double s = 0.0;
    double t = 0.0;
    double T = 1.0;
    int C = 1;
    double mean_self = 1.0;
    double mean_bar = 0.0;
    double cov_diag = 0.0;
    double cov_offdiag = 0.0;
    /// Coefficients of the factorised form: X^c = M^c + shared_sd xi + own_sd eta_c.
    double shared_sd = 0.0;
    double own_sd = 0.0;

    /// Throws unless 0 <= s < t <= T and C >= 1.
    static TransitionSpec make(double s, double t, double T, int C);

    bool reaches_horizon() const { return t >= T; }
    Matrix component_means(const ParticleState& state) const;
    /// C x C matrix Sigma.
    Matrix covariance() const;
};

/// log rho_0 = -sum_c |X^c - Xbar|^2 / (2T).
double rho0_log(const ParticleState& state, double T);

/// Draws x from f_c tilted by exp{-|x - theta|^2/(2T)} by rejection from
/// uniform picks of `pool` (draws of f_c). Tracks proposal counts so a run
/// can be aborted when the tilt is far too sharp.
class TiltedInitialSampler {
public:
    TiltedInitialSampler(std::vector<SampleBank> pools, Vector theta, double T);

    /// Particle with all C positions drawn, weight log varrho_0.
    ParticleState draw(Rng& rng);
    std::size_t proposals() const { return proposals_; }
    std::size_t accepted() const { return accepted_; }

    /// log varrho_0 = C |Xbar - theta|^2 / (2T).
    static double log_weight(const ParticleState& state, const Vector& theta, double T);

    static constexpr std::size_t kMinProposals = 1'000'000;
    static constexpr double kMinAcceptance = 1e-4;

private:
    std::vector<SampleBank> pools_;
    Vector theta_;
    double T_;
    std::size_t proposals_ = 0;
    std::size_t accepted_ = 0;
};

/// Exact draw from N(M, Sigma (x) I) via an eigen-factor of Sigma.
ParticleState propagate_joint(const ParticleState& state, const TransitionSpec& spec, Rng& rng);

/// Same law as propagate_joint using one shared d-vector xi and C private
/// eta_c. At the horizon every component receives the same point.
ParticleState propagate_factorized(const ParticleState& state, const TransitionSpec& spec, Rng& rng);

/// Brownian bridge marginal at u in (s, t) between x_s and x_t.
Vector bridge_point(const Vector& x_s, const Vector& x_t, double s, double t, double u, Rng& rng);

} // namespace bfusion
