#include "bfusion/proposal.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace bfusion {

ParticleState::ParticleState(Matrix pos, int iter) : positions(std::move(pos)), iteration(iter) { refresh_mean(); }

TransitionSpec TransitionSpec::make(double s, double t, double T, int C) {
    if (C < 1) {
        throw InvalidArgument("TransitionSpec: C must be at least 1");
    }
    if (!(T > 0.0) || !(s >= 0.0) || !(t > s) || !(t <= T)) {
        throw InvalidArgument("TransitionSpec: need 0 <= s < t <= T (s=" + std::to_string(s) +
                              ", t=" + std::to_string(t) + ", T=" + std::to_string(T) + ")");
    }
    TransitionSpec spec;
    spec.s = s;
    spec.t = t;
    spec.T = T;
    spec.C = C;
    const double rest = T - s;
    const double dt = t - s;
    spec.mean_self = (T - t) / rest;
    spec.mean_bar = dt / rest;
    const double shared = dt * dt / (static_cast<double>(C) * rest);
    const double own = (T - t) * dt / rest;
    spec.cov_offdiag = shared;
    spec.cov_diag = own + shared;
    spec.shared_sd = std::sqrt(shared);
    spec.own_sd = std::sqrt(own);
    return spec;
}

Matrix TransitionSpec::component_means(const ParticleState& state) const {
    return (mean_self * state.positions).colwise() + mean_bar * state.mean;
}

Matrix TransitionSpec::covariance() const {
    Matrix sigma = Matrix::Constant(C, C, cov_offdiag);
    sigma.diagonal().setConstant(cov_diag);
    return sigma;
}

double rho0_log(const ParticleState& state, double T) {
    if (!(T > 0.0)) {
        throw InvalidArgument("rho0_log: T must be positive");
    }
    return -(state.positions.colwise() - state.mean).squaredNorm() / (2.0 * T);
}

TiltedInitialSampler::TiltedInitialSampler(std::vector<SampleBank> pools, Vector theta, double T)
    : pools_(std::move(pools)), theta_(std::move(theta)), T_(T) {
    if (!(T_ > 0.0)) {
        throw InvalidArgument("TiltedInitialSampler: T must be positive");
    }
    if (pools_.empty()) {
        throw InvalidArgument("TiltedInitialSampler: no pools");
    }
    for (const auto& pool : pools_) {
        pool.validate(theta_.size());
    }
}

double TiltedInitialSampler::log_weight(const ParticleState& state, const Vector& theta, double T) {
    return static_cast<double>(state.components()) * (state.mean - theta).squaredNorm() / (2.0 * T);
}

ParticleState TiltedInitialSampler::draw(Rng& rng) {
    const auto C = static_cast<Eigen::Index>(pools_.size());
    Matrix pos(theta_.size(), C);
    for (Eigen::Index c = 0; c < C; ++c) {
        const auto& pool = pools_[static_cast<std::size_t>(c)].draws;
        for (;;) {
            ++proposals_;
            const auto k = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size())),
                                    pool.size() - 1);
            const Vector& x = pool[k];
            if (std::log(uniform01(rng)) < -(x - theta_).squaredNorm() / (2.0 * T_)) {
                ++accepted_;
                pos.col(c) = x;
                break;
            }
            if (proposals_ >= kMinProposals &&
                static_cast<double>(accepted_) < kMinAcceptance * static_cast<double>(proposals_)) {
                throw SimulationLimit("tilted initialisation: acceptance " +
                                      std::to_string(static_cast<double>(accepted_) / proposals_) + " after " +
                                      std::to_string(proposals_) +
                                      " proposals; T is too small for the spread around theta");
            }
        }
    }
    ParticleState state(std::move(pos));
    state.log_weight = log_weight(state, theta_, T_);
    return state;
}

ParticleState propagate_joint(const ParticleState& state, const TransitionSpec& spec, Rng& rng) {
    require_dim("propagate_joint", spec.C, state.components());
    const Matrix means = spec.component_means(state);
    const auto d = state.positions.rows();
    ParticleState next;
    next.iteration = state.iteration + 1;
    next.log_weight = state.log_weight;
    if (spec.reaches_horizon()) {
        Vector y(d);
        const double sd = std::sqrt(spec.cov_diag);
        for (Eigen::Index k = 0; k < d; ++k) {
            y[k] = means(k, 0) + sd * std_normal(rng);
        }
        next.positions = y.replicate(1, spec.C);
        next.refresh_mean();
        return next;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(spec.covariance());
    if (eig.info() != Eigen::Success) {
        throw FusionError("propagate_joint: covariance factorisation failed");
    }
    const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    const Matrix factor = eig.eigenvectors() * root.asDiagonal();
    Matrix z(spec.C, d);
    for (Eigen::Index c = 0; c < z.rows(); ++c) {
        for (Eigen::Index k = 0; k < d; ++k) {
            z(c, k) = std_normal(rng);
        }
    }
    next.positions = means + (factor * z).transpose();
    next.refresh_mean();
    return next;
}

ParticleState propagate_factorized(const ParticleState& state, const TransitionSpec& spec, Rng& rng) {
    require_dim("propagate_factorized", spec.C, state.components());
    const auto d = state.positions.rows();
    ParticleState next;
    next.iteration = state.iteration + 1;
    next.log_weight = state.log_weight;
    Vector xi(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        xi[k] = std_normal(rng);
    }
    if (spec.reaches_horizon()) {
        const Vector y = state.mean + spec.shared_sd * xi;
        next.positions = y.replicate(1, spec.C);
        next.mean = y;
        return next;
    }
    next.positions = spec.component_means(state);
    next.positions.colwise() += spec.shared_sd * xi;
    for (Eigen::Index c = 0; c < spec.C; ++c) {
        for (Eigen::Index k = 0; k < d; ++k) {
            next.positions(k, c) += spec.own_sd * std_normal(rng);
        }
    }
    next.refresh_mean();
    return next;
}

Vector bridge_point(const Vector& x_s, const Vector& x_t, double s, double t, double u, Rng& rng) {
    require_dim("bridge_point", x_s.size(), x_t.size());
    if (!(s < u && u < t)) {
        throw InvalidArgument("bridge_point: u must lie strictly inside (s, t)");
    }
    const double len = t - s;
    const Vector centre = ((t - u) * x_s + (u - s) * x_t) / len;
    const double sd = std::sqrt((u - s) * (t - u) / len);
    Vector out(centre.size());
    for (Eigen::Index k = 0; k < out.size(); ++k) {
        out[k] = centre[k] + sd * std_normal(rng);
    }
    return out;
}

} // namespace bfusion
