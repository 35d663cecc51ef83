#pragma once

#include "bfusion/bridge.hpp"
#include "bfusion/core.hpp"
#include "bfusion/model.hpp"
#include "bfusion/rng.hpp"

#include <optional>
#include <vector>

namespace bfusion {

enum class EstimatorKind { UeA, UeB, Subsampled };
enum class MeanRule { ExactIntegral, EndpointAverage };

/// Gradients and Laplacians of every factor of a logistic sub-posterior at
/// two anchors: one near the sub-posterior mode and one near the fused mode.
class ControlVariates {
public:
    struct Anchor {
        Vector point;
        Vector grad;
        double lap = 0.0;
        Matrix term_grads; ///< d x (m_c + 1), column 0 is the prior
        Vector term_laps;
        /// (|grad|^2 + lap)/2 at the anchor.
        double phi = 0.0;
    };

    ControlVariates() = default;
    ControlVariates(const LogisticSubPosterior& sp, const Vector& local_anchor, const Vector& global_anchor);

    const Anchor& local() const { return local_; }
    const Anchor& global() const { return global_; }
    /// The anchor closer to x (local on ties).
    const Anchor& nearest(const Vector& x) const;

private:
    Anchor local_;
    Anchor global_;
};

struct EstimatorConfig {
    EstimatorKind kind = EstimatorKind::UeB;
    /// NB dispersion r_c; when unset each component uses max(its NB mean, 10).
    std::optional<double> dispersion;
    MeanRule mean_rule = MeanRule::ExactIntegral;
    int subsample_draws = 1;
    /// One entry per sub-posterior, required by the subsampled kind.
    std::vector<ControlVariates> control_variates;
    double granularity = 1.0;
    int layer_cap = 50;
    long long kappa_cap = 10'000;

    void validate(std::size_t components) const;
};

/// log rho~_j with counters used for cost accounting.
struct RhoDraw {
    double log_value = 0.0;
    long long kappa = 0;
    long long phi_evaluations = 0;
    int max_layer = 0;
};

/// One unbiased draw of rho~ for the move from columns of `from` to columns
/// of `to` (d x C) over [s, t].
RhoDraw rho_tilde(const Matrix& from, const Matrix& to, double s, double t, const SubPosteriorList& sps,
                  const EstimatorConfig& cfg, Rng& rng);

/// Single-component factor of rho~ (its log), using the given layer.
RhoDraw rho_tilde_component(const Segment& segment, const SubPosterior& sp, const EstimatorConfig& cfg,
                            const ControlVariates* cv, Rng& rng);

/// m_c = Delta U - integral of phi along the straight chord, floored at 1e-12.
double ue_b_mean(const Segment& segment, const SubPosterior& sp, double upper, MeanRule rule = MeanRule::ExactIntegral);

/// Integral of phi along the chord from 16-point Gauss-Legendre.
double chord_phi_integral(const Segment& segment, const SubPosterior& sp);

/// [Delta * integral (U - phi)^2]^{1/2} along the chord, by Gauss-Legendre
/// with `quad_points` nodes (diagnostic only).
double optimal_intensity_reference(const Segment& segment, const SubPosterior& sp, double upper, int quad_points = 16);

/// Average of `draws` control-variate estimates of phi at x.
double subsampled_phi(const LogisticSubPosterior& sp, const ControlVariates& cv, const Vector& x, int draws, Rng& rng);

/// Sound range of the control-variate estimator over a box and every (I, J).
PhiBounds subsampled_phi_bounds(const LogisticSubPosterior& sp, const ControlVariates& cv, const Box& rect);

/// Nodes and weights of the n-point Gauss-Legendre rule on [0, 1].
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};
const QuadratureRule& gauss_legendre_unit(int n);

} // namespace bfusion
