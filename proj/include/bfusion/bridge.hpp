#pragma once

#include "bfusion/core.hpp"
#include "bfusion/rng.hpp"

#include <vector>

namespace bfusion {

/// log P(scalar Brownian bridge x0 -> x1 over dt stays inside (lo, hi)).
/// Returns -inf when an endpoint is not strictly inside the band.
double band_noncrossing_log_prob(double x0, double x1, double lo, double hi, double dt);

/// Successive partial sums S_1, S_2, ... of the image series for the same
/// probability; odd and even sums bracket the limit once the terms decay.
std::vector<double> band_noncrossing_partial_sums(double x0, double x1, double lo, double hi, double dt,
                                                  int max_terms = 64);

/// A Brownian bridge segment in R^d.
struct Segment {
    Vector x_start;
    Vector x_end;
    double t_start = 0.0;
    double t_end = 1.0;

    double duration() const { return t_end - t_start; }
    Eigen::Index dim() const { return x_start.size(); }
};

/// Per-coordinate layer of a bridge segment. Coordinate k's path stays in
/// band [lo_k, hi_k] and leaves the next narrower band [inner_lo_k,
/// inner_hi_k] (empty for index 1).
struct Layer {
    Segment segment;
    std::vector<int> index;
    Vector lo;
    Vector hi;
    Vector inner_lo;
    Vector inner_hi;
    double granularity = 1.0;

    Box box() const { return {lo, hi}; }
    int max_index() const;
};

struct LayerBand {
    double lo;
    double hi;
};

/// Band number `level` (>= 1) for endpoints a, b: [min - level g sqrt(dt), max + level g sqrt(dt)].
LayerBand layer_band(double a, double b, double dt, double granularity, int level);

/// Draws each coordinate's layer index by inversion of the nested band
/// probabilities. Throws SimulationLimit when an index would exceed `cap`.
Layer simulate_layer(const Segment& segment, double granularity, Rng& rng, int cap = 50);

/// Draws the path at the given times (strictly inside the segment, any
/// order) conditional on the layer event, sequentially in time order.
/// Returned points are in the order of `times`.
std::vector<Vector> simulate_points_given_layer(const Layer& layer, const std::vector<double>& times, Rng& rng);

Vector simulate_point_given_layer(const Layer& layer, double u, Rng& rng);

/// Proposals allowed per conditional point before giving up.
inline constexpr long kMaxBridgeProposals = 100'000;

} // namespace bfusion
