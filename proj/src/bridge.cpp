#include "bfusion/bridge.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace bfusion {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Image-series terms for a bridge x -> y in (lo, lo + w) over dt:
// A_k = exp(-2kw(kw + y - x)/dt), B_k = exp(-2(x - lo + kw)(y - lo + kw)/dt).
struct ImageTerms {
    double x;
    double y;
    double lo;
    double w;
    double dt;

    double a(long k) const {
        const double kw = static_cast<double>(k) * w;
        return std::exp(-2.0 * kw * (kw + y - x) / dt);
    }
    double b(long k) const {
        const double kw = static_cast<double>(k) * w;
        return std::exp(-2.0 * (x - lo + kw) * (y - lo + kw) / dt);
    }
    // Group g >= 1 of the alternating series, as a signed correction to 1.
    double group(int g) const {
        const long k = g / 2;
        if (g % 2 == 1) {
            return -(b(k) + b(-k - 1));
        }
        return a(k) + a(-k);
    }
};

bool inside(double v, double lo, double hi) { return v > lo && v < hi; }

// Eigenfunction expansion of the killed heat kernel over the free one; fast
// when the band is narrow compared with sqrt(dt), where images converge slowly.
double narrow_band_log(double x0, double x1, double lo, double w, double dt) {
    const double pi = std::numbers::pi;
    const double rate = pi * pi * dt / (2.0 * w * w);
    double sum = 0.0;
    for (int n = 1; n <= 10000; ++n) {
        const double decay = std::exp(-(static_cast<double>(n) * n - 1.0) * rate);
        sum += std::sin(n * pi * (x0 - lo) / w) * std::sin(n * pi * (x1 - lo) / w) * decay;
        if (decay < 1e-18) {
            break;
        }
    }
    if (!(sum > 0.0)) {
        return kNegInf;
    }
    const double lp = std::log(sum) - rate + std::log(2.0 / w) + (x1 - x0) * (x1 - x0) / (2.0 * dt) +
                      0.5 * std::log(2.0 * pi * dt);
    return std::min(lp, 0.0);
}

// log P for one scalar coordinate, or -inf; used on hot paths.
double band_log(double x0, double x1, double lo, double hi, double dt) {
    if (!inside(x0, lo, hi) || !inside(x1, lo, hi)) {
        return kNegInf;
    }
    if (!std::isfinite(lo) && !std::isfinite(hi)) {
        return 0.0;
    }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
        // Single barrier: reflection principle.
        const double gap0 = std::isfinite(lo) ? x0 - lo : hi - x0;
        const double gap1 = std::isfinite(lo) ? x1 - lo : hi - x1;
        return std::log1p(-std::exp(-2.0 * gap0 * gap1 / dt));
    }
    const double w = hi - lo;
    if (w * w < dt) {
        return narrow_band_log(x0, x1, lo, w, dt);
    }
    const ImageTerms terms{x0, x1, lo, w, dt};
    double correction = 0.0;
    for (int g = 1; g <= 400; ++g) {
        const double term = terms.group(g);
        correction += term;
        if (std::abs(term) < 1e-17 && g >= 2) {
            break;
        }
    }
    const double p = 1.0 + correction;
    if (!(p > 0.0)) {
        return kNegInf;
    }
    return std::log1p(correction);
}

double band_prob(double x0, double x1, double lo, double hi, double dt) {
    return std::exp(band_log(x0, x1, lo, hi, dt));
}

// P(bridge x -> y over dt stays below m + w | it stays above m), with x, y
// measured from m. Series in image terms, with the limit taken when an
// endpoint sits on m.
double below_given_above(double x, double y, double w, double dt) {
    if (x > y) {
        std::swap(x, y);
    }
    if (!(y < w) || x < 0.0) {
        return 0.0;
    }
    const double base = x > 0.0 ? -std::expm1(-2.0 * x * y / dt) : 0.0;
    double total = 1.0;
    for (long k = 1; k <= 200; ++k) {
        double term = 0.0;
        for (const long kk : {k, -k}) {
            const double kw = static_cast<double>(kk) * w;
            const double log_a = -2.0 * kw * (kw + y - x) / dt;
            if (x > 0.0) {
                const double z = -2.0 * x * (y + 2.0 * kw) / dt;
                const double diff = z > 0.0 ? std::exp(log_a) - std::exp(log_a + z) : std::exp(log_a) * -std::expm1(z);
                term += diff / base;
            } else {
                term += std::exp(log_a) * (y + 2.0 * kw) / y;
            }
        }
        total += term;
        if (std::abs(term) < 1e-17) {
            break;
        }
    }
    return std::clamp(total, 0.0, 1.0);
}

double inverse_gaussian(double mu, double lambda, Rng& rng) {
    const double nu = std_normal(rng);
    const double y = nu * nu;
    const double x = mu + mu * mu * y / (2.0 * lambda) - mu / (2.0 * lambda) * std::sqrt(4.0 * mu * lambda * y + mu * mu * y * y);
    return uniform01(rng) <= mu / (mu + x) ? x : mu * mu / x;
}

// Zero-pinned Brownian bridge on [t0, t1] at sorted interior times.
std::vector<double> pinned_bridge(double t0, double t1, const std::vector<double>& times, Rng& rng) {
    std::vector<double> out;
    out.reserve(times.size());
    double last_t = t0;
    double last_v = 0.0;
    for (double u : times) {
        const double len = t1 - last_t;
        const double mean = last_v * (t1 - u) / len;
        const double sd = std::sqrt(std::max(0.0, (u - last_t) * (t1 - u) / len));
        last_v = mean + sd * std_normal(rng);
        last_t = u;
        out.push_back(last_v);
    }
    return out;
}

// Values at sorted `times` of a bridge a -> b on [s, t] conditioned on its
// minimum lying in (m_lo, m_hi) and its maximum staying below `upper`. One
// attempt: draws the minimum and its time, fills in with Bessel-3 bridges
// and returns false on rejection of the upper constraint.
bool bridge_with_min_window(double a, double b, double s, double t, const std::vector<double>& times, double m_lo,
                            double m_hi, double upper, Rng& rng, std::vector<double>& out) {
    const double D = t - s;
    const double log_f_lo = -2.0 * (a - m_lo) * (b - m_lo) / D;
    const double log_f_hi = -2.0 * (a - m_hi) * (b - m_hi) / D;
    const double v = uniform01(rng);
    const double log_u = log_f_hi + std::log1p(-v * -std::expm1(log_f_lo - log_f_hi));
    const double K = -D * log_u / 2.0;
    const double m = std::clamp(((a + b) - std::sqrt((a - b) * (a - b) + 4.0 * K)) / 2.0, m_lo, m_hi);

    const double c1 = (a - m) * (a - m) / (2.0 * D);
    const double c2 = (b - m) * (b - m) / (2.0 * D);
    double frac = 0.0;
    if (uniform01(rng) < 1.0 / (1.0 + std::sqrt(c1 / c2))) {
        const double i1 = inverse_gaussian(std::sqrt(c1 / c2), 2.0 * c1, rng);
        frac = i1 / (1.0 + i1);
    } else {
        const double i2 = inverse_gaussian(std::sqrt(c2 / c1), 2.0 * c2, rng);
        frac = 1.0 / (1.0 + i2);
    }
    const double tau = s + D * frac;

    std::vector<double> left_t;
    std::vector<double> right_t;
    for (double u : times) {
        (u < tau ? left_t : right_t).push_back(u);
    }
    out.clear();
    out.reserve(times.size());
    // Left piece runs backwards from tau, so its bridges are reversed in time.
    std::vector<double> rev(left_t.rbegin(), left_t.rend());
    for (auto& u : rev) {
        u = tau - u;
    }
    std::array<std::vector<double>, 3> lb;
    std::array<std::vector<double>, 3> rb;
    for (int i = 0; i < 3; ++i) {
        lb[static_cast<std::size_t>(i)] = pinned_bridge(0.0, tau - s, rev, rng);
        rb[static_cast<std::size_t>(i)] = pinned_bridge(tau, t, right_t, rng);
    }
    for (std::size_t j = 0; j < left_t.size(); ++j) {
        const std::size_t r = left_t.size() - 1 - j;
        const double drift = (a - m) * rev[r] / (tau - s);
        const double e1 = drift + lb[0][r];
        out.push_back(m + std::sqrt(e1 * e1 + lb[1][r] * lb[1][r] + lb[2][r] * lb[2][r]));
    }
    for (std::size_t j = 0; j < right_t.size(); ++j) {
        const double drift = (b - m) * (right_t[j] - tau) / (t - tau);
        const double e1 = drift + rb[0][j];
        out.push_back(m + std::sqrt(e1 * e1 + rb[1][j] * rb[1][j] + rb[2][j] * rb[2][j]));
    }

    // Accept with P(max < upper | skeleton, minimum).
    const double w = upper - m;
    double accept = 1.0;
    double last_t = s;
    double last_x = a;
    bool tau_done = false;
    auto piece = [&](double u, double x) {
        accept *= below_given_above(last_x - m, x - m, w, u - last_t);
        last_t = u;
        last_x = x;
    };
    for (std::size_t j = 0; j <= times.size() && accept > 0.0; ++j) {
        const double u = j < times.size() ? times[j] : t;
        const double x = j < times.size() ? out[j] : b;
        if (!tau_done && u > tau) {
            piece(tau, m);
            tau_done = true;
        }
        piece(u, x);
    }
    return uniform01(rng) < accept;
}

// Bridge values at sorted times conditioned on staying inside (lo, hi),
// drawn point by point.
void sequential_in_band(double a, double b, double s, double t, const std::vector<double>& times, double lo,
                        double hi, Rng& rng, std::vector<double>& out) {
    out.clear();
    double last_x = a;
    double last_t = s;
    for (double u : times) {
        const double len = t - last_t;
        const double centre_w = (t - u) / len;
        const double sd = std::sqrt((u - last_t) * (t - u) / len);
        long attempts = 0;
        for (;;) {
            if (++attempts > kMaxBridgeProposals) {
                throw SimulationLimit("simulate_points_given_layer: rejection stalled in the first layer");
            }
            const double x = centre_w * last_x + (1.0 - centre_w) * b + sd * std_normal(rng);
            if (!inside(x, lo, hi)) {
                continue;
            }
            const double accept = band_prob(last_x, x, lo, hi, u - last_t) * band_prob(x, b, lo, hi, t - u);
            if (uniform01(rng) < accept) {
                last_x = x;
                last_t = u;
                out.push_back(x);
                break;
            }
        }
    }
}

} // namespace

double band_noncrossing_log_prob(double x0, double x1, double lo, double hi, double dt) {
    if (!(dt > 0.0)) {
        throw InvalidArgument("band_noncrossing_log_prob: dt must be positive");
    }
    return band_log(x0, x1, lo, hi, dt);
}

std::vector<double> band_noncrossing_partial_sums(double x0, double x1, double lo, double hi, double dt,
                                                  int max_terms) {
    if (!(dt > 0.0) || !(hi > lo)) {
        throw InvalidArgument("band_noncrossing_partial_sums: need dt > 0 and hi > lo");
    }
    const ImageTerms terms{x0, x1, lo, hi - lo, dt};
    std::vector<double> sums;
    double s = 1.0;
    for (int g = 1; g <= max_terms; ++g) {
        s += terms.group(g);
        sums.push_back(s);
    }
    return sums;
}

int Layer::max_index() const { return index.empty() ? 0 : *std::max_element(index.begin(), index.end()); }

LayerBand layer_band(double a, double b, double dt, double granularity, int level) {
    const double pad = static_cast<double>(level) * granularity * std::sqrt(dt);
    return {std::min(a, b) - pad, std::max(a, b) + pad};
}

Layer simulate_layer(const Segment& segment, double granularity, Rng& rng, int cap) {
    require_dim("simulate_layer", segment.x_start.size(), segment.x_end.size());
    const double dt = segment.duration();
    if (!(dt > 0.0)) {
        throw InvalidArgument("simulate_layer: segment must have positive duration");
    }
    if (!(granularity > 0.0)) {
        throw InvalidArgument("simulate_layer: granularity must be positive");
    }
    const auto d = segment.dim();
    Layer layer;
    layer.segment = segment;
    layer.granularity = granularity;
    layer.index.resize(static_cast<std::size_t>(d));
    layer.lo.resize(d);
    layer.hi.resize(d);
    layer.inner_lo.resize(d);
    layer.inner_hi.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        const double a = segment.x_start[k];
        const double b = segment.x_end[k];
        const double u = uniform01(rng);
        int level = 1;
        for (;; ++level) {
            if (level > cap) {
                throw SimulationLimit("simulate_layer: layer index exceeded cap " + std::to_string(cap) +
                                      " (raise layer_cap or shrink the mesh)");
            }
            const LayerBand band = layer_band(a, b, dt, granularity, level);
            if (u < band_prob(a, b, band.lo, band.hi, dt)) {
                break;
            }
        }
        const LayerBand outer = layer_band(a, b, dt, granularity, level);
        const LayerBand inner = layer_band(a, b, dt, granularity, level - 1);
        layer.index[static_cast<std::size_t>(k)] = level;
        layer.lo[k] = outer.lo;
        layer.hi[k] = outer.hi;
        layer.inner_lo[k] = inner.lo;
        layer.inner_hi[k] = inner.hi;
    }
    return layer;
}

std::vector<Vector> simulate_points_given_layer(const Layer& layer, const std::vector<double>& times, Rng& rng) {
    const Segment& seg = layer.segment;
    for (double u : times) {
        if (!(u > seg.t_start && u < seg.t_end)) {
            throw InvalidArgument("simulate_points_given_layer: time outside the open segment");
        }
    }
    std::vector<std::size_t> order(times.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return times[i] < times[j]; });

    const auto d = seg.dim();
    std::vector<Vector> out(times.size(), Vector(d));
    if (times.empty()) {
        return out;
    }
    std::vector<double> sorted_times;
    sorted_times.reserve(times.size());
    for (std::size_t idx : order) {
        sorted_times.push_back(times[idx]);
    }
    std::vector<double> values;
    for (Eigen::Index k = 0; k < d; ++k) {
        const int level = layer.index[static_cast<std::size_t>(k)];
        const double lo = layer.lo[k];
        const double hi = layer.hi[k];
        const double a = seg.x_start[k];
        const double b = seg.x_end[k];
        const double s = seg.t_start;
        const double t = seg.t_end;
        if (level <= 1) {
            sequential_in_band(a, b, s, t, sorted_times, lo, hi, rng, values);
        } else {
            // Outside the inner band but inside the outer one: either the
            // minimum dips below the inner floor, or it does not and the
            // maximum rises above the inner ceiling.
            const double ilo = layer.inner_lo[k];
            const double ihi = layer.inner_hi[k];
            const double p_outer = band_prob(a, b, lo, hi, t - s);
            const double p_floor = band_prob(a, b, ilo, hi, t - s);
            const double p_inner = band_prob(a, b, ilo, ihi, t - s);
            const double w_low = std::max(0.0, p_outer - p_floor);
            const double w_high = std::max(0.0, p_floor - p_inner);
            if (!(w_low + w_high > 0.0)) {
                throw SimulationLimit("simulate_points_given_layer: layer " + std::to_string(level) +
                                      " has zero probability");
            }
            // The branch is fixed before the rejection loop: the two
            // branches accept at different rates.
            const bool low = uniform01(rng) * (w_low + w_high) < w_low;
            long attempts = 0;
            for (;;) {
                if (++attempts > kMaxBridgeProposals) {
                    throw SimulationLimit("simulate_points_given_layer: rejection stalled at layer " +
                                          std::to_string(level));
                }
                if (low) {
                    if (bridge_with_min_window(a, b, s, t, sorted_times, lo, ilo, hi, rng, values)) {
                        break;
                    }
                } else {
                    std::vector<double> mirrored;
                    if (bridge_with_min_window(-a, -b, s, t, sorted_times, -hi, -ihi, -ilo, rng, mirrored)) {
                        values.resize(mirrored.size());
                        std::transform(mirrored.begin(), mirrored.end(), values.begin(), [](double v) { return -v; });
                        break;
                    }
                }
            }
        }
        for (std::size_t j = 0; j < order.size(); ++j) {
            out[order[j]][k] = values[j];
        }
    }
    return out;
}

Vector simulate_point_given_layer(const Layer& layer, double u, Rng& rng) {
    return simulate_points_given_layer(layer, {u}, rng).front();
}

} // namespace bfusion
