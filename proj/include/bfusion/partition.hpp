#pragma once

#include "bfusion/core.hpp"

#include <vector>

namespace bfusion {

struct SampleBank;

/// Knots 0 = t_0 < t_1 < ... < t_n = T.
class TemporalPartition {
public:
    TemporalPartition() = default;
    /// Throws unless knots start at 0 and are strictly increasing.
    explicit TemporalPartition(std::vector<double> knots);

    static TemporalPartition regular(double horizon, int intervals);

    double horizon() const { return knots_.back(); }
    int intervals() const { return static_cast<int>(knots_.size()) - 1; }
    const std::vector<double>& knots() const { return knots_; }
    double knot(int j) const { return knots_.at(static_cast<std::size_t>(j)); }
    /// Delta_j = t_j - t_{j-1}, j = 1..n.
    double increment(int j) const { return knot(j) - knot(j - 1); }
    std::vector<double> increments() const;
    bool is_regular() const;

private:
    std::vector<double> knots_{0.0, 1.0};
};

enum class Regime { SH, SSH };

/// Sub-posterior heterogeneity regime and the tuning constants used by the
/// T and mesh guidance.
struct HeterogeneitySpec {
    Regime regime = Regime::SH;
    double constant = 1.0; ///< lambda for SH, gamma for SSH
    int C = 1;
    double m = 1.0;
    double b = 1.0;
    int d = 1;
    double k1 = 2.0;
    double k2 = 1.0;
    double k3 = 1.0;
    double k4 = 1.0;
    /// Proportionality constant of the mesh-size orders.
    double c0 = 1.0;

    void validate() const;
};

/// C^{-1} sum_c |mean_c - mean_bar|^2 over bank means.
double estimate_heterogeneity(const std::vector<SampleBank>& banks);
double heterogeneity_of_means(const std::vector<Vector>& means);

/// Minimal horizon: b C^{3/2} k1 / m, and for SSH also at least k2 C^{-3/2}.
double recommend_T(const HeterogeneitySpec& spec);

/// Raw mesh size before rounding: c0 b C^{2/3}/m (SH) or c0 b C/m^{4/3} (SSH).
double recommended_delta(const HeterogeneitySpec& spec);

/// Regular partition of [0,T] with n = ceil(T/Delta) and Delta = T/n.
TemporalPartition recommend_mesh(const HeterogeneitySpec& spec, double T);

struct CessFloor {
    double sh;
    double ssh;
};

/// Limiting lower bounds on CESS_0/N: exp{-lambda/k1^2 - d/(2k1^2)} and
/// exp{-gamma b/(k1 k2) - d/(2k1^2)}. Each uses `constant` as its regime
/// constant.
CessFloor cess_floor(const HeterogeneitySpec& spec);

/// Large-N limit of CESS_0/N for the isotropic Gaussian family with mean
/// spread `heterogeneity`.
double cess0_gaussian_limit(double heterogeneity, double T, int C, double m, double b, int d);

} // namespace bfusion
