#pragma once

#include "bfusion/core.hpp"
#include "bfusion/smc.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace bfusion {

/// Points with normalised weights.
struct WeightedSample {
    std::vector<Vector> points;
    Vector weights;

    static WeightedSample uniform(std::vector<Vector> points);
    static WeightedSample from_run(const FusionRun& run);

    std::size_t size() const { return points.size(); }
    Eigen::Index dim() const { return points.empty() ? 0 : points.front().size(); }
    /// Values of coordinate k.
    std::vector<double> coordinate(Eigen::Index k) const;
    /// Throws unless non-empty, dimensions agree and weights are a
    /// non-negative vector summing to 1 (to 1e-9).
    void validate() const;
};

enum class BandwidthRule { Silverman, Fixed };

struct KdeSpec {
    BandwidthRule rule = BandwidthRule::Silverman;
    double bandwidth = 0.0; ///< used by the fixed rule
    int grid_points = 512;
    /// Per-dimension grid range; defaults to the data range +- 3 bandwidths.
    std::optional<std::vector<std::pair<double, double>>> grid_range;

    void validate() const;
};

/// Weighted Silverman bandwidth 0.9 min(sd, IQR/1.34) n_eff^{-1/5}.
double silverman_bandwidth(const std::vector<double>& values, const Vector& weights);

/// Gaussian-kernel density estimate evaluated on `grid`.
std::vector<double> kde_on_grid(const std::vector<double>& values, const Vector& weights, double bandwidth,
                                const std::vector<double>& grid);

/// Integrated absolute distance between marginal KDEs, averaged over
/// dimensions; in [0, 2].
double iad(const WeightedSample& a, const WeightedSample& b, const KdeSpec& kde = {});

/// Same, against known marginal densities of the reference.
double iad(const WeightedSample& a, const std::vector<std::function<double(double)>>& marginals,
           const KdeSpec& kde = {});

struct Moments {
    Vector mean;
    Matrix covariance;
    /// Standard error of each mean coordinate, using the ESS as sample size.
    Vector se;
    double ess = 0.0;
};

Moments weighted_moments(const WeightedSample& sample);

/// One JSON line per iteration after a header line carrying a config hash.
void export_traces(const FusionRun& run, const std::filesystem::path& path);

struct TraceFile {
    std::string config_hash;
    std::size_t N = 0;
    std::vector<IterationRecord> records;
};
TraceFile read_traces(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical config text of a run, as 16 hex digits.
std::string config_hash(const FusionRun& run);

/// CSV with header `w,x1,...,xd`.
void write_weighted_csv(const std::filesystem::path& path, const WeightedSample& sample);
WeightedSample read_weighted_csv(const std::filesystem::path& path);

/// sup |F_w - Phi((x - mean)/sd)| for a weighted sample.
double weighted_ks_normal(const std::vector<double>& values, const Vector& weights, double mean, double sd);

/// Two-sample Kolmogorov-Smirnov statistic (unweighted).
double ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Asymptotic p-value of a KS statistic with effective sample size n.
double kolmogorov_pvalue(double statistic, double n);

} // namespace bfusion
