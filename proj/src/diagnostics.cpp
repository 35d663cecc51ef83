#include "bfusion/diagnostics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace bfusion {

namespace {

using json = nlohmann::json;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double weighted_quantile(const std::vector<std::pair<double, double>>& sorted, double q) {
    double acc = 0.0;
    for (const auto& [v, w] : sorted) {
        acc += w;
        if (acc >= q) {
            return v;
        }
    }
    return sorted.back().first;
}

double trapezoid(const std::vector<double>& grid, const std::vector<double>& values) {
    double acc = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
        acc += 0.5 * (grid[i] - grid[i - 1]) * (values[i] + values[i - 1]);
    }
    return acc;
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
    }
    return out;
}

double bandwidth_for(const KdeSpec& kde, const std::vector<double>& values, const Vector& weights) {
    return kde.rule == BandwidthRule::Fixed ? kde.bandwidth : silverman_bandwidth(values, weights);
}

} // namespace

WeightedSample WeightedSample::uniform(std::vector<Vector> points) {
    WeightedSample s;
    const auto n = static_cast<Eigen::Index>(points.size());
    s.points = std::move(points);
    s.weights = Vector::Constant(n, n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
    return s;
}

WeightedSample WeightedSample::from_run(const FusionRun& run) {
    WeightedSample s;
    s.points = run.samples;
    s.weights = run.weights;
    return s;
}

std::vector<double> WeightedSample::coordinate(Eigen::Index k) const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        out.push_back(p[k]);
    }
    return out;
}

void WeightedSample::validate() const {
    if (points.empty()) {
        throw InvalidArgument("weighted sample is empty");
    }
    require_dim("WeightedSample weights", static_cast<Eigen::Index>(points.size()), weights.size());
    for (const auto& p : points) {
        require_dim("WeightedSample", dim(), p.size());
    }
    if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-9) {
        throw InvalidArgument("weighted sample: weights must be non-negative and sum to 1");
    }
}

void KdeSpec::validate() const {
    if (grid_points < 16) {
        throw InvalidArgument("KDE grid needs at least 16 points");
    }
    if (rule == BandwidthRule::Fixed && !(bandwidth > 0.0)) {
        throw InvalidArgument("KDE fixed bandwidth must be positive");
    }
}

double silverman_bandwidth(const std::vector<double>& values, const Vector& weights) {
    std::vector<std::pair<double, double>> sorted;
    sorted.reserve(values.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double w = weights[static_cast<Eigen::Index>(i)];
        sorted.emplace_back(values[i], w);
        mean += w * values[i];
    }
    double var = 0.0;
    for (const auto& [v, w] : sorted) {
        var += w * (v - mean) * (v - mean);
    }
    std::sort(sorted.begin(), sorted.end());
    const double iqr = weighted_quantile(sorted, 0.75) - weighted_quantile(sorted, 0.25);
    const double n_eff = 1.0 / weights.squaredNorm();
    double spread = std::sqrt(var);
    if (iqr > 0.0) {
        spread = std::min(spread, iqr / 1.34);
    }
    if (!(spread > 0.0)) {
        spread = std::max(1e-12, std::abs(mean) * 1e-6);
    }
    return 0.9 * spread * std::pow(n_eff, -0.2);
}

std::vector<double> kde_on_grid(const std::vector<double>& values, const Vector& weights, double bandwidth,
                                const std::vector<double>& grid) {
    const double norm = 1.0 / (bandwidth * std::sqrt(2.0 * std::numbers::pi));
    const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    const double reach = 9.0 * bandwidth;
    std::vector<std::pair<double, double>> sorted;
    sorted.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        sorted.emplace_back(values[i], weights[static_cast<Eigen::Index>(i)]);
    }
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out(grid.size(), 0.0);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double x = grid[g];
        auto it = std::lower_bound(sorted.begin(), sorted.end(), std::make_pair(x - reach, -1.0));
        double acc = 0.0;
        for (; it != sorted.end() && it->first <= x + reach; ++it) {
            const double z = x - it->first;
            acc += it->second * std::exp(-z * z * inv2h2);
        }
        out[g] = acc * norm;
    }
    return out;
}

double iad(const WeightedSample& a, const WeightedSample& b, const KdeSpec& kde) {
    a.validate();
    b.validate();
    kde.validate();
    require_dim("iad", a.dim(), b.dim());
    double total = 0.0;
    for (Eigen::Index k = 0; k < a.dim(); ++k) {
        const auto va = a.coordinate(k);
        const auto vb = b.coordinate(k);
        const double ha = bandwidth_for(kde, va, a.weights);
        const double hb = bandwidth_for(kde, vb, b.weights);
        double lo = 0.0;
        double hi = 0.0;
        if (kde.grid_range) {
            std::tie(lo, hi) = kde.grid_range->at(static_cast<std::size_t>(k));
        } else {
            const auto [amin, amax] = std::minmax_element(va.begin(), va.end());
            const auto [bmin, bmax] = std::minmax_element(vb.begin(), vb.end());
            const double pad = 3.0 * std::max(ha, hb);
            lo = std::min(*amin, *bmin) - pad;
            hi = std::max(*amax, *bmax) + pad;
        }
        const auto grid = linspace(lo, hi, kde.grid_points);
        const auto fa = kde_on_grid(va, a.weights, ha, grid);
        const auto fb = kde_on_grid(vb, b.weights, hb, grid);
        std::vector<double> diff(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            diff[i] = std::abs(fa[i] - fb[i]);
        }
        total += trapezoid(grid, diff);
    }
    return total / static_cast<double>(a.dim());
}

double iad(const WeightedSample& a, const std::vector<std::function<double(double)>>& marginals, const KdeSpec& kde) {
    a.validate();
    kde.validate();
    require_dim("iad", a.dim(), static_cast<Eigen::Index>(marginals.size()));
    double total = 0.0;
    for (Eigen::Index k = 0; k < a.dim(); ++k) {
        const auto va = a.coordinate(k);
        const double h = bandwidth_for(kde, va, a.weights);
        double lo = 0.0;
        double hi = 0.0;
        if (kde.grid_range) {
            std::tie(lo, hi) = kde.grid_range->at(static_cast<std::size_t>(k));
        } else {
            const auto [amin, amax] = std::minmax_element(va.begin(), va.end());
            lo = *amin - 3.0 * h;
            hi = *amax + 3.0 * h;
        }
        const auto grid = linspace(lo, hi, kde.grid_points);
        const auto fa = kde_on_grid(va, a.weights, h, grid);
        std::vector<double> diff(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            diff[i] = std::abs(fa[i] - marginals[static_cast<std::size_t>(k)](grid[i]));
        }
        total += trapezoid(grid, diff);
    }
    return total / static_cast<double>(a.dim());
}

Moments weighted_moments(const WeightedSample& sample) {
    sample.validate();
    Moments m;
    const auto d = sample.dim();
    m.mean = Vector::Zero(d);
    for (std::size_t i = 0; i < sample.size(); ++i) {
        m.mean += sample.weights[static_cast<Eigen::Index>(i)] * sample.points[i];
    }
    m.covariance = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const Vector c = sample.points[i] - m.mean;
        m.covariance.noalias() += sample.weights[static_cast<Eigen::Index>(i)] * c * c.transpose();
    }
    m.ess = 1.0 / sample.weights.squaredNorm();
    m.se = (m.covariance.diagonal() / m.ess).cwiseSqrt();
    return m;
}

std::string config_hash(const FusionRun& run) {
    const auto& c = run.config;
    std::ostringstream text;
    text.precision(17);
    text << "N=" << c.N << ";ess=" << c.ess_threshold << ";scheme=" << to_string(c.scheme) << ";seed=" << c.seed
         << ";kind=" << static_cast<int>(c.estimator.kind) << ";r=" << c.estimator.dispersion.value_or(-1.0)
         << ";rule=" << static_cast<int>(c.estimator.mean_rule) << ";g=" << c.estimator.granularity
         << ";draws=" << c.estimator.subsample_draws << ";joint=" << c.joint_propagation
         << ";tilt=" << c.tilt_center.has_value() << ";knots=";
    for (double t : run.partition.knots()) {
        text << t << ',';
    }
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text.str()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void export_traces(const FusionRun& run, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FusionError("cannot open " + path.string() + " for writing");
    }
    json header = {{"type", "header"},
                   {"config_hash", config_hash(run)},
                   {"N", run.N},
                   {"n", run.partition.intervals()},
                   {"T", run.partition.horizon()},
                   {"seed", run.config.seed},
                   {"cess0", run.cess0}};
    out << header.dump() << '\n';
    const double n = static_cast<double>(run.N);
    for (const auto& r : run.records) {
        json line = {{"j", r.j},
                     {"cess", r.cess},
                     {"cess_over_N", r.cess / n},
                     {"ess", r.ess},
                     {"resampled", r.resampled},
                     {"wall_ms", r.wall_ms}};
        out << line.dump() << '\n';
    }
    if (!out) {
        throw FusionError("write failed for " + path.string());
    }
}

TraceFile read_traces(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FusionError("cannot open " + path.string());
    }
    TraceFile trace;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const json obj = json::parse(line);
        if (first) {
            if (obj.value("type", "") != "header") {
                throw FusionError(path.string() + ": missing header record");
            }
            trace.config_hash = obj.at("config_hash").get<std::string>();
            trace.N = obj.at("N").get<std::size_t>();
            first = false;
            continue;
        }
        IterationRecord r;
        r.j = obj.at("j").get<int>();
        r.cess = obj.at("cess").get<double>();
        r.ess = obj.at("ess").get<double>();
        r.resampled = obj.at("resampled").get<bool>();
        r.wall_ms = obj.at("wall_ms").get<double>();
        trace.records.push_back(r);
    }
    return trace;
}

void write_weighted_csv(const std::filesystem::path& path, const WeightedSample& sample) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FusionError("cannot open " + path.string() + " for writing");
    }
    out.precision(17);
    out << 'w';
    for (Eigen::Index k = 0; k < sample.dim(); ++k) {
        out << ",x" << (k + 1);
    }
    out << '\n';
    for (std::size_t i = 0; i < sample.size(); ++i) {
        out << sample.weights[static_cast<Eigen::Index>(i)];
        for (Eigen::Index k = 0; k < sample.dim(); ++k) {
            out << ',' << sample.points[i][k];
        }
        out << '\n';
    }
    if (!out) {
        throw FusionError("write failed for " + path.string());
    }
}

WeightedSample read_weighted_csv(const std::filesystem::path& path) {
    const SampleBank rows = read_bank_csv(path);
    WeightedSample s;
    s.weights.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Vector& r = rows.draws[i];
        if (r.size() < 2) {
            throw FusionError(path.string() + ": expected columns w,x1,...");
        }
        s.weights[static_cast<Eigen::Index>(i)] = r[0];
        s.points.emplace_back(r.tail(r.size() - 1));
    }
    return s;
}

double weighted_ks_normal(const std::vector<double>& values, const Vector& weights, double mean, double sd) {
    std::vector<std::pair<double, double>> sorted;
    sorted.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        sorted.emplace_back(values[i], weights[static_cast<Eigen::Index>(i)]);
    }
    std::sort(sorted.begin(), sorted.end());
    const double total = weights.sum();
    double acc = 0.0;
    double stat = 0.0;
    for (const auto& [v, w] : sorted) {
        const double f = normal_cdf((v - mean) / sd);
        stat = std::max(stat, std::abs(f - acc / total));
        acc += w;
        stat = std::max(stat, std::abs(f - acc / total));
    }
    return stat;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) {
        throw InvalidArgument("ks_two_sample: empty sample");
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0;
    std::size_t j = 0;
    double stat = 0.0;
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) {
            ++i;
        }
        while (j < b.size() && b[j] <= x) {
            ++j;
        }
        stat = std::max(stat, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return stat;
}

double kolmogorov_pvalue(double statistic, double n) {
    const double rn = std::sqrt(n);
    const double lambda = (rn + 0.12 + 0.11 / rn) * statistic;
    if (lambda < 1e-3) {
        return 1.0;
    }
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-16) {
            break;
        }
    }
    return std::clamp(sum, 0.0, 1.0);
}

} // namespace bfusion
