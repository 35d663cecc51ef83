#include "bfusion/partition.hpp"

#include "bfusion/model.hpp"

#include <algorithm>
#include <cmath>

namespace bfusion {

TemporalPartition::TemporalPartition(std::vector<double> knots) : knots_(std::move(knots)) {
    if (knots_.size() < 2) {
        throw InvalidArgument("TemporalPartition: need at least two knots");
    }
    if (knots_.front() != 0.0) {
        throw InvalidArgument("TemporalPartition: first knot must be 0");
    }
    for (std::size_t j = 1; j < knots_.size(); ++j) {
        if (!(knots_[j] > knots_[j - 1]) || !std::isfinite(knots_[j])) {
            throw InvalidArgument("TemporalPartition: knots must be finite and strictly increasing");
        }
    }
}

TemporalPartition TemporalPartition::regular(double horizon, int intervals) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw InvalidArgument("TemporalPartition::regular: horizon must be positive");
    }
    if (intervals < 1) {
        throw InvalidArgument("TemporalPartition::regular: need at least one interval");
    }
    std::vector<double> knots(static_cast<std::size_t>(intervals) + 1);
    const double delta = horizon / intervals;
    for (int j = 0; j < intervals; ++j) {
        knots[static_cast<std::size_t>(j)] = delta * j;
    }
    knots.back() = horizon;
    return TemporalPartition(std::move(knots));
}

std::vector<double> TemporalPartition::increments() const {
    std::vector<double> out;
    out.reserve(knots_.size() - 1);
    for (std::size_t j = 1; j < knots_.size(); ++j) {
        out.push_back(knots_[j] - knots_[j - 1]);
    }
    return out;
}

bool TemporalPartition::is_regular() const {
    const auto inc = increments();
    const auto [lo, hi] = std::minmax_element(inc.begin(), inc.end());
    return *hi - *lo < 1e-12 * horizon();
}

void HeterogeneitySpec::validate() const {
    if (C < 1) {
        throw InvalidArgument("heterogeneity: C must be at least 1");
    }
    if (d < 1) {
        throw InvalidArgument("heterogeneity: d must be at least 1");
    }
    const std::pair<const char*, double> positive[] = {{"constant", constant}, {"m", m},   {"b", b},
                                                       {"k1", k1},             {"k2", k2}, {"k3", k3},
                                                       {"k4", k4},             {"c0", c0}};
    for (const auto& [name, value] : positive) {
        if (!(value > 0.0) || !std::isfinite(value)) {
            throw InvalidArgument(std::string("heterogeneity: ") + name + " must be positive and finite");
        }
    }
}

double heterogeneity_of_means(const std::vector<Vector>& means) {
    if (means.empty()) {
        throw InvalidArgument("heterogeneity: no means given");
    }
    const auto d = means.front().size();
    Vector avg = Vector::Zero(d);
    for (const auto& a : means) {
        require_dim("heterogeneity", d, a.size());
        avg += a;
    }
    avg /= static_cast<double>(means.size());
    double acc = 0.0;
    for (const auto& a : means) {
        acc += (a - avg).squaredNorm();
    }
    return acc / static_cast<double>(means.size());
}

double estimate_heterogeneity(const std::vector<SampleBank>& banks) {
    std::vector<Vector> means;
    means.reserve(banks.size());
    for (const auto& bank : banks) {
        if (bank.empty()) {
            throw InvalidArgument("estimate_heterogeneity: empty bank '" + bank.provenance + "'");
        }
        means.push_back(bank.mean());
    }
    return heterogeneity_of_means(means);
}

double recommend_T(const HeterogeneitySpec& spec) {
    spec.validate();
    const double C = static_cast<double>(spec.C);
    const double sh = spec.b * std::pow(C, 1.5) * spec.k1 / spec.m;
    if (spec.regime == Regime::SH) {
        return sh;
    }
    return std::max(sh, spec.k2 * std::pow(C, -1.5));
}

double recommended_delta(const HeterogeneitySpec& spec) {
    spec.validate();
    const double C = static_cast<double>(spec.C);
    if (spec.regime == Regime::SH) {
        return spec.c0 * spec.b * std::pow(C, 2.0 / 3.0) / spec.m;
    }
    return spec.c0 * spec.b * C / std::pow(spec.m, 4.0 / 3.0);
}

TemporalPartition recommend_mesh(const HeterogeneitySpec& spec, double T) {
    if (!(T > 0.0) || !std::isfinite(T)) {
        throw InvalidArgument("recommend_mesh: T must be positive");
    }
    const double delta = recommended_delta(spec);
    const double raw = std::ceil(T / delta * (1.0 - 1e-12));
    const int n = static_cast<int>(std::max(1.0, raw));
    return TemporalPartition::regular(T, n);
}

CessFloor cess_floor(const HeterogeneitySpec& spec) {
    spec.validate();
    const double dim_term = static_cast<double>(spec.d) / (2.0 * spec.k1 * spec.k1);
    return {std::exp(-spec.constant / (spec.k1 * spec.k1) - dim_term),
            std::exp(-spec.constant * spec.b / (spec.k1 * spec.k2) - dim_term)};
}

double cess0_gaussian_limit(double heterogeneity, double T, int C, double m, double b, int d) {
    if (!(T > 0.0) || C < 1 || !(m > 0.0) || !(b > 0.0) || d < 1) {
        throw InvalidArgument("cess0_gaussian_limit: invalid arguments");
    }
    const double v = b / m;
    const double tc = T / static_cast<double>(C);
    const double spread = -(heterogeneity * v) / ((tc + v) * (tc + 2.0 * v));
    const double r = static_cast<double>(C) * b / (T * m);
    const double shape = -0.5 * static_cast<double>((C - 1) * d) * std::log1p(r * r / (1.0 + 2.0 * r));
    return std::exp(spread + shape);
}

} // namespace bfusion
