#include "bfusion/model.hpp"

#include "bfusion/logging.hpp"
#include "bfusion/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace bfusion {

namespace {

double sigmoid(double eta) {
    if (eta >= 0.0) {
        return 1.0 / (1.0 + std::exp(-eta));
    }
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

double softplus(double eta) {
    return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

struct Interval {
    double lo;
    double hi;
};

Interval scale(Interval a, double s) {
    return s >= 0.0 ? Interval{a.lo * s, a.hi * s} : Interval{a.hi * s, a.lo * s};
}

Interval square(Interval a) {
    if (a.lo >= 0.0) {
        return {a.lo * a.lo, a.hi * a.hi};
    }
    if (a.hi <= 0.0) {
        return {a.hi * a.hi, a.lo * a.lo};
    }
    return {0.0, std::max(a.lo * a.lo, a.hi * a.hi)};
}

void require_finite_box(const char* where, const Box& rect, int d) {
    require_dim(where, d, rect.lo.size());
    require_dim(where, d, rect.hi.size());
    if (!rect.lo.allFinite() || !rect.hi.allFinite()) {
        throw InvalidArgument(std::string(where) + ": rectangle must be bounded");
    }
    if ((rect.lo.array() > rect.hi.array()).any()) {
        throw InvalidArgument(std::string(where) + ": rectangle has lo > hi");
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        out.push_back(cell);
    }
    return out;
}

} // namespace

Vector SampleBank::mean() const {
    if (draws.empty()) {
        throw InvalidArgument("SampleBank::mean: empty bank");
    }
    Vector acc = Vector::Zero(draws.front().size());
    for (const auto& x : draws) {
        acc += x;
    }
    return acc / static_cast<double>(draws.size());
}

Matrix SampleBank::covariance() const {
    if (draws.size() < 2) {
        throw InvalidArgument("SampleBank::covariance: need at least two draws");
    }
    const Vector mu = mean();
    Matrix acc = Matrix::Zero(mu.size(), mu.size());
    for (const auto& x : draws) {
        const Vector c = x - mu;
        acc.noalias() += c * c.transpose();
    }
    return acc / static_cast<double>(draws.size() - 1);
}

void SampleBank::validate(Eigen::Index d) const {
    if (draws.empty()) {
        throw InvalidArgument("sample bank '" + provenance + "' is empty");
    }
    for (const auto& x : draws) {
        require_dim("SampleBank", d, x.size());
    }
}

double SubPosterior::phi(const Vector& x) const {
    check_point("phi", x);
    return 0.5 * (grad_log_density(x).squaredNorm() + laplacian_log_density(x));
}

SampleBank SubPosterior::sample_initial(std::size_t count, std::uint64_t seed) const {
    if (count == 0) {
        throw InvalidArgument("sample_initial: count must be positive");
    }
    if (!bank_) {
        return draw_fresh(count, seed);
    }
    if (count == bank_->size()) {
        return *bank_;
    }
    SampleBank out;
    out.provenance = bank_->provenance;
    if (count < bank_->size()) {
        out.draws.assign(bank_->draws.begin(), bank_->draws.begin() + static_cast<std::ptrdiff_t>(count));
        return out;
    }
    // More draws requested than the bank holds: bootstrap from it.
    Rng rng = make_stream(seed, StreamTag::Initial, bank_->size(), count);
    out.draws.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(bank_->size()));
        out.draws.push_back(bank_->draws[std::min(k, bank_->size() - 1)]);
    }
    out.warnings.push_back("bank of " + std::to_string(bank_->size()) + " draws resampled with replacement to " +
                           std::to_string(count));
    return out;
}

void SubPosterior::attach_bank(SampleBank bank) {
    bank.validate(dim());
    bank_ = std::move(bank);
}

// ---------------------------------------------------------------------------
// Gaussian

GaussianSubPosterior::GaussianSubPosterior(Vector mean, double covariance_scale)
    : mean_(std::move(mean)), scale_(covariance_scale) {
    if (mean_.size() < 1) {
        throw InvalidArgument("GaussianSubPosterior: dimension must be positive");
    }
    if (!(scale_ > 0.0) || !std::isfinite(scale_)) {
        throw InvalidArgument("GaussianSubPosterior: covariance scale must be positive");
    }
}

double GaussianSubPosterior::log_density(const Vector& x) const {
    check_point("log_density", x);
    const double d = static_cast<double>(dim());
    return -0.5 * (x - mean_).squaredNorm() / scale_ - 0.5 * d * std::log(2.0 * std::numbers::pi * scale_);
}

Vector GaussianSubPosterior::grad_log_density(const Vector& x) const {
    check_point("grad_log_density", x);
    return -(x - mean_) / scale_;
}

double GaussianSubPosterior::laplacian_log_density(const Vector& x) const {
    check_point("laplacian_log_density", x);
    return -static_cast<double>(dim()) / scale_;
}

double GaussianSubPosterior::phi(const Vector& x) const {
    check_point("phi", x);
    const double prec = 1.0 / scale_;
    return 0.5 * prec * prec * (x - mean_).squaredNorm() - 0.5 * prec * static_cast<double>(dim());
}

PhiBounds GaussianSubPosterior::phi_bounds(const Box& rect) const {
    require_finite_box("GaussianSubPosterior::phi_bounds", rect, dim());
    double near2 = 0.0;
    double far2 = 0.0;
    for (Eigen::Index k = 0; k < mean_.size(); ++k) {
        const double a = mean_[k];
        const double nearest = std::clamp(a, rect.lo[k], rect.hi[k]) - a;
        const double farthest = std::max(std::abs(rect.lo[k] - a), std::abs(rect.hi[k] - a));
        near2 += nearest * nearest;
        far2 += farthest * farthest;
    }
    const double prec = 1.0 / scale_;
    const double offset = 0.5 * prec * static_cast<double>(dim());
    return {0.5 * prec * prec * near2 - offset, 0.5 * prec * prec * far2 - offset};
}

std::optional<double> GaussianSubPosterior::phi_lower_bound() const {
    return -0.5 * static_cast<double>(dim()) / scale_;
}

SampleBank GaussianSubPosterior::draw_fresh(std::size_t count, std::uint64_t seed) const {
    SampleBank bank;
    bank.provenance = "exact Gaussian sampler";
    bank.draws.reserve(count);
    Rng rng = make_stream(seed, StreamTag::Initial);
    const double sd = std::sqrt(scale_);
    for (std::size_t i = 0; i < count; ++i) {
        Vector x(mean_.size());
        for (Eigen::Index k = 0; k < x.size(); ++k) {
            x[k] = mean_[k] + sd * std_normal(rng);
        }
        bank.draws.push_back(std::move(x));
    }
    return bank;
}

// ---------------------------------------------------------------------------
// Logistic

LogisticSubPosterior::LogisticSubPosterior(Matrix design, Vector responses, double prior_precision)
    : design_(std::move(design)), responses_(std::move(responses)), precision_(prior_precision) {
    if (design_.cols() < 1) {
        throw InvalidArgument("LogisticSubPosterior: design must have at least one column");
    }
    if (design_.rows() != responses_.size()) {
        throw InvalidArgument("LogisticSubPosterior: design rows and responses differ in length");
    }
    if (!(precision_ > 0.0)) {
        throw InvalidArgument("LogisticSubPosterior: prior precision must be positive");
    }
    row_norm2_ = design_.rowwise().squaredNorm();
}

double LogisticSubPosterior::log_density(const Vector& beta) const {
    check_point("log_density", beta);
    const Vector eta = design_ * beta;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        acc += responses_[i] * eta[i] - softplus(eta[i]);
    }
    return acc - 0.5 * precision_ * beta.squaredNorm();
}

Vector LogisticSubPosterior::grad_log_density(const Vector& beta) const {
    check_point("grad_log_density", beta);
    const Vector eta = design_ * beta;
    Vector resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        resid[i] = responses_[i] - sigmoid(eta[i]);
    }
    return design_.transpose() * resid - precision_ * beta;
}

double LogisticSubPosterior::laplacian_log_density(const Vector& beta) const {
    check_point("laplacian_log_density", beta);
    const Vector eta = design_ * beta;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double p = sigmoid(eta[i]);
        acc += p * (1.0 - p) * row_norm2_[i];
    }
    return -acc - precision_ * static_cast<double>(dim());
}

Matrix LogisticSubPosterior::hessian_log_density(const Vector& beta) const {
    check_point("hessian_log_density", beta);
    const Vector eta = design_ * beta;
    Vector w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double p = sigmoid(eta[i]);
        w[i] = p * (1.0 - p);
    }
    Matrix h = -(design_.transpose() * w.asDiagonal() * design_);
    h.diagonal().array() -= precision_;
    return h;
}

void LogisticSubPosterior::term_bounds(std::size_t i, const Box& rect, Vector& grad_lo, Vector& grad_hi,
                                       double& lap_lo, double& lap_hi) const {
    const auto d = design_.cols();
    grad_lo.resize(d);
    grad_hi.resize(d);
    if (i == 0) {
        grad_lo = -precision_ * rect.hi;
        grad_hi = -precision_ * rect.lo;
        lap_lo = lap_hi = -precision_ * static_cast<double>(d);
        return;
    }
    const auto row = static_cast<Eigen::Index>(i - 1);
    double eta_lo = 0.0;
    double eta_hi = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        const double z = design_(row, k);
        eta_lo += std::min(z * rect.lo[k], z * rect.hi[k]);
        eta_hi += std::max(z * rect.lo[k], z * rect.hi[k]);
    }
    const double p_lo = sigmoid(eta_lo);
    const double p_hi = sigmoid(eta_hi);
    const Interval resid{responses_[row] - p_hi, responses_[row] - p_lo};
    for (Eigen::Index k = 0; k < d; ++k) {
        const Interval g = scale(resid, design_(row, k));
        grad_lo[k] = g.lo;
        grad_hi[k] = g.hi;
    }
    const double w_a = p_lo * (1.0 - p_lo);
    const double w_b = p_hi * (1.0 - p_hi);
    const double w_min = std::min(w_a, w_b);
    const double w_max = (p_lo <= 0.5 && p_hi >= 0.5) ? 0.25 : std::max(w_a, w_b);
    lap_lo = -w_max * row_norm2_[row];
    lap_hi = -w_min * row_norm2_[row];
}

PhiBounds LogisticSubPosterior::phi_bounds(const Box& rect) const {
    require_finite_box("LogisticSubPosterior::phi_bounds", rect, dim());
    const auto d = design_.cols();
    Vector g_lo = Vector::Zero(d);
    Vector g_hi = Vector::Zero(d);
    double lap_lo = 0.0;
    double lap_hi = 0.0;
    Vector t_lo;
    Vector t_hi;
    for (std::size_t i = 0; i <= datum_count(); ++i) {
        double l_lo = 0.0;
        double l_hi = 0.0;
        term_bounds(i, rect, t_lo, t_hi, l_lo, l_hi);
        g_lo += t_lo;
        g_hi += t_hi;
        lap_lo += l_lo;
        lap_hi += l_hi;
    }
    double sq_lo = 0.0;
    double sq_hi = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        const Interval s = square({g_lo[k], g_hi[k]});
        sq_lo += s.lo;
        sq_hi += s.hi;
    }
    return {0.5 * (sq_lo + lap_lo), 0.5 * (sq_hi + lap_hi)};
}

std::optional<double> LogisticSubPosterior::phi_lower_bound() const {
    return -0.5 * (0.25 * row_norm2_.sum() + precision_ * static_cast<double>(dim()));
}

Vector LogisticSubPosterior::term_gradient(std::size_t i, const Vector& beta) const {
    if (i == 0) {
        return -precision_ * beta;
    }
    const auto row = static_cast<Eigen::Index>(i - 1);
    const double p = sigmoid(design_.row(row).dot(beta));
    return (responses_[row] - p) * design_.row(row).transpose();
}

double LogisticSubPosterior::term_laplacian(std::size_t i, const Vector& beta) const {
    if (i == 0) {
        return -precision_ * static_cast<double>(dim());
    }
    const auto row = static_cast<Eigen::Index>(i - 1);
    const double p = sigmoid(design_.row(row).dot(beta));
    return -p * (1.0 - p) * row_norm2_[row];
}

Vector LogisticSubPosterior::find_mode(std::optional<Vector> start) const {
    Vector beta = start.value_or(Vector::Zero(dim()));
    double current = log_density(beta);
    for (int iter = 0; iter < 200; ++iter) {
        const Vector g = grad_log_density(beta);
        const Matrix h = hessian_log_density(beta);
        const Vector step = h.ldlt().solve(-g);
        double t = 1.0;
        Vector next = beta + step;
        double value = log_density(next);
        while (value < current && t > 1e-10) {
            t *= 0.5;
            next = beta + t * step;
            value = log_density(next);
        }
        const double moved = (next - beta).norm();
        beta = next;
        current = value;
        if (moved < 1e-12 * (1.0 + beta.norm())) {
            break;
        }
    }
    return beta;
}

SampleBank LogisticSubPosterior::draw_fresh(std::size_t count, std::uint64_t seed) const {
    const Vector mode = find_mode();
    const Matrix cov = (-hessian_log_density(mode)).inverse();
    const Matrix whitening = cov.llt().matrixL();
    return metropolis_sample(*this, mode, whitening, count, seed, sampler);
}

SampleBank metropolis_sample(const SubPosterior& sp, const Vector& mode, const Matrix& whitening,
                             std::size_t count, std::uint64_t seed, const MetropolisSettings& settings) {
    const auto d = mode.size();
    Rng rng = make_stream(seed, StreamTag::Sampler);
    Vector x = mode;
    double logp = sp.log_density(x);
    Vector log_scale = Vector::Constant(d, std::log(2.4));

    auto sweep = [&](bool adapt, std::size_t iteration, std::size_t& accepted) {
        for (Eigen::Index k = 0; k < d; ++k) {
            const Vector proposal = x + whitening.col(k) * (std::exp(log_scale[k]) * std_normal(rng));
            const double logq = sp.log_density(proposal);
            const double log_alpha = std::min(0.0, logq - logp);
            const bool accept = std::log(uniform01(rng)) < log_alpha;
            if (accept) {
                x = proposal;
                logp = logq;
                ++accepted;
            }
            if (adapt) {
                const double gain = 1.0 / std::pow(static_cast<double>(iteration) + 1.0, 0.6);
                log_scale[k] += gain * (std::exp(log_alpha) - settings.target_acceptance);
            }
        }
    };

    std::size_t burn_accepted = 0;
    for (std::size_t it = 0; it < settings.burn_in; ++it) {
        sweep(true, it, burn_accepted);
    }

    SampleBank bank;
    bank.provenance = "adaptive Metropolis (burn-in " + std::to_string(settings.burn_in) + ", thin " +
                      std::to_string(settings.thin) + ")";
    bank.draws.reserve(count);
    std::size_t accepted = 0;
    const std::size_t thin = std::max<std::size_t>(settings.thin, 1);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t t = 0; t < thin; ++t) {
            sweep(false, 0, accepted);
        }
        bank.draws.push_back(x);
    }
    const double moves = static_cast<double>(count * thin) * static_cast<double>(d);
    const double rate = static_cast<double>(accepted) / moves;
    bank.acceptance_rate = rate;
    if (rate < 0.05 || rate > 0.95) {
        bank.warnings.push_back("Metropolis acceptance rate " + std::to_string(rate) + " outside [0.05, 0.95]");
        log_message(LogLevel::Info, bank.warnings.back());
    }
    return bank;
}

double estimate_phi_floor(const SubPosterior& sp, const SampleBank& bank) {
    bank.validate(sp.dim());
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& x : bank.draws) {
        lowest = std::min(lowest, sp.phi(x));
    }
    return lowest - 0.1 * std::abs(lowest);
}

// ---------------------------------------------------------------------------
// Families

double target_heterogeneity(const HeterogeneitySpec& spec) {
    spec.validate();
    if (spec.regime == Regime::SH) {
        return spec.b * static_cast<double>(spec.C - 1) * spec.constant / spec.m;
    }
    return spec.b * spec.constant;
}

GaussianFamily make_gaussian_family(const HeterogeneitySpec& spec, MeanPlacement placement,
                                    std::optional<Vector> center, std::uint64_t seed) {
    if (spec.C < 1) {
        throw InvalidArgument("make_gaussian_family: C must be at least 1");
    }
    spec.validate();
    const Vector origin = center.value_or(Vector::Zero(spec.d));
    require_dim("make_gaussian_family", spec.d, origin.size());
    const double target = spec.C > 1 ? target_heterogeneity(spec) : 0.0;
    const double scale = static_cast<double>(spec.C) * spec.b / spec.m;

    std::vector<Vector> means(static_cast<std::size_t>(spec.C), origin);
    if (spec.C > 1 && placement == MeanPlacement::Deterministic) {
        const double C = static_cast<double>(spec.C);
        const double spread = std::sqrt(target / ((C * C - 1.0) / 12.0));
        for (int c = 0; c < spec.C; ++c) {
            means[static_cast<std::size_t>(c)][0] += spread * (static_cast<double>(c) - (C - 1.0) / 2.0);
        }
    } else if (spec.C > 1 && placement == MeanPlacement::Random) {
        Rng rng = make_stream(seed, StreamTag::Synthetic, 0xFA);
        const double sd = std::sqrt(target * spec.C / (static_cast<double>(spec.C - 1) * spec.d));
        for (auto& a : means) {
            for (Eigen::Index k = 0; k < a.size(); ++k) {
                a[k] += sd * std_normal(rng);
            }
        }
    }

    GaussianFamily family;
    for (auto& a : means) {
        family.members.push_back(std::make_shared<GaussianSubPosterior>(a, scale));
    }
    family.heterogeneity = heterogeneity_of_means(means);
    Vector avg = Vector::Zero(spec.d);
    for (const auto& a : means) {
        avg += a;
    }
    family.fused_mean = avg / static_cast<double>(spec.C);
    family.fused_variance = spec.b / spec.m;
    return family;
}

LogisticData simulate_logistic_data(std::size_t m, const Vector& beta_true, std::uint64_t seed) {
    if (m == 0 || beta_true.size() < 1) {
        throw InvalidArgument("simulate_logistic_data: need m >= 1 and a non-empty beta");
    }
    const auto d = beta_true.size();
    LogisticData data;
    data.design.resize(static_cast<Eigen::Index>(m), d);
    data.responses.resize(static_cast<Eigen::Index>(m));
    Rng rng = make_stream(seed, StreamTag::Synthetic, 0x10);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m); ++i) {
        data.design(i, 0) = 1.0;
        for (Eigen::Index k = 1; k < d; ++k) {
            data.design(i, k) = 0.7 + std_normal(rng);
        }
        const double p = sigmoid(data.design.row(i).dot(beta_true));
        data.responses[i] = uniform01(rng) < p ? 1.0 : 0.0;
    }
    return data;
}

LogisticProblem split_logistic_problem(LogisticData data, int C) {
    if (C < 1) {
        throw InvalidArgument("split_logistic_problem: C must be at least 1");
    }
    const auto m = data.design.rows();
    if (m < C) {
        throw InvalidArgument("split_logistic_problem: fewer rows than shards");
    }
    LogisticProblem problem;
    const double full_precision = 1.0 / kLogisticPriorVariance;
    const double shard_precision = full_precision / static_cast<double>(C);
    const Eigen::Index base = m / C;
    const Eigen::Index extra = m % C;
    Eigen::Index start = 0;
    for (int c = 0; c < C; ++c) {
        const Eigen::Index rows = base + (c < extra ? 1 : 0);
        problem.shards.push_back(std::make_shared<LogisticSubPosterior>(data.design.middleRows(start, rows),
                                                                        data.responses.segment(start, rows),
                                                                        shard_precision));
        start += rows;
    }
    problem.full = std::make_shared<LogisticSubPosterior>(data.design, data.responses, full_precision);
    problem.positives = data.responses.sum();
    problem.data = std::move(data);
    return problem;
}

LogisticProblem make_logistic_problem(std::size_t m, int C, const Vector& beta_true, std::uint64_t seed) {
    return split_logistic_problem(simulate_logistic_data(m, beta_true, seed), C);
}

// ---------------------------------------------------------------------------
// CSV

void write_bank_csv(const std::filesystem::path& path, const SampleBank& bank) {
    std::ofstream out(path);
    if (!out) {
        throw FusionError("cannot open " + path.string() + " for writing");
    }
    out.precision(17);
    const auto d = bank.dim();
    for (Eigen::Index k = 0; k < d; ++k) {
        out << (k ? "," : "") << 'x' << (k + 1);
    }
    out << '\n';
    for (const auto& x : bank.draws) {
        for (Eigen::Index k = 0; k < d; ++k) {
            out << (k ? "," : "") << x[k];
        }
        out << '\n';
    }
    if (!out) {
        throw FusionError("write failed for " + path.string());
    }
}

SampleBank read_bank_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FusionError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw FusionError(path.string() + ": missing header");
    }
    const auto header = split_csv_line(line);
    SampleBank bank;
    bank.provenance = path.string();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw FusionError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                              std::to_string(header.size()) + " columns");
        }
        Vector x(static_cast<Eigen::Index>(cells.size()));
        for (std::size_t k = 0; k < cells.size(); ++k) {
            x[static_cast<Eigen::Index>(k)] = std::stod(cells[k]);
        }
        bank.draws.push_back(std::move(x));
    }
    return bank;
}

void write_logistic_csv(const std::filesystem::path& path, const LogisticData& data) {
    std::ofstream out(path);
    if (!out) {
        throw FusionError("cannot open " + path.string() + " for writing");
    }
    out.precision(17);
    out << 'y';
    for (Eigen::Index k = 0; k < data.design.cols(); ++k) {
        out << ",z" << (k + 1);
    }
    out << '\n';
    for (Eigen::Index i = 0; i < data.design.rows(); ++i) {
        out << data.responses[i];
        for (Eigen::Index k = 0; k < data.design.cols(); ++k) {
            out << ',' << data.design(i, k);
        }
        out << '\n';
    }
}

LogisticData read_logistic_csv(const std::filesystem::path& path) {
    const SampleBank rows = read_bank_csv(path);
    if (rows.empty() || rows.dim() < 2) {
        throw FusionError(path.string() + ": logistic data needs columns y,z1,...");
    }
    LogisticData data;
    const auto m = static_cast<Eigen::Index>(rows.size());
    data.design.resize(m, rows.dim() - 1);
    data.responses.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const Vector& r = rows.draws[static_cast<std::size_t>(i)];
        data.responses[i] = r[0];
        data.design.row(i) = r.tail(r.size() - 1).transpose();
    }
    return data;
}

} // namespace bfusion
