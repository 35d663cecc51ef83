#pragma once

#include "bfusion/core.hpp"
#include "bfusion/partition.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bfusion {

/// Draws from a single sub-posterior, plus where they came from.
struct SampleBank {
    std::vector<Vector> draws;
    std::string provenance;
    /// Set when the draws came from the internal MCMC sampler.
    std::optional<double> acceptance_rate;
    /// Non-fatal sampler diagnostics (e.g. acceptance rate out of range).
    std::vector<std::string> warnings;

    std::size_t size() const { return draws.size(); }
    bool empty() const { return draws.empty(); }
    Eigen::Index dim() const { return draws.empty() ? 0 : draws.front().size(); }
    Vector mean() const;
    Matrix covariance() const;
    /// Throws unless the bank is non-empty and every draw has dimension d.
    void validate(Eigen::Index d) const;
};

struct PhiBounds {
    double lower;
    double upper;
};

/// A sub-posterior density f_c known through its log-density and the first
/// two derivatives of log f_c.
///
/// phi(x) = (|grad log f(x)|^2 + lap log f(x)) / 2 is the integrand of the
/// path-space weights. Implementations must be safe to call concurrently.
class SubPosterior {
public:
    virtual ~SubPosterior() = default;

    virtual int dim() const = 0;
    virtual double log_density(const Vector& x) const = 0;
    virtual Vector grad_log_density(const Vector& x) const = 0;
    virtual double laplacian_log_density(const Vector& x) const = 0;

    virtual double phi(const Vector& x) const;

    /// Sound (not necessarily tight) bounds on phi over a finite box.
    virtual PhiBounds phi_bounds(const Box& rect) const = 0;

    /// Global lower bound of phi when one is known analytically.
    virtual std::optional<double> phi_lower_bound() const = 0;

    /// `count` draws from f_c. Bank-backed sub-posteriors hand back their
    /// bank verbatim when `count` matches its size.
    SampleBank sample_initial(std::size_t count, std::uint64_t seed) const;

    void attach_bank(SampleBank bank);
    const std::optional<SampleBank>& bank() const { return bank_; }

protected:
    virtual SampleBank draw_fresh(std::size_t count, std::uint64_t seed) const = 0;
    void check_point(const char* where, const Vector& x) const { require_dim(where, dim(), x.size()); }

private:
    std::optional<SampleBank> bank_;
};

using SubPosteriorPtr = std::shared_ptr<const SubPosterior>;
using SubPosteriorList = std::vector<SubPosteriorPtr>;

/// Isotropic Gaussian N(mean, scale * I) with scale = C b / m.
class GaussianSubPosterior final : public SubPosterior {
public:
    GaussianSubPosterior(Vector mean, double covariance_scale);

    int dim() const override { return static_cast<int>(mean_.size()); }
    double log_density(const Vector& x) const override;
    Vector grad_log_density(const Vector& x) const override;
    double laplacian_log_density(const Vector& x) const override;
    double phi(const Vector& x) const override;
    PhiBounds phi_bounds(const Box& rect) const override;
    std::optional<double> phi_lower_bound() const override;

    const Vector& mean() const { return mean_; }
    double covariance_scale() const { return scale_; }

protected:
    SampleBank draw_fresh(std::size_t count, std::uint64_t seed) const override;

private:
    Vector mean_;
    double scale_;
};

/// Settings of the internal adaptive Metropolis sampler.
struct MetropolisSettings {
    std::size_t burn_in = 5000;
    std::size_t thin = 10;
    double target_acceptance = 0.44;
};

/// Logistic regression sub-posterior: sum_i [y_i z_i'b - log(1+exp(z_i'b))]
/// plus a N(0, prior_precision^-1 I) prior (already tempered).
class LogisticSubPosterior final : public SubPosterior {
public:
    LogisticSubPosterior(Matrix design, Vector responses, double prior_precision);

    int dim() const override { return static_cast<int>(design_.cols()); }
    double log_density(const Vector& beta) const override;
    Vector grad_log_density(const Vector& beta) const override;
    double laplacian_log_density(const Vector& beta) const override;
    Matrix hessian_log_density(const Vector& beta) const;
    PhiBounds phi_bounds(const Box& rect) const override;
    /// phi >= lap/2 >= -(sum_i |z_i|^2/4 + precision d)/2.
    std::optional<double> phi_lower_bound() const override;

    /// Terms of the factorisation f = prod_{i=0}^{m_c} l_i with l_0 the prior.
    Vector term_gradient(std::size_t i, const Vector& beta) const;
    double term_laplacian(std::size_t i, const Vector& beta) const;
    /// Interval hull of term i's gradient and Laplacian over a box.
    void term_bounds(std::size_t i, const Box& rect, Vector& grad_lo, Vector& grad_hi, double& lap_lo,
                     double& lap_hi) const;

    std::size_t datum_count() const { return static_cast<std::size_t>(design_.rows()); }
    const Matrix& design() const { return design_; }
    const Vector& responses() const { return responses_; }
    double prior_precision() const { return precision_; }

    /// Newton iterations from `start` (zero when omitted).
    Vector find_mode(std::optional<Vector> start = std::nullopt) const;

    MetropolisSettings sampler;

protected:
    SampleBank draw_fresh(std::size_t count, std::uint64_t seed) const override;

private:
    Matrix design_;
    Vector responses_;
    double precision_;
    Vector row_norm2_;
};

/// Adaptive random-walk Metropolis in Laplace-whitened coordinates with one
/// adapted scale per coordinate. Works for any SubPosterior with a mode hint.
SampleBank metropolis_sample(const SubPosterior& sp, const Vector& mode, const Matrix& whitening,
                             std::size_t count, std::uint64_t seed, const MetropolisSettings& settings);

/// Empirical floor for phi: min over draws minus a 10% safety margin.
double estimate_phi_floor(const SubPosterior& sp, const SampleBank& bank);

enum class MeanPlacement { Deterministic, Random, Identical };

struct GaussianFamily {
    std::vector<std::shared_ptr<GaussianSubPosterior>> members;
    /// C^{-1} sum |a_c - a_bar|^2 of the realised means.
    double heterogeneity = 0.0;
    Vector fused_mean;
    /// Variance of each coordinate of the product density (b/m).
    double fused_variance = 0.0;

    SubPosteriorList as_list() const { return {members.begin(), members.end()}; }
};

/// C Gaussian sub-posteriors N(a_c, (C b/m) I) whose mean spread obeys the
/// requested SH or SSH condition. Identical placement puts every a_c at
/// `center`; random placement hits the target heterogeneity in expectation.
GaussianFamily make_gaussian_family(const HeterogeneitySpec& spec, MeanPlacement placement = MeanPlacement::Deterministic,
                                    std::optional<Vector> center = std::nullopt, std::uint64_t seed = 0);

/// Target heterogeneity implied by a regime: b(C-1)lambda/m or b gamma.
double target_heterogeneity(const HeterogeneitySpec& spec);

struct LogisticData {
    Matrix design; ///< m x d, first column is the intercept
    Vector responses;
};

struct LogisticProblem {
    LogisticData data;
    std::vector<std::shared_ptr<LogisticSubPosterior>> shards;
    /// Whole-data posterior with the untempered prior.
    std::shared_ptr<LogisticSubPosterior> full;
    double positives = 0.0;

    SubPosteriorList as_list() const { return {shards.begin(), shards.end()}; }
};

/// Prior variance of each coefficient in the synthetic logistic model.
inline constexpr double kLogisticPriorVariance = 10.0;

LogisticData simulate_logistic_data(std::size_t m, const Vector& beta_true, std::uint64_t seed);

/// Splits `data` across C shards (remainder rows go round-robin to the first
/// shards) and tempers the N(0, 10 I) prior to the power 1/C on each shard.
LogisticProblem split_logistic_problem(LogisticData data, int C);

LogisticProblem make_logistic_problem(std::size_t m, int C, const Vector& beta_true, std::uint64_t seed);

// CSV interchange: banks as `x1,...,xd`, logistic data as `y,z1,...,zd`.
void write_bank_csv(const std::filesystem::path& path, const SampleBank& bank);
SampleBank read_bank_csv(const std::filesystem::path& path);
void write_logistic_csv(const std::filesystem::path& path, const LogisticData& data);
LogisticData read_logistic_csv(const std::filesystem::path& path);

} // namespace bfusion
