#pragma once

#include "bfusion/baselines.hpp"
#include "bfusion/config.hpp"
#include "bfusion/diagnostics.hpp"
#include "bfusion/model.hpp"
#include "bfusion/partition.hpp"
#include "bfusion/smc.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bfusion {

/// Sub-posteriors built from a run config, with whatever generated them.
struct Problem {
    SubPosteriorList sps;
    /// Spec used for guidance; for logistic problems b and the regime
    /// constant are estimated from the initial draws.
    HeterogeneitySpec spec;
    std::optional<GaussianFamily> gaussian;
    std::optional<LogisticProblem> logistic;
    /// Initial draws attached to each sub-posterior (same seeds as the run).
    std::vector<SampleBank> banks;
};

/// Builds sub-posteriors and attaches N initial draws to each of them.
Problem build_problem(const RunConfig& cfg);

/// b_hat = m * mean marginal variance / C over the banks and the SH
/// constant implied by their mean spread.
HeterogeneitySpec estimate_spec_from_banks(HeterogeneitySpec spec, const std::vector<SampleBank>& banks);

struct Guidance {
    double T = 0.0;
    int n = 0;
    double delta = 0.0;
    CessFloor floor{0.0, 0.0};
};

/// Recommended T and regular mesh unless explicit values are given.
Guidance resolve_guidance(const HeterogeneitySpec& spec, std::optional<double> T, std::optional<int> n);
nlohmann::json to_json(const Guidance& g);

SmcConfig make_smc_config(const RunConfig& cfg, const Problem& problem);

struct FuseResult {
    FusionRun run;
    Guidance guidance;
    Moments moments;
};

FuseResult fuse(const RunConfig& cfg, const Problem& problem);

/// samples.csv, trace.jsonl and summary.json under cfg.output.dir.
void write_fuse_outputs(const RunConfig& cfg, const FuseResult& result);

/// IAD of a fused Gaussian run against the analytic product marginals.
double gaussian_iad(const FusionRun& run, const GaussianFamily& family);

/// Cost of one effective sample counted as initial draws, bridge segments
/// and phi evaluations.
struct CostPoint {
    int C = 0;
    double bf_cost = 0.0;
    double bf_ess = 0.0;
    double mcf_cost = 0.0;
    std::size_t mcf_accepted = 0;
    std::size_t mcf_proposals = 0;
};

/// C identical N(0, 1/2) sub-posteriors (product N(0, 1/(2C))), T = 1.
CostPoint cost_comparison(int C, std::size_t N, int n, std::size_t mcf_target, std::uint64_t seed);

struct LogisticComparison {
    int C = 0;
    double iad_bf = 0.0;
    double iad_cmc = 0.0;
    double mean_cess_fraction = 0.0;
    double cess0_fraction = 0.0;
    double wall_ms = 0.0;
    Guidance guidance;
};

struct LogisticComparisonSpec {
    std::size_t m = 1000;
    int C = 5;
    Vector beta = (Vector(2) << -4.0, -2.0).finished();
    std::size_t N = 2000;
    std::uint64_t data_seed = 7;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    std::size_t benchmark_draws = 20'000;
    EstimatorKind estimator = EstimatorKind::UeB;
    /// c0 of the mesh guidance; skewed shards with few events need a finer mesh than Gaussians.
    double mesh_constant = 0.1;
};

/// Bayesian Fusion and Consensus Monte Carlo on the same shards, both scored
/// by IAD against an MCMC benchmark on the full data.
LogisticComparison compare_logistic(const LogisticComparisonSpec& spec);

struct SuiteCell {
    std::string label;
    double m = 0.0;
    int C = 0;
    double cess0_fraction = 0.0;
    double mean_cess_fraction = 0.0;
    double iad = 0.0;
    double wall_ms = 0.0;
    double cost = 0.0;
    bool ok = true;
    std::string error;
};

struct SuiteOptions {
    std::size_t N = 2000;
    unsigned workers = 1;
    std::uint64_t seed = 1;
};

const std::vector<std::string>& suite_names();

/// Runs every cell of a suite, writing one trace and summary per cell.
/// Failed cells are recorded rather than thrown.
std::vector<SuiteCell> run_suite(const std::string& name, const std::filesystem::path& out_dir,
                                 const SuiteOptions& options);

/// label,m,C,cess0_over_N,mean_cess_over_N,iad,wall_ms,cost,ok,error
void write_suite_csv(const std::filesystem::path& path, const std::vector<SuiteCell>& cells);

} // namespace bfusion
