#pragma once

#include "bfusion/estimator.hpp"
#include "bfusion/model.hpp"
#include "bfusion/partition.hpp"
#include "bfusion/smc.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bfusion {

/// Invalid or malformed run configuration; `field()` is the dotted path of
/// the offending entry.
class ConfigError : public FusionError {
public:
    ConfigError(std::string field, const std::string& message)
        : FusionError(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

enum class ProblemFamily { Gaussian, Logistic };

struct ProblemSpec {
    ProblemFamily family = ProblemFamily::Gaussian;
    /// Absent regime disables auto T/n and (for Gaussians) non-identical means.
    bool has_regime = true;
    /// C, d, m, b, regime constant, k1..k4, c0. For logistic problems m is
    /// the row count, d follows beta, and b/lambda are re-estimated.
    HeterogeneitySpec heterogeneity;

    MeanPlacement placement = MeanPlacement::Deterministic;
    std::optional<Vector> center;

    Vector beta = Vector::Zero(0);
    std::optional<std::string> data_path;

    /// Optional per-sub-posterior bank CSVs replacing internal sampling.
    std::vector<std::string> bank_paths;
    std::uint64_t seed = 0;
};

struct OutputSpec {
    std::string dir = "out";
    std::string samples = "samples.csv";
    std::string trace = "trace.jsonl";
    std::string summary = "summary.json";
};

struct RunConfig {
    ProblemSpec problem;
    std::size_t N = 1000;
    std::optional<double> T; ///< unset: auto
    std::optional<int> n;    ///< unset: auto
    EstimatorConfig estimator;
    double ess_threshold = 0.5;
    ResamplingScheme resampling = ResamplingScheme::Multinomial;
    std::uint64_t seed = 1;
    unsigned workers = 1;
    bool tilted_init = false;
    bool joint_propagation = false;
    bool weighted_cess = false;
    OutputSpec output;

    /// Throws ConfigError naming the first bad field.
    void validate() const;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

/// Field-wise equality over everything the config file can express.
bool same_config(const RunConfig& a, const RunConfig& b);

std::string to_string(EstimatorKind kind);
std::string to_string(MeanPlacement placement);
std::string to_string(Regime regime);

} // namespace bfusion
