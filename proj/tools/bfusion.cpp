#include "bfusion/baselines.hpp"
#include "bfusion/config.hpp"
#include "bfusion/diagnostics.hpp"
#include "bfusion/harness.hpp"
#include "bfusion/logging.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace bfusion;
using json = nlohmann::json;

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCollapse = 3;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c, bool need_config = true) {
    auto* opt = cmd->add_option("--config", c.config, "JSON run configuration");
    if (need_config) {
        opt->required();
    }
    cmd->add_option("--seed", c.seed, "override the configured seed");
    cmd->add_option("--workers", c.workers, "maximum worker threads");
    cmd->add_option("--out", c.out, "output directory");
}

RunConfig load(const Common& c) {
    RunConfig cfg = load_run_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    if (c.workers) {
        cfg.workers = *c.workers;
    }
    if (c.out) {
        cfg.output.dir = *c.out;
    }
    cfg.validate();
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FusionError("cannot open " + path.string() + " for writing");
    }
    out << text;
}

int cmd_fuse(const Common& c) {
    const RunConfig cfg = load(c);
    const Problem problem = build_problem(cfg);
    const FuseResult result = fuse(cfg, problem);
    write_fuse_outputs(cfg, result);
    std::cout << json{{"T", result.guidance.T},
                      {"n", result.guidance.n},
                      {"mean", std::vector<double>(result.moments.mean.data(),
                                                   result.moments.mean.data() + result.moments.mean.size())},
                      {"ess", result.moments.ess},
                      {"mean_cess_over_N", result.run.mean_cess_fraction()},
                      {"wall_ms", result.run.wall_ms},
                      {"out", cfg.output.dir}}
                     .dump()
              << '\n';
    return 0;
}

int cmd_guidance(const Common& c) {
    RunConfig cfg = load(c);
    if (!cfg.problem.has_regime) {
        throw ConfigError("problem.regime", "guidance needs a heterogeneity regime");
    }
    HeterogeneitySpec spec = cfg.problem.heterogeneity;
    if (cfg.problem.family == ProblemFamily::Logistic) {
        spec = build_problem(cfg).spec;
    }
    std::cout << to_json(resolve_guidance(spec, std::nullopt, std::nullopt)).dump() << '\n';
    return 0;
}

int cmd_benchmark(const std::string& suite, const Common& c, std::size_t N) {
    SuiteOptions opt;
    opt.N = N;
    opt.seed = c.seed.value_or(1);
    opt.workers = c.workers.value_or(1);
    const std::filesystem::path dir = c.out.value_or("bench_" + suite);
    const auto cells = run_suite(suite, dir, opt);
    write_suite_csv(dir / "suite.csv", cells);
    std::size_t ok = 0;
    for (const auto& cell : cells) {
        ok += cell.ok ? 1 : 0;
    }
    std::cout << suite << ": " << ok << "/" << cells.size() << " cells complete, results in " << (dir / "suite.csv")
              << '\n';
    return 10 * ok >= 9 * cells.size() ? 0 : kExitFailure;
}

int cmd_synth(const Common& c) {
    const RunConfig cfg = load(c);
    const std::filesystem::path dir(cfg.output.dir);
    std::filesystem::create_directories(dir);
    const auto& p = cfg.problem;
    if (p.family == ProblemFamily::Logistic) {
        const LogisticData data = simulate_logistic_data(static_cast<std::size_t>(p.heterogeneity.m), p.beta, p.seed);
        write_logistic_csv(dir / "data.csv", data);
        std::cout << (dir / "data.csv").string() << '\n';
        return 0;
    }
    const Problem problem = build_problem(cfg);
    for (std::size_t k = 0; k < problem.banks.size(); ++k) {
        const auto path = dir / ("bank_" + std::to_string(k + 1) + ".csv");
        write_bank_csv(path, problem.banks[k]);
        std::cout << path.string() << '\n';
    }
    return 0;
}

int cmd_baseline(const std::string& method, const Common& c, std::size_t max_proposals) {
    const RunConfig cfg = load(c);
    const Problem problem = build_problem(cfg);
    const std::filesystem::path dir(cfg.output.dir);
    json summary;
    WeightedSample sample;
    if (method == "cmc") {
        sample = consensus_monte_carlo(problem.banks);
        summary["method"] = "cmc";
    } else {
        McfConfig mcf;
        mcf.T = resolve_guidance(problem.spec, cfg.T, cfg.n).T;
        mcf.seed = cfg.seed;
        mcf.target_accepted = cfg.N;
        mcf.max_proposals = max_proposals;
        const McfResult res = monte_carlo_fusion(problem.sps, mcf);
        if (res.accepted == 0) {
            std::cerr << "mcf: " << res.diagnostic << '\n';
            return kExitFailure;
        }
        sample = res.sample;
        summary = {{"method", "mcf"},
                   {"T", mcf.T},
                   {"proposals", res.proposals},
                   {"accepted", res.accepted},
                   {"acceptance_rate", res.acceptance_rate()},
                   {"wall_ms", res.wall_ms}};
    }
    const Moments mom = weighted_moments(sample);
    summary["mean"] = std::vector<double>(mom.mean.data(), mom.mean.data() + mom.mean.size());
    summary["ess"] = mom.ess;
    std::filesystem::create_directories(dir);
    write_weighted_csv(dir / cfg.output.samples, sample);
    write_text(dir / cfg.output.summary, summary.dump(2) + "\n");
    std::cout << summary.dump() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian Fusion sampler"};
    app.require_subcommand(1);

    Common fuse_opts;
    auto* fuse_cmd = app.add_subcommand("fuse", "run the fusion sampler");
    add_common(fuse_cmd, fuse_opts);

    Common guidance_opts;
    auto* guidance_cmd = app.add_subcommand("guidance", "print recommended T and mesh");
    add_common(guidance_cmd, guidance_opts);

    Common bench_opts;
    std::string suite;
    std::size_t bench_N = 2000;
    auto* bench_cmd = app.add_subcommand("benchmark", "run an evaluation suite");
    bench_cmd->add_option("suite", suite, "suite name")->required()->check(CLI::IsMember(suite_names()));
    bench_cmd->add_option("--N", bench_N, "particles per run");
    add_common(bench_cmd, bench_opts, false);

    Common synth_opts;
    auto* synth_cmd = app.add_subcommand("synth", "write synthetic data or sample banks");
    add_common(synth_cmd, synth_opts);

    Common base_opts;
    std::string method;
    std::size_t max_proposals = 10'000'000;
    auto* base_cmd = app.add_subcommand("baseline", "run a comparison method");
    base_cmd->add_option("method", method, "cmc or mcf")->required()->check(CLI::IsMember({"cmc", "mcf"}));
    base_cmd->add_option("--max-proposals", max_proposals, "MCF proposal budget");
    add_common(base_cmd, base_opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        if (*fuse_cmd) {
            return cmd_fuse(fuse_opts);
        }
        if (*guidance_cmd) {
            return cmd_guidance(guidance_opts);
        }
        if (*bench_cmd) {
            return cmd_benchmark(suite, bench_opts, bench_N);
        }
        if (*synth_cmd) {
            return cmd_synth(synth_opts);
        }
        return cmd_baseline(method, base_opts, max_proposals);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const WeightCollapse& e) {
        std::cerr << "weight collapse at iteration " << e.iteration() << '\n';
        return kExitCollapse;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}
