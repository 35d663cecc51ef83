#include "bfusion/harness.hpp"

#include "bfusion/logging.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

namespace bfusion {

namespace {

using json = nlohmann::json;

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        rows.push_back(vector_json(m.row(i).transpose()));
    }
    return rows;
}

std::uint64_t bank_seed(std::uint64_t seed, std::size_t c) { return mix64(seed ^ mix64(c + 1)); }

json run_summary(const FusionRun& run, const Guidance& guidance) {
    const Moments mom = weighted_moments(WeightedSample::from_run(run));
    return {{"config_hash", config_hash(run)},
            {"guidance", to_json(guidance)},
            {"N", run.N},
            {"C", run.components},
            {"mean", vector_json(mom.mean)},
            {"covariance", matrix_json(mom.covariance)},
            {"mean_se", vector_json(mom.se)},
            {"ess", mom.ess},
            {"cess0_over_N", run.cess0 / static_cast<double>(run.N)},
            {"mean_cess_over_N", run.mean_cess_fraction()},
            {"log_normalizer", run.log_normalizer},
            {"resample_count", run.resample_count},
            {"wall_ms", run.wall_ms}};
}

void write_json(const std::filesystem::path& path, const json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FusionError("cannot open " + path.string() + " for writing");
    }
    out << doc.dump(2) << '\n';
    if (!out) {
        throw FusionError("write failed for " + path.string());
    }
}

std::vector<SampleBank> attach_initial_draws(const SubPosteriorList& sps, std::size_t N, std::uint64_t seed) {
    std::vector<SampleBank> banks;
    for (std::size_t c = 0; c < sps.size(); ++c) {
        SampleBank bank = sps[c]->sample_initial(N, bank_seed(seed, c));
        for (const auto& w : bank.warnings) {
            log_message(LogLevel::Info, "sub-posterior " + std::to_string(c) + ": " + w);
        }
        // The run re-requests N draws with the same seed and gets this bank back.
        std::const_pointer_cast<SubPosterior>(sps[c])->attach_bank(bank);
        banks.push_back(std::move(bank));
    }
    return banks;
}

HeterogeneitySpec gaussian_spec(Regime regime, double constant, int C, double m, int d = 1) {
    HeterogeneitySpec spec;
    spec.regime = regime;
    spec.constant = constant;
    spec.C = C;
    spec.m = m;
    spec.d = d;
    return spec;
}

FusionRun run_gaussian(const GaussianFamily& family, const TemporalPartition& partition, const SuiteOptions& opt) {
    SmcConfig smc;
    smc.N = opt.N;
    smc.seed = opt.seed;
    smc.workers = opt.workers;
    return run_fusion(family.as_list(), partition, smc);
}

Vector average_mean(const std::vector<SampleBank>& banks) {
    Vector acc = Vector::Zero(banks.front().dim());
    for (const auto& b : banks) {
        acc += b.mean();
    }
    return acc / static_cast<double>(banks.size());
}

} // namespace

HeterogeneitySpec estimate_spec_from_banks(HeterogeneitySpec spec, const std::vector<SampleBank>& banks) {
    if (banks.empty()) {
        throw InvalidArgument("estimate_spec_from_banks: no banks");
    }
    double var = 0.0;
    for (const auto& bank : banks) {
        var += bank.covariance().diagonal().mean();
    }
    var /= static_cast<double>(banks.size());
    spec.b = spec.m * var / static_cast<double>(spec.C);
    const double spread = estimate_heterogeneity(banks);
    constexpr double kFloor = 1e-6;
    if (spec.regime == Regime::SH) {
        spec.constant = spec.C > 1 ? std::max(kFloor, spread * spec.m / (spec.b * (spec.C - 1))) : kFloor;
    } else {
        spec.constant = std::max(kFloor, spread / spec.b);
    }
    return spec;
}

Problem build_problem(const RunConfig& cfg) {
    cfg.validate();
    const auto& p = cfg.problem;
    Problem out;
    out.spec = p.heterogeneity;
    if (p.family == ProblemFamily::Gaussian) {
        out.gaussian = make_gaussian_family(out.spec, p.placement, p.center, p.seed);
        out.sps = out.gaussian->as_list();
    } else {
        LogisticData data = p.data_path ? read_logistic_csv(*p.data_path)
                                        : simulate_logistic_data(static_cast<std::size_t>(out.spec.m), p.beta, p.seed);
        if (data.design.cols() != p.beta.size()) {
            throw ConfigError("problem.data_path", "column count does not match beta");
        }
        out.spec.m = static_cast<double>(data.design.rows());
        out.logistic = split_logistic_problem(std::move(data), out.spec.C);
        out.sps = out.logistic->as_list();
    }
    if (!p.bank_paths.empty()) {
        for (std::size_t c = 0; c < out.sps.size(); ++c) {
            SampleBank bank = read_bank_csv(p.bank_paths[c]);
            std::const_pointer_cast<SubPosterior>(out.sps[c])->attach_bank(bank);
        }
    }
    out.banks = attach_initial_draws(out.sps, cfg.N, cfg.seed);
    if (p.family == ProblemFamily::Logistic && p.has_regime) {
        out.spec = estimate_spec_from_banks(out.spec, out.banks);
        log_message(LogLevel::Info, "estimated b = " + std::to_string(out.spec.b) +
                                        ", regime constant = " + std::to_string(out.spec.constant));
    }
    return out;
}

Guidance resolve_guidance(const HeterogeneitySpec& spec, std::optional<double> T, std::optional<int> n) {
    Guidance g;
    g.T = T ? *T : recommend_T(spec);
    if (n) {
        g.n = *n;
    } else {
        g.n = recommend_mesh(spec, g.T).intervals();
    }
    g.delta = g.T / g.n;
    g.floor = cess_floor(spec);
    return g;
}

json to_json(const Guidance& g) {
    return {{"T", g.T}, {"n", g.n}, {"delta", g.delta}, {"cess_floor_sh", g.floor.sh}, {"cess_floor_ssh", g.floor.ssh}};
}

SmcConfig make_smc_config(const RunConfig& cfg, const Problem& problem) {
    SmcConfig smc;
    smc.N = cfg.N;
    smc.estimator = cfg.estimator;
    smc.ess_threshold = cfg.ess_threshold;
    smc.scheme = cfg.resampling;
    smc.seed = cfg.seed;
    smc.workers = cfg.workers;
    smc.joint_propagation = cfg.joint_propagation;
    smc.weighted_cess = cfg.weighted_cess;
    if (cfg.tilted_init) {
        smc.tilt_center = average_mean(problem.banks);
    }
    if (cfg.estimator.kind == EstimatorKind::Subsampled) {
        const Vector global = average_mean(problem.banks);
        smc.estimator.control_variates.clear();
        for (const auto& shard : problem.logistic->shards) {
            smc.estimator.control_variates.emplace_back(*shard, shard->find_mode(), global);
        }
    }
    return smc;
}

FuseResult fuse(const RunConfig& cfg, const Problem& problem) {
    FuseResult out;
    out.guidance = resolve_guidance(problem.spec, cfg.T, cfg.n);
    const TemporalPartition partition = TemporalPartition::regular(out.guidance.T, out.guidance.n);
    out.run = run_fusion(problem.sps, partition, make_smc_config(cfg, problem));
    out.moments = weighted_moments(WeightedSample::from_run(out.run));
    return out;
}

void write_fuse_outputs(const RunConfig& cfg, const FuseResult& result) {
    const std::filesystem::path dir(cfg.output.dir);
    std::filesystem::create_directories(dir);
    write_weighted_csv(dir / cfg.output.samples, WeightedSample::from_run(result.run));
    export_traces(result.run, dir / cfg.output.trace);
    write_json(dir / cfg.output.summary, run_summary(result.run, result.guidance));
}

double gaussian_iad(const FusionRun& run, const GaussianFamily& family) {
    std::vector<std::function<double(double)>> marginals;
    const double sd = std::sqrt(family.fused_variance);
    for (Eigen::Index k = 0; k < family.fused_mean.size(); ++k) {
        const double mu = family.fused_mean[k];
        marginals.emplace_back([mu, sd](double x) {
            const double z = (x - mu) / sd;
            return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
        });
    }
    return iad(WeightedSample::from_run(run), marginals);
}

CostPoint cost_comparison(int C, std::size_t N, int n, std::size_t mcf_target, std::uint64_t seed) {
    // f_c = f^{1/C} with f = N(0, 1/(2C)): every component is N(0, 1/2), so m = 2C.
    HeterogeneitySpec spec = gaussian_spec(Regime::SH, 1.0, C, 2.0 * C);
    const GaussianFamily family = make_gaussian_family(spec, MeanPlacement::Identical);
    const auto sps = family.as_list();
    const double T = 1.0;

    CostPoint out;
    out.C = C;
    SmcConfig smc;
    smc.N = N;
    smc.seed = seed;
    smc.ess_threshold = 0.0;
    const FusionRun run = run_fusion(sps, TemporalPartition::regular(T, n), smc);
    out.bf_ess = ess(run.weights);
    const double bf_work = static_cast<double>(N) * C + static_cast<double>(run.total_segments()) +
                           static_cast<double>(run.total_phi_evaluations());
    out.bf_cost = bf_work / out.bf_ess;

    McfConfig mcf;
    mcf.T = T;
    mcf.seed = seed;
    mcf.target_accepted = mcf_target;
    mcf.max_proposals = 100'000'000;
    const McfResult res = monte_carlo_fusion(sps, mcf);
    out.mcf_accepted = res.accepted;
    out.mcf_proposals = res.proposals;
    const double mcf_work = static_cast<double>(res.proposals) * C + static_cast<double>(res.segments) +
                            static_cast<double>(res.phi_evaluations);
    out.mcf_cost = res.accepted > 0 ? mcf_work / static_cast<double>(res.accepted)
                                    : std::numeric_limits<double>::infinity();
    return out;
}

LogisticComparison compare_logistic(const LogisticComparisonSpec& spec) {
    const auto start = std::chrono::steady_clock::now();
    LogisticComparison out;
    out.C = spec.C;
    LogisticProblem problem = make_logistic_problem(spec.m, spec.C, spec.beta, spec.data_seed);
    const auto sps = problem.as_list();
    const std::vector<SampleBank> banks = attach_initial_draws(sps, spec.N, spec.seed);

    HeterogeneitySpec h = gaussian_spec(Regime::SH, 1.0, spec.C, static_cast<double>(spec.m),
                                        static_cast<int>(spec.beta.size()));
    h = estimate_spec_from_banks(h, banks);
    h.c0 = spec.mesh_constant;
    out.guidance = resolve_guidance(h, std::nullopt, std::nullopt);

    SmcConfig smc;
    smc.N = spec.N;
    smc.seed = spec.seed;
    smc.workers = spec.workers;
    smc.estimator.kind = spec.estimator;
    if (spec.estimator == EstimatorKind::Subsampled) {
        const Vector global = average_mean(banks);
        for (const auto& shard : problem.shards) {
            smc.estimator.control_variates.emplace_back(*shard, shard->find_mode(), global);
        }
    }
    const FusionRun run = run_fusion(sps, TemporalPartition::regular(out.guidance.T, out.guidance.n), smc);
    out.mean_cess_fraction = run.mean_cess_fraction();
    out.cess0_fraction = run.cess0 / static_cast<double>(run.N);

    const SampleBank benchmark = problem.full->sample_initial(spec.benchmark_draws, mix64(spec.seed ^ 0xBE7C));
    const WeightedSample reference = WeightedSample::uniform(benchmark.draws);
    out.iad_bf = iad(WeightedSample::from_run(run), reference);
    out.iad_cmc = iad(consensus_monte_carlo(banks), reference);
    out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"sh-scaling", "ssh-scaling", "mesh-regularity", "mcf-cost",
                                                "logistic-compare"};
    return names;
}

std::vector<SuiteCell> run_suite(const std::string& name, const std::filesystem::path& out_dir,
                                 const SuiteOptions& opt) {
    const auto& names = suite_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        throw InvalidArgument("unknown suite '" + name + "'");
    }
    std::filesystem::create_directories(out_dir);
    std::vector<SuiteCell> cells;

    auto record = [&](SuiteCell cell, auto&& body) {
        const std::string stem = cell.label + "_m" + std::to_string(static_cast<long long>(cell.m)) + "_C" +
                                 std::to_string(cell.C);
        try {
            body(cell, out_dir / stem);
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
            log_message(LogLevel::Error, name + "/" + stem + ": " + e.what());
        }
        cells.push_back(std::move(cell));
    };
    auto fill_from_run = [](SuiteCell& cell, const FusionRun& run, const Guidance& g, const std::filesystem::path& stem) {
        cell.cess0_fraction = run.cess0 / static_cast<double>(run.N);
        cell.mean_cess_fraction = run.mean_cess_fraction();
        cell.wall_ms = run.wall_ms;
        export_traces(run, stem.string() + ".jsonl");
        write_json(stem.string() + ".json", run_summary(run, g));
    };
    auto gaussian_cell = [&](const std::string& label, const HeterogeneitySpec& spec, std::optional<double> T,
                             std::optional<int> n, const std::vector<double>* knots_shape) {
        SuiteCell cell;
        cell.label = label;
        cell.m = spec.m;
        cell.C = spec.C;
        record(std::move(cell), [&](SuiteCell& c, const std::filesystem::path& stem) {
            const GaussianFamily family = make_gaussian_family(spec);
            const Guidance g = resolve_guidance(spec, T, n);
            TemporalPartition partition = TemporalPartition::regular(g.T, g.n);
            if (knots_shape != nullptr) {
                std::vector<double> knots;
                for (double u : *knots_shape) {
                    knots.push_back(g.T * u);
                }
                partition = TemporalPartition(knots);
            }
            const FusionRun run = run_gaussian(family, partition, opt);
            c.iad = gaussian_iad(run, family);
            fill_from_run(c, run, g, stem);
        });
    };

    if (name == "sh-scaling") {
        for (double m : {1000.0, 5000.0, 10000.0}) {
            const auto spec = gaussian_spec(Regime::SH, 1.0, 10, m);
            gaussian_cell("fixed", spec, 0.005, 5, nullptr);
            gaussian_cell("auto", spec, std::nullopt, std::nullopt, nullptr);
        }
    } else if (name == "ssh-scaling") {
        // Means at +-0.25 give heterogeneity 0.0625 = b gamma with b = 1.
        for (double m : {250.0, 1000.0, 2500.0}) {
            const auto spec = gaussian_spec(Regime::SSH, 0.0625, 2, m);
            gaussian_cell("fixed", spec, 0.01, 5, nullptr);
            gaussian_cell("auto", spec, std::nullopt, std::nullopt, nullptr);
        }
    } else if (name == "mesh-regularity") {
        for (double m : {1000.0, 5000.0}) {
            const auto spec = gaussian_spec(Regime::SH, 1.0, 10, m);
            const Guidance g = resolve_guidance(spec, std::nullopt, std::nullopt);
            std::vector<double> front_loaded;
            std::vector<double> back_loaded;
            for (int j = 0; j <= g.n; ++j) {
                const double u = static_cast<double>(j) / g.n;
                front_loaded.push_back(u * u);
                back_loaded.push_back(1.0 - (1.0 - u) * (1.0 - u));
            }
            gaussian_cell("regular", spec, g.T, g.n, nullptr);
            gaussian_cell("front-loaded", spec, g.T, g.n, &front_loaded);
            gaussian_cell("back-loaded", spec, g.T, g.n, &back_loaded);
        }
    } else if (name == "mcf-cost") {
        for (int C = 2; C <= 5; ++C) {
            CostPoint point;
            bool have = false;
            auto compute = [&]() {
                if (!have) {
                    point = cost_comparison(C, opt.N, 10, 2000, opt.seed);
                    have = true;
                }
            };
            SuiteCell bf;
            bf.label = "bf";
            bf.m = 2.0 * C;
            bf.C = C;
            record(std::move(bf), [&](SuiteCell& c, const std::filesystem::path& stem) {
                compute();
                c.cost = point.bf_cost;
                write_json(stem.string() + ".json",
                           {{"C", C}, {"cost_per_ess", point.bf_cost}, {"ess", point.bf_ess}});
            });
            SuiteCell mcf;
            mcf.label = "mcf";
            mcf.m = 2.0 * C;
            mcf.C = C;
            record(std::move(mcf), [&](SuiteCell& c, const std::filesystem::path& stem) {
                compute();
                c.cost = point.mcf_cost;
                write_json(stem.string() + ".json", {{"C", C},
                                                     {"cost_per_accepted", point.mcf_cost},
                                                     {"accepted", point.mcf_accepted},
                                                     {"proposals", point.mcf_proposals}});
            });
        }
    } else {
        for (int C : {5, 10, 20}) {
            LogisticComparison cmp;
            bool have = false;
            LogisticComparisonSpec spec;
            spec.C = C;
            spec.N = opt.N;
            spec.seed = opt.seed;
            spec.workers = opt.workers;
            for (const char* method : {"bf", "cmc"}) {
                SuiteCell cell;
                cell.label = method;
                cell.m = static_cast<double>(spec.m);
                cell.C = C;
                record(std::move(cell), [&](SuiteCell& c, const std::filesystem::path& stem) {
                    if (!have) {
                        cmp = compare_logistic(spec);
                        have = true;
                    }
                    const bool is_bf = c.label == "bf";
                    c.iad = is_bf ? cmp.iad_bf : cmp.iad_cmc;
                    if (is_bf) {
                        c.cess0_fraction = cmp.cess0_fraction;
                        c.mean_cess_fraction = cmp.mean_cess_fraction;
                        c.wall_ms = cmp.wall_ms;
                    }
                    write_json(stem.string() + ".json",
                               {{"C", C}, {"iad", c.iad}, {"guidance", to_json(cmp.guidance)}});
                });
            }
        }
    }
    return cells;
}

void write_suite_csv(const std::filesystem::path& path, const std::vector<SuiteCell>& cells) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FusionError("cannot open " + path.string() + " for writing");
    }
    out.precision(10);
    out << "label,m,C,cess0_over_N,mean_cess_over_N,iad,wall_ms,cost,ok,error\n";
    for (const auto& c : cells) {
        std::string err = c.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        out << c.label << ',' << c.m << ',' << c.C << ',' << c.cess0_fraction << ',' << c.mean_cess_fraction << ','
            << c.iad << ',' << c.wall_ms << ',' << c.cost << ',' << (c.ok ? 1 : 0) << ',' << err << '\n';
    }
}

} // namespace bfusion
