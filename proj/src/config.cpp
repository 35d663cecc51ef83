#include "bfusion/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace bfusion {

namespace {

using json = nlohmann::json;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
        throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
    }
    const std::set<std::string> names(allowed.begin(), allowed.end());
    for (const auto& item : obj.items()) {
        if (names.count(item.key()) == 0) {
            throw ConfigError(join(path, item.key()), "unknown field");
        }
    }
}

template <class T>
T read(const json& obj, const std::string& path, const char* key, T fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(join(path, key), std::string("wrong type (") + e.what() + ")");
    }
}

double read_number(const json& obj, const std::string& path, const char* key, double fallback) {
    if (obj.contains(key) && !obj.at(key).is_number()) {
        throw ConfigError(join(path, key), "expected a number");
    }
    return read<double>(obj, path, key, fallback);
}

template <class Int>
Int read_integer(const json& obj, const std::string& path, const char* key, Int fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
        throw ConfigError(join(path, key), "expected an integer");
    }
    if constexpr (std::is_unsigned_v<Int>) {
        if (v.is_number_unsigned() || v.get<long long>() >= 0) {
            return v.get<Int>();
        }
        throw ConfigError(join(path, key), "must be non-negative");
    } else {
        return v.get<Int>();
    }
}

Vector read_vector(const json& v, const std::string& field) {
    if (!v.is_array() || v.empty()) {
        throw ConfigError(field, "expected a non-empty array of numbers");
    }
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) {
            throw ConfigError(field, "expected a non-empty array of numbers");
        }
        out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
    return out;
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// "auto" or a value.
template <class T>
std::optional<T> read_auto(const json& obj, const std::string& path, const char* key) {
    if (!obj.contains(key)) {
        return std::nullopt;
    }
    const json& v = obj.at(key);
    if (v.is_string()) {
        if (v.get<std::string>() != "auto") {
            throw ConfigError(join(path, key), "expected a number or \"auto\"");
        }
        return std::nullopt;
    }
    if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) {
            throw ConfigError(join(path, key), "expected an integer or \"auto\"");
        }
    } else if (!v.is_number()) {
        throw ConfigError(join(path, key), "expected a number or \"auto\"");
    }
    return v.get<T>();
}

EstimatorKind parse_kind(const std::string& s, const std::string& field) {
    if (s == "ue-a") {
        return EstimatorKind::UeA;
    }
    if (s == "ue-b") {
        return EstimatorKind::UeB;
    }
    if (s == "subsampled") {
        return EstimatorKind::Subsampled;
    }
    throw ConfigError(field, "unknown estimator '" + s + "' (ue-a, ue-b, subsampled)");
}

MeanPlacement parse_placement(const std::string& s, const std::string& field) {
    if (s == "deterministic") {
        return MeanPlacement::Deterministic;
    }
    if (s == "random") {
        return MeanPlacement::Random;
    }
    if (s == "identical") {
        return MeanPlacement::Identical;
    }
    throw ConfigError(field, "unknown placement '" + s + "'");
}

void parse_problem(const json& obj, ProblemSpec& p) {
    const std::string path = "problem";
    check_keys(obj, path,
               {"family", "regime", "constant", "C", "d", "m", "b", "k1", "k2", "k3", "k4", "c0", "placement",
                "center", "beta", "data_path", "bank_paths", "seed"});
    const auto family = read<std::string>(obj, path, "family", "gaussian");
    if (family == "gaussian") {
        p.family = ProblemFamily::Gaussian;
    } else if (family == "logistic") {
        p.family = ProblemFamily::Logistic;
    } else {
        throw ConfigError("problem.family", "unknown family '" + family + "' (gaussian, logistic)");
    }
    auto& h = p.heterogeneity;
    p.has_regime = obj.contains("regime");
    if (p.has_regime) {
        const auto regime = read<std::string>(obj, path, "regime", "SH");
        if (regime == "SH") {
            h.regime = Regime::SH;
        } else if (regime == "SSH") {
            h.regime = Regime::SSH;
        } else {
            throw ConfigError("problem.regime", "expected SH or SSH");
        }
    }
    h.constant = read_number(obj, path, "constant", h.constant);
    h.C = read_integer<int>(obj, path, "C", h.C);
    h.d = read_integer<int>(obj, path, "d", h.d);
    h.m = read_number(obj, path, "m", h.m);
    h.b = read_number(obj, path, "b", h.b);
    h.k1 = read_number(obj, path, "k1", h.k1);
    h.k2 = read_number(obj, path, "k2", h.k2);
    h.k3 = read_number(obj, path, "k3", h.k3);
    h.k4 = read_number(obj, path, "k4", h.k4);
    h.c0 = read_number(obj, path, "c0", h.c0);
    p.placement = parse_placement(read<std::string>(obj, path, "placement", "deterministic"), "problem.placement");
    if (obj.contains("center")) {
        p.center = read_vector(obj.at("center"), "problem.center");
    }
    if (obj.contains("beta")) {
        p.beta = read_vector(obj.at("beta"), "problem.beta");
    }
    if (obj.contains("data_path")) {
        p.data_path = read<std::string>(obj, path, "data_path", "");
    }
    p.bank_paths = read<std::vector<std::string>>(obj, path, "bank_paths", {});
    p.seed = read_integer<std::uint64_t>(obj, path, "seed", p.seed);
}

void parse_estimator(const json& obj, EstimatorConfig& e) {
    const std::string path = "estimator";
    check_keys(obj, path,
               {"kind", "dispersion", "mean_rule", "subsample_draws", "granularity", "layer_cap", "kappa_cap"});
    e.kind = parse_kind(read<std::string>(obj, path, "kind", "ue-b"), "estimator.kind");
    if (obj.contains("dispersion") && !obj.at("dispersion").is_null()) {
        e.dispersion = read_number(obj, path, "dispersion", 1.0);
    }
    const auto rule = read<std::string>(obj, path, "mean_rule", "exact");
    if (rule == "exact") {
        e.mean_rule = MeanRule::ExactIntegral;
    } else if (rule == "endpoint") {
        e.mean_rule = MeanRule::EndpointAverage;
    } else {
        throw ConfigError("estimator.mean_rule", "expected exact or endpoint");
    }
    e.subsample_draws = read_integer<int>(obj, path, "subsample_draws", e.subsample_draws);
    e.granularity = read_number(obj, path, "granularity", e.granularity);
    e.layer_cap = read_integer<int>(obj, path, "layer_cap", e.layer_cap);
    e.kappa_cap = read_integer<long long>(obj, path, "kappa_cap", e.kappa_cap);
}

void parse_output(const json& obj, OutputSpec& o) {
    const std::string path = "output";
    check_keys(obj, path, {"dir", "samples", "trace", "summary"});
    o.dir = read<std::string>(obj, path, "dir", o.dir);
    o.samples = read<std::string>(obj, path, "samples", o.samples);
    o.trace = read<std::string>(obj, path, "trace", o.trace);
    o.summary = read<std::string>(obj, path, "summary", o.summary);
}

} // namespace

std::string to_string(EstimatorKind kind) {
    switch (kind) {
    case EstimatorKind::UeA:
        return "ue-a";
    case EstimatorKind::UeB:
        return "ue-b";
    case EstimatorKind::Subsampled:
        return "subsampled";
    }
    return "ue-b";
}

std::string to_string(MeanPlacement placement) {
    switch (placement) {
    case MeanPlacement::Deterministic:
        return "deterministic";
    case MeanPlacement::Random:
        return "random";
    case MeanPlacement::Identical:
        return "identical";
    }
    return "deterministic";
}

std::string to_string(Regime regime) { return regime == Regime::SH ? "SH" : "SSH"; }

void RunConfig::validate() const {
    const auto& p = problem;
    const auto& h = p.heterogeneity;
    if (h.C < 1) {
        throw ConfigError("problem.C", "must be at least 1");
    }
    if (h.d < 1) {
        throw ConfigError("problem.d", "must be at least 1");
    }
    const std::pair<const char*, double> positive[] = {{"problem.constant", h.constant}, {"problem.m", h.m},
                                                       {"problem.b", h.b},               {"problem.k1", h.k1},
                                                       {"problem.k2", h.k2},             {"problem.k3", h.k3},
                                                       {"problem.k4", h.k4},             {"problem.c0", h.c0}};
    for (const auto& [name, value] : positive) {
        if (!(value > 0.0) || !std::isfinite(value)) {
            throw ConfigError(name, "must be positive and finite");
        }
    }
    if (p.family == ProblemFamily::Gaussian) {
        if (!p.has_regime && p.placement != MeanPlacement::Identical) {
            throw ConfigError("problem.regime", "required unless placement is identical");
        }
        if (p.center && p.center->size() != h.d) {
            throw ConfigError("problem.center", "length must equal d");
        }
    } else {
        if (p.beta.size() < 1) {
            throw ConfigError("problem.beta", "required for the logistic family");
        }
        if (!p.data_path && std::floor(h.m) != h.m) {
            throw ConfigError("problem.m", "row count must be an integer");
        }
        if (p.beta.size() != h.d) {
            throw ConfigError("problem.d", "must equal the length of beta");
        }
    }
    if (!p.bank_paths.empty() && p.bank_paths.size() != static_cast<std::size_t>(h.C)) {
        throw ConfigError("problem.bank_paths", "needs exactly C entries");
    }
    if (N < 2) {
        throw ConfigError("N", "must be at least 2");
    }
    if (T && (!(*T > 0.0) || !std::isfinite(*T))) {
        throw ConfigError("T", "must be positive");
    }
    if (n && *n < 1) {
        throw ConfigError("n", "must be at least 1");
    }
    if ((!T || !n) && !p.has_regime) {
        throw ConfigError("problem.regime", "auto T or n needs a heterogeneity regime");
    }
    if (!(ess_threshold >= 0.0 && ess_threshold <= 1.0)) {
        throw ConfigError("ess_threshold", "must lie in [0, 1]");
    }
    if (workers < 1) {
        throw ConfigError("workers", "must be at least 1");
    }
    const auto& e = estimator;
    if (e.dispersion && !(*e.dispersion > 0.0)) {
        throw ConfigError("estimator.dispersion", "must be positive");
    }
    if (e.subsample_draws < 1) {
        throw ConfigError("estimator.subsample_draws", "must be at least 1");
    }
    if (!(e.granularity > 0.0)) {
        throw ConfigError("estimator.granularity", "must be positive");
    }
    if (e.layer_cap < 1) {
        throw ConfigError("estimator.layer_cap", "must be at least 1");
    }
    if (e.kappa_cap < 1) {
        throw ConfigError("estimator.kappa_cap", "must be at least 1");
    }
    if (e.kind == EstimatorKind::Subsampled && p.family != ProblemFamily::Logistic) {
        throw ConfigError("estimator.kind", "subsampled needs the logistic family");
    }
    const std::string names[] = {output.samples, output.trace, output.summary};
    for (const auto& name : names) {
        if (name.empty()) {
            throw ConfigError("output", "file names must be non-empty");
        }
    }
    if (names[0] == names[1] || names[0] == names[2] || names[1] == names[2]) {
        throw ConfigError("output", "output paths must be distinct");
    }
    std::set<std::string> banks(p.bank_paths.begin(), p.bank_paths.end());
    if (banks.size() != p.bank_paths.size()) {
        throw ConfigError("problem.bank_paths", "paths must be distinct");
    }
}

RunConfig parse_run_config(const json& doc) {
    check_keys(doc, "",
               {"problem", "N", "T", "n", "estimator", "ess_threshold", "resampling", "seed", "workers",
                "tilted_init", "joint_propagation", "weighted_cess", "output"});
    RunConfig cfg;
    if (!doc.contains("problem")) {
        throw ConfigError("problem", "missing");
    }
    parse_problem(doc.at("problem"), cfg.problem);
    cfg.N = read_integer<std::size_t>(doc, "", "N", cfg.N);
    cfg.T = read_auto<double>(doc, "", "T");
    cfg.n = read_auto<int>(doc, "", "n");
    if (doc.contains("estimator")) {
        parse_estimator(doc.at("estimator"), cfg.estimator);
    }
    cfg.ess_threshold = read_number(doc, "", "ess_threshold", cfg.ess_threshold);
    const auto scheme = read<std::string>(doc, "", "resampling", "multinomial");
    try {
        cfg.resampling = parse_resampling(scheme);
    } catch (const FusionError& e) {
        throw ConfigError("resampling", e.what());
    }
    cfg.seed = read_integer<std::uint64_t>(doc, "", "seed", cfg.seed);
    cfg.workers = read_integer<unsigned>(doc, "", "workers", cfg.workers);
    cfg.tilted_init = read<bool>(doc, "", "tilted_init", cfg.tilted_init);
    cfg.joint_propagation = read<bool>(doc, "", "joint_propagation", cfg.joint_propagation);
    cfg.weighted_cess = read<bool>(doc, "", "weighted_cess", cfg.weighted_cess);
    if (doc.contains("output")) {
        parse_output(doc.at("output"), cfg.output);
    }
    if (cfg.problem.family == ProblemFamily::Logistic && !doc.at("problem").contains("d")) {
        cfg.problem.heterogeneity.d = static_cast<int>(cfg.problem.beta.size());
    }
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("<file>", "cannot open " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", std::string("malformed JSON: ") + e.what());
    }
    return parse_run_config(doc);
}

json to_json(const RunConfig& cfg) {
    const auto& p = cfg.problem;
    const auto& h = p.heterogeneity;
    json problem = {{"family", p.family == ProblemFamily::Gaussian ? "gaussian" : "logistic"},
                    {"constant", h.constant},
                    {"C", h.C},
                    {"d", h.d},
                    {"m", h.m},
                    {"b", h.b},
                    {"k1", h.k1},
                    {"k2", h.k2},
                    {"k3", h.k3},
                    {"k4", h.k4},
                    {"c0", h.c0},
                    {"placement", to_string(p.placement)},
                    {"seed", p.seed}};
    if (p.has_regime) {
        problem["regime"] = to_string(h.regime);
    }
    if (p.center) {
        problem["center"] = vector_json(*p.center);
    }
    if (p.beta.size() > 0) {
        problem["beta"] = vector_json(p.beta);
    }
    if (p.data_path) {
        problem["data_path"] = *p.data_path;
    }
    if (!p.bank_paths.empty()) {
        problem["bank_paths"] = p.bank_paths;
    }
    const auto& e = cfg.estimator;
    json estimator = {{"kind", to_string(e.kind)},
                      {"mean_rule", e.mean_rule == MeanRule::ExactIntegral ? "exact" : "endpoint"},
                      {"subsample_draws", e.subsample_draws},
                      {"granularity", e.granularity},
                      {"layer_cap", e.layer_cap},
                      {"kappa_cap", e.kappa_cap}};
    if (e.dispersion) {
        estimator["dispersion"] = *e.dispersion;
    }
    json doc = {{"problem", problem},
                {"N", cfg.N},
                {"estimator", estimator},
                {"ess_threshold", cfg.ess_threshold},
                {"resampling", to_string(cfg.resampling)},
                {"seed", cfg.seed},
                {"workers", cfg.workers},
                {"tilted_init", cfg.tilted_init},
                {"joint_propagation", cfg.joint_propagation},
                {"weighted_cess", cfg.weighted_cess},
                {"output",
                 {{"dir", cfg.output.dir},
                  {"samples", cfg.output.samples},
                  {"trace", cfg.output.trace},
                  {"summary", cfg.output.summary}}}};
    doc["T"] = cfg.T ? json(*cfg.T) : json("auto");
    doc["n"] = cfg.n ? json(*cfg.n) : json("auto");
    return doc;
}

bool same_config(const RunConfig& a, const RunConfig& b) {
    const auto& pa = a.problem;
    const auto& pb = b.problem;
    const auto& ha = pa.heterogeneity;
    const auto& hb = pb.heterogeneity;
    const auto same_vec = [](const Vector& x, const Vector& y) { return x.size() == y.size() && x == y; };
    const bool centers = pa.center.has_value() == pb.center.has_value() &&
                         (!pa.center || same_vec(*pa.center, *pb.center));
    const bool heterogeneity = (pa.has_regime == pb.has_regime) && (!pa.has_regime || ha.regime == hb.regime) &&
                               ha.constant == hb.constant && ha.C == hb.C && ha.d == hb.d && ha.m == hb.m &&
                               ha.b == hb.b && ha.k1 == hb.k1 && ha.k2 == hb.k2 && ha.k3 == hb.k3 &&
                               ha.k4 == hb.k4 && ha.c0 == hb.c0;
    const bool problem = pa.family == pb.family && heterogeneity && pa.placement == pb.placement && centers &&
                         same_vec(pa.beta, pb.beta) && pa.data_path == pb.data_path &&
                         pa.bank_paths == pb.bank_paths && pa.seed == pb.seed;
    const auto& ea = a.estimator;
    const auto& eb = b.estimator;
    const bool estimator = ea.kind == eb.kind && ea.dispersion == eb.dispersion && ea.mean_rule == eb.mean_rule &&
                           ea.subsample_draws == eb.subsample_draws && ea.granularity == eb.granularity &&
                           ea.layer_cap == eb.layer_cap && ea.kappa_cap == eb.kappa_cap;
    const bool output = a.output.dir == b.output.dir && a.output.samples == b.output.samples &&
                        a.output.trace == b.output.trace && a.output.summary == b.output.summary;
    return problem && estimator && output && a.N == b.N && a.T == b.T && a.n == b.n &&
           a.ess_threshold == b.ess_threshold && a.resampling == b.resampling && a.seed == b.seed &&
           a.workers == b.workers && a.tilted_init == b.tilted_init && a.joint_propagation == b.joint_propagation &&
           a.weighted_cess == b.weighted_cess;
}

} // namespace bfusion
