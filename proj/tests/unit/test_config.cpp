#include "bfusion/config.hpp"
#include "bfusion/harness.hpp"

#include <doctest.h>

#include <cmath>

using namespace bfusion;
using nlohmann::json;

namespace {

json base() {
    return json::parse(R"({
      "problem": {"family": "gaussian", "regime": "SH", "constant": 1.0, "C": 4, "d": 2, "m": 1000},
      "N": 500, "T": "auto", "n": "auto", "seed": 3
    })");
}

std::string error_field(const json& doc) {
    try {
        parse_run_config(doc);
    } catch (const ConfigError& e) {
        return e.field();
    }
    return "";
}

} // namespace

TEST_CASE("config round trip") {
    json doc = base();
    doc["estimator"] = {{"kind", "ue-a"}, {"dispersion", 2.5}, {"mean_rule", "endpoint"}, {"granularity", 0.7}};
    doc["resampling"] = "systematic";
    doc["ess_threshold"] = 0.3;
    doc["tilted_init"] = true;
    doc["output"] = {{"dir", "somewhere"}};
    const RunConfig a = parse_run_config(doc);
    CHECK(a.estimator.kind == EstimatorKind::UeA);
    CHECK(a.resampling == ResamplingScheme::Systematic);
    CHECK_FALSE(a.T.has_value());
    const RunConfig b = parse_run_config(to_json(a));
    CHECK(same_config(a, b));
    CHECK(to_json(b) == to_json(a));

    json fixed = base();
    fixed["T"] = 0.005;
    fixed["n"] = 5;
    const RunConfig f = parse_run_config(fixed);
    CHECK(*f.T == 0.005);
    CHECK(*f.n == 5);
    CHECK(same_config(f, parse_run_config(to_json(f))));
    CHECK_FALSE(same_config(f, a));

    json logistic = json::parse(R"({
      "problem": {"family": "logistic", "regime": "SH", "C": 5, "m": 1000, "beta": [-4, -2]},
      "N": 100, "estimator": {"kind": "subsampled", "subsample_draws": 2}
    })");
    const RunConfig l = parse_run_config(logistic);
    CHECK(l.problem.heterogeneity.d == 2);
    CHECK(same_config(l, parse_run_config(to_json(l))));
}

TEST_CASE("config errors name the field") {
    json d = base();
    d["N"] = 1;
    CHECK(error_field(d) == "N");
    d = base();
    d["problem"]["C"] = 0;
    CHECK(error_field(d) == "problem.C");
    d = base();
    d["problem"].erase("regime");
    CHECK(error_field(d) == "problem.regime");
    d = base();
    d["bogus"] = 1;
    CHECK_FALSE(error_field(d).empty());
    d = base();
    d["estimator"] = {{"kind", "subsampled"}};
    CHECK(error_field(d) == "estimator.kind");
    d = base();
    d["ess_threshold"] = 2.0;
    CHECK(error_field(d) == "ess_threshold");
    d = base();
    d["output"] = {{"samples", "x.csv"}, {"trace", "x.csv"}};
    CHECK(error_field(d) == "output");
    d = base();
    d["problem"]["family"] = "poisson";
    CHECK(error_field(d) == "problem.family");
    d = base();
    d["T"] = -1.0;
    CHECK(error_field(d) == "T");
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("guidance resolution") {
    HeterogeneitySpec s;
    s.C = 10;
    s.m = 1000;
    const Guidance g = resolve_guidance(s, std::nullopt, std::nullopt);
    CHECK(g.T == doctest::Approx(recommend_T(s)));
    CHECK(g.n == recommend_mesh(s, g.T).intervals());
    CHECK(g.delta == doctest::Approx(g.T / g.n));

    const Guidance fixed = resolve_guidance(s, 0.005, 5);
    CHECK(fixed.T == 0.005);
    CHECK(fixed.n == 5);

    HeterogeneitySpec ssh = s;
    ssh.regime = Regime::SSH;
    ssh.k2 = 50;
    CHECK(resolve_guidance(ssh, std::nullopt, std::nullopt).T == doctest::Approx(50 * std::pow(10.0, -1.5)));

    HeterogeneitySpec one;
    const Guidance g1 = resolve_guidance(one, std::nullopt, std::nullopt);
    CHECK(g1.n >= 1);
    CHECK(std::isfinite(g1.T));
    const json j = to_json(g1);
    for (const char* key : {"T", "n", "delta", "cess_floor_sh", "cess_floor_ssh"}) {
        CHECK(j.contains(key));
    }
}

TEST_CASE("logistic spec estimation") {
    LogisticProblem p = make_logistic_problem(1000, 5, Vector{{-4.0, -2.0}}, 2);
    std::vector<SampleBank> banks;
    for (std::size_t c = 0; c < 5; ++c) {
        banks.push_back(p.shards[c]->sample_initial(500, 10 + c));
    }
    HeterogeneitySpec s;
    s.C = 5;
    s.m = 1000;
    s.d = 2;
    const HeterogeneitySpec e = estimate_spec_from_banks(s, banks);
    CHECK(e.b > 0.0);
    CHECK(e.constant >= 1e-6);
}
