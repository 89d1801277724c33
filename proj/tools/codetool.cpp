// codetool command line: run / ablate / collect / json-baseline / report /
// conflict-stats, plus the fake runner worker, standalone mock services and a
// generator for the simulated suites.

#include "codetool/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace codetool;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kEnvironment = 2, kFailures = 3 };

harness::RunConfig load(const std::string& path, std::optional<std::uint64_t> seed, const std::string& scenario = {}) {
    auto cfg = harness::load_config(path);
    if (seed) cfg.engine.hp.rng_seed = *seed;
    if (!scenario.empty()) {
        cfg.tool_scenario = fs::absolute(scenario).string();
        cfg.tool_service_url.clear();
    }
    if (cfg.runner_kind == "subprocess" && cfg.runner_argv.empty())
        cfg.runner_argv = {fs::read_symlink("/proc/self/exe").string(), "fake-runner"};
    return cfg;
}

harness::Suite load_suite(const harness::RunConfig& cfg) {
    if (cfg.suite.empty()) throw MalformedInput("config names no suite");
    return harness::parse_suite(harness::read_json(cfg.resolve(cfg.suite)));
}

void print_report(const harness::MetricsReport& r) { std::cout << harness::to_csv(r); }

int finish(std::size_t failures) {
    if (failures) std::cerr << failures << " task(s) failed\n";
    return failures ? kFailures : kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reward-guided stepwise code-tool engine"};
    app.require_subcommand(1);

    std::string config, out = "out", scenario, prm_spec, host = "127.0.0.1", sentinel = "FINAL ANSWER:", kind = "selection";
    std::optional<std::uint64_t> seed;
    int port = 0, n = 0;

    auto add_run_opts = [&](CLI::App* c) {
        c->add_option("--config", config, "run config JSON")->required();
        c->add_option("--seed", seed, "override hp.rng_seed");
        c->add_option("--out", out, "output directory");
        c->add_option("--scenario", scenario, "tool scenario JSON, overrides the config");
    };
    auto* run = app.add_subcommand("run", "run the engine over a suite");
    add_run_opts(run);
    auto* ablate = app.add_subcommand("ablate", "full / no_spot / no_latent variants");
    add_run_opts(ablate);
    auto* collect = app.add_subcommand("collect", "build process trees and emit PRM pairs");
    add_run_opts(collect);
    auto* jsonb = app.add_subcommand("json-baseline", "one tool call per turn, truncated observations");
    add_run_opts(jsonb);
    auto* report = app.add_subcommand("report", "recompute metrics from a run directory");
    report->add_option("--out", out, "run directory")->required();
    report->add_option("--config", config, "config (for suite subsets)");
    auto* conflicts = app.add_subcommand("conflict-stats", "reward conflict cases over a run directory");
    conflicts->add_option("--out", out, "run directory")->required();
    auto* fake = app.add_subcommand("fake-runner", "code runner worker over stdin/stdout");
    fake->add_option("--sentinel", sentinel);
    auto* mocksvc = app.add_subcommand("mock-service", "serve a mock tool scenario or PRM rules");
    auto* scen_opt = mocksvc->add_option("--scenario", scenario, "tool scenario JSON");
    mocksvc->add_option("--prm-spec", prm_spec, "PRM rules JSON")->excludes(scen_opt);
    mocksvc->add_option("--host", host);
    mocksvc->add_option("--port", port)->required();
    auto* gen = app.add_subcommand("gen-suite", "write a simulated suite bundle with a config");
    gen->add_option("--kind", kind)->check(CLI::IsMember({"selection", "batch", "trees"}));
    gen->add_option("--n", n, "number of tasks");
    gen->add_option("--seed", seed);
    gen->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*run || *jsonb) {
            auto cfg = load(config, seed, scenario);
            auto suite = load_suite(cfg);
            harness::Environment env(cfg);
            auto r = *run ? harness::cmd_run(suite, cfg.engine, env) : harness::cmd_json_baseline(suite, env);
            harness::write_run(out, r);
            print_report(r.report);
            return finish(r.failures);
        }
        if (*ablate) {
            auto cfg = load(config, seed, scenario);
            auto suite = load_suite(cfg);
            harness::Environment env(cfg);
            auto a = harness::cmd_ablate(suite, cfg.engine, env);
            std::size_t failures = 0;
            json summary = json::object();
            for (const auto& [name, r] : a.variants) {
                harness::write_run(fs::path(out) / name, r);
                summary[name] = harness::to_json(r.report);
                failures += r.failures;
                std::cout << name << ": sopr=" << harness::fmt(r.report.sopr)
                          << " scep=" << (r.report.scep ? harness::fmt(*r.report.scep) : std::string("n/a")) << "\n";
            }
            harness::write_text(fs::path(out) / "ablation.json", canonical_dump(summary));
            return finish(failures);
        }
        if (*collect) {
            auto cfg = load(config, seed, scenario);
            auto suite = load_suite(cfg);
            harness::Environment env(cfg);
            auto c = harness::cmd_collect(suite, env);
            fs::create_directories(out);
            rollout::emit_jsonl(c.pairs, (fs::path(out) / "pairs.jsonl").string());
            std::string trees;
            for (const auto& t : c.trees) trees += json(t).dump() + "\n";
            harness::write_text(fs::path(out) / "trees.jsonl", trees);
            for (const auto& e : c.errors) std::cerr << "error: " << e << "\n";
            std::cout << "trees=" << c.trees.size() << " pairs=" << c.pairs.size() << "\n";
            return finish(c.failures);
        }
        if (*report) {
            auto trajs = harness::read_trajectories(out);
            harness::Suite suite;
            if (!config.empty()) suite = load_suite(load(config, seed));
            print_report(harness::build_report("report", suite, trajs, 0));
            return kOk;
        }
        if (*conflicts) {
            auto s = harness::conflict_stats(harness::read_trajectories(out));
            std::cout << harness::to_json(s).dump(2) << "\n";
            return kOk;
        }
        if (*fake) {
            std::string proxy = std::getenv("CODETOOL_PROXY_URL") ? std::getenv("CODETOOL_PROXY_URL") : "";
            runner::FakeRunner::ToolCallerFactory factory;
            if (!proxy.empty())
                factory = [proxy](const std::string& sid) { return gateway::remote_tool_caller(proxy, sid); };
            runner::FakeRunner fr(factory, sentinel);
            return runner::serve_stdio(fr);
        }
        if (*mocksvc) {
            if (!prm_spec.empty()) {
                rollout::MockPrmService prm(harness::read_json(prm_spec));
                std::cerr << "mock PRM on " << host << ":" << port << "\n";
                prm.serve_forever(host, port);
            } else {
                if (scenario.empty()) throw MalformedInput("mock-service needs --scenario or --prm-spec");
                mock::MockToolService svc(mock::parse_scenario(harness::read_json(scenario)));
                std::cerr << "mock tools on " << host << ":" << port << "\n";
                svc.serve_forever(host, port);
            }
            return kOk;
        }
        if (*gen) {
            sim::Bundle b;
            if (kind == "selection") b = sim::selection_suite(n ? n : 20);
            else if (kind == "batch") b = sim::batch_suite(n ? n : 6);
            else b = sim::tree_suite(n ? n : 10, seed.value_or(1));
            json cfg = harness::write_bundle(out, b);
            if (kind == "trees") cfg["latent"]["rollout_mode"] = "exhaustive";
            harness::write_text(fs::path(out) / "config.json", cfg.dump(2) + "\n");
            std::cout << (fs::path(out) / "config.json").string() << "\n";
            return kOk;
        }
    } catch (const MalformedInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const EmptyInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        std::cerr << "environment error: " << e.what() << "\n";
        return kEnvironment;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kEnvironment;
    }
    return kUsage;
}
