#include <gtest/gtest.h>

#include "codetool/harness.hpp"

#include <cstdlib>
#include <unistd.h>

using namespace codetool;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("codetool_h_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

Trajectory traj_with(const std::vector<ExecStatus>& committed, int tokens = 0) {
    Trajectory t;
    t.task_id = "t";
    for (auto s : committed) {
        StepRecord r;
        CandidateRecord c;
        c.exec.status = s;
        c.selected = true;
        r.candidates.push_back(c);
        t.steps.push_back(r);
    }
    t.depth = static_cast<int>(committed.size());
    t.total_tokens = tokens;
    return t;
}

StepRecord pair_step(int s0, double l0, int s1, double l1) {
    StepRecord r;
    for (auto [s, l] : {std::pair{s0, l0}, std::pair{s1, l1}}) {
        CandidateRecord c;
        c.rewards = reward::make_bundle(s, reward::constant_estimate(l));
        r.candidates.push_back(c);
    }
    return r;
}

harness::RunConfig config_for(const fs::path& dir, const json& cfg) {
    harness::write_text(dir / "config.json", cfg.dump(2));
    return harness::load_config(dir / "config.json");
}

int run_cli(const std::string& args) {
    int rc = std::system((std::string(CODETOOL_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Metrics, Scep) {
    using S = ExecStatus;
    EXPECT_DOUBLE_EQ(harness::scep({traj_with({S::Success, S::Success, S::RuntimeError}), traj_with({S::Success, S::Success})}), 0.8);
    EXPECT_EQ(harness::scep({traj_with({S::Timeout})}), 0.0);
    EXPECT_THROW(harness::scep({traj_with({})}), EmptyInput);
}

TEST(Metrics, DepthAndTokens) {
    auto d = harness::depth_and_tokens({traj_with({ExecStatus::Success}, 10), traj_with({ExecStatus::Success, ExecStatus::Success}, 30)});
    EXPECT_DOUBLE_EQ(d.avg_depth, 1.5);
    EXPECT_EQ(d.total_tokens, 40);
    EXPECT_DOUBLE_EQ(d.avg_tokens, 20.0);
    EXPECT_THROW(harness::depth_and_tokens({}), EmptyInput);
}

TEST(Metrics, ConflictStats) {
    Trajectory t;
    t.steps = {pair_step(1, 0.2, 1, 0.4), pair_step(0, 0.2, 0, 0.1), pair_step(1, 0.9, 0, 0.1), pair_step(1, 0.1, 0, 0.9)};
    auto s = harness::conflict_stats({t});
    EXPECT_EQ(s.total, 4);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s.percent[static_cast<std::size_t>(i)], 25.0);
    EXPECT_THROW(harness::conflict_stats({traj_with({ExecStatus::Success})}), EmptyInput);
}

TEST(Suite, ParseAndReject) {
    auto b = sim::selection_suite(3);
    auto s = harness::parse_suite(b.suite);
    EXPECT_EQ(s.tasks.size(), 3u);
    EXPECT_EQ(s.subsets["adversarial"].size(), 3u);

    json dup = b.suite;
    dup["tasks"][1]["id"] = dup["tasks"][0]["id"];
    EXPECT_THROW(harness::parse_suite(dup), MalformedInput);

    json inherit = b.suite;
    inherit["toolset"] = inherit["tasks"][0]["toolset"];
    inherit["tasks"][2].erase("toolset");
    EXPECT_EQ(harness::parse_suite(inherit).tasks[2].toolset.size(), 1u);

    json badsub = b.suite;
    badsub["subsets"]["x"] = {"nope"};
    EXPECT_THROW(harness::parse_suite(badsub), MalformedInput);
    EXPECT_THROW(harness::parse_suite(json{{"name", "n"}}), MalformedInput);
}

TEST(JsonMode, ParseAction) {
    auto a = harness::parse_json_action("go\n```json\n{\"tool\": \"weather\", \"params\": {\"city\": \"Oslo\"}}\n```");
    EXPECT_EQ(a.tool, "weather");
    EXPECT_EQ(a.params["city"], "Oslo");
    EXPECT_FALSE(a.final_answer);
    auto f = harness::parse_json_action("{\"final_answer\": \"done\"}");
    EXPECT_EQ(f.final_answer, "done");
    EXPECT_THROW(harness::parse_json_action("no json"), MalformedInput);
    EXPECT_THROW(harness::parse_json_action("```json\n{\"params\": {}}\n```"), MalformedInput);
}

TEST(Harness, RunSelectionSuiteWithPrm) {
    auto dir = scratch("sel");
    auto cfg = config_for(dir, harness::write_bundle(dir, sim::selection_suite(8)));
    auto suite = harness::parse_suite(harness::read_json(cfg.resolve(cfg.suite)));
    harness::Environment env(cfg);
    auto run = harness::cmd_run(suite, cfg.engine, env);
    EXPECT_EQ(run.failures, 0u);
    EXPECT_EQ(run.report.sopr, 1.0);
    ASSERT_TRUE(run.report.scep);
    EXPECT_EQ(*run.report.scep, 1.0);
    EXPECT_EQ(run.report.depth.avg_depth, 3.0);

    harness::write_run(dir / "out", run);
    auto back = harness::read_trajectories(dir / "out");
    ASSERT_EQ(back.size(), run.trajectories.size());
    EXPECT_TRUE(fs::exists(dir / "out" / "report.csv"));
    EXPECT_TRUE(fs::exists(dir / "out" / "events.jsonl"));
    fs::remove_all(dir);
}

TEST(Harness, EmptySuiteIsAnError) {
    auto dir = scratch("empty");
    auto cfg = config_for(dir, harness::write_bundle(dir, sim::selection_suite(1)));
    harness::Environment env(cfg);
    harness::Suite empty;
    EXPECT_THROW(harness::cmd_run(empty, cfg.engine, env), EmptyInput);
    EXPECT_THROW(harness::cmd_json_baseline(empty, env), EmptyInput);
    fs::remove_all(dir);
}

TEST(Harness, JsonBaselineTakesMoreTurns) {
    auto dir = scratch("batch");
    auto cfg = config_for(dir, harness::write_bundle(dir, sim::batch_suite(3)));
    auto suite = harness::parse_suite(harness::read_json(cfg.resolve(cfg.suite)));
    harness::Environment env(cfg);
    auto code = harness::cmd_run(suite, cfg.engine, env);
    auto js = harness::cmd_json_baseline(suite, env);
    ASSERT_EQ(code.trajectories.size(), 4u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(code.trajectories[i].depth, 2);
        EXPECT_EQ(code.trajectories[i].answer_status, AnswerStatus::Solved) << code.trajectories[i].final_answer;
        EXPECT_EQ(js.trajectories[i].answer_status, AnswerStatus::Solved) << js.trajectories[i].final_answer;
        EXPECT_GT(js.trajectories[i].depth, 4);
    }
    EXPECT_EQ(code.trajectories[3].final_answer, "cobalt-q7");
    EXPECT_EQ(js.trajectories[3].answer_status, AnswerStatus::Unsolved);
    fs::remove_all(dir);
}

TEST(Harness, MalformedConfigRejected) {
    EXPECT_THROW(harness::parse_config(json{{"policy", {{"kind", "magic"}}}}, "."), MalformedInput);
    EXPECT_THROW(harness::parse_config(json{{"hp", {{"alpha", "x"}}}}, "."), MalformedInput);
    EXPECT_THROW(harness::parse_config(json{{"hp", {{"alpha", 0.0}}}}, "."), DomainError);
}

TEST(Cli, SubprocessRunnerMatchesInProcess) {
    auto dir = scratch("sub");
    json c = harness::write_bundle(dir, sim::selection_suite(4));
    auto in_cfg = config_for(dir, c);
    c["runner"] = {{"kind", "subprocess"}, {"argv", {CODETOOL_CLI, "fake-runner"}}, {"workers", 2}};
    auto sub_cfg = config_for(dir, c);
    auto suite = harness::parse_suite(harness::read_json(in_cfg.resolve(in_cfg.suite)));
    harness::Environment a(in_cfg), b(sub_cfg);
    auto ra = harness::cmd_run(suite, in_cfg.engine, a), rb = harness::cmd_run(suite, sub_cfg.engine, b);
    ASSERT_EQ(ra.trajectories.size(), rb.trajectories.size());
    for (std::size_t i = 0; i < ra.trajectories.size(); ++i)
        EXPECT_EQ(serialize_trajectory(ra.trajectories[i]), serialize_trajectory(rb.trajectories[i]));
    fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
    auto dir = scratch("cli");
    harness::write_text(dir / "config.json", harness::write_bundle(dir, sim::selection_suite(2)).dump());
    EXPECT_EQ(run_cli("run --config " + (dir / "config.json").string() + " --out " + (dir / "out").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "report.json"));
    EXPECT_EQ(run_cli("report --out " + (dir / "out").string()), 0);
    EXPECT_EQ(run_cli("conflict-stats --out " + (dir / "out").string()), 0);
    harness::write_text(dir / "bad.json", "{not json");
    EXPECT_EQ(run_cli("run --config " + (dir / "bad.json").string() + " --out " + (dir / "o2").string()), 1);
    EXPECT_EQ(run_cli("no-such-command"), 1);
    // PRM service down: every task fails, the run still completes
    harness::write_text(dir / "gone.json", json{{"suite", "suite.json"}, {"tool_scenario", "tools.json"},
                                                {"policy", {{"scenario", "policy.json"}}},
                                                {"latent", {{"mode", "prm"}, {"prm_url", "http://127.0.0.1:1"}}}}
                                                   .dump());
    EXPECT_EQ(run_cli("run --config " + (dir / "gone.json").string() + " --out " + (dir / "o3").string()), 3);
    fs::remove_all(dir);
}
