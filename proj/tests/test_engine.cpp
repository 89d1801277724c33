#include <gtest/gtest.h>

#include "codetool/engine.hpp"
#include "codetool/mock_service.hpp"
#include "codetool/sim.hpp"

#include <cmath>
#include <filesystem>

using namespace codetool;

namespace {

struct Env {
    mock::MockToolService service;
    std::shared_ptr<gateway::ToolProxy> proxy;
    std::unique_ptr<gateway::Gateway> gw;

    explicit Env(const json& tools) : service(mock::parse_scenario(tools)) {
        service.start();
        proxy = std::make_shared<gateway::ToolProxy>(service.base_url());
        gw = std::make_unique<gateway::Gateway>(proxy);
    }
};

Task noop_task(const std::string& id, int max_depth = 6) {
    Task t;
    t.id = id;
    t.query = "Find the gold value.";
    t.toolset = {sim::noop_tool().get<ToolDoc>()};
    t.max_depth = max_depth;
    t.oracle = AnswerOracle{{{"gold", false}}, false};
    return t;
}

std::string step(const std::string& thought, const std::string& code) { return sim::fenced(thought, code); }

RewardBundle bundle(int spot, double latent) { return reward::make_bundle(spot, reward::constant_estimate(latent)); }

}  // namespace

TEST(Engine, SelectsExecutableCandidateEachStep) {
    auto b = sim::selection_suite(4);
    Env env(b.tools);
    policy::ScriptedMockBackend backend(b.policy);
    rollout::ConstantScorer scorer(0.5);
    engine::EngineConfig cfg;
    for (const auto& tj : b.suite["tasks"]) {
        Task task = tj.get<Task>();
        auto traj = engine::run_task(task, cfg, backend, scorer, *env.gw);
        EXPECT_TRUE(validate_trajectory(traj).empty());
        ASSERT_EQ(traj.depth, 3) << task.id;
        for (const auto& s : traj.steps) {
            ASSERT_EQ(s.candidates.size(), 2u);
            EXPECT_EQ(s.selected().rewards.r_spot, 1);
        }
        EXPECT_EQ(traj.answer_source, AnswerSource::Sentinel);
        EXPECT_NE(traj.final_answer.find("v-"), std::string::npos);
    }
}

TEST(Engine, AllFailLatentOffCommitsLowestIndex) {
    auto task = noop_task("fail", 1);
    json scen{{"entries", {sim::entry("fail", {}, {step("a", "print(nope_a)"), step("b", "print(nope_b)")})}}};
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(scen);
    rollout::ConstantScorer scorer(0.9);
    engine::EngineConfig cfg;
    cfg.latent_enabled = false;
    auto traj = engine::run_task(task, cfg, backend, scorer, *env.gw);
    ASSERT_EQ(traj.depth, 1);
    EXPECT_EQ(traj.steps[0].selected_index, 0u);
    EXPECT_EQ(traj.steps[0].selected().rewards.r_spot, 0);
    EXPECT_EQ(traj.steps[0].selected().rewards.latent.value, 0.0);
}

TEST(Engine, SentinelAtStepTwoTerminates) {
    auto task = noop_task("two");
    std::string s1 = step("set", "x = 40"), s2 = step("answer", "final_answer(x + 2)\nprint('more detail')");
    json scen{{"entries", {sim::entry("two", {}, {s1}), sim::entry("two", {"x = 40"}, {s2})}}};
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(scen);
    rollout::ConstantScorer scorer(0.0);
    auto traj = engine::run_task(task, engine::EngineConfig{}, backend, scorer, *env.gw);
    EXPECT_EQ(traj.depth, 2);
    EXPECT_EQ(traj.final_answer, "42\nmore detail");
    EXPECT_EQ(traj.answer_source, AnswerSource::Sentinel);
    EXPECT_EQ(traj.total_tokens, policy::whitespace_tokens(s1) * 1 + policy::whitespace_tokens(s2));
}

TEST(Engine, ConcatenatesWithoutSentinel) {
    auto task = noop_task("cat", 2);
    json scen{{"entries", {sim::entry("cat", {}, {step("first", "print('a')")}), sim::entry("cat", {"print('a')"}, {step("second", "print('b')")})}}};
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(scen);
    rollout::ConstantScorer scorer(0.0);
    auto traj = engine::run_task(task, engine::EngineConfig{}, backend, scorer, *env.gw);
    EXPECT_EQ(traj.depth, 2);
    EXPECT_EQ(traj.final_answer, "Step1: first => a\nStep2: second => b");
    EXPECT_EQ(traj.answer_source, AnswerSource::Concatenated);
}

TEST(Engine, DepthBoundAndDeterminism) {
    auto task = noop_task("loop", 3);
    json scen{{"default", {step("again", "print('still going')")}}};
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(scen);
    rollout::ConstantScorer scorer(0.2);
    engine::EngineConfig cfg;
    cfg.hp.max_depth = 5;
    auto a = engine::run_task(task, cfg, backend, scorer, *env.gw);
    auto b = engine::run_task(task, cfg, backend, scorer, *env.gw);
    EXPECT_EQ(a.depth, 3);
    EXPECT_EQ(serialize_trajectory(a), serialize_trajectory(b));
}

TEST(Engine, EventsAreEmitted) {
    auto task = noop_task("ev", 1);
    json scen{{"default", {step("x", "final_answer('gold')")}}};
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(scen);
    rollout::ConstantScorer scorer(0.0);
    std::vector<json> events;
    engine::run_task(task, engine::EngineConfig{}, backend, scorer, *env.gw, [&](const json& e) { events.push_back(e); });
    ASSERT_EQ(events.size(), 2u);
    EXPECT_EQ(events[0]["event"], "step");
    EXPECT_EQ(events[1]["event"], "done");
}

TEST(Ablation, Examples) {
    engine::EngineConfig cfg;
    cfg.spot_enabled = false;
    auto r = engine::apply_ablation(cfg, {bundle(1, 0.2), bundle(0, 0.3)}, {true, false});
    EXPECT_EQ(r.rewards[0].r_spot, 0);
    EXPECT_EQ(r.rewards[1].r_spot, 0);
    EXPECT_EQ(r.selected, 1u);

    engine::EngineConfig both;
    auto same = engine::apply_ablation(both, {bundle(1, 0.2), bundle(0, 0.3)}, {true, false});
    EXPECT_EQ(same.rewards[0], bundle(1, 0.2));
    EXPECT_EQ(same.rewards[1], bundle(0, 0.3));
    EXPECT_EQ(same.selected, 0u);

    engine::EngineConfig no_latent;
    no_latent.latent_enabled = false;
    std::set<std::size_t> seen;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        no_latent.hp.rng_seed = seed;
        auto x = engine::apply_ablation(no_latent, {bundle(1, 0.9), bundle(1, 0.1)}, {true, true}, 3);
        auto y = engine::apply_ablation(no_latent, {bundle(1, 0.9), bundle(1, 0.1)}, {true, true}, 3);
        EXPECT_EQ(x.selected, y.selected);
        EXPECT_EQ(x.rewards[0].latent.value, 0.0);
        seen.insert(x.selected);
    }
    EXPECT_EQ(seen, (std::set<std::size_t>{0, 1}));
}

TEST(Ablation, SingleExecutableAlwaysCommitted) {
    engine::EngineConfig cfg;
    cfg.latent_enabled = false;
    for (bool spot : {true, false}) {
        cfg.spot_enabled = spot;
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            cfg.hp.rng_seed = seed;
            auto r = engine::apply_ablation(cfg, {bundle(0, 0.9), bundle(0, 0.9), bundle(1, 0.1)}, {false, false, true}, seed * 7);
            EXPECT_EQ(r.selected, 2u);
        }
    }
}

TEST(Compose, Examples) {
    std::vector<policy::HistoryEntry> h{{"look", "x", "a\n"}, {"done", "y", "noise\nFINAL ANSWER: 42\n"}};
    auto c = answer::compose(h, "q", "FINAL ANSWER:", nullptr);
    EXPECT_EQ(c.text, "42");
    EXPECT_EQ(c.source, AnswerSource::Sentinel);
    h[1].output = "b\n";
    c = answer::compose(h, "q", "FINAL ANSWER:", nullptr);
    EXPECT_EQ(c.text, "Step1: look => a\nStep2: done => b");
    EXPECT_EQ(answer::compose({}, "q", "FINAL ANSWER:", nullptr).text, "");
}

// --- rollouts --------------------------------------------------------------

namespace {

rollout::NodeContext node_after(gateway::Gateway& gw, const Task& task, const std::string& text, gateway::SessionHandle& s,
                                const std::string& sentinel = "FINAL ANSWER:") {
    s = gw.open_session(task);
    policy::SampledCandidate c{policy::parse_step(text, 1), true, ""};
    auto out = answer::execute_candidate(gw, s, c, 1000);
    return rollout::NodeContext{&task, s, {}, out.entry, text, 1, answer::has_sentinel(out.exec.stdout_text, sentinel)};
}

}  // namespace

TEST(Rollout, TwoOfFourSolvedInOneStep) {
    auto task = noop_task("r4", 4);
    std::string root = step("start", "x = 1");
    json scen{{"entries",
               {sim::entry("r4", {"x = 1"},
                           {step("a", "final_answer('gold a')"), step("b", "final_answer('lead b')"), step("c", "final_answer('gold c')"),
                            step("d", "final_answer('lead d')")})}}};
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(scen);
    judge::MockJudge judge;
    HyperParams hp;
    rollout::RolloutOptions ro;
    ro.mode = rollout::RolloutOptions::Mode::Exhaustive;
    rollout::RolloutScorer scorer(backend, *env.gw, judge, hp, ro);
    gateway::SessionHandle s;
    auto ctx = node_after(*env.gw, task, root, s);
    auto est = scorer.score(ctx);
    ASSERT_TRUE(est.rollout_stats);
    EXPECT_EQ(est.method, LatentMethod::Rollout);
    EXPECT_EQ(est.rollout_stats->delta_correct, 2);
    EXPECT_EQ(est.rollout_stats->delta_total, 4);
    EXPECT_EQ(est.rollout_stats->tau, 1.0);
    EXPECT_NEAR(est.value, std::pow(0.5, 0.5) * std::pow(0.9, 0.1), 1e-12);
    EXPECT_NEAR(est.value, 0.699696, 1e-6);
}

TEST(Rollout, ImmediateSolveIsOne) {
    auto task = noop_task("imm");
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(json::object());
    judge::MockJudge judge;
    HyperParams hp;
    rollout::RolloutScorer scorer(backend, *env.gw, judge, hp);
    gateway::SessionHandle s;
    auto ctx = node_after(*env.gw, task, step("done", "final_answer('gold')"), s);
    EXPECT_TRUE(ctx.terminated);
    auto est = scorer.score(ctx);
    EXPECT_EQ(est.value, 1.0);
    EXPECT_EQ(est.rollout_stats->tau, 0.0);
    EXPECT_EQ(est.rollout_stats->delta_total, 4);
}

TEST(Rollout, ZeroRolloutsIsAnError) {
    auto task = noop_task("zero");
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(json::object());
    judge::MockJudge judge;
    HyperParams hp;
    hp.n_rollouts = 0;
    rollout::RolloutScorer scorer(backend, *env.gw, judge, hp);
    gateway::SessionHandle s;
    auto ctx = node_after(*env.gw, task, step("x", "x = 1"), s);
    EXPECT_THROW(scorer.score(ctx), ZeroTotalError);
}

TEST(Rollout, RandomModeIsSeededAndBounded) {
    auto tree = sim::random_tree(11, 4);
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(tree.policy);
    judge::MockJudge judge;
    HyperParams hp;
    hp.n_rollouts = 6;
    rollout::RolloutScorer scorer(backend, *env.gw, judge, hp);
    gateway::SessionHandle s;
    auto ctx = node_after(*env.gw, tree.task, tree.nodes[1].text, s);
    auto a = scorer.score(ctx), b = scorer.score(ctx);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.rollout_stats->delta_total, 6);
    EXPECT_LE(a.rollout_stats->tau, 3.0);
}

TEST(PrmScorer, MockServiceScores) {
    rollout::MockPrmService prm(json::parse(R"J({"rules": [{"contains": "good", "s_yes": 3, "s_no": 1},
                                                         {"contains": "void", "s_yes": 0, "s_no": 0}]})J"));
    prm.start();
    rollout::PrmRemoteScorer scorer(prm.base_url());
    Task task = noop_task("p");
    rollout::NodeContext ctx;
    ctx.task = &task;
    ctx.candidate_text = "a good step";
    EXPECT_EQ(scorer.score(ctx).value, 0.75);
    EXPECT_EQ(scorer.score(ctx).method, LatentMethod::Prm);
    ctx.candidate_text = "void";
    EXPECT_THROW(scorer.score(ctx), DegenerateScores);
    ctx.candidate_text = "other";
    EXPECT_EQ(scorer.score(ctx).value, 0.5);
    EXPECT_EQ(prm.requests(), 4);

    rollout::PrmRemoteScorer dead("http://127.0.0.1:1");
    EXPECT_THROW(dead.score(ctx), ServiceUnreachable);
}

// --- tree and pairs ----------------------------------------------------------

namespace {

rollout::ProcessTree two_children(double a, double b) {
    rollout::ProcessTree t;
    t.query = "q";
    t.nodes.resize(3);
    t.nodes[0].children = {1, 2};
    for (int i : {1, 2}) {
        t.nodes[static_cast<std::size_t>(i)].node_id = i;
        t.nodes[static_cast<std::size_t>(i)].parent = 0;
        t.nodes[static_cast<std::size_t>(i)].depth = 1;
        t.nodes[static_cast<std::size_t>(i)].step.raw_model_output = "cand " + std::to_string(i);
    }
    t.nodes[1].latent.value = a;
    t.nodes[2].latent.value = b;
    return t;
}

}  // namespace

TEST(Pairs, LabelExamples) {
    auto p = rollout::label_pairs(two_children(0.8, 0.3));
    ASSERT_EQ(p.size(), 1u);
    EXPECT_EQ(p[0].chosen_latent, 0.8);
    EXPECT_EQ(p[0].chosen, "cand 1");
    EXPECT_TRUE(rollout::label_pairs(two_children(0.5, 0.5)).empty());
    auto swapped = rollout::label_pairs(two_children(0.3, 0.8));
    EXPECT_EQ(swapped[0].chosen, p[0].rejected);
    EXPECT_EQ(swapped[0].rejected, p[0].chosen);
    auto t = two_children(0.8, 0.3);
    rollout::assign_labels(t);
    EXPECT_EQ(t.nodes[1].label, rollout::PotentialLabel::More);
    EXPECT_EQ(t.nodes[2].label, rollout::PotentialLabel::Less);
}

TEST(Pairs, JsonlRoundTrip) {
    auto dir = std::filesystem::temp_directory_path() / ("codetool_pairs_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    auto empty = (dir / "empty.jsonl").string();
    EXPECT_EQ(rollout::emit_jsonl({}, empty), 0u);
    EXPECT_EQ(std::filesystem::file_size(empty), 0u);
    EXPECT_TRUE(rollout::read_jsonl(empty).empty());

    std::vector<rollout::PrmPair> pairs;
    for (int i = 0; i < 3; ++i)
        pairs.push_back(rollout::PrmPair{"q\"" + std::to_string(i), {{"t", "c", "out\n\x01"}}, "ch", "rej", 0.1 + i / 3.0, 0.1 / 3});
    auto path = (dir / "three.jsonl").string();
    EXPECT_EQ(rollout::emit_jsonl(pairs, path), 3u);
    std::ifstream in(path);
    int lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, 3);
    EXPECT_EQ(rollout::read_jsonl(path), pairs);
    std::filesystem::remove_all(dir);
}

TEST(Collect, DepthCapTwoAndDeterminism) {
    auto tree = sim::random_tree(5, 4);
    Env env(sim::noop_tools());
    policy::ScriptedMockBackend backend(tree.policy);
    judge::MockJudge judge;
    HyperParams hp;
    rollout::RolloutScorer scorer(backend, *env.gw, judge, hp);
    rollout::CollectOptions co;
    co.depth_cap = 2;
    auto a = rollout::collect_tree(tree.task, backend, *env.gw, scorer, hp, co);
    auto b = rollout::collect_tree(tree.task, backend, *env.gw, scorer, hp, co);
    EXPECT_LE(a.nodes.size(), 7u);  // root + at most 2 + 4
    EXPECT_EQ(json(a).dump(), json(b).dump());
    for (const auto& n : a.nodes) EXPECT_LE(n.depth, 2);
    for (const auto& p : rollout::label_pairs(a)) EXPECT_GT(p.chosen_latent, p.rejected_latent);
}
