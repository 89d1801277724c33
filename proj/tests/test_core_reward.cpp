#include <gtest/gtest.h>

#include "codetool/reward.hpp"

#include <cmath>
#include <random>

using namespace codetool;

namespace {

ToolDoc tool(const std::string& name, const std::string& tmpl, std::vector<std::string> params) {
    ToolDoc t;
    t.name = name;
    t.description = "d";
    t.url_template = tmpl;
    for (auto& p : params) t.params.push_back(ParamSpec{p, ParamKind::String, true, ""});
    return t;
}

Trajectory sample_trajectory(int steps) {
    Trajectory t;
    t.task_id = "task-1";
    for (int i = 1; i <= steps; ++i) {
        StepRecord r;
        for (int c = 0; c < 2; ++c) {
            CandidateRecord cand;
            cand.step = CodeStep{i, "think " + std::to_string(c), "print(" + std::to_string(i) + ")", "raw\né", 7};
            cand.exec = ExecutionResult{c == 0 ? ExecStatus::Success : ExecStatus::Timeout, "out\n", "", 12, {"abc"}};
            cand.rewards = reward::make_bundle(c == 0 ? 1 : 0, reward::rollout_estimate(1, 3, 0.5, HyperParams{}));
            cand.selected = c == 0;
            r.candidates.push_back(cand);
        }
        t.steps.push_back(r);
        t.total_tokens += 7;
    }
    t.depth = steps;
    t.final_answer = "42";
    t.answer_source = AnswerSource::Sentinel;
    t.answer_status = AnswerStatus::Unsure;
    return t;
}

}  // namespace

TEST(Core, StatusScore) {
    EXPECT_EQ(status_score(AnswerStatus::Solved), 1.0);
    EXPECT_EQ(status_score(AnswerStatus::Unsure), 0.5);
    EXPECT_EQ(status_score(AnswerStatus::Unsolved), 0.0);
}

TEST(Core, ValidateTask) {
    Task ok{"t", "q", {tool("w", "/w/{city}", {"city"})}, std::nullopt, 3};
    EXPECT_TRUE(validate_task(ok).empty());

    Task dup = ok;
    dup.toolset.push_back(tool("w", "/x", {}));
    EXPECT_EQ(validate_task(dup), std::vector<std::string>{"duplicate tool name: w"});

    Task unbound{"t", "q", {tool("w", "/w/{city}", {})}, std::nullopt, 3};
    EXPECT_EQ(validate_task(unbound), std::vector<std::string>{"unbound placeholder: city"});

    Task empty{"t", "q", {}, std::nullopt, 0};
    EXPECT_EQ(validate_task(empty).size(), 2u);
}

TEST(Core, TrajectoryRoundTrip) {
    Trajectory empty;
    empty.task_id = "e";
    std::string bytes = serialize_trajectory(empty);
    EXPECT_EQ(bytes.back(), '\n');
    EXPECT_EQ(serialize_trajectory(deserialize_trajectory(bytes)), bytes);

    Trajectory three = sample_trajectory(3);
    EXPECT_TRUE(validate_trajectory(three).empty());
    EXPECT_EQ(deserialize_trajectory(serialize_trajectory(three)), three);

    // keys are sorted at every level
    EXPECT_LT(bytes.find("\"answer_source\""), bytes.find("\"task_id\""));

    std::string full = serialize_trajectory(three);
    EXPECT_THROW(deserialize_trajectory(full.substr(0, full.size() / 2)), MalformedInput);
    EXPECT_THROW(deserialize_trajectory("{\"task_id\": 3}"), MalformedInput);
}

TEST(Core, TaskRoundTrip) {
    Task t{"t", "q", {tool("w", "/w/{city}", {"city"})}, AnswerOracle{{{"Paris", false}, {"^a.*b$", true}}, false}, 4};
    EXPECT_EQ(deserialize_task(serialize_task(t)), t);
}

TEST(Reward, OnTheSpot) {
    ExecutionResult r;
    r.status = ExecStatus::Success;
    EXPECT_EQ(reward::on_the_spot(r), 1);
    r.status = ExecStatus::RuntimeError;
    EXPECT_EQ(reward::on_the_spot(r), 0);
    r.status = ExecStatus::Timeout;
    EXPECT_EQ(reward::on_the_spot(r), 0);
    r.status = ExecStatus::ProtocolError;
    EXPECT_EQ(reward::on_the_spot(r), 0);
}

TEST(Reward, RawLatent) {
    EXPECT_EQ(reward::raw_latent(2, 4), 0.5);
    EXPECT_EQ(reward::raw_latent(0, 4), 0.0);
    EXPECT_EQ(reward::raw_latent(4, 4), 1.0);
    EXPECT_THROW(reward::raw_latent(0, 0), ZeroTotalError);
    EXPECT_THROW(reward::raw_latent(5, 4), DomainError);
}

TEST(Reward, LatentFromRollouts) {
    HyperParams hp;
    EXPECT_EQ(reward::latent_from_rollouts(1.0, 0.0, hp), 1.0);
    EXPECT_NEAR(reward::latent_from_rollouts(0.0, 10.0, hp), 0.45, 1e-12);
    EXPECT_NEAR(reward::latent_from_rollouts(0.5, 5.0, hp), 0.670820393249937, 1e-9);
    EXPECT_THROW(reward::latent_from_rollouts(1.5, 0.0, hp), DomainError);
    EXPECT_THROW(reward::latent_from_rollouts(0.5, -1.0, hp), DomainError);
}

TEST(Reward, PrmNormalization) {
    EXPECT_EQ(reward::latent_from_prm_scores(3, 1), 0.75);
    EXPECT_EQ(reward::latent_from_prm_scores(0, 5), 0.0);
    EXPECT_EQ(reward::latent_from_prm_scores(2, 2), 0.5);
    EXPECT_THROW(reward::latent_from_prm_scores(0, 0), DegenerateScores);
    EXPECT_THROW(reward::latent_from_prm_scores(-1, 2), DomainError);
}

TEST(Reward, CumulativeAndSelect) {
    EXPECT_DOUBLE_EQ(reward::cumulative(1, 0.45), 1.45);
    EXPECT_EQ(reward::cumulative(0, 0.0), 0.0);
    EXPECT_EQ(reward::cumulative(1, 1.0), 2.0);
    std::vector<double> a{1.45, 0.9, 1.45}, b{0.2, 1.7}, none;
    EXPECT_EQ(reward::select_candidate(std::span<const double>(a)), 0u);
    EXPECT_EQ(reward::select_candidate(std::span<const double>(b)), 1u);
    EXPECT_THROW(reward::select_candidate(std::span<const double>(none)), EmptyInput);
}

TEST(Reward, ConflictCases) {
    auto bundle = [](int spot, double latent) { return reward::make_bundle(spot, reward::constant_estimate(latent)); };
    EXPECT_EQ(reward::classify_conflict(bundle(1, 0.1), bundle(1, 0.9)), reward::ConflictCase::Case1);
    EXPECT_EQ(reward::classify_conflict(bundle(0, 0.1), bundle(0, 0.9)), reward::ConflictCase::Case2);
    EXPECT_EQ(reward::classify_conflict(bundle(1, 0.8), bundle(0, 0.3)), reward::ConflictCase::Case3);
    EXPECT_EQ(reward::classify_conflict(bundle(1, 0.3), bundle(0, 0.8)), reward::ConflictCase::Case4);
    EXPECT_EQ(reward::classify_conflict(bundle(0, 0.3), bundle(1, 0.3)), reward::ConflictCase::Case4);  // equality is Case4
}

TEST(RewardProperties, MonotoneRangeAndInvariance) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    HyperParams hp;
    for (int i = 0; i < 2000; ++i) {
        double lr1 = u(rng), lr2 = u(rng), tau1 = 20 * u(rng), tau2 = 20 * u(rng);
        double v = reward::latent_from_rollouts(lr1, tau1, hp);
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, 1.0);
        if (lr1 < lr2) {
            EXPECT_LT(v, reward::latent_from_rollouts(lr2, tau1, hp));
        }
        if (tau1 < tau2) {
            EXPECT_GT(v, reward::latent_from_rollouts(lr1, tau2, hp));
        }

        HyperParams flat = hp;
        flat.alpha = 1.0;
        EXPECT_DOUBLE_EQ(reward::latent_from_rollouts(lr1, tau1, flat), reward::latent_from_rollouts(lr2, tau1, flat));

        std::vector<double> totals(1 + static_cast<std::size_t>(u(rng) * 5));
        for (auto& t : totals) t = std::round(2.0 * u(rng) * 4) / 4;  // coarse grid makes ties common
        double k = 0.1 + 10 * u(rng);
        auto scaled = totals;
        for (auto& t : scaled) t *= k;
        EXPECT_EQ(reward::select_candidate(std::span<const double>(totals)), reward::select_candidate(std::span<const double>(scaled)));

        auto a = reward::make_bundle(u(rng) < 0.5, reward::constant_estimate(u(rng)));
        auto b = reward::make_bundle(u(rng) < 0.5, reward::constant_estimate(u(rng)));
        EXPECT_EQ(a.r_total - (a.r_spot + a.latent.value), 0.0);
        int matches = 0;
        auto c = reward::classify_conflict(a, b);
        if (a.r_spot && b.r_spot) matches += c == reward::ConflictCase::Case1;
        if (!a.r_spot && !b.r_spot) matches += c == reward::ConflictCase::Case2;
        if (a.r_spot != b.r_spot) matches += c == reward::ConflictCase::Case3 || c == reward::ConflictCase::Case4;
        EXPECT_EQ(matches, 1);
    }
}
