#pragma once
// The stepwise loop: sample candidates, run each on its own fork, score
// on-the-spot + latent rewards, commit the argmax, stop on the sentinel.

#include "rollout.hpp"

#include <functional>

namespace codetool::engine {

enum class LatentMode { Prm, Rollout, ConstantZero };

inline std::string_view to_string(LatentMode m) {
    switch (m) {
        case LatentMode::Prm: return "prm";
        case LatentMode::Rollout: return "rollout";
        case LatentMode::ConstantZero: return "constant_zero";
    }
    return "?";
}
inline LatentMode parse_latent_mode(std::string_view s) {
    if (s == "prm") return LatentMode::Prm;
    if (s == "rollout") return LatentMode::Rollout;
    if (s == "constant_zero") return LatentMode::ConstantZero;
    throw MalformedInput("unknown latent_mode: " + std::string(s));
}

struct EngineConfig {
    HyperParams hp;
    LatentMode latent_mode = LatentMode::Prm;
    bool spot_enabled = true;
    bool latent_enabled = true;
    std::string sentinel = "FINAL ANSWER:";
    double temperature = 0.7;
};

using EventSink = std::function<void(const json&)>;

struct AblationResult {
    std::vector<RewardBundle> rewards;
    std::size_t selected = 0;
};

// `executable[i]` is whether candidate i ran successfully, independent of
// whether the spot reward is switched on. `salt` separates the random draws of
// different steps and tasks.
inline AblationResult apply_ablation(const EngineConfig& cfg, std::vector<RewardBundle> rewards, const std::vector<bool>& executable,
                                     std::uint64_t salt = 0) {
    if (rewards.empty()) throw EmptyInput("apply_ablation: no candidates");
    for (auto& b : rewards) {
        if (!cfg.spot_enabled) b.r_spot = 0;
        if (!cfg.latent_enabled) b.latent = LatentEstimate{0.0, LatentMethod::Constant, std::nullopt};
        b.r_total = reward::cumulative(b.r_spot, b.latent.value);
    }
    AblationResult out;
    if (!cfg.latent_enabled) {
        std::vector<std::size_t> ok;
        for (std::size_t i = 0; i < executable.size() && i < rewards.size(); ++i)
            if (executable[i]) ok.push_back(i);
        if (!ok.empty()) {
            out.selected = ok[mix_seed(cfg.hp.rng_seed, salt) % ok.size()];
            out.rewards = std::move(rewards);
            return out;
        }
    }
    out.selected = reward::select_candidate(std::span<const RewardBundle>(rewards));
    out.rewards = std::move(rewards);
    return out;
}

// Selected steps as (thought, code, output) in order.
inline std::vector<policy::HistoryEntry> selected_history(const Trajectory& traj) {
    std::vector<policy::HistoryEntry> h;
    for (const auto& s : traj.steps) {
        const auto& c = s.selected();
        h.push_back(policy::HistoryEntry{c.step.thought, c.step.code, answer::observation(c.exec)});
    }
    return h;
}

inline answer::Composed compose_final_answer(const Trajectory& traj, const std::string& query, const std::string& sentinel,
                                             policy::PolicyBackend* backend) {
    return answer::compose(selected_history(traj), query, sentinel, backend);
}

inline Trajectory run_task(const Task& task, const EngineConfig& cfg, policy::PolicyBackend& backend, rollout::LatentScorer& scorer,
                           gateway::Gateway& gw, const EventSink& events = {}) {
    validate(cfg.hp);
    if (auto v = validate_task(task); !v.empty()) throw MalformedInput("invalid task " + task.id + ": " + v.front());
    auto emit = [&](json e) {
        if (events) {
            e["task_id"] = task.id;
            events(e);
        }
    };

    Trajectory traj;
    traj.task_id = task.id;
    std::vector<policy::HistoryEntry> history;
    auto parent = gw.open_session(task);
    const int cap = rollout::depth_cap(task, cfg.hp);
    const std::uint64_t task_salt = fnv1a64(task.id);
    std::vector<gateway::SessionHandle> live;  // forks of the current step

    auto close_all = [&] {
        for (auto& s : live) gw.close(s);
        live.clear();
    };

    try {
        for (int t = 1; t <= cap; ++t) {
            policy::GenerateRequest req;
            req.task_id = task.id;
            req.committed_codes = parent.committed_codes();
            req.prompt = policy::assemble_prompt(task, history, cfg.sentinel);
            req.n = cfg.hp.n_candidates;
            req.temperature = cfg.temperature;
            req.seed = mix_seed(cfg.hp.rng_seed, task_salt, static_cast<std::uint64_t>(t));
            req.purpose = policy::Purpose::Candidates;
            auto cands = policy::sample_candidates(backend, req, t);

            StepRecord rec;
            std::vector<RewardBundle> rewards;
            std::vector<bool> executable;
            std::vector<policy::HistoryEntry> entries;
            std::vector<bool> terminal;
            for (const auto& c : cands) {
                auto fork = gw.fork_session(parent, cfg.hp.exec_timeout_ms);
                live.push_back(fork);
                auto out = answer::execute_candidate(gw, live.back(), c, cfg.hp.exec_timeout_ms);
                bool term = answer::has_sentinel(out.exec.stdout_text, cfg.sentinel);
                LatentEstimate latent = reward::constant_estimate(0.0);
                if (cfg.latent_enabled) {
                    rollout::NodeContext ctx{&task, live.back(), history, out.entry, c.step.raw_model_output, t, term};
                    latent = scorer.score(ctx);
                }
                rewards.push_back(reward::make_bundle(reward::on_the_spot(out.exec), latent));
                executable.push_back(out.exec.status == ExecStatus::Success);
                entries.push_back(out.entry);
                terminal.push_back(term);
                rec.candidates.push_back(CandidateRecord{out.step, out.exec, {}, false});
            }

            auto ab = apply_ablation(cfg, rewards, executable, mix_seed(task_salt, static_cast<std::uint64_t>(t)));
            for (std::size_t i = 0; i < rec.candidates.size(); ++i) {
                rec.candidates[i].rewards = ab.rewards[i];
                rec.candidates[i].selected = i == ab.selected;
            }
            rec.selected_index = ab.selected;

            // the winner's fork becomes the parent
            gw.close(parent);
            parent = live[ab.selected];
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(ab.selected));
            close_all();

            json totals = json::array();
            for (const auto& b : ab.rewards) totals.push_back(b.r_total);
            emit(json{{"event", "step"},
                      {"t", t},
                      {"selected", ab.selected},
                      {"r_total", totals},
                      {"status", to_string(rec.selected().exec.status)}});

            traj.total_tokens += rec.selected().step.token_count;
            history.push_back(entries[ab.selected]);
            traj.steps.push_back(std::move(rec));
            if (terminal[ab.selected]) break;
        }
    } catch (...) {
        close_all();
        gw.close(parent);
        throw;
    }
    gw.close(parent);
    traj.depth = static_cast<int>(traj.steps.size());
    auto composed = compose_final_answer(traj, task.query, cfg.sentinel, &backend);
    traj.final_answer = composed.text;
    traj.answer_source = composed.source;
    emit(json{{"event", "done"}, {"depth", traj.depth}, {"answer_source", to_string(traj.answer_source)}});
    return traj;
}

}  // namespace codetool::engine
