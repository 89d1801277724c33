#pragma once
// Benchmark harness: suite and config loading, the offline environment
// (mock tools, mock PRM, gateway, policy, judge), the run / ablate / collect /
// json-baseline / report commands and their metrics.

#include "engine.hpp"
#include "mock_service.hpp"
#include "sim.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

namespace codetool::harness {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

struct Suite {
    std::string name;
    std::vector<Task> tasks;
    std::map<std::string, std::vector<std::string>> subsets;  // label -> task ids
};

// Tasks without a "toolset" inherit the suite-level one.
inline Suite parse_suite(const json& j) {
    Suite s;
    try {
        s.name = j.value("name", std::string("suite"));
        for (auto t : j.at("tasks")) {
            if (!t.contains("toolset") && j.contains("toolset")) t["toolset"] = j["toolset"];
            s.tasks.push_back(t.get<Task>());
        }
        if (j.contains("subsets"))
            s.subsets = j["subsets"].get<std::map<std::string, std::vector<std::string>>>();
    } catch (const MalformedInput&) {
        throw;
    } catch (const std::exception& e) {
        throw MalformedInput(std::string("malformed suite: ") + e.what());
    }
    std::set<std::string> ids;
    for (const auto& t : s.tasks) {
        if (!ids.insert(t.id).second) throw MalformedInput("duplicate task id: " + t.id);
        if (auto v = validate_task(t); !v.empty()) throw MalformedInput("task " + t.id + ": " + v.front());
    }
    for (const auto& [label, members] : s.subsets)
        for (const auto& id : members)
            if (!ids.count(id)) throw MalformedInput("subset " + label + " names unknown task " + id);
    return s;
}

inline json read_json(const fs::path& p) { return policy::load_json_file(p.string()); }

inline void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
    if (!out) throw Error("write failed: " + p.string());
}

inline std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw MalformedInput("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Committed steps that executed successfully over all committed steps.
inline double scep(const std::vector<Trajectory>& trajs) {
    std::int64_t ok = 0, total = 0;
    for (const auto& t : trajs)
        for (const auto& s : t.steps) {
            ++total;
            if (s.selected().exec.status == ExecStatus::Success) ++ok;
        }
    if (total == 0) throw EmptyInput("scep: no committed steps");
    return static_cast<double>(ok) / static_cast<double>(total);
}

struct DepthTokens {
    double avg_depth = 0.0;
    std::int64_t total_tokens = 0;
    double avg_tokens = 0.0;
};

inline DepthTokens depth_and_tokens(const std::vector<Trajectory>& trajs) {
    if (trajs.empty()) throw EmptyInput("depth_and_tokens: no trajectories");
    DepthTokens d;
    std::int64_t depth = 0;
    for (const auto& t : trajs) {
        depth += t.depth;
        d.total_tokens += t.total_tokens;
    }
    d.avg_depth = static_cast<double>(depth) / static_cast<double>(trajs.size());
    d.avg_tokens = static_cast<double>(d.total_tokens) / static_cast<double>(trajs.size());
    return d;
}

struct ConflictStats {
    std::array<std::int64_t, 4> counts{};
    std::array<double, 4> percent{};
    std::int64_t total = 0;
};

// Every recorded step with exactly two candidates is one pair.
inline ConflictStats conflict_stats(const std::vector<Trajectory>& trajs) {
    ConflictStats s;
    for (const auto& t : trajs)
        for (const auto& step : t.steps) {
            if (step.candidates.size() != 2) continue;
            auto c = reward::classify_conflict(step.candidates[0].rewards, step.candidates[1].rewards);
            ++s.counts[static_cast<std::size_t>(c)];
            ++s.total;
        }
    if (s.total == 0) throw EmptyInput("conflict_stats: no two-candidate steps");
    for (std::size_t i = 0; i < 4; ++i) s.percent[i] = 100.0 * static_cast<double>(s.counts[i]) / static_cast<double>(s.total);
    return s;
}

inline json to_json(const ConflictStats& s) {
    json j{{"total", s.total}};
    for (std::size_t i = 0; i < 4; ++i) {
        std::string k(reward::to_string(static_cast<reward::ConflictCase>(i)));
        j["counts"][k] = s.counts[i];
        j["percent"][k] = s.percent[i];
    }
    return j;
}

struct SubsetScore {
    std::size_t tasks = 0;
    double sopr = 0.0;
};

struct MetricsReport {
    std::string mode;
    std::size_t tasks = 0;
    std::size_t failures = 0;
    double sopr = 0.0;
    std::map<std::string, SubsetScore> subsets;
    std::optional<double> scep;
    DepthTokens depth;
    std::optional<ConflictStats> conflicts;
    std::map<std::string, std::int64_t> status_counts;
};

inline MetricsReport build_report(const std::string& mode, const Suite& suite, const std::vector<Trajectory>& trajs,
                                  std::size_t failures) {
    if (trajs.empty()) throw EmptyInput("report: no trajectories");
    MetricsReport r;
    r.mode = mode;
    r.tasks = trajs.size();
    r.failures = failures;
    std::map<std::string, AnswerStatus> status;
    std::vector<AnswerStatus> all;
    for (const auto& s : {AnswerStatus::Solved, AnswerStatus::Unsure, AnswerStatus::Unsolved}) r.status_counts[std::string(to_string(s))] = 0;
    for (const auto& t : trajs) {
        AnswerStatus s = t.answer_status.value_or(AnswerStatus::Unsolved);
        status[t.task_id] = s;
        all.push_back(s);
        ++r.status_counts[std::string(to_string(s))];
    }
    r.sopr = judge::sopr(all);
    for (const auto& [label, ids] : suite.subsets) {
        std::vector<AnswerStatus> sub;
        for (const auto& id : ids)
            if (auto it = status.find(id); it != status.end()) sub.push_back(it->second);
        if (!sub.empty()) r.subsets[label] = SubsetScore{sub.size(), judge::sopr(sub)};
    }
    try {
        r.scep = scep(trajs);
    } catch (const EmptyInput&) {
    }
    r.depth = depth_and_tokens(trajs);
    try {
        r.conflicts = conflict_stats(trajs);
    } catch (const EmptyInput&) {
    }
    return r;
}

inline json to_json(const MetricsReport& r) {
    json j{{"mode", r.mode},
           {"tasks", r.tasks},
           {"failures", r.failures},
           {"sopr", r.sopr},
           {"avg_depth", r.depth.avg_depth},
           {"total_tokens", r.depth.total_tokens},
           {"avg_tokens", r.depth.avg_tokens},
           {"status_counts", r.status_counts}};
    j["scep"] = r.scep ? json(*r.scep) : json(nullptr);
    j["conflicts"] = r.conflicts ? to_json(*r.conflicts) : json(nullptr);
    json subs = json::object();
    for (const auto& [k, v] : r.subsets) subs[k] = json{{"tasks", v.tasks}, {"sopr", v.sopr}};
    j["subsets"] = subs;
    return j;
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline std::string to_csv(const MetricsReport& r) {
    std::string s = "metric,value\n";
    s += "mode," + r.mode + "\n";
    s += "tasks," + std::to_string(r.tasks) + "\n";
    s += "failures," + std::to_string(r.failures) + "\n";
    s += "sopr," + fmt(r.sopr) + "\n";
    for (const auto& [k, v] : r.subsets) s += "sopr[" + k + "]," + fmt(v.sopr) + "\n";
    s += "scep," + (r.scep ? fmt(*r.scep) : std::string()) + "\n";
    s += "avg_depth," + fmt(r.depth.avg_depth) + "\n";
    s += "total_tokens," + std::to_string(r.depth.total_tokens) + "\n";
    s += "avg_tokens," + fmt(r.depth.avg_tokens) + "\n";
    for (const auto& [k, v] : r.status_counts) s += "count[" + k + "]," + std::to_string(v) + "\n";
    if (r.conflicts)
        for (std::size_t i = 0; i < 4; ++i) {
            std::string k(reward::to_string(static_cast<reward::ConflictCase>(i)));
            s += "conflict_pct[" + k + "]," + fmt(r.conflicts->percent[i]) + "\n";
        }
    return s;
}

inline std::string tasks_csv(const std::vector<Trajectory>& trajs) {
    std::string s = "task_id,status,score,depth,total_tokens,steps_ok,answer_source\n";
    for (const auto& t : trajs) {
        int ok = 0;
        for (const auto& st : t.steps) ok += st.selected().exec.status == ExecStatus::Success;
        AnswerStatus a = t.answer_status.value_or(AnswerStatus::Unsolved);
        s += t.task_id + "," + std::string(to_string(a)) + "," + fmt(status_score(a)) + "," + std::to_string(t.depth) + "," +
             std::to_string(t.total_tokens) + "," + std::to_string(ok) + "," + std::string(to_string(t.answer_source)) + "\n";
    }
    return s;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    fs::path base_dir = ".";
    std::string suite;               // path to suite JSON
    std::string tool_scenario;       // start an embedded mock tool service from this scenario...
    std::string tool_service_url;    // ...or use an already running one
    std::string policy_kind = "scripted";
    std::string policy_scenario;     // scripted, code mode
    std::string json_policy_scenario;  // scripted, JSON mode
    chat::ChatConfig policy_chat;
    std::string judge_kind = "mock";
    chat::ChatConfig judge_chat;
    std::string judge_template;      // defaults to the built-in prompt
    engine::EngineConfig engine;
    std::string prm_url;
    std::string prm_scenario;        // start an embedded mock PRM from these rules
    rollout::RolloutOptions::Mode rollout_mode = rollout::RolloutOptions::Mode::Random;
    double rollout_temperature = 1.0;
    std::string runner_kind = "in_process";
    std::vector<std::string> runner_argv;
    std::size_t runner_workers = 1;
    std::size_t task_workers = 1;
    std::size_t json_truncate_bytes = 2048;
    int collect_depth_cap = 2;

    fs::path resolve(const std::string& p) const {
        if (p.empty()) return {};
        fs::path q(p);
        return q.is_absolute() ? q : base_dir / q;
    }
};

inline RunConfig parse_config(const json& j, const fs::path& base_dir) {
    RunConfig c;
    c.base_dir = base_dir;
    try {
        c.suite = j.value("suite", std::string());
        c.tool_scenario = j.value("tool_scenario", std::string());
        c.tool_service_url = j.value("tool_service_url", std::string());
        if (j.contains("policy")) {
            const auto& p = j["policy"];
            c.policy_kind = p.value("kind", c.policy_kind);
            c.policy_scenario = p.value("scenario", std::string());
            c.json_policy_scenario = p.value("json_scenario", std::string());
            if (c.policy_kind == "remote") c.policy_chat = p.get<chat::ChatConfig>();
            else if (c.policy_kind != "scripted") throw MalformedInput("policy.kind must be scripted or remote");
        }
        if (j.contains("judge")) {
            const auto& p = j["judge"];
            c.judge_kind = p.value("kind", c.judge_kind);
            c.judge_template = p.value("template", std::string());
            if (c.judge_kind == "remote") c.judge_chat = p.get<chat::ChatConfig>();
            else if (c.judge_kind != "mock") throw MalformedInput("judge.kind must be mock or remote");
        }
        if (j.contains("hp")) c.engine.hp = j["hp"].get<HyperParams>();
        c.engine.spot_enabled = j.value("spot_enabled", true);
        c.engine.latent_enabled = j.value("latent_enabled", true);
        c.engine.sentinel = j.value("sentinel", c.engine.sentinel);
        c.engine.temperature = j.value("temperature", c.engine.temperature);
        if (j.contains("latent")) {
            const auto& l = j["latent"];
            c.engine.latent_mode = engine::parse_latent_mode(l.value("mode", std::string("prm")));
            c.prm_url = l.value("prm_url", std::string());
            c.prm_scenario = l.value("prm_scenario", std::string());
            std::string rm = l.value("rollout_mode", std::string("random"));
            if (rm == "random") c.rollout_mode = rollout::RolloutOptions::Mode::Random;
            else if (rm == "exhaustive") c.rollout_mode = rollout::RolloutOptions::Mode::Exhaustive;
            else throw MalformedInput("latent.rollout_mode must be random or exhaustive");
            c.rollout_temperature = l.value("rollout_temperature", c.rollout_temperature);
        }
        if (j.contains("runner")) {
            const auto& r = j["runner"];
            c.runner_kind = r.value("kind", c.runner_kind);
            if (c.runner_kind != "in_process" && c.runner_kind != "subprocess")
                throw MalformedInput("runner.kind must be in_process or subprocess");
            c.runner_argv = r.value("argv", std::vector<std::string>{});
            c.runner_workers = r.value("workers", c.runner_workers);
        }
        c.task_workers = j.value("task_workers", c.task_workers);
        c.json_truncate_bytes = j.value("json_truncate_bytes", c.json_truncate_bytes);
        c.collect_depth_cap = j.value("collect_depth_cap", c.collect_depth_cap);
    } catch (const MalformedInput&) {
        throw;
    } catch (const std::exception& e) {
        throw MalformedInput(std::string("malformed config: ") + e.what());
    }
    validate(c.engine.hp);
    if (c.task_workers < 1) c.task_workers = 1;
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    return parse_config(read_json(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

class Environment {
public:
    explicit Environment(const RunConfig& cfg) : cfg_(cfg) {
        std::string upstream = cfg.tool_service_url;
        if (!cfg.tool_scenario.empty()) {
            tools_ = std::make_unique<mock::MockToolService>(mock::parse_scenario(read_json(cfg.resolve(cfg.tool_scenario))));
            tools_->start();
            upstream = tools_->base_url();
        }
        if (upstream.empty()) throw MalformedInput("config needs tool_scenario or tool_service_url");
        proxy_ = std::make_shared<gateway::ToolProxy>(upstream);
        gateway::GatewayOptions go;
        go.sentinel = cfg.engine.sentinel;
        go.workers = std::max(cfg.runner_workers, cfg.task_workers);
        if (cfg.runner_kind == "subprocess") {
            go.runner = gateway::GatewayOptions::RunnerKind::Subprocess;
            go.runner_argv = cfg.runner_argv;
        }
        gw_ = std::make_unique<gateway::Gateway>(proxy_, go);

        if (cfg.judge_kind == "remote") {
            std::string tmpl = cfg.judge_template.empty() ? std::string(judge::kJudgePrompt) : read_text(cfg.resolve(cfg.judge_template));
            judge_ = std::make_unique<judge::RemoteJudge>(cfg.judge_chat, tmpl);
        } else {
            judge_ = std::make_unique<judge::MockJudge>();
        }
        if (cfg.engine.latent_mode == engine::LatentMode::Prm && cfg.engine.latent_enabled) {
            std::string url = cfg.prm_url;
            if (!cfg.prm_scenario.empty()) {
                prm_ = std::make_unique<rollout::MockPrmService>(read_json(cfg.resolve(cfg.prm_scenario)));
                prm_->start();
                url = prm_->base_url();
            }
            if (url.empty()) throw MalformedInput("latent.mode prm needs prm_url or prm_scenario");
            prm_url_ = url;
        }
    }

    std::unique_ptr<policy::PolicyBackend> make_backend(bool json_mode = false) const {
        if (cfg_.policy_kind == "remote") return std::make_unique<policy::RemoteChatBackend>(cfg_.policy_chat);
        const std::string& path = json_mode ? cfg_.json_policy_scenario : cfg_.policy_scenario;
        if (path.empty()) throw MalformedInput(json_mode ? "policy.json_scenario is required" : "policy.scenario is required");
        return std::make_unique<policy::ScriptedMockBackend>(read_json(cfg_.resolve(path)));
    }

    std::unique_ptr<rollout::LatentScorer> make_scorer(policy::PolicyBackend& backend, const engine::EngineConfig& ec) {
        switch (ec.latent_mode) {
            case engine::LatentMode::Prm:
                if (prm_url_.empty()) return std::make_unique<rollout::ConstantScorer>(0.0);  // latent disabled
                return std::make_unique<rollout::PrmRemoteScorer>(prm_url_);
            case engine::LatentMode::Rollout: return make_rollout_scorer(backend, ec.hp);
            case engine::LatentMode::ConstantZero: return std::make_unique<rollout::ConstantScorer>(0.0);
        }
        return nullptr;
    }

    std::unique_ptr<rollout::RolloutScorer> make_rollout_scorer(policy::PolicyBackend& backend, const HyperParams& hp) {
        rollout::RolloutOptions ro;
        ro.mode = cfg_.rollout_mode;
        ro.temperature = cfg_.rollout_temperature;
        ro.sentinel = cfg_.engine.sentinel;
        return std::make_unique<rollout::RolloutScorer>(backend, *gw_, *judge_, hp, ro);
    }

    gateway::Gateway& gateway() { return *gw_; }
    gateway::ToolProxy& proxy() { return *proxy_; }
    judge::JudgeBackend& judge() { return *judge_; }
    const RunConfig& config() const { return cfg_; }
    const mock::MockToolService* tool_service() const { return tools_.get(); }

private:
    RunConfig cfg_;
    std::unique_ptr<mock::MockToolService> tools_;
    std::unique_ptr<rollout::MockPrmService> prm_;
    std::string prm_url_;
    std::shared_ptr<gateway::ToolProxy> proxy_;
    std::unique_ptr<gateway::Gateway> gw_;
    std::unique_ptr<judge::JudgeBackend> judge_;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// thrown by any call is rethrown after all threads finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex mu;
    auto loop = [&] {
        for (std::size_t i; (i = next++) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!first) first = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        loop();
    } else {
        std::vector<std::thread> ts;
        for (std::size_t w = 0; w < workers; ++w) ts.emplace_back(loop);
        for (auto& t : ts) t.join();
    }
    if (first) std::rethrow_exception(first);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct RunOutput {
    std::vector<Trajectory> trajectories;  // suite order
    std::vector<std::vector<json>> events;  // per task, suite order
    std::size_t failures = 0;
    MetricsReport report;
};

inline void judge_trajectory(Trajectory& t, const Task& task, judge::JudgeBackend& judge) {
    auto j = judge.judge(task, t.final_answer);
    t.answer_status = j.status;
    if (j.audit_flag) t.notes.push_back("judge: " + j.rationale);
}

// Per-task errors are recorded as Unsolved with a note; the run continues.
inline RunOutput cmd_run(const Suite& suite, const engine::EngineConfig& ec, Environment& env, const std::string& mode = "codetool") {
    if (suite.tasks.empty()) throw EmptyInput("suite has no tasks");
    RunOutput out;
    out.trajectories.resize(suite.tasks.size());
    out.events.resize(suite.tasks.size());
    std::vector<char> failed(suite.tasks.size(), 0);
    parallel_for(suite.tasks.size(), env.config().task_workers, [&](std::size_t i) {
        const Task& task = suite.tasks[i];
        auto backend = env.make_backend();
        auto scorer = env.make_scorer(*backend, ec);
        auto sink = [&out, i](const json& e) { out.events[i].push_back(e); };
        Trajectory t;
        try {
            t = engine::run_task(task, ec, *backend, *scorer, env.gateway(), sink);
            judge_trajectory(t, task, env.judge());
        } catch (const Error& e) {
            t = Trajectory{};
            t.task_id = task.id;
            t.answer_status = AnswerStatus::Unsolved;
            t.notes.push_back(std::string("error: ") + e.what());
            failed[i] = 1;
            out.events[i].push_back(json{{"event", "error"}, {"task_id", task.id}, {"message", e.what()}});
        }
        out.trajectories[i] = std::move(t);
    });
    for (char f : failed) out.failures += static_cast<std::size_t>(f);
    out.report = build_report(mode, suite, out.trajectories, out.failures);
    return out;
}

struct AblationOutput {
    std::vector<std::pair<std::string, RunOutput>> variants;  // full, no_spot, no_latent
};

inline AblationOutput cmd_ablate(const Suite& suite, const engine::EngineConfig& base, Environment& env) {
    AblationOutput out;
    auto full = base, no_spot = base, no_latent = base;
    full.spot_enabled = full.latent_enabled = true;
    no_spot.spot_enabled = false;
    no_spot.latent_enabled = true;
    no_latent.spot_enabled = true;
    no_latent.latent_enabled = false;
    out.variants.emplace_back("full", cmd_run(suite, full, env, "full"));
    out.variants.emplace_back("no_spot", cmd_run(suite, no_spot, env, "no_spot"));
    out.variants.emplace_back("no_latent", cmd_run(suite, no_latent, env, "no_latent"));
    return out;
}

// --- JSON-mode baseline: one tool call per model turn, truncated observations.

inline std::string json_mode_instruction() {
    return "You solve the user's query by calling tools, one call per turn.\n"
           "Reply with a short thought, then one fenced ```json block holding either\n"
           "{\"tool\": \"<tool name>\", \"params\": {...}} to call a tool, or\n"
           "{\"final_answer\": \"...\"} once you can answer.\n"
           "Tool responses are shown to you truncated.\n";
}

struct JsonAction {
    std::optional<std::string> final_answer;
    std::string tool;
    json params = json::object();
};

inline JsonAction parse_json_action(const std::string& raw) {
    std::string body;
    auto fence = raw.find("```");
    if (fence != std::string::npos) {
        auto nl = raw.find('\n', fence);
        auto close = nl == std::string::npos ? std::string::npos : raw.find("```", nl);
        if (close != std::string::npos) body = raw.substr(nl + 1, close - nl - 1);
    }
    if (body.empty()) {
        auto a = raw.find('{'), b = raw.rfind('}');
        if (a == std::string::npos || b == std::string::npos || b < a) throw MalformedInput("no JSON action found");
        body = raw.substr(a, b - a + 1);
    }
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw MalformedInput("action is not a JSON object");
    JsonAction act;
    if (j.contains("final_answer")) {
        act.final_answer = j["final_answer"].is_string() ? j["final_answer"].get<std::string>() : j["final_answer"].dump();
        return act;
    }
    if (!j.contains("tool") || !j["tool"].is_string()) throw MalformedInput("action names no tool");
    act.tool = j["tool"].get<std::string>();
    if (j.contains("params")) act.params = j["params"];
    return act;
}

inline Trajectory run_json_task(const Task& task, const RunConfig& cfg, policy::PolicyBackend& backend, gateway::ToolProxy& proxy,
                                const std::string& session_id) {
    Trajectory traj;
    traj.task_id = task.id;
    proxy.register_session(session_id, task.toolset);
    std::vector<policy::HistoryEntry> history;
    std::vector<std::string> prefix;
    const int cap = rollout::depth_cap(task, cfg.engine.hp);
    try {
        for (int t = 1; t <= cap; ++t) {
            policy::GenerateRequest req;
            req.task_id = task.id;
            req.committed_codes = prefix;
            req.prompt = policy::assemble_prompt(task, history, cfg.engine.sentinel);
            req.prompt.system_instruction = json_mode_instruction();
            req.n = 1;
            req.temperature = cfg.engine.temperature;
            req.seed = mix_seed(cfg.engine.hp.rng_seed, fnv1a64(task.id), static_cast<std::uint64_t>(t));
            auto gen = backend.generate(req).at(0);

            CandidateRecord rec;
            rec.step.step_index = t;
            rec.step.raw_model_output = gen.text;
            rec.step.token_count = gen.tokens.value_or(policy::whitespace_tokens(gen.text));
            rec.selected = true;
            bool done = false;
            try {
                auto act = parse_json_action(gen.text);
                auto fence = gen.text.find("```");
                rec.step.thought = policy::trim(gen.text.substr(0, fence == std::string::npos ? 0 : fence));
                if (act.final_answer) {
                    rec.step.code = json{{"final_answer", *act.final_answer}}.dump();
                    rec.exec.stdout_text = cfg.engine.sentinel + " " + *act.final_answer + "\n";
                    traj.final_answer = *act.final_answer;
                    traj.answer_source = AnswerSource::Sentinel;
                    done = true;
                } else {
                    rec.step.code = json{{"tool", act.tool}, {"params", act.params}}.dump();
                    try {
                        std::string body = proxy.call(session_id, act.tool, act.params).dump();
                        if (body.size() > cfg.json_truncate_bytes) body.resize(cfg.json_truncate_bytes);
                        rec.exec.stdout_text = body;
                    } catch (const ToolCallError& e) {
                        rec.exec.status = ExecStatus::RuntimeError;
                        rec.exec.stderr_text = std::string("ToolError: ") + e.what();
                    }
                    rec.exec.tool_calls = proxy.drain_log(session_id);
                }
            } catch (const MalformedInput& e) {
                rec.exec.status = ExecStatus::ProtocolError;
                rec.exec.stderr_text = e.what();
            }
            rec.rewards = reward::make_bundle(reward::on_the_spot(rec.exec), reward::constant_estimate(0.0));
            history.push_back(policy::HistoryEntry{rec.step.thought, rec.step.code, answer::observation(rec.exec)});
            prefix.push_back(gen.text);
            traj.total_tokens += rec.step.token_count;
            StepRecord sr;
            sr.candidates.push_back(std::move(rec));
            traj.steps.push_back(std::move(sr));
            if (done) break;
        }
    } catch (...) {
        proxy.unregister_session(session_id);
        throw;
    }
    proxy.unregister_session(session_id);
    traj.depth = static_cast<int>(traj.steps.size());
    if (traj.answer_source == AnswerSource::None && !history.empty()) {
        traj.final_answer = answer::concatenate(history);
        traj.answer_source = AnswerSource::Concatenated;
    }
    return traj;
}

inline RunOutput cmd_json_baseline(const Suite& suite, Environment& env) {
    if (suite.tasks.empty()) throw EmptyInput("suite has no tasks");
    RunOutput out;
    out.trajectories.resize(suite.tasks.size());
    out.events.resize(suite.tasks.size());
    std::vector<char> failed(suite.tasks.size(), 0);
    parallel_for(suite.tasks.size(), env.config().task_workers, [&](std::size_t i) {
        const Task& task = suite.tasks[i];
        auto backend = env.make_backend(true);
        Trajectory t;
        try {
            t = run_json_task(task, env.config(), *backend, env.proxy(), "json-" + std::to_string(i) + "-" + task.id);
            judge_trajectory(t, task, env.judge());
        } catch (const Error& e) {
            t = Trajectory{};
            t.task_id = task.id;
            t.answer_status = AnswerStatus::Unsolved;
            t.notes.push_back(std::string("error: ") + e.what());
            failed[i] = 1;
        }
        out.events[i].push_back(json{{"event", "done"}, {"task_id", task.id}, {"depth", t.depth}});
        out.trajectories[i] = std::move(t);
    });
    for (char f : failed) out.failures += static_cast<std::size_t>(f);
    out.report = build_report("json", suite, out.trajectories, out.failures);
    return out;
}

struct CollectOutput {
    std::vector<rollout::ProcessTree> trees;
    std::vector<rollout::PrmPair> pairs;
    std::size_t failures = 0;
    std::vector<std::string> errors;
};

// Rollout latents are always used here, whatever latent.mode says.
inline CollectOutput cmd_collect(const Suite& suite, Environment& env) {
    CollectOutput out;
    const auto& cfg = env.config();
    std::vector<std::optional<rollout::ProcessTree>> trees(suite.tasks.size());
    std::vector<std::string> errors(suite.tasks.size());
    parallel_for(suite.tasks.size(), cfg.task_workers, [&](std::size_t i) {
        auto backend = env.make_backend();
        auto scorer = env.make_rollout_scorer(*backend, cfg.engine.hp);
        rollout::CollectOptions co;
        co.depth_cap = cfg.collect_depth_cap;
        co.sentinel = cfg.engine.sentinel;
        co.temperature = cfg.rollout_temperature;
        try {
            trees[i] = rollout::collect_tree(suite.tasks[i], *backend, env.gateway(), *scorer, cfg.engine.hp, co);
        } catch (const Error& e) {
            errors[i] = suite.tasks[i].id + ": " + e.what();
        }
    });
    for (std::size_t i = 0; i < trees.size(); ++i) {
        if (!trees[i]) {
            ++out.failures;
            out.errors.push_back(errors[i]);
            continue;
        }
        auto p = rollout::label_pairs(*trees[i]);
        out.pairs.insert(out.pairs.end(), p.begin(), p.end());
        out.trees.push_back(std::move(*trees[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline std::string safe_name(const std::string& id) {
    std::string s;
    for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    return s;
}

// <dir>/trajectories/<task>.json, report.json, report.csv, tasks.csv, events.jsonl
inline void write_run(const fs::path& dir, const RunOutput& run) {
    fs::create_directories(dir / "trajectories");
    for (const auto& t : run.trajectories) write_text(dir / "trajectories" / (safe_name(t.task_id) + ".json"), serialize_trajectory(t));
    write_text(dir / "report.json", canonical_dump(to_json(run.report)));
    write_text(dir / "report.csv", to_csv(run.report));
    write_text(dir / "tasks.csv", tasks_csv(run.trajectories));
    std::string ev;
    for (const auto& per_task : run.events)
        for (const auto& e : per_task) ev += e.dump() + "\n";
    write_text(dir / "events.jsonl", ev);
}

inline std::vector<Trajectory> read_trajectories(const fs::path& dir) {
    fs::path d = fs::exists(dir / "trajectories") ? dir / "trajectories" : dir;
    if (!fs::is_directory(d)) throw MalformedInput("not a directory: " + d.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(d))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Trajectory> out;
    for (const auto& f : files) out.push_back(deserialize_trajectory(read_text(f)));
    return out;
}

// Writes a simulated bundle as suite.json, tools.json, policy.json and, when
// present, policy_json.json and prm.json. Returns a config referencing them.
inline json write_bundle(const fs::path& dir, const sim::Bundle& b) {
    fs::create_directories(dir);
    write_text(dir / "suite.json", b.suite.dump(2) + "\n");
    write_text(dir / "tools.json", b.tools.dump(2) + "\n");
    write_text(dir / "policy.json", b.policy.dump(2) + "\n");
    json cfg{{"suite", "suite.json"}, {"tool_scenario", "tools.json"}, {"policy", {{"kind", "scripted"}, {"scenario", "policy.json"}}}};
    if (!b.policy_json.is_null()) {
        write_text(dir / "policy_json.json", b.policy_json.dump(2) + "\n");
        cfg["policy"]["json_scenario"] = "policy_json.json";
    }
    if (!b.prm.is_null()) {
        write_text(dir / "prm.json", b.prm.dump(2) + "\n");
        cfg["latent"] = {{"mode", "prm"}, {"prm_scenario", "prm.json"}};
    } else {
        cfg["latent"] = {{"mode", "rollout"}};
    }
    return cfg;
}

}  // namespace codetool::harness
