#pragma once
// Shared domain model: tool docs, tasks, steps, rewards, trajectories, and
// their canonical JSON form.
//
// Canonical serialization is key-sorted compact JSON (nlohmann::json keeps
// object keys ordered), UTF-8, terminated by a single '\n'. Every struct is a
// plain value type with defaulted equality so round-trips can be checked with ==.

#include "errors.hpp"
#include "json.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace codetool {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Enumerations and their wire names
// ---------------------------------------------------------------------------

enum class HttpMethod { Get, Post };
enum class ParamKind { String, Integer, Number, Boolean, Array };
enum class ExecStatus { Success, RuntimeError, Timeout, ProtocolError };
enum class LatentMethod { Prm, Rollout, Constant };
enum class AnswerStatus { Solved, Unsure, Unsolved };
enum class AnswerSource { None, Sentinel, Concatenated, Backend };

namespace detail {

template <class E, std::size_t N>
struct EnumNames {
    std::array<std::pair<E, std::string_view>, N> table;

    std::string_view name(E e) const {
        for (const auto& [k, v] : table)
            if (k == e) return v;
        return "?";
    }
    E parse(std::string_view s, std::string_view what) const {
        for (const auto& [k, v] : table)
            if (v == s) return k;
        throw MalformedInput("unknown " + std::string(what) + ": " + std::string(s));
    }
};

inline constexpr EnumNames<HttpMethod, 2> kMethodNames{{{{HttpMethod::Get, "GET"}, {HttpMethod::Post, "POST"}}}};
inline constexpr EnumNames<ParamKind, 5> kKindNames{{{{ParamKind::String, "string"},
                                                      {ParamKind::Integer, "integer"},
                                                      {ParamKind::Number, "number"},
                                                      {ParamKind::Boolean, "boolean"},
                                                      {ParamKind::Array, "array"}}}};
inline constexpr EnumNames<ExecStatus, 4> kStatusNames{{{{ExecStatus::Success, "success"},
                                                         {ExecStatus::RuntimeError, "runtime_error"},
                                                         {ExecStatus::Timeout, "timeout"},
                                                         {ExecStatus::ProtocolError, "protocol_error"}}}};
inline constexpr EnumNames<LatentMethod, 3> kLatentNames{
    {{{LatentMethod::Prm, "prm"}, {LatentMethod::Rollout, "rollout"}, {LatentMethod::Constant, "constant"}}}};
inline constexpr EnumNames<AnswerStatus, 3> kAnswerNames{
    {{{AnswerStatus::Solved, "Solved"}, {AnswerStatus::Unsure, "Unsure"}, {AnswerStatus::Unsolved, "Unsolved"}}}};
inline constexpr EnumNames<AnswerSource, 4> kSourceNames{{{{AnswerSource::None, "none"},
                                                          {AnswerSource::Sentinel, "sentinel"},
                                                          {AnswerSource::Concatenated, "concatenated"},
                                                          {AnswerSource::Backend, "backend"}}}};

}  // namespace detail

inline std::string_view to_string(HttpMethod v) { return detail::kMethodNames.name(v); }
inline std::string_view to_string(ParamKind v) { return detail::kKindNames.name(v); }
inline std::string_view to_string(ExecStatus v) { return detail::kStatusNames.name(v); }
inline std::string_view to_string(LatentMethod v) { return detail::kLatentNames.name(v); }
inline std::string_view to_string(AnswerStatus v) { return detail::kAnswerNames.name(v); }
inline std::string_view to_string(AnswerSource v) { return detail::kSourceNames.name(v); }

inline HttpMethod parse_http_method(std::string_view s) { return detail::kMethodNames.parse(s, "http method"); }
inline ParamKind parse_param_kind(std::string_view s) { return detail::kKindNames.parse(s, "param kind"); }
inline ExecStatus parse_exec_status(std::string_view s) { return detail::kStatusNames.parse(s, "exec status"); }
inline LatentMethod parse_latent_method(std::string_view s) { return detail::kLatentNames.parse(s, "latent method"); }
inline AnswerStatus parse_answer_status(std::string_view s) { return detail::kAnswerNames.parse(s, "answer status"); }
inline AnswerSource parse_answer_source(std::string_view s) { return detail::kSourceNames.parse(s, "answer source"); }

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::String;
    bool required = false;
    std::string description;

    bool operator==(const ParamSpec&) const = default;
};

// Machine-readable protocol of one tool.
struct ToolDoc {
    std::string name;
    std::string description;
    std::string category;
    HttpMethod http_method = HttpMethod::Get;
    std::string url_template;  // e.g. "/weather/{city}"
    std::vector<ParamSpec> params;

    const ParamSpec* find_param(std::string_view n) const {
        for (const auto& p : params)
            if (p.name == n) return &p;
        return nullptr;
    }
    bool operator==(const ToolDoc&) const = default;
};

struct AnswerMatcher {
    std::string pattern;
    bool regex = false;

    bool operator==(const AnswerMatcher&) const = default;
};

// Matcher spec consumed by the rule-based judge.
struct AnswerOracle {
    std::vector<AnswerMatcher> matchers;
    bool case_sensitive = false;

    bool operator==(const AnswerOracle&) const = default;
};

struct Task {
    std::string id;
    std::string query;
    std::vector<ToolDoc> toolset;
    std::optional<AnswerOracle> oracle;
    int max_depth = 8;

    const ToolDoc* find_tool(std::string_view n) const {
        for (const auto& t : toolset)
            if (t.name == n) return &t;
        return nullptr;
    }
    bool operator==(const Task&) const = default;
};

struct CodeStep {
    int step_index = 1;
    std::string thought;
    std::string code;
    std::string raw_model_output;
    std::int64_t token_count = 0;

    bool operator==(const CodeStep&) const = default;
};

struct ExecutionResult {
    ExecStatus status = ExecStatus::Success;
    std::string stdout_text;
    std::string stderr_text;
    std::int64_t wall_time_ms = 0;
    std::vector<std::string> tool_calls;  // request hashes, in call order

    bool operator==(const ExecutionResult&) const = default;
};

struct RolloutStats {
    int delta_correct = 0;
    int delta_total = 1;
    double tau = 0.0;
    double raw_lr = 0.0;

    bool operator==(const RolloutStats&) const = default;
};

struct LatentEstimate {
    double value = 0.0;
    LatentMethod method = LatentMethod::Constant;
    std::optional<RolloutStats> rollout_stats;

    bool operator==(const LatentEstimate&) const = default;
};

struct RewardBundle {
    int r_spot = 0;
    LatentEstimate latent;
    double r_total = 0.0;

    bool operator==(const RewardBundle&) const = default;
};

struct CandidateRecord {
    CodeStep step;
    ExecutionResult exec;
    RewardBundle rewards;
    bool selected = false;

    bool operator==(const CandidateRecord&) const = default;
};

struct StepRecord {
    std::vector<CandidateRecord> candidates;
    std::size_t selected_index = 0;

    const CandidateRecord& selected() const { return candidates.at(selected_index); }
    bool operator==(const StepRecord&) const = default;
};

struct Trajectory {
    std::string task_id;
    std::vector<StepRecord> steps;
    std::string final_answer;
    AnswerSource answer_source = AnswerSource::None;
    std::optional<AnswerStatus> answer_status;
    int depth = 0;
    std::int64_t total_tokens = 0;
    std::vector<std::string> notes;  // judge audit flags, per-task errors

    bool operator==(const Trajectory&) const = default;
};

struct HyperParams {
    double alpha = 0.5;
    double beta = 0.9;
    double big_l = 10.0;
    int n_candidates = 2;
    int n_rollouts = 4;
    int max_depth = 8;
    std::int64_t exec_timeout_ms = 10000;
    std::uint64_t rng_seed = 0;

    bool operator==(const HyperParams&) const = default;
};

// Throws DomainError when a range constraint is violated.
inline void validate(const HyperParams& hp) {
    auto fail = [](const std::string& m) { throw DomainError("invalid hyper-parameter: " + m); };
    if (!(hp.alpha > 0.0 && hp.alpha <= 1.0)) fail("alpha must be in (0,1]");
    if (!(hp.beta > 0.0 && hp.beta <= 1.0)) fail("beta must be in (0,1]");
    if (!(hp.big_l > 0.0)) fail("L must be > 0");
    if (hp.n_candidates < 1) fail("n_candidates must be >= 1");
    if (hp.n_rollouts < 1) fail("n_rollouts must be >= 1");
    if (hp.max_depth < 1) fail("max_depth must be >= 1");
    if (hp.exec_timeout_ms <= 0) fail("exec_timeout_ms must be > 0");
}

// Solved -> 1, Unsure -> 0.5, Unsolved -> 0.
constexpr double status_score(AnswerStatus s) noexcept {
    switch (s) {
        case AnswerStatus::Solved: return 1.0;
        case AnswerStatus::Unsure: return 0.5;
        case AnswerStatus::Unsolved: return 0.0;
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

// Placeholder names in a url template, in order of appearance.
inline std::vector<std::string> url_placeholders(std::string_view tmpl) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = tmpl.find('{', pos)) != std::string_view::npos) {
        auto close = tmpl.find('}', pos);
        if (close == std::string_view::npos) break;
        out.emplace_back(tmpl.substr(pos + 1, close - pos - 1));
        pos = close + 1;
    }
    return out;
}

inline std::vector<std::string> validate_tool(const ToolDoc& tool) {
    std::vector<std::string> v;
    if (tool.name.empty()) v.push_back("tool with empty name");
    std::set<std::string> seen;
    for (const auto& p : tool.params)
        if (!seen.insert(p.name).second) v.push_back("duplicate param name: " + tool.name + "." + p.name);
    for (const auto& ph : url_placeholders(tool.url_template))
        if (!tool.find_param(ph)) v.push_back("unbound placeholder: " + ph);
    return v;
}

// Empty iff all Task and ToolDoc invariants hold.
inline std::vector<std::string> validate_task(const Task& task) {
    std::vector<std::string> v;
    if (task.toolset.empty()) v.push_back("empty toolset");
    if (task.max_depth < 1) v.push_back("max_depth must be >= 1");
    std::set<std::string> names;
    for (const auto& t : task.toolset) {
        if (!names.insert(t.name).second) v.push_back("duplicate tool name: " + t.name);
        auto tv = validate_tool(t);
        v.insert(v.end(), tv.begin(), tv.end());
    }
    return v;
}

inline std::vector<std::string> validate_step_record(const StepRecord& rec) {
    std::vector<std::string> v;
    if (rec.candidates.empty()) return {"step record without candidates"};
    if (rec.selected_index >= rec.candidates.size()) return {"selected_index out of range"};
    int n_selected = 0;
    for (std::size_t i = 0; i < rec.candidates.size(); ++i) {
        const auto& c = rec.candidates[i];
        if (c.selected) ++n_selected;
        if (c.selected != (i == rec.selected_index)) v.push_back("selected flag disagrees with selected_index");
        if (c.rewards.r_total != c.rewards.r_spot + c.rewards.latent.value) v.push_back("r_total != r_spot + latent");
    }
    if (n_selected != 1) v.push_back("exactly one candidate must be selected");
    return v;
}

inline std::vector<std::string> validate_trajectory(const Trajectory& t) {
    std::vector<std::string> v;
    if (t.depth != static_cast<int>(t.steps.size())) v.push_back("depth != number of steps");
    std::int64_t tokens = 0;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        auto sv = validate_step_record(t.steps[i]);
        v.insert(v.end(), sv.begin(), sv.end());
        if (!sv.empty()) continue;
        const auto& sel = t.steps[i].selected();
        tokens += sel.step.token_count;
        if (sel.step.step_index != static_cast<int>(i) + 1) v.push_back("selected step indices not contiguous from 1");
    }
    if (tokens != t.total_tokens) v.push_back("total_tokens != sum of selected token counts");
    return v;
}

// ---------------------------------------------------------------------------
// JSON mapping
// ---------------------------------------------------------------------------

inline void to_json(json& j, const ParamSpec& p) {
    j = json{{"name", p.name}, {"kind", to_string(p.kind)}, {"required", p.required}, {"description", p.description}};
}
inline void from_json(const json& j, ParamSpec& p) {
    p.name = j.at("name").get<std::string>();
    p.kind = parse_param_kind(j.value("kind", std::string("string")));
    p.required = j.value("required", false);
    p.description = j.value("description", std::string());
}

inline void to_json(json& j, const ToolDoc& t) {
    j = json{{"name", t.name},
             {"description", t.description},
             {"category", t.category},
             {"http_method", to_string(t.http_method)},
             {"url_template", t.url_template},
             {"params", t.params}};
}
inline void from_json(const json& j, ToolDoc& t) {
    t.name = j.at("name").get<std::string>();
    t.description = j.value("description", std::string());
    t.category = j.value("category", std::string());
    t.http_method = parse_http_method(j.value("http_method", std::string("GET")));
    t.url_template = j.at("url_template").get<std::string>();
    t.params = j.value("params", std::vector<ParamSpec>{});
}

inline void to_json(json& j, const AnswerMatcher& m) { j = json{{"pattern", m.pattern}, {"regex", m.regex}}; }
inline void from_json(const json& j, AnswerMatcher& m) {
    if (j.is_string()) {
        m = AnswerMatcher{j.get<std::string>(), false};
        return;
    }
    m.pattern = j.at("pattern").get<std::string>();
    m.regex = j.value("regex", false);
}

inline void to_json(json& j, const AnswerOracle& o) {
    j = json{{"matchers", o.matchers}, {"case_sensitive", o.case_sensitive}};
}
inline void from_json(const json& j, AnswerOracle& o) {
    o.matchers = j.at("matchers").get<std::vector<AnswerMatcher>>();
    o.case_sensitive = j.value("case_sensitive", false);
}

inline void to_json(json& j, const Task& t) {
    j = json{{"id", t.id}, {"query", t.query}, {"toolset", t.toolset}, {"max_depth", t.max_depth}};
    if (t.oracle) j["oracle"] = *t.oracle;
}
inline void from_json(const json& j, Task& t) {
    t.id = j.at("id").get<std::string>();
    t.query = j.at("query").get<std::string>();
    t.toolset = j.at("toolset").get<std::vector<ToolDoc>>();
    t.max_depth = j.value("max_depth", 8);
    t.oracle.reset();
    if (j.contains("oracle") && !j.at("oracle").is_null()) t.oracle = j.at("oracle").get<AnswerOracle>();
}

inline void to_json(json& j, const CodeStep& s) {
    j = json{{"step_index", s.step_index},
             {"thought", s.thought},
             {"code", s.code},
             {"raw_model_output", s.raw_model_output},
             {"token_count", s.token_count}};
}
inline void from_json(const json& j, CodeStep& s) {
    s.step_index = j.at("step_index").get<int>();
    s.thought = j.at("thought").get<std::string>();
    s.code = j.at("code").get<std::string>();
    s.raw_model_output = j.at("raw_model_output").get<std::string>();
    s.token_count = j.at("token_count").get<std::int64_t>();
}

inline void to_json(json& j, const ExecutionResult& r) {
    j = json{{"status", to_string(r.status)},
             {"stdout", r.stdout_text},
             {"stderr", r.stderr_text},
             {"wall_time_ms", r.wall_time_ms},
             {"tool_calls", r.tool_calls}};
}
inline void from_json(const json& j, ExecutionResult& r) {
    r.status = parse_exec_status(j.at("status").get<std::string>());
    r.stdout_text = j.at("stdout").get<std::string>();
    r.stderr_text = j.at("stderr").get<std::string>();
    r.wall_time_ms = j.at("wall_time_ms").get<std::int64_t>();
    r.tool_calls = j.at("tool_calls").get<std::vector<std::string>>();
}

inline void to_json(json& j, const RolloutStats& s) {
    j = json{{"delta_correct", s.delta_correct}, {"delta_total", s.delta_total}, {"tau", s.tau}, {"raw_lr", s.raw_lr}};
}
inline void from_json(const json& j, RolloutStats& s) {
    s.delta_correct = j.at("delta_correct").get<int>();
    s.delta_total = j.at("delta_total").get<int>();
    s.tau = j.at("tau").get<double>();
    s.raw_lr = j.at("raw_lr").get<double>();
}

inline void to_json(json& j, const LatentEstimate& l) {
    j = json{{"value", l.value}, {"method", to_string(l.method)}};
    if (l.rollout_stats) j["rollout_stats"] = *l.rollout_stats;
}
inline void from_json(const json& j, LatentEstimate& l) {
    l.value = j.at("value").get<double>();
    l.method = parse_latent_method(j.at("method").get<std::string>());
    l.rollout_stats.reset();
    if (j.contains("rollout_stats")) l.rollout_stats = j.at("rollout_stats").get<RolloutStats>();
}

inline void to_json(json& j, const RewardBundle& b) {
    j = json{{"r_spot", b.r_spot}, {"latent", b.latent}, {"r_total", b.r_total}};
}
inline void from_json(const json& j, RewardBundle& b) {
    b.r_spot = j.at("r_spot").get<int>();
    b.latent = j.at("latent").get<LatentEstimate>();
    b.r_total = j.at("r_total").get<double>();
}

inline void to_json(json& j, const CandidateRecord& c) {
    j = json{{"step", c.step}, {"exec", c.exec}, {"rewards", c.rewards}, {"selected", c.selected}};
}
inline void from_json(const json& j, CandidateRecord& c) {
    c.step = j.at("step").get<CodeStep>();
    c.exec = j.at("exec").get<ExecutionResult>();
    c.rewards = j.at("rewards").get<RewardBundle>();
    c.selected = j.at("selected").get<bool>();
}

inline void to_json(json& j, const StepRecord& s) {
    j = json{{"candidates", s.candidates}, {"selected_index", s.selected_index}};
}
inline void from_json(const json& j, StepRecord& s) {
    s.candidates = j.at("candidates").get<std::vector<CandidateRecord>>();
    s.selected_index = j.at("selected_index").get<std::size_t>();
}

inline void to_json(json& j, const Trajectory& t) {
    j = json{{"task_id", t.task_id},
             {"steps", t.steps},
             {"final_answer", t.final_answer},
             {"answer_source", to_string(t.answer_source)},
             {"depth", t.depth},
             {"total_tokens", t.total_tokens},
             {"notes", t.notes}};
    j["answer_status"] = t.answer_status ? json(to_string(*t.answer_status)) : json(nullptr);
}
inline void from_json(const json& j, Trajectory& t) {
    t.task_id = j.at("task_id").get<std::string>();
    t.steps = j.at("steps").get<std::vector<StepRecord>>();
    t.final_answer = j.at("final_answer").get<std::string>();
    t.answer_source = parse_answer_source(j.at("answer_source").get<std::string>());
    t.depth = j.at("depth").get<int>();
    t.total_tokens = j.at("total_tokens").get<std::int64_t>();
    t.notes = j.at("notes").get<std::vector<std::string>>();
    const auto& st = j.at("answer_status");
    t.answer_status.reset();
    if (!st.is_null()) t.answer_status = parse_answer_status(st.get<std::string>());
}

inline void to_json(json& j, const HyperParams& h) {
    j = json{{"alpha", h.alpha},
             {"beta", h.beta},
             {"big_l", h.big_l},
             {"n_candidates", h.n_candidates},
             {"n_rollouts", h.n_rollouts},
             {"max_depth", h.max_depth},
             {"exec_timeout_ms", h.exec_timeout_ms},
             {"rng_seed", h.rng_seed}};
}
// Missing keys keep their defaults.
inline void from_json(const json& j, HyperParams& h) {
    HyperParams d;
    h.alpha = j.value("alpha", d.alpha);
    h.beta = j.value("beta", d.beta);
    h.big_l = j.value("big_l", d.big_l);
    h.n_candidates = j.value("n_candidates", d.n_candidates);
    h.n_rollouts = j.value("n_rollouts", d.n_rollouts);
    h.max_depth = j.value("max_depth", d.max_depth);
    h.exec_timeout_ms = j.value("exec_timeout_ms", d.exec_timeout_ms);
    h.rng_seed = j.value("rng_seed", d.rng_seed);
}

// ---------------------------------------------------------------------------
// Canonical byte form
// ---------------------------------------------------------------------------

inline std::string canonical_dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::strict) + "\n"; }

// Parses canonical (or any valid) JSON text into T; every failure becomes MalformedInput.
template <class T>
T parse_canonical(std::string_view bytes) {
    try {
        return json::parse(bytes.begin(), bytes.end()).get<T>();
    } catch (const MalformedInput&) {
        throw;
    } catch (const std::exception& e) {
        throw MalformedInput(std::string("malformed input: ") + e.what());
    }
}

inline std::string serialize_trajectory(const Trajectory& t) { return canonical_dump(json(t)); }
inline Trajectory deserialize_trajectory(std::string_view bytes) { return parse_canonical<Trajectory>(bytes); }

inline std::string serialize_task(const Task& t) { return canonical_dump(json(t)); }
inline Task deserialize_task(std::string_view bytes) { return parse_canonical<Task>(bytes); }

}  // namespace codetool
