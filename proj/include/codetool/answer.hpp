#pragma once
// Final-answer assembly and the step-execution helper shared by the engine,
// rollouts and tree collection.

#include "gateway.hpp"
#include "policy.hpp"

#include <optional>
#include <string>
#include <vector>

namespace codetool::answer {

using policy::HistoryEntry;

// Text after the first line that starts with the sentinel, plus every line
// printed after it.
inline std::optional<std::string> after_sentinel(const std::string& out, const std::string& sentinel) {
    std::size_t pos = 0;
    while (pos <= out.size()) {
        auto eol = out.find('\n', pos);
        std::string_view line(out.data() + pos, (eol == std::string::npos ? out.size() : eol) - pos);
        if (line.substr(0, sentinel.size()) == sentinel) {
            std::string rest = out.substr(pos + sentinel.size());
            return policy::trim(rest);
        }
        if (eol == std::string::npos) break;
        pos = eol + 1;
    }
    return std::nullopt;
}

inline bool has_sentinel(const std::string& out, const std::string& sentinel) { return after_sentinel(out, sentinel).has_value(); }

struct Composed {
    std::string text;
    AnswerSource source = AnswerSource::None;
};

inline std::string concatenate(const std::vector<HistoryEntry>& steps) {
    std::string s;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) s += "\n";
        s += "Step" + std::to_string(i + 1) + ": " + steps[i].thought + " => " + policy::trim(steps[i].output);
    }
    return s;
}

// Sentinel text if any step printed it (latest step wins); otherwise the
// backend's reorganization of thought/output pairs, or their concatenation.
inline Composed compose(const std::vector<HistoryEntry>& steps, const std::string& query, const std::string& sentinel,
                        policy::PolicyBackend* backend) {
    for (auto it = steps.rbegin(); it != steps.rend(); ++it)
        if (auto a = after_sentinel(it->output, sentinel)) return {*a, AnswerSource::Sentinel};
    if (steps.empty()) return {"", AnswerSource::None};
    if (backend)
        if (auto r = backend->reorganize(query, steps)) return {*r, AnswerSource::Backend};
    return {concatenate(steps), AnswerSource::Concatenated};
}

inline std::string observation(const ExecutionResult& r) {
    if (r.status == ExecStatus::Success) return r.stdout_text;
    std::string s = r.stdout_text;
    if (!s.empty() && s.back() != '\n') s += '\n';
    return s + r.stderr_text;
}

struct StepOutcome {
    CodeStep step;
    ExecutionResult exec;
    HistoryEntry entry;
};

// Runs a sampled candidate on `session` and commits it there. Unparseable
// candidates become protocol errors and leave the session untouched.
inline StepOutcome execute_candidate(gateway::Gateway& gw, gateway::SessionHandle& session, const policy::SampledCandidate& c,
                                     std::int64_t timeout_ms) {
    StepOutcome out;
    out.step = c.step;
    if (c.parsed) {
        out.exec = gw.exec_step(session, c.step.code, timeout_ms);
        gateway::Gateway::commit(session, c.step.code, out.exec.status);
    } else {
        out.exec.status = ExecStatus::ProtocolError;
        out.exec.stderr_text = "protocol error: " + c.parse_error + "\n";
    }
    out.entry = HistoryEntry{c.step.thought, c.step.code, observation(out.exec)};
    return out;
}

}  // namespace codetool::answer
