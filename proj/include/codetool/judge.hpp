#pragma once
// Answer judging (Solved / Unsure / Unsolved) and the solvable pass rate.

#include "chat.hpp"
#include "core.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <span>
#include <string>

namespace codetool::judge {

inline double sopr(std::span<const AnswerStatus> statuses) {
    if (statuses.empty()) throw EmptyInput("sopr: no statuses");
    double sum = 0.0;
    for (auto s : statuses) sum += status_score(s);
    return sum / static_cast<double>(statuses.size());
}

// Same text as data/prompts/sopr_judge_v1.txt.
inline constexpr const char* kJudgePromptVersion = "sopr_judge_v1";
inline constexpr const char* kJudgePrompt =
    R"(Giving the query and answer, you need to give answer_status of the answer by following rules:
1. If the answer doesn't contain any information that is helpful for answering the user's query, return "Unsolved".
2. If the answer is a positive/straight response for the given query, you have to further check.
2.1 If the answer is not sufficient to determine whether it solves the query or not, return "Unsure".
2.2 If the answer solves part of the query or does not fully answer the query, return "Unsure".
2.3 If the answer is sufficient to solve the query, return "Solved".

Query: {query}

Answer: {answer}

Now give your reason in "content" and "answer_status" of JSON to "check_answer_status".
)";

inline std::string render_prompt(const std::string& tmpl, const std::string& query, const std::string& answer) {
    std::string out = tmpl;
    // answer first so a literal "{query}" inside an answer is not expanded
    auto sub = [&out](const std::string& key, const std::string& value) {
        auto pos = out.find(key);
        if (pos != std::string::npos) out.replace(pos, key.size(), value);
    };
    auto q = out.find("{query}");
    auto a = out.find("{answer}");
    if (q != std::string::npos && a != std::string::npos && a > q) {
        sub("{answer}", answer);
        sub("{query}", query);
    } else {
        sub("{query}", query);
        sub("{answer}", answer);
    }
    return out;
}

struct Judgment {
    AnswerStatus status = AnswerStatus::Unsolved;
    std::string rationale;
    bool audit_flag = false;  // set when the label was not produced by the judge itself
};

class JudgeBackend {
public:
    virtual ~JudgeBackend() = default;
    virtual Judgment judge(const Task& task, const std::string& answer) = 0;
};

namespace detail {
inline std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}
inline bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }
}  // namespace detail

inline bool matcher_hits(const AnswerMatcher& m, const std::string& answer, bool case_sensitive) {
    if (m.regex) {
        auto flags = std::regex::ECMAScript;
        if (!case_sensitive) flags |= std::regex::icase;
        try {
            return std::regex_search(answer, std::regex(m.pattern, flags));
        } catch (const std::regex_error& e) {
            throw MalformedInput("bad oracle regex '" + m.pattern + "': " + e.what());
        }
    }
    if (case_sensitive) return answer.find(m.pattern) != std::string::npos;
    return detail::lower(answer).find(detail::lower(m.pattern)) != std::string::npos;
}

// Oracle rule: all matchers hit -> Solved, some -> Unsure, none or empty answer -> Unsolved.
inline Judgment judge_with_oracle(const AnswerOracle& oracle, const std::string& answer) {
    if (detail::blank(answer)) return {AnswerStatus::Unsolved, "empty answer", false};
    std::size_t hits = 0;
    for (const auto& m : oracle.matchers)
        if (matcher_hits(m, answer, oracle.case_sensitive)) ++hits;
    std::string why = std::to_string(hits) + "/" + std::to_string(oracle.matchers.size()) + " matchers";
    if (oracle.matchers.empty()) return {AnswerStatus::Unsure, "oracle has no matchers", true};
    if (hits == oracle.matchers.size()) return {AnswerStatus::Solved, why, false};
    if (hits > 0) return {AnswerStatus::Unsure, why, false};
    return {AnswerStatus::Unsolved, why, false};
}

class MockJudge : public JudgeBackend {
public:
    Judgment judge(const Task& task, const std::string& answer) override {
        if (!task.oracle) {
            if (detail::blank(answer)) return {AnswerStatus::Unsolved, "empty answer", false};
            return {AnswerStatus::Unsure, "task has no oracle", true};
        }
        return judge_with_oracle(*task.oracle, answer);
    }
};

// Pulls answer_status out of a judge reply: plain JSON, JSON inside prose or
// a fence, or nested under check_answer_status / arguments.
inline std::optional<std::pair<AnswerStatus, std::string>> parse_judge_reply(const std::string& text) {
    auto find_status = [](const json& j, auto& self) -> std::optional<std::pair<AnswerStatus, std::string>> {
        if (!j.is_object()) return std::nullopt;
        if (j.contains("answer_status") && j["answer_status"].is_string()) {
            std::string s = detail::lower(j["answer_status"].get<std::string>());
            std::string why = j.contains("content") && j["content"].is_string() ? j["content"].get<std::string>() : "";
            if (s == "solved") return std::make_pair(AnswerStatus::Solved, why);
            if (s == "unsure") return std::make_pair(AnswerStatus::Unsure, why);
            if (s == "unsolved") return std::make_pair(AnswerStatus::Unsolved, why);
            return std::nullopt;
        }
        for (const auto& [k, v] : j.items()) {
            json inner = v;
            if (v.is_string()) {
                inner = json::parse(v.template get<std::string>(), nullptr, false);
                if (inner.is_discarded()) continue;
            }
            if (auto r = self(inner, self)) return r;
        }
        return std::nullopt;
    };
    auto open = text.find('{');
    auto close = text.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) return std::nullopt;
    json j = json::parse(text.substr(open, close - open + 1), nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return find_status(j, find_status);
}

class RemoteJudge : public JudgeBackend {
public:
    explicit RemoteJudge(chat::ChatConfig cfg, std::string prompt_template = kJudgePrompt)
        : client_(std::move(cfg)), template_(std::move(prompt_template)) {}

    // One retry on an unparseable reply, then Unsure with the audit flag.
    Judgment judge(const Task& task, const std::string& answer) override {
        std::string prompt = render_prompt(template_, task.query, answer);
        for (int attempt = 0; attempt < 2; ++attempt) {
            auto reply = client_.complete({{"user", prompt}}, 0.0, std::nullopt);
            if (auto parsed = parse_judge_reply(reply.content)) return {parsed->first, parsed->second, false};
        }
        return {AnswerStatus::Unsure, "unparseable judge response", true};
    }

private:
    chat::ChatClient client_;
    std::string template_;
};

}  // namespace codetool::judge
