#pragma once
// Policy: prompt assembly, model-output parsing and the candidate generators
// (scripted mock for offline runs, chat-completions for real models).

#include "chat.hpp"
#include "core.hpp"
#include "hashing.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace codetool::policy {

struct HistoryEntry {
    std::string thought;
    std::string code;
    std::string output;  // full stdout (plus stderr when the step failed)

    bool operator==(const HistoryEntry&) const = default;
};

inline void to_json(json& j, const HistoryEntry& h) { j = json{{"thought", h.thought}, {"code", h.code}, {"stdout", h.output}}; }
inline void from_json(const json& j, HistoryEntry& h) {
    h.thought = j.at("thought").get<std::string>();
    h.code = j.at("code").get<std::string>();
    h.output = j.at("stdout").get<std::string>();
}

struct PromptBundle {
    std::string system_instruction;
    std::string tool_docs_rendering;
    std::vector<HistoryEntry> history;
    std::string query;

    // Single user-turn text; the system instruction goes in its own message.
    std::string render_user() const {
        std::string s = "Query: " + query + "\n\nAvailable tools:\n" + tool_docs_rendering;
        if (!history.empty()) {
            s += "\nPrevious steps:\n";
            for (std::size_t i = 0; i < history.size(); ++i) {
                const auto& h = history[i];
                s += "\n### Step " + std::to_string(i + 1) + "\n";
                if (!h.thought.empty()) s += "Thought: " + h.thought + "\n";
                s += "Code:\n```python\n" + h.code + "\n```\nOutput:\n" + h.output + "\n";
            }
        }
        s += "\nWrite the code for step " + std::to_string(history.size() + 1) + ".";
        return s;
    }

    std::vector<chat::ChatMessage> messages() const {
        return {{"system", system_instruction}, {"user", render_user()}};
    }
};

inline std::string stepwise_instruction(const std::string& sentinel) {
    return "You solve the user's query by calling tools from Python code, one step at a time.\n"
           "At every step:\n"
           "- Briefly state what you will do next, then give exactly one fenced ```python code block.\n"
           "- Call a tool with call_tool(\"<tool name>\", {<parameters>}); it returns the parsed JSON response.\n"
           "- Print every tool response you obtain so it is visible in the next step.\n"
           "- Variables you define persist into later steps; use loops when many similar calls are needed.\n"
           "- Only call tools listed below, with the documented parameters.\n"
           "When you have everything needed, print one line that starts with \"" + sentinel +
           "\" followed by the complete answer, for example final_answer(\"...\").\n";
}

inline std::string render_tool_docs(const std::vector<ToolDoc>& tools) {
    std::string s;
    for (const auto& t : tools) {
        s += "- " + t.name + " [" + std::string(to_string(t.http_method)) + " " + t.url_template + "]";
        if (!t.category.empty()) s += " (" + t.category + ")";
        s += ": " + t.description + "\n";
        for (const auto& p : t.params) {
            s += "    " + p.name + " (" + std::string(to_string(p.kind)) + (p.required ? ", required" : ", optional") + ")";
            if (!p.description.empty()) s += ": " + p.description;
            s += "\n";
        }
    }
    return s;
}

inline PromptBundle assemble_prompt(const Task& task, std::vector<HistoryEntry> history, const std::string& sentinel) {
    PromptBundle p;
    p.system_instruction = stepwise_instruction(sentinel);
    p.tool_docs_rendering = render_tool_docs(task.toolset);
    p.history = std::move(history);
    p.query = task.query;
    return p;
}

inline std::int64_t whitespace_tokens(const std::string& s) {
    std::istringstream in(s);
    std::int64_t n = 0;
    std::string w;
    while (in >> w) ++n;
    return n;
}

inline std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// Thought = text before the first fence; code = body of the first fenced block.
// Later blocks are ignored. Throws NoCodeBlock.
inline CodeStep parse_step(const std::string& raw, int step_index, std::optional<std::int64_t> reported_tokens = std::nullopt) {
    auto open = raw.find("```");
    if (open == std::string::npos) throw NoCodeBlock();
    auto body_start = raw.find('\n', open);
    if (body_start == std::string::npos) throw NoCodeBlock();
    auto close = raw.find("```", body_start + 1);
    // An unterminated fence still yields the rest of the text as code.
    std::string code = raw.substr(body_start + 1, close == std::string::npos ? std::string::npos : close - body_start - 1);
    while (!code.empty() && (code.back() == '\n' || code.back() == '\r' || code.back() == ' ')) code.pop_back();
    if (trim(code).empty()) throw NoCodeBlock();
    CodeStep step;
    step.step_index = step_index;
    step.thought = trim(raw.substr(0, open));
    step.code = code;
    step.raw_model_output = raw;
    step.token_count = reported_tokens.value_or(whitespace_tokens(raw));
    return step;
}

enum class Purpose { Candidates, Rollout };

struct GenerateRequest {
    std::string task_id;
    std::vector<std::string> committed_codes;
    PromptBundle prompt;
    int n = 1;
    double temperature = 0.0;
    std::uint64_t seed = 0;
    Purpose purpose = Purpose::Candidates;
};

struct Generation {
    std::string text;
    std::optional<std::int64_t> tokens;
};

class PolicyBackend {
public:
    virtual ~PolicyBackend() = default;
    // Returns exactly req.n texts. Throws BackendUnreachable.
    virtual std::vector<Generation> generate(const GenerateRequest& req) = 0;
    // Every distinct continuation available at a state, when the backend can
    // enumerate them (scripted scenarios). Used by exhaustive rollouts.
    virtual std::optional<std::vector<Generation>> enumerate(const GenerateRequest&) { return std::nullopt; }
    // Reorganizes (thought, output) pairs into one answer; nullopt means the
    // caller should use the deterministic concatenation instead.
    virtual std::optional<std::string> reorganize(const std::string&, const std::vector<HistoryEntry>&) { return std::nullopt; }
};

// Replaces {{obs:N:key}} / {{obs:last:key}} with the value of "key" found in
// step N's output text. A missing value renders as "unknown".
inline std::string resolve_observation_refs(const std::string& text, const std::vector<HistoryEntry>& history) {
    static const std::regex ref(R"(\{\{obs:(last|\d+):([A-Za-z0-9_]+)\}\})");
    std::string out;
    auto begin = std::sregex_iterator(text.begin(), text.end(), ref);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        out += text.substr(last, static_cast<std::size_t>(m.position()) - last);
        last = static_cast<std::size_t>(m.position() + m.length());
        std::size_t idx = m[1] == "last" ? history.size() : static_cast<std::size_t>(std::stoul(m[2 - 1]));
        std::string value = "unknown";
        if (idx >= 1 && idx <= history.size()) {
            const std::string& obs = history[idx - 1].output;
            std::regex kv("\"" + m[2].str() + R"("\s*:\s*("(?:[^"\\]|\\.)*"|[^,\}\]\s]+))");
            std::smatch km;
            if (std::regex_search(obs, km, kv)) {
                value = km[1].str();
                if (value.size() >= 2 && value.front() == '"') value = value.substr(1, value.size() - 2);
            }
        }
        out += value;
    }
    out += text.substr(last);
    return out;
}

// Scenario: {"entries": [{"task_id", "prefix": [code...], "texts": [raw...]}], "default": [raw...]}.
// A state with no entry produces the default texts (by default a bare
// final_answer with no content, so paths terminate and are judged Unsolved).
class ScriptedMockBackend : public PolicyBackend {
public:
    explicit ScriptedMockBackend(const json& scenario) {
        try {
            for (const auto& e : scenario.value("entries", json::array())) {
                auto texts = e.at("texts").get<std::vector<std::string>>();
                if (texts.empty()) throw MalformedInput("scripted entry with no texts");
                entries_[key(e.at("task_id").get<std::string>(), e.value("prefix", std::vector<std::string>{}))] = texts;
            }
            if (scenario.contains("default")) default_ = scenario["default"].get<std::vector<std::string>>();
        } catch (const MalformedInput&) {
            throw;
        } catch (const std::exception& e) {
            throw MalformedInput(std::string("malformed policy scenario: ") + e.what());
        }
        if (default_.empty()) default_ = {"Nothing left to try.\n```python\nfinal_answer('')\n```"};
    }

    std::vector<Generation> generate(const GenerateRequest& req) override {
        const auto& texts = lookup(req);
        std::vector<Generation> out;
        std::uint64_t h = fnv1a64(req.task_id + "\n" + prefix_hash(req.committed_codes));
        for (int i = 0; i < req.n; ++i) {
            std::size_t pick = static_cast<std::size_t>(i) % texts.size();
            if (req.purpose == Purpose::Rollout) pick = static_cast<std::size_t>(mix_seed(req.seed, h, static_cast<std::uint64_t>(i)) % texts.size());
            out.push_back(Generation{resolve_observation_refs(texts[pick], req.prompt.history), std::nullopt});
        }
        return out;
    }

    std::optional<std::vector<Generation>> enumerate(const GenerateRequest& req) override {
        std::vector<Generation> out;
        for (const auto& t : lookup(req)) out.push_back(Generation{resolve_observation_refs(t, req.prompt.history), std::nullopt});
        return out;
    }

    std::size_t entry_count() const { return entries_.size(); }

private:
    std::map<std::string, std::vector<std::string>> entries_;
    std::vector<std::string> default_;

    static std::string key(const std::string& task, const std::vector<std::string>& prefix) { return task + "\n" + prefix_hash(prefix); }

    const std::vector<std::string>& lookup(const GenerateRequest& req) const {
        auto it = entries_.find(key(req.task_id, req.committed_codes));
        return it == entries_.end() ? default_ : it->second;
    }
};

inline std::string reorganize_prompt(const std::string& query, const std::vector<HistoryEntry>& pairs) {
    std::string s = "Rewrite the findings below into one coherent, complete answer to the user's query. "
                    "Use only information present in the tool outputs.\n\nQuery: " + query + "\n";
    for (std::size_t i = 0; i < pairs.size(); ++i)
        s += "\nStep " + std::to_string(i + 1) + " thought: " + pairs[i].thought + "\nStep " + std::to_string(i + 1) +
             " output: " + pairs[i].output + "\n";
    return s + "\nAnswer:";
}

class RemoteChatBackend : public PolicyBackend {
public:
    explicit RemoteChatBackend(chat::ChatConfig cfg) : client_(std::move(cfg)) {}

    std::vector<Generation> generate(const GenerateRequest& req) override {
        std::vector<Generation> out;
        auto msgs = req.prompt.messages();
        for (int i = 0; i < req.n; ++i) {
            auto reply = client_.complete(msgs, req.temperature, req.seed + static_cast<std::uint64_t>(i));
            out.push_back(Generation{reply.content, reply.completion_tokens});
        }
        return out;
    }

    std::optional<std::string> reorganize(const std::string& query, const std::vector<HistoryEntry>& pairs) override {
        return client_.complete({{"user", reorganize_prompt(query, pairs)}}, 0.0, std::nullopt).content;
    }

private:
    chat::ChatClient client_;
};

// Candidate sampling with stable count: unparseable outputs become
// placeholder steps (empty code) that the engine records as protocol errors.
struct SampledCandidate {
    CodeStep step;
    bool parsed = true;
    std::string parse_error;
};

inline std::vector<SampledCandidate> sample_candidates(PolicyBackend& backend, const GenerateRequest& req, int step_index) {
    auto gens = backend.generate(req);
    if (gens.size() != static_cast<std::size_t>(req.n))
        throw BackendUnreachable("backend returned " + std::to_string(gens.size()) + " texts, expected " + std::to_string(req.n));
    std::vector<SampledCandidate> out;
    for (auto& g : gens) {
        SampledCandidate c;
        try {
            c.step = parse_step(g.text, step_index, g.tokens);
        } catch (const NoCodeBlock& e) {
            c.parsed = false;
            c.parse_error = e.what();
            c.step.step_index = step_index;
            c.step.raw_model_output = g.text;
            c.step.token_count = g.tokens.value_or(whitespace_tokens(g.text));
        }
        out.push_back(std::move(c));
    }
    return out;
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MalformedInput("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw MalformedInput(path + ": " + e.what());
    }
}

}  // namespace codetool::policy
