#pragma once
// Generators for the simulated benchmark material: tool scenarios, scripted
// policy scenarios, PRM rules and random scripted continuation trees. All
// output is plain JSON so it can be written to disk and fed to the CLI.

#include "core.hpp"
#include "hashing.hpp"

#include <random>
#include <string>
#include <vector>

namespace codetool::sim {

// Everything needed to run one simulated suite offline.
struct Bundle {
    json suite;            // {"name", "tasks": [...], "subsets": {...}}
    json tools;            // mock tool service scenario
    json policy;           // scripted policy scenario (code mode)
    json policy_json;      // scripted policy scenario (JSON mode), may be null
    json prm;              // mock PRM rules, may be null
};

inline std::string py_str(const std::string& s) { return "'" + s + "'"; }

inline std::string fenced(const std::string& thought, const std::string& code) {
    return thought + "\n```python\n" + code + "\n```";
}

inline json entry(const std::string& task, const std::vector<std::string>& prefix, const std::vector<std::string>& texts) {
    return json{{"task_id", task}, {"prefix", prefix}, {"texts", texts}};
}

// Code of the first fenced block; scenario prefixes are lists of executed code.
inline std::string code_of(const std::string& text) {
    auto a = text.find("```");
    auto b = text.find('\n', a);
    auto c = text.find("```", b);
    return text.substr(b + 1, c - b - 2);
}

inline const char* kEmptyAnswer = "Nothing more can be done.\n```python\nfinal_answer('')\n```";

// ---------------------------------------------------------------------------
// Selection suite: every step offers one executable on-path candidate and one
// broken candidate. The PRM rules favour the broken candidate on "adversarial"
// tasks (i % 4 != 3) and disfavour it on the others.
// ---------------------------------------------------------------------------

inline json lookup_tool() {
    return json::parse(R"({"name": "lookup", "description": "Returns the stored value for a key.", "category": "records",
        "http_method": "GET", "url_template": "/lookup/{key}",
        "params": [{"name": "key", "kind": "string", "required": true, "description": "record key"}]})");
}

inline Bundle selection_suite(int n_tasks = 20) {
    Bundle b;
    b.tools = json{{"tools", json::array({lookup_tool()})},
                   {"routes", {{"lookup", json::array({json{{"body", {{"key", "{{key}}"}, {"value", "v-{{key}}"}}}}})}}}};
    json tasks = json::array();
    json entries = json::array();
    json adversarial = json::array(), plain = json::array();
    for (int i = 0; i < n_tasks; ++i) {
        std::string id = "sel-" + std::to_string(i);
        std::string ka = std::to_string(i) + "a", kb = std::to_string(i) + "b";
        bool adv = i % 4 != 3;
        std::string marker = adv ? "  # fast path" : "  # guess";
        std::vector<std::string> good = {
            fenced("Look up the first record.", "a = call_tool('lookup', {'key': " + py_str(ka) + "})\nprint(a)"),
            fenced("Look up the second record.", "b = call_tool('lookup', {'key': " + py_str(kb) + "})\nprint(b)"),
            fenced("Combine both values.", "final_answer(a['value'] + ' and ' + b['value'])"),
        };
        std::vector<std::string> broken = {
            fenced("Query the record directly.", "a = call_tool('lookup', {'id': " + py_str(ka) + "})" + marker + "\nprint(a)"),
            fenced("Reuse the earlier lookup.", "b = a['values'][1]" + marker + "\nprint(b)"),
            fenced("Answer from the cached pair.", "final_answer(pair[0] + ' and ' + pair[1])" + marker),
        };
        std::vector<std::string> prefix;
        for (int t = 0; t < 3; ++t) {
            bool broken_first = (i + t) % 2 == 0;
            std::vector<std::string> texts = broken_first ? std::vector<std::string>{broken[t], good[t]}
                                                          : std::vector<std::string>{good[t], broken[t]};
            entries.push_back(entry(id, prefix, texts));
            prefix.push_back(code_of(good[t]));
        }
        Task task;
        task.id = id;
        task.query = "What are the values stored under keys " + ka + " and " + kb + "?";
        task.toolset = {b.tools["tools"][0].get<ToolDoc>()};
        task.max_depth = 6;
        task.oracle = AnswerOracle{{{"v-" + ka, false}, {"v-" + kb, false}}, false};
        tasks.push_back(task);
        (adv ? adversarial : plain).push_back(id);
    }
    b.suite = json{{"name", "selection"}, {"tasks", tasks}, {"subsets", {{"adversarial", adversarial}, {"plain", plain}}}};
    b.policy = json{{"entries", entries}, {"default", {kEmptyAnswer}}};
    b.prm = json{{"rules", json::array({json{{"contains", "# fast path"}, {"s_yes", 3}, {"s_no", 1}},
                                        json{{"contains", "# guess"}, {"s_yes", 1}, {"s_no", 3}}})},
                 {"default", {{"s_yes", 1}, {"s_no", 1}}}};
    b.policy_json = nullptr;
    return b;
}

// ---------------------------------------------------------------------------
// Batchable suite: each task needs k similar tool calls. Code mode batches them
// in one looped step; JSON mode issues one call per turn. One extra task reads
// a single oversized payload whose answer sits past the truncation budget.
// ---------------------------------------------------------------------------

inline json weather_tool() {
    return json::parse(R"({"name": "weather", "description": "Current temperature for a city.", "category": "geo",
        "http_method": "GET", "url_template": "/weather/{city}",
        "params": [{"name": "city", "kind": "string", "required": true, "description": "city name"}]})");
}

inline json report_tool() {
    return json::parse(R"({"name": "report", "description": "Full audit report; large.", "category": "docs",
        "http_method": "GET", "url_template": "/report/{id}",
        "params": [{"name": "id", "kind": "string", "required": true, "description": "report id"}]})");
}

inline std::string json_action(const std::string& thought, const json& action) { return thought + "\n```json\n" + action.dump() + "\n```"; }

inline Bundle batch_suite(int n_tasks = 6, std::size_t oversized_bytes = 65536) {
    static const std::vector<std::string> cities = {"Oslo", "Lima", "Pune", "Kobe", "Nice", "Bern", "Cork", "Graz"};
    Bundle b;
    json weather_rules = json::array();
    for (std::size_t c = 0; c < cities.size(); ++c)
        weather_rules.push_back(json{{"match", {{"city", cities[c]}}}, {"body", {{"city", "{{city}}"}, {"temp", 3 + 4 * static_cast<int>(c)}}}});
    weather_rules.push_back(json{{"status", 404}, {"body", {{"error", "unknown city {{city}}"}}}});
    b.tools = json{{"tools", json::array({weather_tool(), report_tool()})},
                   {"routes",
                    {{"weather", weather_rules},
                     {"report", json::array({json{{"failure_mode", "oversized"},
                                                  {"oversized", {{"bytes", oversized_bytes}, {"critical_key", "answer"}, {"critical_value", "cobalt-{{id}}"}}}}})}}}};
    auto temp_of = [&](const std::string& city) {
        for (std::size_t c = 0; c < cities.size(); ++c)
            if (cities[c] == city) return 3 + 4 * static_cast<int>(c);
        return 0;
    };

    json tasks = json::array(), code_entries = json::array(), json_entries = json::array();
    json batch_ids = json::array();
    std::vector<ToolDoc> toolset = b.tools["tools"].get<std::vector<ToolDoc>>();
    for (int i = 0; i < n_tasks; ++i) {
        std::string id = "batch-" + std::to_string(i);
        std::size_t k = 4 + static_cast<std::size_t>(i % 3);  // 4..6 calls
        std::vector<std::string> picked;
        for (std::size_t j = 0; j < k; ++j) picked.push_back(cities[(static_cast<std::size_t>(i) + j) % cities.size()]);
        std::string list = "[";
        for (std::size_t j = 0; j < k; ++j) list += (j ? ", " : "") + py_str(picked[j]);
        list += "]";

        std::string s1 = fenced("Fetch every city's temperature in one loop.",
                                "temps = {}\nfor c in " + list + ":\n    r = call_tool('weather', {'city': c})\n    print(r)\n    temps[c] = r['temp']");
        std::string s2 = fenced("Report the collected temperatures.",
                                "final_answer(', '.join([c + ': ' + str(temps[c]) for c in temps]))");
        code_entries.push_back(entry(id, {}, {s1}));
        code_entries.push_back(entry(id, {code_of(s1)}, {s2}));

        std::vector<std::string> prefix;
        std::string final_text;
        for (std::size_t j = 0; j < k; ++j) {
            std::string t = json_action("Check " + picked[j] + ".", json{{"tool", "weather"}, {"params", {{"city", picked[j]}}}});
            json_entries.push_back(entry(id, prefix, {t}));
            prefix.push_back(t);
            final_text += (j ? ", " : "") + picked[j] + ": {{obs:" + std::to_string(j + 1) + ":temp}}";
        }
        json_entries.push_back(entry(id, prefix, {json_action("All temperatures collected.", json{{"final_answer", final_text}})}));

        Task task;
        task.id = id;
        task.query = "What is the current temperature in each of: " + list + "?";
        task.toolset = toolset;
        task.max_depth = 10;
        AnswerOracle oracle;
        for (const auto& c : picked) oracle.matchers.push_back({c + ": " + std::to_string(temp_of(c)), false});
        task.oracle = oracle;
        tasks.push_back(task);
        batch_ids.push_back(id);
    }

    {
        std::string id = "oversized-0";
        std::string code = fenced("Read the report and return its answer field.",
                                  "r = call_tool('report', {'id': 'q7'})\nfinal_answer(r['answer'])");
        code_entries.push_back(entry(id, {}, {code}));
        std::string a1 = json_action("Fetch the report.", json{{"tool", "report"}, {"params", {{"id", "q7"}}}});
        json_entries.push_back(entry(id, {}, {a1}));
        json_entries.push_back(entry(id, {a1}, {json_action("Answer from the report.", json{{"final_answer", "{{obs:1:answer}}"}})}));
        Task task;
        task.id = id;
        task.query = "What is the answer field of audit report q7?";
        task.toolset = toolset;
        task.max_depth = 10;
        task.oracle = AnswerOracle{{{"cobalt-q7", false}}, false};
        tasks.push_back(task);
    }

    b.suite = json{{"name", "batch"}, {"tasks", tasks}, {"subsets", {{"batchable", batch_ids}, {"oversized", {"oversized-0"}}}}};
    b.policy = json{{"entries", code_entries}, {"default", {kEmptyAnswer}}};
    b.policy_json = json{{"entries", json_entries}, {"default", {json_action("Give up.", json{{"final_answer", ""}})}}};
    b.prm = nullptr;
    return b;
}

// ---------------------------------------------------------------------------
// Random scripted trees: binary continuation trees of bounded depth. Every
// node is one code step of a fixed kind, so the outcome of any path is known
// without running it.
// ---------------------------------------------------------------------------

enum class NodeKind { Continue, Error, Solved, Wrong };

struct TreeNode {
    int id = 0;
    int parent = -1;
    int depth = 0;  // root 0
    NodeKind kind = NodeKind::Continue;
    std::string text;  // raw model output (empty for the root)
    std::vector<int> children;
};

struct RandomTree {
    Task task;
    json policy;
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    bool terminal(const TreeNode& n) const { return n.kind == NodeKind::Solved || n.kind == NodeKind::Wrong; }
};

inline json noop_tool() {
    return json::parse(R"({"name": "noop", "description": "Does nothing.", "category": "misc", "http_method": "GET",
        "url_template": "/noop", "params": []})");
}

inline std::string node_text(NodeKind k, int id) {
    std::string n = std::to_string(id);
    switch (k) {
        case NodeKind::Continue: return fenced("Record progress.", "x_" + n + " = " + n + "\nprint('step', " + n + ")");
        case NodeKind::Error: return fenced("Read an earlier value.", "print(missing_" + n + ")");
        case NodeKind::Solved: return fenced("Report the result.", "final_answer('gold " + n + "')");
        case NodeKind::Wrong: return fenced("Report the result.", "final_answer('lead " + n + "')");
    }
    return "";
}

// Depth <= max_depth, exactly `branching` children per expanded node;
// task.max_depth caps every path at max_depth steps.
inline RandomTree random_tree(std::uint64_t seed, int max_depth = 4, int branching = 2, const std::string& id_prefix = "tree-") {
    std::mt19937_64 rng(mix_seed(seed, 0x7265ULL));
    std::discrete_distribution<int> pick({4, 2, 2, 2});  // Continue, Error, Solved, Wrong
    RandomTree tr;
    tr.task.id = id_prefix + std::to_string(seed);
    tr.task.query = "Find the gold value.";
    tr.task.toolset = {noop_tool().get<ToolDoc>()};
    tr.task.max_depth = max_depth;
    tr.task.oracle = AnswerOracle{{{"gold", false}}, false};
    tr.nodes.push_back(TreeNode{});
    json entries = json::array();
    // breadth-first build; codes along the path form the scenario prefix
    std::vector<std::vector<std::string>> path_codes(1);
    for (std::size_t i = 0; i < tr.nodes.size(); ++i) {
        TreeNode n = tr.nodes[i];
        if (i != 0 && tr.terminal(n)) continue;
        if (n.depth >= max_depth) continue;
        std::vector<std::string> texts;
        for (int c = 0; c < branching; ++c) {
            TreeNode child;
            child.id = static_cast<int>(tr.nodes.size());
            child.parent = n.id;
            child.depth = n.depth + 1;
            child.kind = static_cast<NodeKind>(pick(rng));
            child.text = node_text(child.kind, child.id);
            texts.push_back(child.text);
            tr.nodes[i].children.push_back(child.id);
            auto codes = path_codes[i];
            codes.push_back(code_of(child.text));
            path_codes.push_back(codes);
            tr.nodes.push_back(child);
        }
        entries.push_back(entry(tr.task.id, path_codes[i], texts));
    }
    tr.policy = json{{"entries", entries}};
    return tr;
}

inline json noop_tools() {
    return json{{"tools", json::array({noop_tool()})}, {"routes", {{"noop", json::array({json{{"body", json::object()}}})}}}};
}

// Several random trees as one suite; rollout latents, no PRM.
inline Bundle tree_suite(int n_trees = 10, std::uint64_t seed = 1, int max_depth = 4) {
    Bundle b;
    b.tools = noop_tools();
    json tasks = json::array(), entries = json::array();
    for (int i = 0; i < n_trees; ++i) {
        auto tr = random_tree(seed * 1000 + static_cast<std::uint64_t>(i), max_depth);
        tasks.push_back(tr.task);
        for (const auto& e : tr.policy["entries"]) entries.push_back(e);
    }
    b.suite = json{{"name", "trees"}, {"tasks", tasks}};
    b.policy = json{{"entries", entries}, {"default", {kEmptyAnswer}}};
    b.policy_json = nullptr;
    b.prm = nullptr;
    return b;
}

}  // namespace codetool::sim
