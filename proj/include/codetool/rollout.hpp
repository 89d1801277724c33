#pragma once
// Latent-reward scorers (constant, remote PRM, Monte Carlo rollouts) and the
// binary process-tree collector that turns rollout latents into PRM
// preference pairs.

#include "answer.hpp"
#include "judge.hpp"
#include "reward.hpp"

#include <fstream>
#include <functional>
#include <memory>

namespace codetool::rollout {

using policy::HistoryEntry;

// Everything a scorer may look at for one candidate step t.
struct NodeContext {
    const Task* task = nullptr;
    gateway::SessionHandle session;     // committed state including the candidate (when it parsed)
    std::vector<HistoryEntry> prefix;   // steps 1..t-1
    HistoryEntry candidate;
    std::string candidate_text;         // raw model output
    int step_index = 1;
    bool terminated = false;            // candidate printed the sentinel
};

class LatentScorer {
public:
    virtual ~LatentScorer() = default;
    virtual LatentEstimate score(const NodeContext& ctx) = 0;
};

class ConstantScorer : public LatentScorer {
public:
    explicit ConstantScorer(double v = 0.0) : value_(v) { reward::constant_estimate(v); }
    LatentEstimate score(const NodeContext&) override { return reward::constant_estimate(value_); }

private:
    double value_;
};

inline json prm_request(const NodeContext& ctx) {
    return json{{"query", ctx.task->query}, {"prefix", ctx.prefix}, {"candidate", ctx.candidate_text}};
}

// POST {base}/score {query, prefix, candidate} -> {s_yes, s_no}.
class PrmRemoteScorer : public LatentScorer {
public:
    explicit PrmRemoteScorer(std::string base_url, int timeout_s = 30)
        : url_(std::move(base_url)), base_(http::parse_base_url(url_)), timeout_s_(timeout_s) {}

    LatentEstimate score(const NodeContext& ctx) override {
        auto client = http::make_client(base_, timeout_s_);
        auto r = client->Post(base_.path_prefix + "/score", prm_request(ctx).dump(), "application/json");
        if (!r) throw ServiceUnreachable("PRM service at " + url_ + ": " + httplib::to_string(r.error()));
        if (r->status != 200) throw ServiceUnreachable("PRM service at " + url_ + " returned HTTP " + std::to_string(r->status));
        json j = json::parse(r->body, nullptr, false);
        if (j.is_discarded() || !j.contains("s_yes") || !j.contains("s_no") || !j["s_yes"].is_number() || !j["s_no"].is_number())
            throw MalformedInput("PRM reply lacks numeric s_yes/s_no: " + r->body.substr(0, 200));
        return reward::prm_estimate(j["s_yes"].get<double>(), j["s_no"].get<double>());
    }

private:
    std::string url_;
    http::BaseUrl base_;
    int timeout_s_;
};

// Scenario-driven PRM stand-in. Rules are tried in order; the first whose
// `contains` substring occurs in the candidate text supplies the scores.
// {"rules": [{"contains": "...", "s_yes": 3, "s_no": 1}], "default": {"s_yes": 1, "s_no": 1}}
class MockPrmService {
public:
    struct Rule {
        std::string contains;
        double s_yes = 1.0;
        double s_no = 1.0;
    };

    explicit MockPrmService(const json& spec) {
        try {
            for (const auto& r : spec.value("rules", json::array()))
                rules_.push_back(Rule{r.at("contains").get<std::string>(), r.at("s_yes").get<double>(), r.at("s_no").get<double>()});
            if (spec.contains("default")) {
                default_.s_yes = spec["default"].at("s_yes").get<double>();
                default_.s_no = spec["default"].at("s_no").get<double>();
            }
        } catch (const std::exception& e) {
            throw MalformedInput(std::string("malformed PRM spec: ") + e.what());
        }
        server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests_;
            json in = json::parse(req.body, nullptr, false);
            if (in.is_discarded() || !in.contains("candidate") || !in["candidate"].is_string()) {
                res.status = 400;
                res.set_content(R"({"error":"expected {query, prefix, candidate}"})", "application/json");
                return;
            }
            const Rule& r = lookup(in["candidate"].get<std::string>());
            res.set_content(json{{"s_yes", r.s_yes}, {"s_no", r.s_no}}.dump(), "application/json");
        });
    }
    MockPrmService(const MockPrmService&) = delete;
    MockPrmService& operator=(const MockPrmService&) = delete;
    ~MockPrmService() { stop(); }

    int start(const std::string& host = "127.0.0.1", int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (port_ < 0) throw PortInUse("PRM mock could not bind " + host + ":" + std::to_string(port));
        host_ = host;
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }
    void serve_forever(const std::string& host, int port) {
        if (!server_.bind_to_port(host, port)) throw PortInUse("port in use: " + std::to_string(port));
        server_.listen_after_bind();
    }
    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }
    std::string base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }
    std::int64_t requests() const { return requests_; }

    const Rule& lookup(const std::string& candidate) const {
        for (const auto& r : rules_)
            if (candidate.find(r.contains) != std::string::npos) return r;
        return default_;
    }

private:
    std::vector<Rule> rules_;
    Rule default_;
    httplib::Server server_;
    std::thread thread_;
    std::string host_ = "127.0.0.1";
    int port_ = -1;
    std::atomic<std::int64_t> requests_{0};
};

inline int depth_cap(const Task& task, const HyperParams& hp) { return std::min(task.max_depth, hp.max_depth); }

struct RolloutOptions {
    enum class Mode { Random, Exhaustive };
    Mode mode = Mode::Random;
    double temperature = 1.0;
    std::string sentinel = "FINAL ANSWER:";
};

struct RolloutTally {
    int correct = 0;
    int total = 0;
    std::int64_t steps = 0;  // summed continuation steps after t
};

// Monte Carlo latent reward: continuations from the candidate's state to
// termination, each judged; Solved paths count as correct.
class RolloutScorer : public LatentScorer {
public:
    RolloutScorer(policy::PolicyBackend& backend, gateway::Gateway& gw, judge::JudgeBackend& judge, HyperParams hp,
                  RolloutOptions opts = {})
        : backend_(backend), gw_(gw), judge_(judge), hp_(hp), opts_(std::move(opts)) {}

    LatentEstimate score(const NodeContext& ctx) override {
        RolloutTally t = tally(ctx);
        if (t.total < 1) throw ZeroTotalError();
        return reward::rollout_estimate(t.correct, t.total, static_cast<double>(t.steps) / t.total, hp_);
    }

    RolloutTally tally(const NodeContext& ctx) {
        RolloutTally acc;
        std::vector<HistoryEntry> hist = ctx.prefix;
        hist.push_back(ctx.candidate);
        if (opts_.mode == RolloutOptions::Mode::Exhaustive) {
            auto s = gw_.fork_session(ctx.session, hp_.exec_timeout_ms);
            explore(*ctx.task, s, hist, ctx.step_index, 0, ctx.terminated, acc);
            gw_.close(s);
            return acc;
        }
        if (hp_.n_rollouts < 1) throw ZeroTotalError();
        for (int r = 0; r < hp_.n_rollouts; ++r) {
            ++acc.total;
            int steps = 0;
            try {
                auto s = gw_.fork_session(ctx.session, hp_.exec_timeout_ms);
                auto h = hist;
                bool term = ctx.terminated;
                int t = ctx.step_index;
                const int cap = depth_cap(*ctx.task, hp_);
                while (!term && t < cap) {
                    auto req = request(*ctx.task, s, h, mix_seed(hp_.rng_seed, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(t)));
                    auto cands = policy::sample_candidates(backend_, req, t + 1);
                    auto out = answer::execute_candidate(gw_, s, cands.front(), hp_.exec_timeout_ms);
                    ++t;
                    ++steps;
                    h.push_back(out.entry);
                    term = answer::has_sentinel(out.exec.stdout_text, opts_.sentinel);
                }
                gw_.close(s);
                if (solved(*ctx.task, h)) ++acc.correct;
            } catch (const Error&) {
                // a failed rollout counts as not solved
            }
            acc.steps += steps;
        }
        return acc;
    }

private:
    policy::PolicyBackend& backend_;
    gateway::Gateway& gw_;
    judge::JudgeBackend& judge_;
    HyperParams hp_;
    RolloutOptions opts_;

    policy::GenerateRequest request(const Task& task, const gateway::SessionHandle& s, const std::vector<HistoryEntry>& h,
                                    std::uint64_t seed) const {
        policy::GenerateRequest req;
        req.task_id = task.id;
        req.committed_codes = s.committed_codes();
        req.prompt = policy::assemble_prompt(task, h, opts_.sentinel);
        req.n = 1;
        req.temperature = opts_.temperature;
        req.seed = seed;
        req.purpose = policy::Purpose::Rollout;
        return req;
    }

    bool solved(const Task& task, const std::vector<HistoryEntry>& h) {
        auto a = answer::compose(h, task.query, opts_.sentinel, &backend_);
        return judge_.judge(task, a.text).status == AnswerStatus::Solved;
    }

    // Every scripted continuation, depth first; each leaf is one rollout.
    void explore(const Task& task, const gateway::SessionHandle& s, const std::vector<HistoryEntry>& h, int t, int steps,
                 bool term, RolloutTally& acc) {
        if (term || t >= depth_cap(task, hp_)) {
            ++acc.total;
            acc.steps += steps;
            if (solved(task, h)) ++acc.correct;
            return;
        }
        auto req = request(task, s, h, hp_.rng_seed);
        auto gens = backend_.enumerate(req);
        if (!gens) throw DomainError("exhaustive rollouts need a backend that can enumerate continuations");
        for (const auto& g : *gens) {
            policy::SampledCandidate c;
            try {
                c.step = policy::parse_step(g.text, t + 1, g.tokens);
            } catch (const NoCodeBlock& e) {
                c.parsed = false;
                c.parse_error = e.what();
                c.step.step_index = t + 1;
                c.step.raw_model_output = g.text;
            }
            auto child = gw_.fork_session(s, hp_.exec_timeout_ms);
            auto out = answer::execute_candidate(gw_, child, c, hp_.exec_timeout_ms);
            auto h2 = h;
            h2.push_back(out.entry);
            explore(task, child, h2, t + 1, steps + 1, answer::has_sentinel(out.exec.stdout_text, opts_.sentinel), acc);
            gw_.close(child);
        }
    }
};

// ---------------------------------------------------------------------------
// Process tree and preference pairs
// ---------------------------------------------------------------------------

enum class PotentialLabel { More, Less };

inline std::string_view to_string(PotentialLabel l) { return l == PotentialLabel::More ? "more_potential" : "less_potential"; }

struct ProcessTreeNode {
    int node_id = 0;
    int parent = -1;  // -1 for the root
    int depth = 0;    // root is 0; a node at depth t holds step t
    CodeStep step;
    ExecutionResult exec;
    std::vector<int> children;
    LatentEstimate latent;
    std::optional<PotentialLabel> label;
    std::vector<HistoryEntry> prefix;  // steps 1..t-1 on the path to this node
};

struct ProcessTree {
    std::string task_id;
    std::string query;
    std::vector<ProcessTreeNode> nodes;  // nodes[0] is the root (no step)
};

struct PrmPair {
    std::string query;
    std::vector<HistoryEntry> prefix;
    std::string chosen;
    std::string rejected;
    double chosen_latent = 0.0;
    double rejected_latent = 0.0;

    bool operator==(const PrmPair&) const = default;
};

inline void to_json(json& j, const PrmPair& p) {
    j = json{{"query", p.query},   {"prefix", p.prefix},
             {"chosen", p.chosen}, {"rejected", p.rejected},
             {"chosen_latent", p.chosen_latent}, {"rejected_latent", p.rejected_latent}};
}
inline void from_json(const json& j, PrmPair& p) {
    p.query = j.at("query").get<std::string>();
    p.prefix = j.at("prefix").get<std::vector<HistoryEntry>>();
    p.chosen = j.at("chosen").get<std::string>();
    p.rejected = j.at("rejected").get<std::string>();
    p.chosen_latent = j.at("chosen_latent").get<double>();
    p.rejected_latent = j.at("rejected_latent").get<double>();
}

inline void to_json(json& j, const ProcessTreeNode& n) {
    j = json{{"node_id", n.node_id}, {"parent", n.parent}, {"depth", n.depth},   {"step", n.step},
             {"exec", n.exec},       {"children", n.children}, {"latent", n.latent}};
    j["label"] = n.label ? json(to_string(*n.label)) : json(nullptr);
}
inline void to_json(json& j, const ProcessTree& t) { j = json{{"task_id", t.task_id}, {"query", t.query}, {"nodes", t.nodes}}; }

// One pair per parent whose two children have different latents; ties skipped.
inline std::vector<PrmPair> label_pairs(const ProcessTree& tree) {
    std::vector<PrmPair> out;
    for (const auto& n : tree.nodes) {
        if (n.children.size() != 2) continue;
        const auto& a = tree.nodes.at(static_cast<std::size_t>(n.children[0]));
        const auto& b = tree.nodes.at(static_cast<std::size_t>(n.children[1]));
        if (a.latent.value == b.latent.value) continue;
        const auto& hi = a.latent.value > b.latent.value ? a : b;
        const auto& lo = a.latent.value > b.latent.value ? b : a;
        out.push_back(PrmPair{tree.query, hi.prefix, hi.step.raw_model_output, lo.step.raw_model_output, hi.latent.value,
                              lo.latent.value});
    }
    return out;
}

inline void assign_labels(ProcessTree& tree) {
    for (auto& n : tree.nodes) n.label.reset();
    for (const auto& n : tree.nodes) {
        if (n.children.size() != 2) continue;
        auto& a = tree.nodes[static_cast<std::size_t>(n.children[0])];
        auto& b = tree.nodes[static_cast<std::size_t>(n.children[1])];
        if (a.latent.value == b.latent.value) continue;
        bool a_hi = a.latent.value > b.latent.value;
        a.label = a_hi ? PotentialLabel::More : PotentialLabel::Less;
        b.label = a_hi ? PotentialLabel::Less : PotentialLabel::More;
    }
}

struct CollectOptions {
    int depth_cap = 2;
    int branching = 2;
    double temperature = 1.0;
    std::string sentinel = "FINAL ANSWER:";
};

// Depth-first expansion with `branching` samples per node; every child gets a
// latent from `scorer`. Terminated children are not expanded.
inline ProcessTree collect_tree(const Task& task, policy::PolicyBackend& backend, gateway::Gateway& gw, LatentScorer& scorer,
                                const HyperParams& hp, const CollectOptions& opts) {
    ProcessTree tree;
    tree.task_id = task.id;
    tree.query = task.query;
    tree.nodes.push_back(ProcessTreeNode{});
    const int cap = std::min(opts.depth_cap, depth_cap(task, hp));

    std::function<void(int, const gateway::SessionHandle&, const std::vector<HistoryEntry>&)> expand;
    expand = [&](int node_id, const gateway::SessionHandle& session, const std::vector<HistoryEntry>& hist) {
        const int depth = tree.nodes[static_cast<std::size_t>(node_id)].depth;
        if (depth >= cap) return;
        policy::GenerateRequest req;
        req.task_id = task.id;
        req.committed_codes = session.committed_codes();
        req.prompt = policy::assemble_prompt(task, hist, opts.sentinel);
        req.n = opts.branching;
        req.temperature = opts.temperature;
        req.seed = mix_seed(hp.rng_seed, static_cast<std::uint64_t>(node_id));
        req.purpose = policy::Purpose::Candidates;
        auto cands = policy::sample_candidates(backend, req, depth + 1);
        for (const auto& c : cands) {
            auto child_session = gw.fork_session(session, hp.exec_timeout_ms);
            auto out = answer::execute_candidate(gw, child_session, c, hp.exec_timeout_ms);
            NodeContext ctx{&task, child_session, hist, out.entry, c.step.raw_model_output, depth + 1,
                            answer::has_sentinel(out.exec.stdout_text, opts.sentinel)};
            ProcessTreeNode n;
            n.node_id = static_cast<int>(tree.nodes.size());
            n.parent = node_id;
            n.depth = depth + 1;
            n.step = out.step;
            n.exec = out.exec;
            n.prefix = hist;
            n.latent = scorer.score(ctx);
            tree.nodes.push_back(n);
            tree.nodes[static_cast<std::size_t>(node_id)].children.push_back(n.node_id);
            if (!ctx.terminated) {
                auto h2 = hist;
                h2.push_back(out.entry);
                expand(n.node_id, child_session, h2);
            }
            gw.close(child_session);
        }
    };
    auto root = gw.open_session(task);
    try {
        expand(0, root, {});
    } catch (...) {
        gw.close(root);
        throw;
    }
    gw.close(root);
    assign_labels(tree);
    return tree;
}

// Key-sorted JSON, one pair per line.
inline std::size_t emit_jsonl(const std::vector<PrmPair>& pairs, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    for (const auto& p : pairs) out << json(p).dump() << '\n';
    out.flush();
    if (!out) throw Error("write failed: " + path);
    return pairs.size();
}

inline std::vector<PrmPair> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    std::vector<PrmPair> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(parse_canonical<PrmPair>(line));
    }
    return out;
}

}  // namespace codetool::rollout
