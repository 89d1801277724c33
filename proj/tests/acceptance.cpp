// Acceptance checks: one PASS/FAIL line per primary criterion.

#include "codetool/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <unistd.h>

using namespace codetool;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool ok = false;
    std::string detail;
};

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / ("codetool_acc_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

harness::RunConfig config_in(const fs::path& dir, const json& cfg) {
    harness::write_text(dir / "config.json", cfg.dump(2));
    return harness::load_config(dir / "config.json");
}

std::string fmt(double v) { return harness::fmt(v); }

// --- 1 ----------------------------------------------------------------------

double eq5_reference(double lr, double tau, double a, double b, double l) {
    return std::exp((1.0 - lr) * std::log(a) + (tau / l) * std::log(b));
}

Verdict reward_vectors() {
    struct Row { double lr, tau, a, b, l; };
    std::vector<Row> rows = {
        {0.0, 0.0, 0.5, 0.9, 10}, {1.0, 0.0, 0.5, 0.9, 10}, {0.5, 1.0, 0.5, 0.9, 10}, {0.5, 5.0, 0.5, 0.9, 10},
        {0.0, 10.0, 0.5, 0.9, 10}, {0.25, 3.0, 0.5, 0.9, 10}, {0.75, 2.5, 0.5, 0.9, 10}, {1.0, 20.0, 0.5, 0.9, 10},
        {0.2, 7.0, 0.3, 0.8, 5}, {0.9, 0.5, 0.3, 0.8, 5}, {0.6, 12.0, 0.7, 0.95, 20}, {0.1, 0.1, 0.7, 0.95, 20},
        {0.333, 4.0, 0.1, 0.5, 8}, {0.999, 9.0, 0.1, 0.5, 8}, {0.5, 0.0, 1.0, 0.9, 10}, {0.5, 3.0, 0.5, 1.0, 10},
        {0.0, 0.0, 0.01, 0.99, 1}, {0.42, 1.75, 0.65, 0.85, 3}, {0.8, 100.0, 0.5, 0.9, 10}, {0.05, 6.0, 0.9, 0.6, 12},
        {0.66, 2.0, 0.45, 0.75, 4}, {0.13, 0.0, 0.2, 0.2, 2},
    };
    std::mt19937_64 rng(20);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i)
        rows.push_back({u(rng), 30 * u(rng), 0.01 + 0.99 * u(rng), 0.01 + 0.99 * u(rng), 1 + 19 * u(rng)});

    auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (const auto& r : rows) {
        HyperParams hp;
        hp.alpha = r.a;
        hp.beta = r.b;
        hp.big_l = r.l;
        worst = std::max(worst, std::abs(reward::latent_from_rollouts(r.lr, r.tau, hp) - eq5_reference(r.lr, r.tau, r.a, r.b, r.l)));
    }
    bool ratios = true;
    for (int t = 1; t <= 64; ++t)
        for (int c = 0; c <= t; ++c) ratios &= reward::raw_latent(c, t) == static_cast<double>(c) / t;
    bool norm = reward::latent_from_prm_scores(3, 1) == 0.75 && reward::latent_from_prm_scores(1, 3) == 0.25 &&
                reward::latent_from_prm_scores(2, 2) == 0.5 && reward::latent_from_prm_scores(0, 7) == 0.0 &&
                reward::latent_from_prm_scores(7, 0) == 1.0 && reward::latent_from_prm_scores(0.5, 1.5) == 0.25 &&
                reward::latent_from_prm_scores(6, 2) == 0.75;
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool ok = worst <= 1e-9 && ratios && norm && secs < 1.0;
    char err[32];
    std::snprintf(err, sizeof err, "%.2e", worst);
    return {ok, std::to_string(rows.size()) + " vectors, max |err| " + err + ", ratios " + (ratios ? "exact" : "off") +
                    ", normalization " + (norm ? "exact" : "off") + ", " + fmt(secs) + "s"};
}

// --- shared gateway over a tool scenario --------------------------------------

struct Stack {
    mock::MockToolService service;
    std::shared_ptr<gateway::ToolProxy> proxy;
    std::unique_ptr<gateway::Gateway> gw;
    explicit Stack(const json& tools) : service(mock::parse_scenario(tools)) {
        service.start();
        proxy = std::make_shared<gateway::ToolProxy>(service.base_url());
        gw = std::make_unique<gateway::Gateway>(proxy);
    }
};

// --- 2 ----------------------------------------------------------------------

struct Brute {
    int correct = 0, total = 0;
    std::int64_t steps = 0;
};

// Walks the scripted tree directly; no engine code involved.
void brute(const sim::RandomTree& tr, int id, int steps, Brute& acc) {
    const auto& n = tr.nodes[static_cast<std::size_t>(id)];
    if (n.children.empty()) {
        ++acc.total;
        acc.steps += steps;
        if (n.kind == sim::NodeKind::Solved) ++acc.correct;
        return;
    }
    for (int c : n.children) brute(tr, c, steps + 1, acc);
}

Verdict rollout_oracle() {
    auto start = std::chrono::steady_clock::now();
    Stack st(sim::noop_tools());
    judge::MockJudge judge;
    HyperParams hp;
    rollout::RolloutOptions ro;
    ro.mode = rollout::RolloutOptions::Mode::Exhaustive;
    int checked = 0, mismatched = 0;
    std::string first;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto tr = sim::random_tree(seed, 4, 2, "oracle-");
        policy::ScriptedMockBackend backend(tr.policy);
        rollout::RolloutScorer scorer(backend, *st.gw, judge, hp, ro);
        for (std::size_t i = 1; i < tr.nodes.size(); ++i) {
            std::vector<int> path;
            for (int v = static_cast<int>(i); v > 0; v = tr.nodes[static_cast<std::size_t>(v)].parent) path.push_back(v);
            std::reverse(path.begin(), path.end());
            auto s = st.gw->open_session(tr.task);
            std::vector<policy::HistoryEntry> hist;
            answer::StepOutcome last;
            for (std::size_t k = 0; k < path.size(); ++k) {
                const auto& text = tr.nodes[static_cast<std::size_t>(path[k])].text;
                policy::SampledCandidate c{policy::parse_step(text, static_cast<int>(k) + 1), true, ""};
                last = answer::execute_candidate(*st.gw, s, c, hp.exec_timeout_ms);
                hist.push_back(last.entry);
            }
            hist.pop_back();
            rollout::NodeContext ctx{&tr.task, s, hist, last.entry, tr.nodes[i].text, tr.nodes[i].depth,
                                     answer::has_sentinel(last.exec.stdout_text, "FINAL ANSWER:")};
            auto est = scorer.score(ctx);
            st.gw->close(s);

            Brute b;
            brute(tr, static_cast<int>(i), 0, b);
            double lr = static_cast<double>(b.correct) / b.total;
            double tau = static_cast<double>(b.steps) / b.total;
            double value = std::pow(hp.alpha, 1.0 - lr) * std::pow(hp.beta, tau / hp.big_l);
            const auto& rs = *est.rollout_stats;
            bool same = rs.delta_correct == b.correct && rs.delta_total == b.total && rs.tau == tau && est.value == value;
            ++checked;
            if (!same) {
                ++mismatched;
                if (first.empty())
                    first = tr.task.id + " node " + std::to_string(i) + ": got " + std::to_string(rs.delta_correct) + "/" +
                            std::to_string(rs.delta_total) + " tau " + std::to_string(rs.tau) + ", want " + std::to_string(b.correct) +
                            "/" + std::to_string(b.total) + " tau " + std::to_string(tau);
            }
        }
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {mismatched == 0 && secs < 30.0,
            "10 trees, " + std::to_string(checked) + " nodes, " + std::to_string(mismatched) + " mismatches, " + fmt(secs) + "s" +
                (first.empty() ? "" : " (" + first + ")")};
}

// --- 3 ----------------------------------------------------------------------

Verdict end_to_end_selection() {
    auto start = std::chrono::steady_clock::now();
    auto dir = scratch("sel");
    auto cfg = config_in(dir, harness::write_bundle(dir, sim::selection_suite(20)));
    auto suite = harness::parse_suite(harness::read_json(cfg.resolve(cfg.suite)));
    harness::Environment env(cfg);
    auto full = harness::cmd_run(suite, cfg.engine, env, "full");
    auto off = cfg.engine;
    off.spot_enabled = false;
    auto no_spot = harness::cmd_run(suite, off, env, "no_spot");
    fs::remove_all(dir);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    double fs_ = full.report.sopr, fc = full.report.scep.value_or(-1), ns = no_spot.report.sopr, nc = no_spot.report.scep.value_or(-1);
    bool ok = full.failures == 0 && fs_ == 1.0 && fc == 1.0 && nc <= 0.75 && ns < fs_ && secs < 120.0;
    return {ok, "full SoPR " + fmt(fs_) + " SCEP " + fmt(fc) + "; spot-off SoPR " + fmt(ns) + " SCEP " + fmt(nc) + ", " + fmt(secs) + "s"};
}

// --- 4 ----------------------------------------------------------------------

Verdict conflict_fixture() {
    const std::array<std::int64_t, 4> hand = {363, 59, 41, 34};
    std::mt19937_64 rng(497);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto cand = [](int spot, double latent) {
        CandidateRecord c;
        c.rewards = reward::make_bundle(spot, reward::constant_estimate(latent));
        return c;
    };
    std::vector<StepRecord> steps;
    for (std::size_t k = 0; k < 4; ++k)
        for (std::int64_t i = 0; i < hand[k]; ++i) {
            double a = u(rng), b = u(rng);
            StepRecord s;
            switch (k) {
                case 0: s.candidates = {cand(1, a), cand(1, b)}; break;
                case 1: s.candidates = {cand(0, a), cand(0, b)}; break;
                case 2: s.candidates = {cand(1, std::max(a, b) + 1e-3), cand(0, std::min(a, b))}; break;
                default: s.candidates = {cand(1, i % 5 == 0 ? a : std::min(a, b)), cand(0, i % 5 == 0 ? a : std::max(a, b))}; break;
            }
            if (u(rng) < 0.5) std::swap(s.candidates[0], s.candidates[1]);
            steps.push_back(s);
        }
    std::shuffle(steps.begin(), steps.end(), rng);
    std::vector<Trajectory> trajs;
    for (std::size_t i = 0; i < steps.size();) {
        Trajectory t;
        t.task_id = "fixture-" + std::to_string(trajs.size());
        std::size_t len = 1 + rng() % 7;
        for (; len-- && i < steps.size(); ++i) t.steps.push_back(steps[i]);
        t.depth = static_cast<int>(t.steps.size());
        trajs.push_back(t);
    }
    auto s = harness::conflict_stats(trajs);
    double sum = 0;
    for (double p : s.percent) sum += p;
    bool ok = s.total == 497 && s.counts == hand && std::abs(sum - 100.0) <= 1e-9;
    std::string d = std::to_string(s.total) + " pairs:";
    for (std::size_t i = 0; i < 4; ++i) d += " " + std::to_string(s.counts[i]) + " (" + fmt(s.percent[i]) + "%)";
    return {ok, d + ", sum " + fmt(sum)};
}

// --- 5 ----------------------------------------------------------------------

std::int64_t stats_total(const std::string& base) {
    auto c = http::make_client(http::parse_base_url(base));
    auto r = c->Get("/__stats");
    if (!r || r->status != 200) throw ServiceUnreachable("/__stats unavailable");
    return json::parse(r->body).at("total").get<std::int64_t>();
}

Verdict fork_soundness() {
    auto b = sim::batch_suite(1);
    Stack st(b.tools);
    Task task;
    task.id = "fork";
    task.query = "q";
    task.toolset = st.service.scenario().tools;
    task.max_depth = 8;
    const std::vector<std::string> cities = {"Oslo", "Lima", "Pune", "Kobe", "Atlantis", "Nice"};
    std::mt19937_64 rng(5);
    int bad = 0, upstream_on_fork = 0;
    std::size_t tool_steps = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto s = st.gw->open_session(task);
        int len = 1 + static_cast<int>(rng() % 6);
        std::vector<std::string> vars;
        bool called = false;
        for (int k = 0; k < len; ++k) {
            std::string v = "v" + std::to_string(k);
            std::string code;
            switch (rng() % 4) {
                case 0: code = v + " = call_tool('weather', {'city': '" + cities[rng() % cities.size()] + "'})"; break;
                case 1: code = v + " = [call_tool('weather', {'city': c})['temp'] for c in ['Oslo', 'Kobe']]"; break;
                case 2: code = v + " = " + std::to_string(rng() % 1000) + " * 3\nprint(" + v + ")"; break;
                default: code = v + " = {'n': " + std::to_string(k) + ", 'items': list(range(" + std::to_string(rng() % 5) + "))}"; break;
            }
            if (k == len - 1 && !called) code = v + " = call_tool('weather', {'city': '" + cities[rng() % 4] + "'})";
            called |= code.find("call_tool") != std::string::npos;
            auto r = st.gw->exec_step(s, code, 2000);
            gateway::Gateway::commit(s, code, r.status);
            if (r.status == ExecStatus::Success) vars.push_back(v);
            tool_steps += r.tool_calls.size();
        }
        std::int64_t before = stats_total(st.service.base_url());
        auto f = st.gw->fork_session(s, 2000);
        std::int64_t after = stats_total(st.service.base_url());
        upstream_on_fork += static_cast<int>(after - before);
        std::string probe = "print(" + (vars.empty() ? std::string("'none'") : [&] {
            std::string a;
            for (std::size_t i = 0; i < vars.size(); ++i) a += (i ? ", " : "") + vars[i];
            return a;
        }()) + ")";
        auto p = st.gw->exec_step(s, probe, 2000);
        auto q = st.gw->exec_step(f, probe, 2000);
        if (p.stdout_text != q.stdout_text || p.status != q.status || after != before) ++bad;
        st.gw->close(f);
        st.gw->close(s);
    }
    return {bad == 0 && upstream_on_fork == 0,
            "50 prefixes (" + std::to_string(tool_steps) + " tool calls), upstream requests during forks " + std::to_string(upstream_on_fork) +
                ", probe mismatches " + std::to_string(bad)};
}

// --- 6 ----------------------------------------------------------------------

Verdict efficiency() {
    auto dir = scratch("batch");
    auto cfg = config_in(dir, harness::write_bundle(dir, sim::batch_suite(6)));
    auto suite = harness::parse_suite(harness::read_json(cfg.resolve(cfg.suite)));
    harness::Environment env(cfg);
    auto code = harness::cmd_run(suite, cfg.engine, env);
    auto js = harness::cmd_json_baseline(suite, env);
    fs::remove_all(dir);
    const auto& batchable = suite.subsets.at("batchable");
    auto avg = [&](const harness::RunOutput& r) {
        double d = 0;
        for (const auto& t : r.trajectories)
            if (std::find(batchable.begin(), batchable.end(), t.task_id) != batchable.end()) d += t.depth;
        return d / static_cast<double>(batchable.size());
    };
    auto status_of = [](const harness::RunOutput& r, const std::string& id) {
        for (const auto& t : r.trajectories)
            if (t.task_id == id) return t.answer_status.value_or(AnswerStatus::Unsolved);
        return AnswerStatus::Unsolved;
    };
    double cd = avg(code), jd = avg(js);
    auto co = status_of(code, "oversized-0"), jo = status_of(js, "oversized-0");
    bool ok = cd <= 0.6 * jd && co == AnswerStatus::Solved && jo == AnswerStatus::Unsolved;
    return {ok, "avg depth code " + fmt(cd) + " vs json " + fmt(jd) + " (ratio " + fmt(cd / jd) + "); oversized: code " +
                    std::string(to_string(co)) + ", json " + std::string(to_string(jo))};
}

// --- 7 ----------------------------------------------------------------------

Verdict prm_pipeline() {
    Stack st(sim::noop_tools());
    judge::MockJudge judge;
    HyperParams hp;
    std::vector<rollout::PrmPair> all;
    int bad_order = 0, bad_swap = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto tr = sim::random_tree(seed, 4, 2, "prm-");
        policy::ScriptedMockBackend backend(tr.policy);
        rollout::RolloutScorer scorer(backend, *st.gw, judge, hp);
        auto tree = rollout::collect_tree(tr.task, backend, *st.gw, scorer, hp, {});
        auto pairs = rollout::label_pairs(tree);
        for (const auto& p : pairs) bad_order += !(p.chosen_latent > p.rejected_latent);

        auto swapped = tree;
        for (auto& n : swapped.nodes)
            if (n.children.size() == 2) {
                auto& a = swapped.nodes[static_cast<std::size_t>(n.children[0])];
                auto& b = swapped.nodes[static_cast<std::size_t>(n.children[1])];
                std::swap(a.latent, b.latent);
            }
        auto sp = rollout::label_pairs(swapped);
        if (sp.size() != pairs.size()) ++bad_swap;
        else
            for (std::size_t i = 0; i < sp.size(); ++i)
                if (sp[i].chosen != pairs[i].rejected || sp[i].rejected != pairs[i].chosen || sp[i].chosen_latent != pairs[i].chosen_latent)
                    ++bad_swap;
        all.insert(all.end(), pairs.begin(), pairs.end());
    }
    auto dir = scratch("prm");
    auto path = (dir / "pairs.jsonl").string();
    auto written = rollout::emit_jsonl(all, path);
    bool round = written == all.size() && rollout::read_jsonl(path) == all;
    fs::remove_all(dir);
    bool ok = bad_order == 0 && bad_swap == 0 && round && !all.empty();
    return {ok, "100 trees, " + std::to_string(all.size()) + " pairs, order violations " + std::to_string(bad_order) +
                    ", swap violations " + std::to_string(bad_swap) + ", JSONL round-trip " + (round ? "lossless" : "lossy")};
}

// --- 8 ----------------------------------------------------------------------

std::map<std::string, std::string> files_under(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = harness::read_text(e.path());
    return out;
}

Verdict determinism() {
    auto dir = scratch("det");
    std::size_t files = 0;
    bool same = true;
    for (auto [name, bundle] : {std::pair{std::string("selection"), sim::selection_suite(8)}, std::pair{std::string("trees"), sim::tree_suite(6, 3)}}) {
        auto sub = dir / name;
        json c = harness::write_bundle(sub, bundle);
        c["hp"] = {{"rng_seed", 1234}};
        auto cfg = config_in(sub, c);
        auto suite = harness::parse_suite(harness::read_json(cfg.resolve(cfg.suite)));
        for (int rep = 0; rep < 2; ++rep) {
            harness::Environment env(cfg);
            harness::write_run(sub / ("run" + std::to_string(rep)), harness::cmd_run(suite, cfg.engine, env));
        }
        auto a = files_under(sub / "run0"), b = files_under(sub / "run1");
        files += a.size();
        same &= a == b;
    }
    fs::remove_all(dir);
    return {same && files > 0, std::to_string(files) + " files compared per run, " + (same ? "byte-identical" : "differ")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"1 reward formula vectors", reward_vectors},
        {"2 rollout oracle equivalence", rollout_oracle},
        {"3 end-to-end selection", end_to_end_selection},
        {"4 conflict statistics", conflict_fixture},
        {"5 fork soundness and cache", fork_soundness},
        {"6 efficiency direction", efficiency},
        {"7 PRM data pipeline", prm_pipeline},
        {"8 determinism", determinism},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += !v.ok;
        std::cout << (v.ok ? "PASS" : "FAIL") << "  " << name << ": " << v.detail << std::endl;
    }
    return failed ? 1 : 0;
}
