#pragma once
// Execution gateway: sandbox sessions on a pool of runner workers, fork by
// replaying the committed prefix, and the caching proxy every tool call made
// from sandbox code goes through.

#include "core.hpp"
#include "hashing.hpp"
#include "http_util.hpp"
#include "runner.hpp"

#include "httplib.h"

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace codetool::gateway {

struct CachedResponse {
    int status = 0;
    std::string content_type;
    std::string body;
};

// Method upper-cased, query keys sorted, body keys sorted recursively.
inline std::string cache_key(std::string method, const std::string& url, const json& body) {
    for (auto& c : method) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    std::string key = method + " " + http::normalize_url(url);
    if (!body.is_null()) key += " " + body.dump();  // json objects are key-sorted
    return key;
}

class ToolResponseCache {
public:
    std::optional<CachedResponse> get(const std::string& key) {
        std::shared_lock lock(mu_);
        auto it = entries_.find(key);
        if (it == entries_.end()) {
            ++misses_;
            return std::nullopt;
        }
        ++hits_;
        return it->second;
    }

    void put(const std::string& key, CachedResponse resp) {
        std::unique_lock lock(mu_);
        entries_.emplace(key, std::move(resp));
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return entries_.size();
    }
    std::int64_t hits() const { return hits_; }
    std::int64_t misses() const { return misses_; }

private:
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, CachedResponse> entries_;
    std::atomic<std::int64_t> hits_{0}, misses_{0};
};

// Builds upstream requests from ToolDocs and answers them from the cache when it can.
class ToolProxy {
public:
    explicit ToolProxy(std::string upstream_base_url, std::shared_ptr<ToolResponseCache> cache = nullptr)
        : base_(http::parse_base_url(upstream_base_url)),
          cache_(cache ? std::move(cache) : std::make_shared<ToolResponseCache>()) {}

    void register_session(const std::string& session, std::vector<ToolDoc> toolset) {
        std::lock_guard lock(mu_);
        sessions_[session].toolset = std::move(toolset);
    }

    void copy_registration(const std::string& from, const std::string& to) {
        std::lock_guard lock(mu_);
        sessions_[to].toolset = sessions_.at(from).toolset;
    }

    void unregister_session(const std::string& session) {
        std::lock_guard lock(mu_);
        sessions_.erase(session);
    }

    // Request hashes recorded for the session since the last drain.
    std::vector<std::string> drain_log(const std::string& session) {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(session);
        if (it == sessions_.end()) return {};
        return std::exchange(it->second.log, {});
    }

    nlohmann::ordered_json call(const std::string& session, const std::string& tool_name, const json& params) {
        ToolDoc tool;
        {
            std::lock_guard lock(mu_);
            auto it = sessions_.find(session);
            if (it == sessions_.end()) throw ToolCallError(ToolCallError::Kind::UnknownTool, "unknown session " + session);
            const ToolDoc* t = nullptr;
            for (const auto& d : it->second.toolset)
                if (d.name == tool_name) t = &d;
            if (!t) throw ToolCallError(ToolCallError::Kind::UnknownTool, "unknown tool: " + tool_name);
            tool = *t;
        }
        if (!params.is_object()) throw ToolCallError(ToolCallError::Kind::InvalidParam, "params must be an object");
        check_params(tool, params);

        auto [url, body] = build_request(tool, params);
        std::string key = cache_key(std::string(to_string(tool.http_method)), url, body);
        {
            std::lock_guard lock(mu_);
            sessions_[session].log.push_back(hex64(fnv1a64(key)));
        }
        CachedResponse resp;
        if (auto hit = cache_->get(key)) {
            resp = *hit;
        } else {
            resp = fetch(tool.http_method, url, body);
            upstream_.fetch_add(1);
            cache_->put(key, resp);
        }
        if (resp.status >= 400) {
            std::string snippet = resp.body.substr(0, 200);
            throw ToolCallError(ToolCallError::Kind::Upstream, "HTTP " + std::to_string(resp.status) + ": " + snippet);
        }
        auto parsed = nlohmann::ordered_json::parse(resp.body, nullptr, false);
        if (parsed.is_discarded()) return nlohmann::ordered_json(resp.body);
        return parsed;
    }

    ToolResponseCache& cache() { return *cache_; }
    std::shared_ptr<ToolResponseCache> shared_cache() { return cache_; }
    // Requests this proxy actually sent upstream (cache misses that reached the network).
    std::int64_t upstream_requests() const { return upstream_; }

private:
    struct SessionEntry {
        std::vector<ToolDoc> toolset;
        std::vector<std::string> log;
    };

    http::BaseUrl base_;
    std::shared_ptr<ToolResponseCache> cache_;
    std::mutex mu_;
    std::map<std::string, SessionEntry> sessions_;
    std::atomic<std::int64_t> upstream_{0};

    static void check_params(const ToolDoc& tool, const json& params) {
        for (const auto& p : tool.params)
            if (p.required && (!params.contains(p.name) || params[p.name].is_null()))
                throw ToolCallError(ToolCallError::Kind::MissingParam,
                                    "missing required parameter '" + p.name + "' for tool " + tool.name);
        for (const auto& [k, v] : params.items()) {
            const ParamSpec* spec = tool.find_param(k);
            if (!spec) throw ToolCallError(ToolCallError::Kind::InvalidParam, "unknown parameter '" + k + "' for tool " + tool.name);
            bool ok = true;
            switch (spec->kind) {
                case ParamKind::String: ok = v.is_string() || v.is_number(); break;
                case ParamKind::Integer: ok = v.is_number_integer(); break;
                case ParamKind::Number: ok = v.is_number(); break;
                case ParamKind::Boolean: ok = v.is_boolean(); break;
                case ParamKind::Array: ok = v.is_array(); break;
            }
            if (!ok)
                throw ToolCallError(ToolCallError::Kind::InvalidParam, "parameter '" + k + "' of tool " + tool.name + " must be " +
                                                                           std::string(to_string(spec->kind)));
        }
    }

    static std::string text_of(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

    // Placeholders fill the path; the rest go to the query (GET) or JSON body (POST).
    std::pair<std::string, json> build_request(const ToolDoc& tool, const json& params) const {
        std::string path = tool.url_template;
        std::set<std::string> used;
        for (const auto& ph : url_placeholders(tool.url_template)) {
            std::string token = "{" + ph + "}";
            std::string value = params.contains(ph) ? http::url_encode(text_of(params[ph])) : std::string();
            for (auto pos = path.find(token); pos != std::string::npos; pos = path.find(token, pos + value.size()))
                path.replace(pos, token.size(), value);
            used.insert(ph);
        }
        json rest = json::object();
        for (const auto& [k, v] : params.items())
            if (!used.count(k)) rest[k] = v;
        std::string url = base_.path_prefix + path;
        if (tool.http_method == HttpMethod::Get) {
            bool first = true;
            for (const auto& [k, v] : rest.items()) {
                url += (first ? "?" : "&") + http::url_encode(k) + "=" + http::url_encode(text_of(v));
                first = false;
            }
            return {url, json()};
        }
        return {url, rest};
    }

    CachedResponse fetch(HttpMethod method, const std::string& url, const json& body) {
        auto client = http::make_client(base_, 30);
        httplib::Result r = method == HttpMethod::Get ? client->Get(url) : client->Post(url, body.dump(), "application/json");
        if (!r) throw ToolCallError(ToolCallError::Kind::Transport, "tool service unreachable: " + httplib::to_string(r.error()));
        return CachedResponse{r->status, r->get_header_value("Content-Type"), r->body};
    }
};

struct CommittedStep {
    std::string code;
    ExecStatus status = ExecStatus::Success;
};

struct SessionHandle {
    std::string session_id;
    std::vector<CommittedStep> committed_prefix;
    std::string task_id;
    std::size_t worker = 0;

    std::vector<std::string> committed_codes() const {
        std::vector<std::string> out;
        for (const auto& s : committed_prefix) out.push_back(s.code);
        return out;
    }
};

struct GatewayOptions {
    enum class RunnerKind { InProcess, Subprocess };
    RunnerKind runner = RunnerKind::InProcess;
    std::size_t workers = 1;
    std::vector<std::string> runner_argv;  // subprocess only, e.g. {"codetool", "fake-runner"}
    std::string sentinel = "FINAL ANSWER:";
};

class Gateway {
public:
    Gateway(std::shared_ptr<ToolProxy> proxy, GatewayOptions opts = {}) : proxy_(std::move(proxy)), opts_(std::move(opts)) {
        if (opts_.workers < 1) opts_.workers = 1;
        if (opts_.runner == GatewayOptions::RunnerKind::Subprocess) start_proxy_endpoint();
        for (std::size_t i = 0; i < opts_.workers; ++i) {
            std::shared_ptr<runner::Transport> t;
            if (opts_.runner == GatewayOptions::RunnerKind::InProcess) {
                auto proxy_ptr = proxy_;
                auto fake = std::make_shared<runner::FakeRunner>(
                    [proxy_ptr](const std::string& sid) -> minipy::ToolCaller {
                        return [proxy_ptr, sid](const std::string& tool, const nlohmann::ordered_json& params) {
                            return proxy_ptr->call(sid, tool, json::parse(params.dump()));
                        };
                    },
                    opts_.sentinel);
                auto ip = std::make_shared<runner::InProcessTransport>(fake);
                in_process_.push_back(ip);
                t = ip;
            } else {
                if (opts_.runner_argv.empty()) throw RunnerUnavailable("subprocess runner needs a command");
                auto argv = opts_.runner_argv;
                argv.push_back("--sentinel");
                argv.push_back(opts_.sentinel);
                t = std::make_shared<runner::SubprocessTransport>(
                    argv, std::vector<std::pair<std::string, std::string>>{{"CODETOOL_PROXY_URL", proxy_url_}});
            }
            auto client = std::make_shared<runner::RunnerClient>(t);
            client->hello();
            workers_.push_back(std::move(client));
        }
    }

    // Test hook: builds a gateway over caller-provided transports.
    Gateway(std::shared_ptr<ToolProxy> proxy, std::vector<std::shared_ptr<runner::Transport>> transports)
        : proxy_(std::move(proxy)) {
        for (auto& t : transports) {
            auto client = std::make_shared<runner::RunnerClient>(std::move(t));
            client->hello();
            workers_.push_back(std::move(client));
        }
        if (workers_.empty()) throw RunnerUnavailable("no runner workers");
    }

    ~Gateway() {
        for (auto& w : workers_) w->shutdown();
        if (proxy_server_) {
            proxy_server_->stop();
            if (proxy_thread_.joinable()) proxy_thread_.join();
        }
    }

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    SessionHandle open_session(const Task& task) {
        SessionHandle h = new_handle(task.id);
        proxy_->register_session(h.session_id, task.toolset);
        try {
            workers_[h.worker]->create(h.session_id);
        } catch (...) {
            proxy_->unregister_session(h.session_id);
            throw;
        }
        return h;
    }

    ExecutionResult exec_step(const SessionHandle& h, const std::string& code, std::int64_t timeout_ms) {
        proxy_->drain_log(h.session_id);
        ExecutionResult r = workers_.at(h.worker)->exec(h.session_id, code, timeout_ms);
        r.tool_calls = proxy_->drain_log(h.session_id);
        if (r.status == ExecStatus::Timeout) r.wall_time_ms = std::max(r.wall_time_ms, timeout_ms);
        return r;
    }

    // Records code already executed on this session as part of its committed state.
    static void commit(SessionHandle& h, const std::string& code, ExecStatus status) {
        h.committed_prefix.push_back(CommittedStep{code, status});
    }

    // New session with the parent's committed state, rebuilt by replay. A
    // replayed step whose status differs from the recorded one is a divergence.
    SessionHandle fork_session(const SessionHandle& parent, std::int64_t timeout_ms) {
        SessionHandle h = new_handle(parent.task_id);
        proxy_->copy_registration(parent.session_id, h.session_id);
        workers_[h.worker]->create(h.session_id);
        for (const auto& step : parent.committed_prefix) {
            ExecutionResult r = exec_step(h, step.code, timeout_ms);
            if (r.status != step.status) {
                close(h);
                throw ReplayDivergence("replay of committed step produced " + std::string(to_string(r.status)) + ", recorded " +
                                       std::string(to_string(step.status)));
            }
        }
        h.committed_prefix = parent.committed_prefix;
        return h;
    }

    void close(const SessionHandle& h) {
        try {
            workers_.at(h.worker)->destroy(h.session_id);
        } catch (const Error&) {
            // already gone or runner down; nothing left to release
        }
        proxy_->unregister_session(h.session_id);
    }

    ToolProxy& proxy() { return *proxy_; }
    std::size_t worker_count() const { return workers_.size(); }
    const std::vector<std::shared_ptr<runner::InProcessTransport>>& in_process_transports() const { return in_process_; }
    const std::string& proxy_url() const { return proxy_url_; }

private:
    std::shared_ptr<ToolProxy> proxy_;
    GatewayOptions opts_;
    std::vector<std::shared_ptr<runner::RunnerClient>> workers_;
    std::vector<std::shared_ptr<runner::InProcessTransport>> in_process_;
    std::atomic<std::uint64_t> next_session_{1};
    std::unique_ptr<httplib::Server> proxy_server_;
    std::thread proxy_thread_;
    std::string proxy_url_;

    SessionHandle new_handle(const std::string& task_id) {
        std::uint64_t n = next_session_++;
        SessionHandle h;
        h.session_id = "s" + std::to_string(n);
        h.task_id = task_id;
        h.worker = static_cast<std::size_t>(n % workers_.size());
        return h;
    }

    // Loopback endpoint out-of-process runners use to reach the proxy:
    // POST /call {session, tool, params} -> {ok, result} | {ok:false, error}.
    void start_proxy_endpoint() {
        proxy_server_ = std::make_unique<httplib::Server>();
        auto proxy = proxy_;
        proxy_server_->Post("/call", [proxy](const httplib::Request& req, httplib::Response& res) {
            json out;
            try {
                json in = json::parse(req.body);
                auto result = proxy->call(in.at("session").get<std::string>(), in.at("tool").get<std::string>(),
                                          in.value("params", json::object()));
                res.set_content("{\"ok\":true,\"result\":" + result.dump() + "}", "application/json");
                return;
            } catch (const std::exception& e) {
                out = json{{"ok", false}, {"error", e.what()}};
            }
            res.set_content(out.dump(), "application/json");
        });
        int port = proxy_server_->bind_to_any_port("127.0.0.1");
        if (port < 0) throw RunnerUnavailable("could not bind proxy endpoint");
        proxy_url_ = "http://127.0.0.1:" + std::to_string(port);
        proxy_thread_ = std::thread([this] { proxy_server_->listen_after_bind(); });
        proxy_server_->wait_until_ready();
    }
};

// Tool caller used inside an out-of-process runner: forwards to the gateway endpoint.
inline minipy::ToolCaller remote_tool_caller(const std::string& proxy_url, const std::string& session) {
    return [base = http::parse_base_url(proxy_url), session](const std::string& tool, const nlohmann::ordered_json& params) {
        auto client = http::make_client(base, 60);
        json req{{"session", session}, {"tool", tool}, {"params", json::parse(params.dump())}};
        auto r = client->Post(base.path_prefix + "/call", req.dump(), "application/json");
        if (!r) throw std::runtime_error("tool proxy unreachable");
        auto resp = nlohmann::ordered_json::parse(r->body);
        if (!resp.value("ok", false)) throw std::runtime_error(resp.value("error", std::string("tool call failed")));
        return resp["result"];
    };
}

}  // namespace codetool::gateway
