#pragma once
// Deterministic HTTP tool universe. A scenario declares the tools and, per
// tool, an ordered list of response rules; the first rule whose `match`
// predicate accepts the request parameters renders the response.

#include "core.hpp"
#include "http_util.hpp"

#include "httplib.h"

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace codetool::mock {

enum class FailureMode { None, RateLimit, Unavailable, Oversized };

struct OversizedSpec {
    std::size_t bytes = 0;
    std::string critical_key = "answer";
    json critical_value;
};

struct ResponseRule {
    json match = json::object();  // param -> required value; empty matches anything
    int status = 200;
    json body = json::object();
    int latency_ms = 0;
    FailureMode failure_mode = FailureMode::None;
    OversizedSpec oversized;
};

struct ScenarioSpec {
    std::vector<ToolDoc> tools;
    std::map<std::string, std::vector<ResponseRule>> routes;  // keyed by tool name
};

inline FailureMode parse_failure_mode(const std::string& s) {
    if (s.empty() || s == "none") return FailureMode::None;
    if (s == "rate_limit") return FailureMode::RateLimit;
    if (s == "unavailable") return FailureMode::Unavailable;
    if (s == "oversized") return FailureMode::Oversized;
    throw MalformedInput("unknown failure_mode: " + s);
}

inline ScenarioSpec parse_scenario(const json& j) {
    ScenarioSpec s;
    try {
        s.tools = j.at("tools").get<std::vector<ToolDoc>>();
        if (j.contains("routes")) {
            for (const auto& [tool, rules] : j.at("routes").items()) {
                auto& out = s.routes[tool];
                for (const auto& r : rules) {
                    ResponseRule rule;
                    rule.match = r.value("match", json::object());
                    rule.status = r.value("status", 200);
                    rule.body = r.value("body", json::object());
                    rule.latency_ms = r.value("latency_ms", 0);
                    rule.failure_mode = parse_failure_mode(r.value("failure_mode", std::string()));
                    if (r.contains("oversized")) {
                        const auto& o = r.at("oversized");
                        rule.oversized.bytes = o.value("bytes", std::size_t{0});
                        rule.oversized.critical_key = o.value("critical_key", std::string("answer"));
                        rule.oversized.critical_value = o.value("critical_value", json());
                    }
                    out.push_back(std::move(rule));
                }
            }
        }
    } catch (const MalformedInput&) {
        throw;
    } catch (const std::exception& e) {
        throw MalformedInput(std::string("malformed scenario: ") + e.what());
    }
    std::set<std::string> names;
    for (const auto& t : s.tools) {
        if (!names.insert(t.name).second) throw MalformedInput("duplicate tool name: " + t.name);
        if (auto v = validate_tool(t); !v.empty()) throw MalformedInput("invalid tool " + t.name + ": " + v.front());
    }
    for (const auto& [tool, _] : s.routes)
        if (!names.count(tool)) throw MalformedInput("route for undeclared tool: " + tool);
    return s;
}

namespace detail {

inline std::string scalar_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// "{{p}}" alone keeps the parameter's JSON type; embedded placeholders are
// substituted as text. Unknown parameters render as null / empty text.
inline json render(const json& tmpl, const json& params) {
    if (tmpl.is_string()) {
        const auto& s = tmpl.get_ref<const std::string&>();
        if (s.size() > 4 && s.rfind("{{", 0) == 0 && s.find("}}") == s.size() - 2 && s.find("{{", 2) == std::string::npos) {
            std::string key = s.substr(2, s.size() - 4);
            return params.contains(key) ? params[key] : json();
        }
        std::string out;
        std::size_t pos = 0;
        while (true) {
            auto open = s.find("{{", pos);
            if (open == std::string::npos) break;
            auto close = s.find("}}", open);
            if (close == std::string::npos) break;
            out += s.substr(pos, open - pos);
            std::string key = s.substr(open + 2, close - open - 2);
            if (params.contains(key)) out += scalar_text(params[key]);
            pos = close + 2;
        }
        out += s.substr(pos);
        return out;
    }
    if (tmpl.is_array()) {
        json out = json::array();
        for (const auto& x : tmpl) out.push_back(render(x, params));
        return out;
    }
    if (tmpl.is_object()) {
        json out = json::object();
        for (const auto& [k, v] : tmpl.items()) out[k] = render(v, params);
        return out;
    }
    return tmpl;
}

inline bool rule_matches(const json& match, const json& params) {
    for (const auto& [k, v] : match.items()) {
        if (!params.contains(k)) return false;
        if (scalar_text(params[k]) != scalar_text(v)) return false;
    }
    return true;
}

// Coerces text parameters (path and query values) to the declared kind.
inline json coerce(const std::string& text, ParamKind kind) {
    try {
        switch (kind) {
            case ParamKind::Integer: {
                std::size_t used = 0;
                long long v = std::stoll(text, &used);
                if (used == text.size()) return v;
                break;
            }
            case ParamKind::Number: {
                std::size_t used = 0;
                double v = std::stod(text, &used);
                if (used == text.size()) return v;
                break;
            }
            case ParamKind::Boolean:
                if (text == "true") return true;
                if (text == "false") return false;
                break;
            case ParamKind::Array: return json::parse(text);
            case ParamKind::String: break;
        }
    } catch (const std::exception&) {
    }
    return text;
}

// Matches a request path against a url template; fills placeholder values.
inline bool match_template(const std::string& tmpl, const std::string& path, std::map<std::string, std::string>& out) {
    auto t = http::split_path(tmpl);
    auto p = http::split_path(path);
    if (t.size() != p.size()) return false;
    std::map<std::string, std::string> found;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].size() > 2 && t[i].front() == '{' && t[i].back() == '}') {
            found[t[i].substr(1, t[i].size() - 2)] = http::url_decode(p[i]);
        } else if (t[i] != p[i]) {
            return false;
        }
    }
    out = std::move(found);
    return true;
}

}  // namespace detail

class MockToolService {
public:
    explicit MockToolService(ScenarioSpec scenario) : scenario_(std::move(scenario)) {
        for (const auto& t : scenario_.tools) counts_[t.name] = 0;
        counts_["/docs"] = 0;
        counts_["unmatched"] = 0;
        // No SO_REUSEPORT: a second service on a taken port must fail to bind.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        server_.Get(".*", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
        server_.Post(".*", [this](const httplib::Request& req, httplib::Response& res) { handle(req, res); });
    }

    MockToolService(const MockToolService&) = delete;
    MockToolService& operator=(const MockToolService&) = delete;

    ~MockToolService() { stop(); }

    // Port 0 binds an ephemeral port. Returns the bound port.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
            if (port_ < 0) throw PortInUse("could not bind " + host);
        } else {
            if (!server_.bind_to_port(host, port)) throw PortInUse("port in use: " + std::to_string(port));
            port_ = port;
        }
        host_ = host;
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    // Blocks serving requests on the calling thread (CLI use).
    void serve_forever(const std::string& host, int port) {
        if (!server_.bind_to_port(host, port)) throw PortInUse("port in use: " + std::to_string(port));
        port_ = port;
        host_ = host;
        server_.listen_after_bind();
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

    json stats() const {
        std::lock_guard lock(mu_);
        json routes = json::object();
        for (const auto& [k, v] : counts_) routes[k] = v;
        return json{{"routes", routes}, {"total", total_}};
    }

    std::int64_t upstream_requests() const {
        std::lock_guard lock(mu_);
        return total_;
    }

    const ScenarioSpec& scenario() const { return scenario_; }

private:
    ScenarioSpec scenario_;
    httplib::Server server_;
    std::thread thread_;
    std::string host_ = "127.0.0.1";
    int port_ = -1;
    mutable std::mutex mu_;
    std::map<std::string, std::int64_t> counts_;
    std::int64_t total_ = 0;

    void count(const std::string& route) {
        std::lock_guard lock(mu_);
        ++counts_[route];
        ++total_;
    }

    static void send_json(httplib::Response& res, int status, const std::string& body) {
        res.status = status;
        res.set_content(body, "application/json");
    }

    void handle(const httplib::Request& req, httplib::Response& res) {
        if (req.path == "/__stats") return send_json(res, 200, stats().dump());
        if (req.path == "/docs" && req.method == "GET") {
            count("/docs");
            return send_json(res, 200, json(scenario_.tools).dump());
        }
        for (const auto& tool : scenario_.tools) {
            std::map<std::string, std::string> path_params;
            if (std::string(to_string(tool.http_method)) != req.method) continue;
            if (!detail::match_template(tool.url_template, req.path, path_params)) continue;
            count(tool.name);
            json params = json::object();
            auto kind_of = [&](const std::string& name) {
                const ParamSpec* p = tool.find_param(name);
                return p ? p->kind : ParamKind::String;
            };
            for (const auto& [k, v] : path_params) params[k] = detail::coerce(v, kind_of(k));
            for (const auto& [k, v] : req.params) params[k] = detail::coerce(v, kind_of(k));
            if (req.method == "POST" && !req.body.empty()) {
                json body = json::parse(req.body, nullptr, false);
                if (body.is_discarded() || !body.is_object()) return send_json(res, 400, R"({"error":"body must be a JSON object"})");
                for (const auto& [k, v] : body.items()) params[k] = v;
            }
            return respond(tool, params, res);
        }
        count("unmatched");
        send_json(res, 404, R"({"error":"no such route"})");
    }

    void respond(const ToolDoc& tool, const json& params, httplib::Response& res) {
        auto it = scenario_.routes.find(tool.name);
        if (it == scenario_.routes.end()) return send_json(res, 404, R"({"error":"no rules for tool"})");
        for (const auto& rule : it->second) {
            if (!detail::rule_matches(rule.match, params)) continue;
            if (rule.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(rule.latency_ms));
            switch (rule.failure_mode) {
                case FailureMode::RateLimit:
                    res.set_header("Retry-After", "1");
                    return send_json(res, 429, R"({"error":"rate limited"})");
                case FailureMode::Unavailable: return send_json(res, 503, R"({"error":"service unavailable"})");
                case FailureMode::Oversized: return send_json(res, rule.status, oversized_text(rule.oversized, params));
                case FailureMode::None: break;
            }
            return send_json(res, rule.status, detail::render(rule.body, params).dump());
        }
        send_json(res, 404, R"({"error":"no matching rule"})");
    }

    // Serialized with the padding first so the critical key lands late in the text.
    static std::string oversized_text(const OversizedSpec& o, const json& params) {
        json value = detail::render(o.critical_value, params);
        if (o.bytes == 0) return json{{o.critical_key, value}}.dump();
        nlohmann::ordered_json body;
        body["padding"] = "";
        body[o.critical_key] = value;
        std::size_t base = body.dump().size();
        std::size_t pad = o.bytes > base ? o.bytes - base : 0;
        pad = std::max<std::size_t>(pad, 2100);
        body["padding"] = std::string(pad, 'x');
        return body.dump();
    }
};

}  // namespace codetool::mock
