#pragma once
// Sandbox runner: the line-delimited JSON worker protocol, an in-process fake
// runner built on the minipy interpreter, and the transports the gateway uses
// to talk to a worker (in-process call or a child process over pipes).

#include "core.hpp"
#include "minipy/interpreter.hpp"

#include <atomic>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace codetool::runner {

inline constexpr int kProtocolVersion = 1;

// Serves the worker protocol for any number of sessions. Not thread-safe; the
// transports serialize access.
class FakeRunner {
public:
    using ToolCallerFactory = std::function<minipy::ToolCaller(const std::string& session_id)>;

    explicit FakeRunner(ToolCallerFactory factory = {}, std::string sentinel = "FINAL ANSWER:")
        : factory_(std::move(factory)), sentinel_(std::move(sentinel)) {}

    // One request line in, one response line out (without the trailing newline).
    std::string handle(const std::string& line) {
        json req;
        try {
            req = json::parse(line);
        } catch (const json::exception&) {
            return json{{"ok", false}, {"error", "protocol_error"}}.dump();
        }
        json resp = dispatch(req);
        if (req.is_object() && req.contains("id")) resp["id"] = req["id"];
        return resp.dump();
    }

    bool shut_down() const { return shut_down_; }
    std::size_t session_count() const { return sessions_.size(); }

private:
    ToolCallerFactory factory_;
    std::string sentinel_;
    std::map<std::string, std::unique_ptr<minipy::Interpreter>> sessions_;
    bool shut_down_ = false;

    static json error(const char* code) { return json{{"ok", false}, {"error", code}}; }

    json dispatch(const json& req) {
        if (!req.is_object() || !req.contains("op") || !req["op"].is_string()) return error("protocol_error");
        const std::string op = req["op"].get<std::string>();
        if (op == "hello") {
            if (req.value("version", 0) != kProtocolVersion) return error("protocol_error");
            return json{{"ok", true}, {"version", kProtocolVersion}};
        }
        if (op == "shutdown") {
            shut_down_ = true;
            sessions_.clear();
            return json{{"ok", true}};
        }
        if (!req.contains("session") || !req["session"].is_string()) return error("protocol_error");
        const std::string sid = req["session"].get<std::string>();
        if (op == "create") {
            minipy::Interpreter::Options opts;
            opts.sentinel = sentinel_;
            if (factory_) opts.tool_caller = factory_(sid);
            sessions_[sid] = std::make_unique<minipy::Interpreter>(std::move(opts));
            return json{{"ok", true}};
        }
        auto it = sessions_.find(sid);
        if (op == "destroy") {
            if (it == sessions_.end()) return error("no_such_session");
            sessions_.erase(it);
            return json{{"ok", true}};
        }
        if (op == "exec") {
            if (!req.contains("code") || !req["code"].is_string() || !req.contains("timeout_ms") ||
                !req["timeout_ms"].is_number_integer() || req["timeout_ms"].get<std::int64_t>() <= 0)
                return error("protocol_error");
            if (it == sessions_.end()) return error("no_such_session");
            auto r = it->second->run(req["code"].get<std::string>(), req["timeout_ms"].get<std::int64_t>());
            const char* status = r.status == minipy::RunResult::Status::Ok      ? "success"
                                 : r.status == minipy::RunResult::Status::Error ? "runtime_error"
                                                                                : "timeout";
            return json{{"ok", true},
                        {"status", status},
                        {"stdout", std::move(r.out)},
                        {"stderr", std::move(r.err)},
                        {"wall_time_ms", r.elapsed_ms}};
        }
        return error("protocol_error");
    }
};

// Runs the protocol over stdin/stdout until shutdown or EOF.
inline int serve_stdio(FakeRunner& runner) {
    std::string line;
    std::ios::sync_with_stdio(false);
    while (std::getline(std::cin, line)) {
        if (line.empty()) continue;
        std::cout << runner.handle(line) << '\n' << std::flush;
        if (runner.shut_down()) return 0;
    }
    return 0;
}

class Transport {
public:
    virtual ~Transport() = default;
    // Sends one request line and returns the response line. Throws RunnerUnavailable.
    virtual std::string roundtrip(const std::string& line, std::int64_t timeout_ms) = 0;
};

class InProcessTransport : public Transport {
public:
    explicit InProcessTransport(std::shared_ptr<FakeRunner> runner) : runner_(std::move(runner)) {}

    std::string roundtrip(const std::string& line, std::int64_t) override {
        std::lock_guard lock(mu_);
        if (!runner_ || runner_->shut_down()) throw RunnerUnavailable("runner is not running");
        return runner_->handle(line);
    }

    // Simulates the worker process going away.
    void kill() {
        std::lock_guard lock(mu_);
        runner_.reset();
    }

private:
    std::mutex mu_;
    std::shared_ptr<FakeRunner> runner_;
};

// Child process speaking the protocol over pipes.
class SubprocessTransport : public Transport {
public:
    SubprocessTransport(std::vector<std::string> argv, std::vector<std::pair<std::string, std::string>> env = {}) {
        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0) throw RunnerUnavailable("pipe() failed");
        pid_ = fork();
        if (pid_ < 0) throw RunnerUnavailable("fork() failed");
        if (pid_ == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            for (const auto& [k, v] : env) setenv(k.c_str(), v.c_str(), 1);
            std::vector<char*> args;
            for (auto& a : argv) args.push_back(a.data());
            args.push_back(nullptr);
            execvp(args[0], args.data());
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        in_ = to_child[1];
        out_ = from_child[0];
        signal(SIGPIPE, SIG_IGN);
    }

    ~SubprocessTransport() override {
        if (in_ >= 0) close(in_);
        if (out_ >= 0) close(out_);
        if (pid_ > 0) {
            int status = 0;
            for (int i = 0; i < 50; ++i) {
                if (waitpid(pid_, &status, WNOHANG) == pid_) return;
                usleep(20000);
            }
            ::kill(pid_, SIGKILL);
            waitpid(pid_, &status, 0);
        }
    }

    std::string roundtrip(const std::string& line, std::int64_t timeout_ms) override {
        std::lock_guard lock(mu_);
        if (dead_) throw RunnerUnavailable("runner process is gone");
        std::string msg = line + "\n";
        std::size_t off = 0;
        while (off < msg.size()) {
            ssize_t n = write(in_, msg.data() + off, msg.size() - off);
            if (n <= 0) return fail("write to runner failed");
            off += static_cast<std::size_t>(n);
        }
        // Generous margin over the exec timeout: the worker enforces the
        // timeout itself, this only catches a hung process.
        auto deadline_ms = timeout_ms + 5000;
        while (true) {
            auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                std::string resp = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                return resp;
            }
            pollfd pfd{out_, POLLIN, 0};
            int pr = poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(deadline_ms, 1 << 30)));
            if (pr <= 0) return fail("runner did not respond in time");
            char chunk[65536];
            ssize_t n = read(out_, chunk, sizeof(chunk));
            if (n <= 0) return fail("runner closed its output");
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    pid_t pid() const { return pid_; }

private:
    std::mutex mu_;
    pid_t pid_ = -1;
    int in_ = -1, out_ = -1;
    std::string buf_;
    bool dead_ = false;

    [[noreturn]] std::string fail(const std::string& why) {
        dead_ = true;
        throw RunnerUnavailable(why);
    }
};

// Typed client over a transport. Every request carries a fresh id, and the
// response must echo it.
class RunnerClient {
public:
    explicit RunnerClient(std::shared_ptr<Transport> t) : transport_(std::move(t)) {}

    void hello() {
        json r = request(json{{"op", "hello"}, {"version", kProtocolVersion}}, 5000);
        if (!r.value("ok", false) || r.value("version", 0) != kProtocolVersion)
            throw RunnerUnavailable("runner handshake failed");
    }

    void create(const std::string& session) {
        json r = request(json{{"op", "create"}, {"session", session}}, 5000);
        if (!r.value("ok", false)) throw RunnerUnavailable("runner refused to create session " + session);
    }

    void destroy(const std::string& session) { request(json{{"op", "destroy"}, {"session", session}}, 5000); }

    void shutdown() {
        try {
            request(json{{"op", "shutdown"}}, 5000);
        } catch (const RunnerUnavailable&) {
        }
    }

    ExecutionResult exec(const std::string& session, const std::string& code, std::int64_t timeout_ms) {
        json r = request(json{{"op", "exec"}, {"session", session}, {"code", code}, {"timeout_ms", timeout_ms}}, timeout_ms);
        ExecutionResult res;
        if (!r.value("ok", false)) {
            res.status = ExecStatus::ProtocolError;
            res.stderr_text = "runner error: " + r.value("error", std::string("unknown"));
            return res;
        }
        try {
            res.status = parse_exec_status(r.at("status").get<std::string>());
            res.stdout_text = r.at("stdout").get<std::string>();
            res.stderr_text = r.at("stderr").get<std::string>();
            res.wall_time_ms = r.at("wall_time_ms").get<std::int64_t>();
        } catch (const std::exception& e) {
            res = ExecutionResult{};
            res.status = ExecStatus::ProtocolError;
            res.stderr_text = std::string("malformed runner response: ") + e.what();
        }
        return res;
    }

private:
    std::shared_ptr<Transport> transport_;
    std::atomic<std::int64_t> next_id_{1};

    json request(json req, std::int64_t timeout_ms) {
        std::int64_t id = next_id_++;
        req["id"] = id;
        std::string line = transport_->roundtrip(req.dump(), timeout_ms);
        json resp;
        try {
            resp = json::parse(line);
        } catch (const json::exception&) {
            return json{{"ok", false}, {"error", "protocol_error"}};
        }
        if (!resp.is_object() || resp.value("id", json()) != json(id)) return json{{"ok", false}, {"error", "protocol_error"}};
        return resp;
    }
};

}  // namespace codetool::runner
