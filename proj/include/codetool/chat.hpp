#pragma once
// Minimal OpenAI-style chat-completions client shared by the remote policy,
// the remote judge and the answer composer.

#include "core.hpp"
#include "http_util.hpp"

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>

namespace codetool::chat {

struct ChatConfig {
    std::string base_url;             // e.g. http://localhost:8000/v1
    std::string model = "default";
    std::string api_key_env = "CODETOOL_API_KEY";
    int attempts = 3;
    int backoff_ms = 200;             // doubled after each failed attempt
    int timeout_s = 120;
};

inline void from_json(const json& j, ChatConfig& c) {
    ChatConfig d;
    c.base_url = j.value("base_url", d.base_url);
    c.model = j.value("model", d.model);
    c.api_key_env = j.value("api_key_env", d.api_key_env);
    c.attempts = j.value("attempts", d.attempts);
    c.backoff_ms = j.value("backoff_ms", d.backoff_ms);
    c.timeout_s = j.value("timeout_s", d.timeout_s);
}

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatReply {
    std::string content;
    std::optional<std::int64_t> completion_tokens;
};

class ChatClient {
public:
    explicit ChatClient(ChatConfig cfg) : cfg_(std::move(cfg)), base_(http::parse_base_url(cfg_.base_url)) {}

    // Throws BackendUnreachable once every attempt has failed.
    ChatReply complete(const std::vector<ChatMessage>& messages, double temperature, std::optional<std::uint64_t> seed) const {
        json body{{"model", cfg_.model}, {"temperature", temperature}, {"n", 1}};
        json msgs = json::array();
        for (const auto& m : messages) msgs.push_back(json{{"role", m.role}, {"content", m.content}});
        body["messages"] = msgs;
        if (seed) body["seed"] = *seed;
        httplib::Headers headers;
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

        std::string last_error = "no attempts made";
        int delay = cfg_.backoff_ms;
        for (int attempt = 0; attempt < std::max(1, cfg_.attempts); ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
                delay *= 2;
            }
            auto client = http::make_client(base_, cfg_.timeout_s);
            auto r = client->Post(base_.path_prefix + "/chat/completions", headers, body.dump(), "application/json");
            if (!r) {
                last_error = "transport: " + httplib::to_string(r.error());
                continue;
            }
            if (r->status != 200) {
                last_error = "HTTP " + std::to_string(r->status);
                continue;
            }
            try {
                json resp = json::parse(r->body);
                ChatReply out;
                out.content = resp.at("choices").at(0).at("message").at("content").get<std::string>();
                if (resp.contains("usage") && resp["usage"].contains("completion_tokens"))
                    out.completion_tokens = resp["usage"]["completion_tokens"].get<std::int64_t>();
                return out;
            } catch (const std::exception& e) {
                last_error = std::string("malformed response: ") + e.what();
            }
        }
        throw BackendUnreachable("chat backend at " + cfg_.base_url + " failed: " + last_error);
    }

    const ChatConfig& config() const { return cfg_; }

private:
    ChatConfig cfg_;
    http::BaseUrl base_;
};

}  // namespace codetool::chat
