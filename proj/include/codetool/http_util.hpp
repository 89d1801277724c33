#pragma once
// Small URL helpers shared by the tool proxy, the mock service and the HTTP
// backends.

#include "errors.hpp"

#include "httplib.h"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace codetool::http {

inline std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') ++i;
        if (i >= path.size()) break;
        auto j = path.find('/', i);
        if (j == std::string::npos) j = path.size();
        out.push_back(path.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string url_encode(const std::string& s) {
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            char buf[4];
            std::snprintf(buf, sizeof(buf), "%%%02X", c);
            out += buf;
        }
    }
    return out;
}

inline std::string url_decode(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
            std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
            out += static_cast<char>(std::stoi(s.substr(i + 1, 2), nullptr, 16));
            i += 2;
        } else if (s[i] == '+') {
            out += ' ';
        } else {
            out += s[i];
        }
    }
    return out;
}

// Rebuilds "path?query" with query pairs sorted by key then value.
inline std::string normalize_url(const std::string& url) {
    auto q = url.find('?');
    if (q == std::string::npos) return url;
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string query = url.substr(q + 1);
    std::size_t i = 0;
    while (i <= query.size()) {
        auto amp = query.find('&', i);
        if (amp == std::string::npos) amp = query.size();
        std::string part = query.substr(i, amp - i);
        if (!part.empty()) {
            auto eq = part.find('=');
            if (eq == std::string::npos) pairs.emplace_back(url_decode(part), "");
            else pairs.emplace_back(url_decode(part.substr(0, eq)), url_decode(part.substr(eq + 1)));
        }
        i = amp + 1;
    }
    std::sort(pairs.begin(), pairs.end());
    std::string out = url.substr(0, q);
    for (std::size_t k = 0; k < pairs.size(); ++k)
        out += (k ? "&" : "?") + url_encode(pairs[k].first) + "=" + url_encode(pairs[k].second);
    return out;
}

struct BaseUrl {
    std::string scheme_host_port;  // e.g. "http://127.0.0.1:8080"
    std::string path_prefix;       // e.g. "/v1" (no trailing slash)
};

inline BaseUrl parse_base_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw MalformedInput("base URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    BaseUrl b;
    b.scheme_host_port = url.substr(0, path_start);
    if (path_start != std::string::npos) b.path_prefix = url.substr(path_start);
    while (!b.path_prefix.empty() && b.path_prefix.back() == '/') b.path_prefix.pop_back();
    return b;
}

inline std::unique_ptr<httplib::Client> make_client(const BaseUrl& base, int timeout_s = 30) {
    auto c = std::make_unique<httplib::Client>(base.scheme_host_port);
    c->set_connection_timeout(timeout_s, 0);
    c->set_read_timeout(timeout_s, 0);
    c->set_write_timeout(timeout_s, 0);
    return c;
}

}  // namespace codetool::http
