#pragma once

// OpenAI-compatible chat-completions client.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "edutwin/errors.hpp"
#include "edutwin/gateway.hpp"

namespace edutwin::gateway {

/// Request body sent for `r` (no streaming, no tools).
inline nlohmann::json chat_request_body(const ModelRequest& r) {
    nlohmann::json messages = nlohmann::json::array();
    if (!r.system_text.empty()) messages.push_back({{"role", "system"}, {"content", r.system_text}});
    messages.push_back({{"role", "user"}, {"content", r.user_text}});
    return {{"model", r.model_id}, {"temperature", r.temperature}, {"max_tokens", r.max_tokens}, {"messages", messages}};
}

/// choices[0].message.content of a chat-completions response body.
inline std::string chat_response_text(std::string_view body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw TransientError("completion response is not JSON");
    try {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw TransientError("completion content is not a string");
        return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw TransientError(std::string("unexpected completion shape: ") + e.what());
    }
}

class RemoteBackend final : public Backend {
public:
    RemoteBackend(std::string url, std::string api_key, int timeout_s = 60)
        : endpoint_(Endpoint::parse(url)), api_key_(std::move(api_key)), timeout_s_(timeout_s) {}

    /// Reads the key from `api_key_env`; an unset variable is an AuthError.
    static RemoteBackend from_environment(const std::string& url, const std::string& api_key_env, int timeout_s = 60) {
        const char* key = std::getenv(api_key_env.c_str());
        if (!key || !*key) throw AuthError("environment variable " + api_key_env + " is not set");
        return RemoteBackend(url, key, timeout_s);
    }

    std::string complete(const ModelRequest& request) override {
        httplib::Client client(endpoint_.base);
        client.set_connection_timeout(timeout_s_);
        client.set_read_timeout(timeout_s_);
        httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
        auto res = client.Post(endpoint_.path, headers, chat_request_body(request).dump(), "application/json");
        if (!res) throw TransientError("connection failed: " + httplib::to_string(res.error()));
        const int status = res->status;
        if (status == 401 || status == 403) throw AuthError("endpoint rejected credentials (HTTP " + std::to_string(status) + ")");
        if (status == 429 || status == 408 || status >= 500) throw TransientError("HTTP " + std::to_string(status));
        if (status != 200) throw BackendUnavailable("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
        return chat_response_text(res->body);
    }

    [[nodiscard]] BackendTag tag() const override { return BackendTag::remote; }
    [[nodiscard]] const Endpoint& endpoint() const noexcept { return endpoint_; }

private:
    Endpoint endpoint_;
    std::string api_key_;
    int timeout_s_;
};

}  // namespace edutwin::gateway
