#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "eppc/gateway.hpp"

namespace eppc {

/// Chat-completions HTTP transport. Sends the common request shape
/// {model, messages, temperature, n, max_tokens, stop} to
/// {endpoint}/v1/chat/completions and reads choices[i].message.content.
class http_transport : public transport {
public:
    explicit http_transport(gateway_config cfg) : cfg_(std::move(cfg)) {
        if (!cfg_.api_key_env.empty()) {
            const char* key = std::getenv(cfg_.api_key_env.c_str());
            if (key != nullptr) api_key_ = key;
        }
    }

    std::vector<std::string> send(const generation_request& req) override {
        nlohmann::json body;
        body["model"] = cfg_.model;
        body["messages"] = nlohmann::json::array();
        for (const auto& m : req.messages)
            body["messages"].push_back({{"role", m.role}, {"content", m.text}});
        body["temperature"] = req.temperature;
        body["n"] = req.n_samples;
        body["max_tokens"] = req.max_tokens;
        if (!req.stop.empty()) body["stop"] = req.stop;

        httplib::Client client(cfg_.endpoint);
        client.set_connection_timeout(std::chrono::duration<double>(cfg_.timeout_seconds));
        client.set_read_timeout(std::chrono::duration<double>(cfg_.timeout_seconds));
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

        auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
        if (!res) throw transport_error("connection failure: " + httplib::to_string(res.error()), true);
        if (res->status == 401 || res->status == 403)
            throw transport_error("authentication failure (HTTP " + std::to_string(res->status) + ")",
                                  false);
        if (res->status >= 500)
            throw transport_error("service error (HTTP " + std::to_string(res->status) + ")", true);
        if (res->status != 200)
            throw transport_error("unexpected HTTP status " + std::to_string(res->status), false);

        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw transport_error(std::string("malformed service reply: ") + e.what(), false);
        }
        if (!reply.contains("choices") || !reply["choices"].is_array())
            throw transport_error("malformed service reply: missing choices", false);
        std::vector<std::string> texts;
        for (const auto& choice : reply["choices"]) {
            if (!choice.contains("message") || !choice["message"].contains("content") ||
                !choice["message"]["content"].is_string())
                throw transport_error("malformed service reply: missing message content", false);
            texts.push_back(choice["message"]["content"].get<std::string>());
        }
        return texts;
    }

private:
    gateway_config cfg_;
    std::string api_key_;
};

inline std::shared_ptr<transport> make_http_transport(const gateway_config& cfg) {
    return std::make_shared<http_transport>(cfg);
}

}  // namespace eppc
