#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "eppc/core.hpp"

namespace eppc {

struct chat_message {
    std::string role;
    std::string text;
};

struct generation_request {
    std::vector<chat_message> messages;
    double temperature = 0.0;
    std::size_t n_samples = 1;
    std::size_t max_tokens = 1024;
    std::vector<std::string> stop;
};

struct generation_response {
    std::vector<std::string> texts;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
    double latency_ms = 0.0;
    std::size_t retries = 0;
};

/// Transport-level failure; `retryable` distinguishes transient problems
/// (connection loss, 5xx) from permanent ones (auth, malformed reply).
class transport_error : public std::runtime_error {
public:
    transport_error(const std::string& what, bool retryable)
        : std::runtime_error(what), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

/// Wire-level seam: turns one generation request into service texts. The
/// HTTP implementation and the scripted test doubles both sit behind this.
class transport {
public:
    virtual ~transport() = default;
    virtual std::vector<std::string> send(const generation_request& req) = 0;
};

struct gateway_config {
    std::string endpoint = "http://localhost:8000";
    std::string model = "default";
    std::string api_key_env = "";  // name of the env var holding the credential
    std::size_t concurrency_limit = 4;
    double timeout_seconds = 120.0;
    std::size_t max_attempts = 3;
    double backoff_base_seconds = 0.5;  // delay grows as base * 2^k
    std::string transcript_path = "";   // request/response audit log, jsonl, when nonempty
};

/// Client for a chat-completions-style generation service: bounded in-flight
/// concurrency, exponential-backoff retries on transient failures, optional
/// request/response transcript logging. Shareable across threads.
class gateway {
public:
    gateway(std::shared_ptr<transport> t, gateway_config cfg)
        : transport_(std::move(t)), cfg_(std::move(cfg)), in_flight_(0) {
        if (!transport_) throw std::invalid_argument("gateway: null transport");
        if (cfg_.concurrency_limit == 0)
            throw std::invalid_argument("gateway: concurrency limit must be > 0");
        if (cfg_.max_attempts == 0) throw std::invalid_argument("gateway: max_attempts must be > 0");
    }

    const gateway_config& config() const { return cfg_; }

    generation_response generate(generation_request req) {
        if (req.n_samples == 0) throw std::invalid_argument("generate: n_samples must be > 0");
        if (req.temperature < 0.0)
            throw std::invalid_argument("generate: temperature must be >= 0");
        // Greedy decoding is deterministic, so repeated samples carry no
        // information; collapse to a single sample.
        if (req.temperature == 0.0) req.n_samples = 1;

        acquire_slot();
        auto release = [this](void*) { release_slot(); };
        std::unique_ptr<void, decltype(release)> guard(this, release);

        auto started = std::chrono::steady_clock::now();
        std::size_t attempt = 0;
        for (;;) {
            try {
                std::vector<std::string> texts = transport_->send(req);
                if (texts.size() != req.n_samples)
                    throw transport_error("service returned " + std::to_string(texts.size()) +
                                              " texts for n=" + std::to_string(req.n_samples),
                                          false);
                generation_response resp;
                resp.texts = std::move(texts);
                resp.retries = attempt;
                resp.latency_ms = std::chrono::duration<double, std::milli>(
                                      std::chrono::steady_clock::now() - started)
                                      .count();
                log_transcript(req, resp);
                return resp;
            } catch (const transport_error& e) {
                ++attempt;
                if (!e.retryable() || attempt >= cfg_.max_attempts)
                    throw service_error("generation failed after " + std::to_string(attempt) +
                                        " attempt(s): " + e.what());
                double delay = cfg_.backoff_base_seconds * std::pow(2.0, attempt - 1);
                if (delay > 0.0)
                    std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }
        }
    }

    struct batch_item {
        bool ok = false;
        generation_response response;
        std::string error;
    };

    /// Issues requests concurrently up to the in-flight limit; results come
    /// back in request order and per-request failures never abort siblings.
    std::vector<batch_item> generate_batch(const std::vector<generation_request>& reqs) {
        std::vector<batch_item> out(reqs.size());
        std::vector<std::thread> workers;
        workers.reserve(reqs.size());
        for (std::size_t i = 0; i < reqs.size(); ++i) {
            workers.emplace_back([this, &out, &reqs, i] {
                try {
                    out[i].response = generate(reqs[i]);
                    out[i].ok = true;
                } catch (const std::exception& e) {
                    out[i].ok = false;
                    out[i].error = e.what();
                }
            });
        }
        for (auto& w : workers) w.join();
        return out;
    }

private:
    void acquire_slot() {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return in_flight_ < cfg_.concurrency_limit; });
        ++in_flight_;
    }
    void release_slot() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

    void log_transcript(const generation_request& req, const generation_response& resp) {
        if (cfg_.transcript_path.empty()) return;
        nlohmann::ordered_json j;
        j["request"]["messages"] = nlohmann::ordered_json::array();
        for (const auto& m : req.messages)
            j["request"]["messages"].push_back({{"role", m.role}, {"content", m.text}});
        j["request"]["temperature"] = req.temperature;
        j["request"]["n"] = req.n_samples;
        j["response"]["texts"] = resp.texts;
        j["response"]["retries"] = resp.retries;
        std::lock_guard<std::mutex> lock(transcript_mu_);
        std::ofstream out(cfg_.transcript_path, std::ios::app);
        out << j.dump() << "\n";
    }

    std::shared_ptr<transport> transport_;
    gateway_config cfg_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t in_flight_;
    std::mutex transcript_mu_;
};

/// Scripted transport for tests and offline pipeline runs. Each turn either
/// supplies the texts for one request or injects a failure. Tracks call and
/// concurrency counters so tests can assert on them.
class mock_transport : public transport {
public:
    struct turn {
        std::vector<std::string> texts;
        bool fail = false;
        bool retryable = true;
        std::string error = "scripted failure";
    };

    explicit mock_transport(std::vector<turn> turns, double latency_seconds = 0.0)
        : turns_(turns.begin(), turns.end()), latency_seconds_(latency_seconds) {}

    std::vector<std::string> send(const generation_request& req) override {
        std::size_t now = ++in_flight_;
        std::size_t prev_max = max_in_flight_.load();
        while (now > prev_max && !max_in_flight_.compare_exchange_weak(prev_max, now)) {
        }
        ++calls_;
        if (latency_seconds_ > 0.0)
            std::this_thread::sleep_for(std::chrono::duration<double>(latency_seconds_));
        turn t;
        {
            std::lock_guard<std::mutex> lock(mu_);
            if (turns_.empty()) {
                --in_flight_;
                throw transport_error("mock transport: script exhausted", false);
            }
            t = turns_.front();
            turns_.pop_front();
        }
        --in_flight_;
        if (t.fail) throw transport_error(t.error, t.retryable);
        if (t.texts.size() < req.n_samples)
            throw transport_error("mock transport: turn has too few texts", false);
        return std::vector<std::string>(t.texts.begin(), t.texts.begin() + req.n_samples);
    }

    std::size_t calls() const { return calls_.load(); }
    std::size_t max_in_flight() const { return max_in_flight_.load(); }

private:
    std::mutex mu_;
    std::deque<turn> turns_;
    double latency_seconds_;
    std::atomic<std::size_t> calls_{0};
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> max_in_flight_{0};
};

/// Narrow generation interface consumed by the refinement procedures: one
/// prompt in, n sampled texts out. Implemented over the gateway for live
/// runs and by per-example scripted clients for reproducible pipelines.
class generation_client {
public:
    virtual ~generation_client() = default;
    virtual std::vector<std::string> complete(const std::vector<chat_message>& messages,
                                              double temperature, std::size_t n_samples,
                                              std::size_t max_tokens) = 0;
};

class gateway_client : public generation_client {
public:
    explicit gateway_client(std::shared_ptr<gateway> gw) : gw_(std::move(gw)) {}

    std::vector<std::string> complete(const std::vector<chat_message>& messages,
                                      double temperature, std::size_t n_samples,
                                      std::size_t max_tokens) override {
        generation_request req;
        req.messages = messages;
        req.temperature = temperature;
        req.n_samples = n_samples;
        req.max_tokens = max_tokens;
        return gw_->generate(std::move(req)).texts;
    }

private:
    std::shared_ptr<gateway> gw_;
};

/// Replays a fixed sequence of turns, one per generation call, regardless of
/// prompt content. Counts calls for trigger assertions.
class scripted_client : public generation_client {
public:
    struct turn {
        std::vector<std::string> texts;
        bool fail = false;
    };

    explicit scripted_client(std::vector<turn> turns) : turns_(turns.begin(), turns.end()) {}

    std::vector<std::string> complete(const std::vector<chat_message>&, double,
                                      std::size_t n_samples, std::size_t) override {
        ++calls_;
        if (turns_.empty()) throw service_error("scripted client: script exhausted");
        turn t = std::move(turns_.front());
        turns_.pop_front();
        if (t.fail) throw service_error("scripted client: scripted failure");
        if (t.texts.size() > n_samples) t.texts.resize(n_samples);
        return t.texts;
    }

    std::size_t calls() const { return calls_; }

private:
    std::deque<turn> turns_;
    std::size_t calls_ = 0;
};

}  // namespace eppc
