#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "edutwin/gateway.hpp"
#include "edutwin/mock_backend.hpp"

namespace fakes {

namespace fs = std::filesystem;

/// A fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        for (int attempt = 0; attempt < 100; ++attempt) {
            auto p = fs::temp_directory_path() / ("edutwin-test-" + std::to_string(rd()) + std::to_string(rd()));
            if (fs::create_directory(p)) {
                path_ = p;
                return;
            }
        }
        throw std::runtime_error("cannot create temporary directory");
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

/// Wraps another backend, counting calls and tracking the peak number of
/// concurrent calls. An optional delay keeps calls in flight long enough to
/// overlap.
class CountingBackend final : public edutwin::gateway::Backend {
public:
    explicit CountingBackend(std::shared_ptr<edutwin::gateway::Backend> inner,
                             std::chrono::milliseconds delay = std::chrono::milliseconds(0))
        : inner_(std::move(inner)), delay_(delay) {}

    std::string complete(const edutwin::gateway::ModelRequest& request) override {
        calls.fetch_add(1);
        const int now = in_flight.fetch_add(1) + 1;
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
        struct Leave {
            std::atomic<int>& f;
            ~Leave() { f.fetch_sub(1); }
        } leave{in_flight};
        return inner_->complete(request);
    }
    [[nodiscard]] edutwin::gateway::BackendTag tag() const override { return inner_->tag(); }

    std::atomic<int> calls{0};
    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};

private:
    std::shared_ptr<edutwin::gateway::Backend> inner_;
    std::chrono::milliseconds delay_;
};

/// Answers from a script of steps; each step returns text or throws. The
/// last step repeats once the script is exhausted.
class ScriptedBackend final : public edutwin::gateway::Backend {
public:
    using Step = std::function<std::string(const edutwin::gateway::ModelRequest&)>;

    explicit ScriptedBackend(std::deque<Step> steps) : steps_(std::move(steps)) {}

    static Step reply(std::string text) {
        return [text](const edutwin::gateway::ModelRequest&) { return text; };
    }
    template <typename E>
    static Step fail(std::string message) {
        return [message](const edutwin::gateway::ModelRequest&) -> std::string { throw E(message); };
    }

    std::string complete(const edutwin::gateway::ModelRequest& request) override {
        Step step;
        {
            std::lock_guard lock(mutex_);
            ++calls;
            step = steps_.size() > 1 ? steps_.front() : steps_.back();
            if (steps_.size() > 1) steps_.pop_front();
        }
        return step(request);
    }
    [[nodiscard]] edutwin::gateway::BackendTag tag() const override { return edutwin::gateway::BackendTag::remote; }

    int calls = 0;

private:
    std::mutex mutex_;
    std::deque<Step> steps_;
};

/// Wraps another backend and keeps every request it sees.
class RecordingBackend final : public edutwin::gateway::Backend {
public:
    explicit RecordingBackend(std::shared_ptr<edutwin::gateway::Backend> inner) : inner_(std::move(inner)) {}

    std::string complete(const edutwin::gateway::ModelRequest& request) override {
        {
            std::lock_guard lock(mutex_);
            seen_.push_back(request);
        }
        return inner_->complete(request);
    }
    [[nodiscard]] edutwin::gateway::BackendTag tag() const override { return inner_->tag(); }

    std::vector<edutwin::gateway::ModelRequest> requests() {
        std::lock_guard lock(mutex_);
        return seen_;
    }

private:
    std::shared_ptr<edutwin::gateway::Backend> inner_;
    std::mutex mutex_;
    std::vector<edutwin::gateway::ModelRequest> seen_;
};

inline edutwin::gateway::GatewayOptions no_sleep(std::size_t parallelism = 1) {
    edutwin::gateway::GatewayOptions o;
    o.parallelism = parallelism;
    o.sleep = [](edutwin::gateway::Seconds) {};
    return o;
}

inline std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace fakes
