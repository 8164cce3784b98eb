#pragma once

// Completion dispatch: content-addressed response cache, retry with
// exponential backoff, token-bucket rate limiting and bounded parallelism.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "edutwin/digest.hpp"
#include "edutwin/errors.hpp"
#include "edutwin/numeric.hpp"

namespace edutwin::gateway {

using nlohmann::json;

struct ModelRequest {
    std::string model_id;
    double temperature = 0;
    std::string system_text;
    std::string user_text;
    int run_index = 0;
    int max_tokens = 256;

    /// SHA-256 over the canonical serialisation of the fields that determine
    /// the answer; max_tokens is deliberately not part of the key.
    [[nodiscard]] std::string cache_key() const {
        json canon = json::array({model_id, format_shortest(temperature), system_text, user_text, run_index});
        return sha256_hex(canon.dump());
    }

    [[nodiscard]] json snapshot() const {
        return json{{"model", model_id},       {"temperature", temperature}, {"system", system_text},
                    {"user", user_text},       {"run_index", run_index},     {"max_tokens", max_tokens}};
    }

    static ModelRequest from_snapshot(const json& j) {
        ModelRequest r;
        r.model_id = j.at("model").get<std::string>();
        r.temperature = j.at("temperature").get<double>();
        r.system_text = j.at("system").get<std::string>();
        r.user_text = j.at("user").get<std::string>();
        r.run_index = j.at("run_index").get<int>();
        r.max_tokens = j.value("max_tokens", 256);
        return r;
    }
};

enum class BackendTag { remote, mock, replay };

inline std::string_view to_string(BackendTag t) {
    switch (t) {
        case BackendTag::remote: return "remote";
        case BackendTag::mock: return "mock";
        default: return "replay";
    }
}

struct ModelResponse {
    std::string raw_text;
    double latency_ms = 0;
    bool cache_hit = false;
    BackendTag backend_tag = BackendTag::mock;
    int attempts = 0;        // backend invocations spent on this response
    std::string key;         // cache key of the request
    std::string created_at;  // when the text was first produced (UTC, ISO-8601)
};

/// A completion provider. Implementations signal retryable failures with
/// TransientError and credential problems with AuthError.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const ModelRequest& request) = 0;
    [[nodiscard]] virtual BackendTag tag() const = 0;
};

inline std::string utc_timestamp() {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Append-only cache: one JSON record per line,
// {"key", "request", "response", "response_sha256", "timestamp"}.

struct CacheEntry {
    std::string response;
    std::string timestamp;
};

struct CacheScan {
    std::size_t records = 0;
    std::size_t duplicate_keys = 0;
    std::size_t truncated_tail = 0;  // 0 or 1: a partial final line left by a crash
    std::size_t tail_offset = 0;     // byte offset where that partial line starts
    bool ends_with_newline = true;
    std::vector<std::string> corrupt;  // "line N: reason"
};

class ResponseCache {
public:
    /// In-memory only.
    ResponseCache() = default;

    /// Opens (creating if needed) the cache file and verifies every record.
    explicit ResponseCache(std::filesystem::path path) : path_(std::move(path)) {
        if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
        if (std::filesystem::exists(*path_)) {
            CacheScan scan = scan_file(*path_, [this](const std::string& key, CacheEntry e) {
                entries_.try_emplace(key, std::move(e));
            });
            if (!scan.corrupt.empty()) {
                throw CacheCorruption(path_->string() + ": " + scan.corrupt.front());
            }
            // Drop a partial final record so later appends start on a clean line.
            if (scan.truncated_tail) std::filesystem::resize_file(*path_, scan.tail_offset);
            needs_newline_ = !scan.truncated_tail && !scan.ends_with_newline;
        }
    }

    [[nodiscard]] std::optional<CacheEntry> get(const std::string& key) const {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] bool contains(const std::string& key) const {
        std::shared_lock lock(mutex_);
        return entries_.count(key) > 0;
    }

    /// Persists before returning; the first stored text for a key wins.
    CacheEntry put(const ModelRequest& request, const std::string& response) {
        const std::string key = request.cache_key();
        std::unique_lock lock(mutex_);
        if (auto it = entries_.find(key); it != entries_.end()) return it->second;
        CacheEntry entry{response, utc_timestamp()};
        if (path_) {
            json rec{{"key", key},
                     {"request", request.snapshot()},
                     {"response", response},
                     {"response_sha256", sha256_hex(response)},
                     {"timestamp", entry.timestamp}};
            std::string line;
            try {
                line = rec.dump();
            } catch (const json::type_error&) {
                throw Error("response for cache key " + key.substr(0, 16) + " is not valid UTF-8");
            }
            std::ofstream out(*path_, std::ios::app | std::ios::binary);
            if (!out) throw Error("cannot append to cache '" + path_->string() + "'");
            if (needs_newline_) {
                out << '\n';
                needs_newline_ = false;
            }
            out << line << '\n';
            out.flush();
            if (!out) throw Error("write to cache '" + path_->string() + "' failed");
        }
        entries_.emplace(key, entry);
        return entry;
    }

    [[nodiscard]] std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }

    [[nodiscard]] const std::optional<std::filesystem::path>& path() const noexcept { return path_; }

    /// Reads every record, verifying key and response digests. `sink`
    /// receives each valid record in file order.
    template <typename Sink>
    static CacheScan scan_file(const std::filesystem::path& path, Sink&& sink) {
        CacheScan scan;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open cache '" + path.string() + "'");
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::unordered_map<std::string, bool> seen;
        std::size_t pos = 0, line_no = 0;
        scan.ends_with_newline = content.empty() || content.back() == '\n';
        while (pos < content.size()) {
            const std::size_t line_start = pos;
            ++line_no;
            auto nl = content.find('\n', pos);
            const bool last = nl == std::string::npos;
            std::string line = content.substr(pos, last ? std::string::npos : nl - pos);
            pos = last ? content.size() : nl + 1;
            if (trim(line).empty()) continue;
            json rec = json::parse(line, nullptr, false);
            if (rec.is_discarded()) {
                if (last) {
                    scan.truncated_tail = 1;
                    scan.tail_offset = line_start;
                } else {
                    scan.corrupt.push_back("line " + std::to_string(line_no) + ": malformed record");
                }
                continue;
            }
            try {
                const auto key = rec.at("key").get<std::string>();
                const auto req = ModelRequest::from_snapshot(rec.at("request"));
                const auto text = rec.at("response").get<std::string>();
                if (req.cache_key() != key) {
                    scan.corrupt.push_back("line " + std::to_string(line_no) + ": key digest mismatch");
                    continue;
                }
                if (rec.at("response_sha256").get<std::string>() != sha256_hex(text)) {
                    scan.corrupt.push_back("line " + std::to_string(line_no) + ": response digest mismatch");
                    continue;
                }
                ++scan.records;
                if (seen.emplace(key, true).second) {
                    sink(key, CacheEntry{text, rec.value("timestamp", std::string{})});
                } else {
                    ++scan.duplicate_keys;
                }
            } catch (const json::exception& e) {
                scan.corrupt.push_back("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return scan;
    }

    static CacheScan inspect(const std::filesystem::path& path) {
        return scan_file(path, [](const std::string&, const CacheEntry&) {});
    }

    /// Rewrites the file keeping the first valid record per key; corrupt,
    /// duplicate and truncated records are dropped. When `keep_model` is
    /// set, records for other models are dropped too. Returns records kept.
    static std::size_t prune(const std::filesystem::path& path, const std::optional<std::string>& keep_model = {}) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open cache '" + path.string() + "'");
        std::vector<std::string> kept;
        std::unordered_map<std::string, bool> seen;
        std::string line;
        while (std::getline(in, line)) {
            json rec = json::parse(line, nullptr, false);
            if (rec.is_discarded() || !rec.is_object()) continue;
            try {
                auto key = rec.at("key").get<std::string>();
                auto req = ModelRequest::from_snapshot(rec.at("request"));
                auto text = rec.at("response").get<std::string>();
                if (req.cache_key() != key || rec.at("response_sha256").get<std::string>() != sha256_hex(text)) continue;
                if (keep_model && req.model_id != *keep_model) continue;
                if (!seen.emplace(key, true).second) continue;
                kept.push_back(rec.dump());
            } catch (const json::exception&) {
                continue;
            }
        }
        in.close();
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            for (const auto& k : kept) out << k << '\n';
        }
        std::filesystem::rename(tmp, path);
        return kept.size();
    }

private:
    std::optional<std::filesystem::path> path_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, CacheEntry> entries_;
    bool needs_newline_ = false;
};

// ---------------------------------------------------------------------------
// Retry and rate limiting.

using Seconds = std::chrono::duration<double>;
using Sleeper = std::function<void(Seconds)>;

inline Sleeper real_sleeper() {
    return [](Seconds d) { std::this_thread::sleep_for(d); };
}

struct RetryPolicy {
    int max_attempts = 5;
    double base_delay_s = 1.0;
    double factor = 2.0;
    double jitter = 0.2;  // +/- fraction applied to each delay

    /// Delay before attempt `failed + 1`, given `failed` >= 1 failures so far.
    [[nodiscard]] double delay_for(int failed, double unit_noise) const {
        double d = base_delay_s * std::pow(factor, failed - 1);
        return d * (1.0 + jitter * std::clamp(unit_noise, -1.0, 1.0));
    }
};

/// Token bucket refilled at `per_minute / 60` tokens per second, holding
/// at most `burst` tokens. A non-positive rate disables limiting.
class RateLimiter {
public:
    using Clock = std::function<double()>;  // seconds, monotonic

    explicit RateLimiter(double per_minute = 0, double burst = 1, Clock clock = steady_seconds(),
                         Sleeper sleep = real_sleeper())
        : rate_(per_minute / 60.0), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)),
          clock_(std::move(clock)), sleep_(std::move(sleep)) {
        last_ = clock_();
    }

    void acquire() {
        if (rate_ <= 0) return;
        while (true) {
            double wait = 0;
            {
                std::lock_guard lock(mutex_);
                const double now = clock_();
                tokens_ = std::min(burst_, tokens_ + (now - last_) * rate_);
                last_ = now;
                if (tokens_ >= 1.0) {
                    tokens_ -= 1.0;
                    return;
                }
                wait = (1.0 - tokens_) / rate_;
            }
            sleep_(Seconds(wait));
        }
    }

    [[nodiscard]] bool enabled() const noexcept { return rate_ > 0; }

    static Clock steady_seconds() {
        return [] {
            return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
        };
    }

private:
    double rate_;
    double burst_;
    double tokens_;
    double last_ = 0;
    Clock clock_;
    Sleeper sleep_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Dispatcher.

struct GatewayOptions {
    RetryPolicy retry;
    std::size_t parallelism = 1;
    double requests_per_minute = 0;
    /// Serve only from the cache; never touch a backend.
    bool replay = false;
    std::uint64_t jitter_seed = 0x5eed;
    Sleeper sleep = real_sleeper();
};

struct GatewayStats {
    std::size_t backend_calls = 0;
    std::size_t cache_hits = 0;
    std::size_t retries = 0;
};

class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache, GatewayOptions options = {})
        : backend_(std::move(backend)),
          cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()),
          options_(std::move(options)),
          limiter_(options_.requests_per_minute, 1, RateLimiter::steady_seconds(), options_.sleep),
          rng_(options_.jitter_seed) {
        if (!options_.replay && !backend_) throw BackendUnavailable("no backend configured");
        options_.parallelism = std::max<std::size_t>(1, options_.parallelism);
    }

    ModelResponse complete(const ModelRequest& request) {
        const auto start = std::chrono::steady_clock::now();
        ModelResponse resp;
        resp.key = request.cache_key();
        resp.backend_tag = options_.replay ? BackendTag::replay : backend_->tag();
        auto served = [&] {
            auto hit = cache_->get(resp.key);
            if (!hit) return false;
            resp.raw_text = hit->response;
            resp.created_at = hit->timestamp;
            resp.cache_hit = true;
            cache_hits_.fetch_add(1);
            resp.latency_ms = elapsed_ms(start);
            return true;
        };
        if (served()) return resp;
        if (options_.replay) throw MissingCacheEntry({resp.key});

        // identical requests in flight wait for the first one
        auto flight = flight_for(resp.key);
        std::lock_guard flight_lock(*flight);
        if (served()) {
            release_flight(resp.key, flight);
            return resp;
        }
        struct Release {
            Gateway* self;
            const std::string& key;
            const std::shared_ptr<std::mutex>& m;
            ~Release() { self->release_flight(key, m); }
        } release{this, resp.key, flight};

        for (int attempt = 1;; ++attempt) {
            limiter_.acquire();
            backend_calls_.fetch_add(1);
            try {
                std::string text = backend_->complete(request);
                if (text.empty()) throw TransientError("backend returned an empty completion");
                auto entry = cache_->put(request, text);
                resp.raw_text = entry.response;
                resp.created_at = entry.timestamp;
                resp.attempts = attempt;
                break;
            } catch (const AuthError&) {
                throw;
            } catch (const TransientError& e) {
                if (attempt >= options_.retry.max_attempts) {
                    throw BackendUnavailable("giving up after " + std::to_string(attempt) + " attempts: " + e.what());
                }
                retries_.fetch_add(1);
                options_.sleep(Seconds(options_.retry.delay_for(attempt, unit_noise())));
            }
        }
        resp.latency_ms = elapsed_ms(start);
        return resp;
    }

    /// Completes every request with at most `parallelism` in flight. Results
    /// are positionally aligned with `requests`. In replay mode every key is
    /// checked up front. On failure no new requests start and the first
    /// error is rethrown once in-flight work finishes; completed responses
    /// are already cached.
    std::vector<ModelResponse> complete_all(std::span<const ModelRequest> requests) {
        if (options_.replay) {
            std::vector<std::string> missing;
            for (const auto& r : requests) {
                auto k = r.cache_key();
                if (!cache_->contains(k)) missing.push_back(k);
            }
            if (!missing.empty()) throw MissingCacheEntry(std::move(missing));
        }
        std::vector<ModelResponse> out(requests.size());
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&] {
            while (!failed.load()) {
                const std::size_t i = next.fetch_add(1);
                if (i >= requests.size()) return;
                try {
                    out[i] = complete(requests[i]);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                }
            }
        };
        const std::size_t n_threads = std::min(options_.parallelism, requests.size());
        if (n_threads <= 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            pool.reserve(n_threads);
            for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }
        if (first_error) std::rethrow_exception(first_error);
        return out;
    }

    [[nodiscard]] GatewayStats stats() const {
        return {backend_calls_.load(), cache_hits_.load(), retries_.load()};
    }
    [[nodiscard]] const GatewayOptions& options() const noexcept { return options_; }
    [[nodiscard]] ResponseCache& cache() noexcept { return *cache_; }

private:
    static double elapsed_ms(std::chrono::steady_clock::time_point start) {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }

    std::shared_ptr<std::mutex> flight_for(const std::string& key) {
        std::lock_guard lock(flights_mutex_);
        auto& m = flights_[key];
        if (!m) m = std::make_shared<std::mutex>();
        return m;
    }

    void release_flight(const std::string& key, const std::shared_ptr<std::mutex>& m) {
        std::lock_guard lock(flights_mutex_);
        // the map and the caller hold the last two references
        if (auto it = flights_.find(key); it != flights_.end() && it->second == m && m.use_count() == 2) flights_.erase(it);
    }

    double unit_noise() {
        std::lock_guard lock(rng_mutex_);
        return std::uniform_real_distribution<double>(-1.0, 1.0)(rng_);
    }

    std::shared_ptr<Backend> backend_;
    std::shared_ptr<ResponseCache> cache_;
    GatewayOptions options_;
    RateLimiter limiter_;
    std::mt19937_64 rng_;
    std::mutex rng_mutex_;
    std::mutex flights_mutex_;
    std::unordered_map<std::string, std::shared_ptr<std::mutex>> flights_;
    std::atomic<std::size_t> backend_calls_{0};
    std::atomic<std::size_t> cache_hits_{0};
    std::atomic<std::size_t> retries_{0};
};

/// Chat-completions endpoint split into base URL and path.
struct Endpoint {
    std::string base;  // scheme://host[:port]
    std::string path;  // e.g. /v1/chat/completions

    static Endpoint parse(std::string_view url) {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string_view::npos) throw ConfigError("endpoint URL needs a scheme: " + std::string(url));
        auto scheme = url.substr(0, scheme_end);
        if (scheme != "http" && scheme != "https") throw ConfigError("endpoint scheme must be http or https");
        auto slash = url.find('/', scheme_end + 3);
        Endpoint e;
        e.base = std::string(url.substr(0, slash));
        e.path = slash == std::string_view::npos ? "/v1/chat/completions" : std::string(url.substr(slash));
        if (e.base.size() <= scheme_end + 3) throw ConfigError("endpoint URL has no host");
        return e;
    }
};

}  // namespace edutwin::gateway
