#pragma once

// Run configuration: one YAML file describing datasets, backend, model
// settings, experiment selection and output locations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "edutwin/csv.hpp"
#include "edutwin/dataset.hpp"
#include "edutwin/experiments.hpp"
#include "edutwin/gateway.hpp"
#include "edutwin/mock_backend.hpp"
#include "edutwin/persona.hpp"

namespace edutwin::cli {

namespace fs = std::filesystem;

enum class BackendKind { mock, remote, replay };

inline std::optional<BackendKind> parse_backend_kind(std::string_view s) {
    if (s == "mock") return BackendKind::mock;
    if (s == "remote") return BackendKind::remote;
    if (s == "replay") return BackendKind::replay;
    return std::nullopt;
}

inline std::string_view to_string(BackendKind k) {
    switch (k) {
        case BackendKind::mock: return "mock";
        case BackendKind::remote: return "remote";
        default: return "replay";
    }
}

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    gateway::MockStudentModel mock;
    std::string url;
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_s = 60;
};

struct Exp1Config {
    fs::path dataset;
    dataset::Exp1Columns columns;
};

struct Exp2Config {
    fs::path students;
    fs::path assessments;
    std::size_t min_history = 5;
    dataset::Exp2Columns columns;
    std::vector<persona::Exp2Kind> kinds = experiments::all_exp2_kinds();
};

struct CourseConfig {
    dataset::CourseId course = dataset::CourseId::birth;
    fs::path assets;  // directory with slides.csv, questions.csv, mapping.csv
    fs::path profiles;
    fs::path scoresheets;
    fs::path pupil;
    std::optional<fs::path> gaze;  // traces; ISC computed from them
    std::optional<fs::path> isc;   // precomputed ISC, used when gaze is absent
    dataset::Exp3Columns columns;
};

struct Exp3Config {
    std::vector<CourseConfig> courses;
    std::vector<persona::Exp3UKind> understanding_kinds{persona::Exp3UKind::a, persona::Exp3UKind::b,
                                                        persona::Exp3UKind::c};
    std::vector<persona::Exp3OKind> outcome_kinds;  // defaults to all nine
    experiments::ChainMode chain_mode = experiments::ChainMode::real_priors;
};

struct RunConfig {
    fs::path source;  // the config file, empty when parsed from text
    BackendConfig backend;
    std::string model_id = "gpt-3.5-turbo";
    double temperature = 0;
    int runs = 1;
    int max_tokens = 256;
    std::size_t parallelism = 1;
    double rate_limit = 0;  // requests per minute, 0 = unlimited
    gateway::RetryPolicy retry;
    fs::path cache;
    fs::path output_dir;
    std::optional<fs::path> templates;
    std::size_t min_group_size = 1;
    std::optional<Exp1Config> exp1;
    std::optional<Exp2Config> exp2;
    std::optional<Exp3Config> exp3;
};

struct ConfigDiagnostic {
    int line = 0;  // 1-based, 0 when unknown
    std::string field;
    std::string message;

    [[nodiscard]] std::string to_string() const {
        std::string s = line ? "line " + std::to_string(line) + ": " : "";
        if (!field.empty()) s += field + ": ";
        return s + message;
    }
};

struct ConfigResult {
    std::optional<RunConfig> config;
    std::vector<ConfigDiagnostic> diagnostics;
    [[nodiscard]] bool ok() const { return config && diagnostics.empty(); }
};

namespace detail {

class Reader {
public:
    Reader(fs::path base, std::vector<ConfigDiagnostic>& diags) : base_(std::move(base)), diags_(diags) {}

    static int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

    void error(const YAML::Node& n, std::string field, std::string message) {
        diags_.push_back({line_of(n), std::move(field), std::move(message)});
    }

    /// Flags keys of a mapping outside `allowed`.
    bool check_keys(const YAML::Node& map, const std::string& where, std::initializer_list<std::string_view> allowed) {
        if (!map.IsMap()) {
            error(map, where, "expected a mapping");
            return false;
        }
        for (const auto& kv : map) {
            auto key = kv.first.as<std::string>();
            if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
                error(kv.first, join(where, key), "unknown field");
            }
        }
        return true;
    }

    static std::string join(const std::string& where, const std::string& key) {
        return where.empty() ? key : where + "." + key;
    }

    template <typename T>
    void scalar(const YAML::Node& map, const std::string& where, const char* key, T& out) {
        const auto n = map[key];
        if (!n) return;
        try {
            if (!n.IsScalar()) throw YAML::Exception(n.Mark(), "not a scalar");
            out = n.as<T>();
        } catch (const YAML::Exception&) {
            error(n, join(where, key), "invalid value");
        }
    }

    void real(const YAML::Node& map, const std::string& where, const char* key, double& out, double lo, double hi) {
        const auto n = map[key];
        if (!n) return;
        double v = out;
        scalar(map, where, key, v);
        if (!std::isfinite(v) || v < lo || v > hi) {
            error(n, join(where, key), "must be within [" + format_shortest(lo) + ", " + format_shortest(hi) + "]");
            return;
        }
        out = v;
    }

    template <typename Int>
    void integer(const YAML::Node& map, const std::string& where, const char* key, Int& out, long long lo, long long hi) {
        const auto n = map[key];
        if (!n) return;
        long long v = static_cast<long long>(out);
        scalar(map, where, key, v);
        if (v < lo || v > hi) {
            error(n, join(where, key), "must be within [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
            return;
        }
        out = static_cast<Int>(v);
    }

    fs::path resolve(const std::string& p) const {
        fs::path path(p);
        return path.is_absolute() ? path : base_ / path;
    }

    /// A path field; checks existence (file or directory).
    std::optional<fs::path> path(const YAML::Node& map, const std::string& where, const char* key, bool required,
                                 bool directory = false) {
        const auto n = map[key];
        if (!n) {
            if (required) error(map, join(where, key), "required path is missing");
            return std::nullopt;
        }
        std::string s;
        scalar(map, where, key, s);
        if (s.empty()) {
            error(n, join(where, key), "empty path");
            return std::nullopt;
        }
        auto p = resolve(s);
        std::error_code ec;
        bool ok = directory ? fs::is_directory(p, ec) : fs::is_regular_file(p, ec);
        if (!ok) error(n, join(where, key), (directory ? "directory not found: " : "file not found: ") + p.string());
        return p;
    }

    std::vector<std::string> strings(const YAML::Node& map, const std::string& where, const char* key) {
        std::vector<std::string> out;
        const auto n = map[key];
        if (!n) return out;
        if (!n.IsSequence()) {
            error(n, join(where, key), "expected a list");
            return out;
        }
        for (const auto& item : n) {
            try {
                out.push_back(item.as<std::string>());
            } catch (const YAML::Exception&) {
                error(item, join(where, key), "expected a string");
            }
        }
        return out;
    }

    template <typename Kind, typename ParseFn>
    std::optional<std::vector<Kind>> kinds(const YAML::Node& map, const std::string& where, const char* key, ParseFn parse) {
        const auto n = map[key];
        if (!n) return std::nullopt;
        if (!n.IsSequence() || n.size() == 0) {
            error(n, join(where, key), "expected a non-empty list of kinds");
            return std::nullopt;
        }
        std::vector<Kind> out;
        for (const auto& item : n) {
            auto s = item.IsScalar() ? item.as<std::string>() : std::string{};
            auto k = parse(s);
            if (!k) {
                error(item, join(where, key), "unknown kind '" + s + "'");
                continue;
            }
            if (std::find(out.begin(), out.end(), *k) != out.end()) {
                error(item, join(where, key), "duplicate kind '" + s + "'");
                continue;
            }
            out.push_back(*k);
        }
        return out;
    }

    void weights(const YAML::Node& map, const std::string& where, gateway::FactorWeights& out) {
        const auto n = map["weights"];
        if (!n) return;
        const auto field = join(where, "weights");
        if (!n.IsSequence()) {
            error(n, field, "expected a list of {factor, level, weight}");
            return;
        }
        for (const auto& w : n) {
            if (!check_keys(w, field, {"factor", "level", "weight"})) continue;
            std::string factor, level;
            double weight = 0;
            scalar(w, field, "factor", factor);
            scalar(w, field, "level", level);
            real(w, field, "weight", weight, -1e6, 1e6);
            if (factor.empty() || !w["weight"]) {
                error(w, field, "each weight needs factor and weight");
                continue;
            }
            out[{factor, level.empty() ? std::string(dataset::kUnknownLevel) : level}] = weight;
        }
    }

private:
    fs::path base_;
    std::vector<ConfigDiagnostic>& diags_;
};

inline void read_backend(Reader& rd, const YAML::Node& n, BackendConfig& b) {
    const std::string w = "backend";
    if (!rd.check_keys(n, w, {"type", "seed", "noise_sigma", "rules", "url", "api_key_env", "timeout_s"})) return;
    std::string type;
    rd.scalar(n, w, "type", type);
    if (auto k = parse_backend_kind(type)) {
        b.kind = *k;
    } else {
        rd.error(n["type"] ? n["type"] : n, "backend.type", "must be one of mock, remote, replay (got '" + type + "')");
        return;
    }
    const bool mock_fields = n["seed"] || n["noise_sigma"] || n["rules"];
    const bool remote_fields = n["url"] || n["api_key_env"] || n["timeout_s"];
    if (b.kind != BackendKind::mock && mock_fields) rd.error(n, w, "mock settings given for a " + type + " backend");
    if (b.kind != BackendKind::remote && remote_fields) rd.error(n, w, "remote settings given for a " + type + " backend");

    if (b.kind == BackendKind::mock) {
        rd.scalar(n, w, "seed", b.mock.seed);
        rd.real(n, w, "noise_sigma", b.mock.noise_sigma, 0, 1e3);
        if (auto rules = n["rules"]) {
            const std::string rw = "backend.rules";
            if (rd.check_keys(rules, rw, {"grade", "score", "understanding", "correctness"})) {
                if (auto g = rules["grade"]; g && rd.check_keys(g, rw + ".grade", {"base", "weights"})) {
                    rd.real(g, rw + ".grade", "base", b.mock.grade_rule.base, -1e6, 1e6);
                    rd.weights(g, rw + ".grade", b.mock.grade_rule.weights);
                }
                if (auto s = rules["score"];
                    s && rd.check_keys(s, rw + ".score", {"slope", "intercept", "no_history_base", "weights"})) {
                    rd.real(s, rw + ".score", "slope", b.mock.score_rule.slope, -1e6, 1e6);
                    rd.real(s, rw + ".score", "intercept", b.mock.score_rule.intercept, -1e6, 1e6);
                    rd.real(s, rw + ".score", "no_history_base", b.mock.score_rule.no_history_base, -1e6, 1e6);
                    rd.weights(s, rw + ".score", b.mock.score_rule.weights);
                }
                if (auto u = rules["understanding"];
                    u && rd.check_keys(u, rw + ".understanding", {"slope", "intercept", "fallback"})) {
                    rd.real(u, rw + ".understanding", "slope", b.mock.understanding_rule.slope, -1e6, 1e6);
                    rd.real(u, rw + ".understanding", "intercept", b.mock.understanding_rule.intercept, -1e6, 1e6);
                    rd.real(u, rw + ".understanding", "fallback", b.mock.understanding_rule.fallback, 0, 1);
                }
                if (auto c = rules["correctness"];
                    c && rd.check_keys(c, rw + ".correctness",
                                       {"threshold", "pre_weight", "engagement_weight", "no_understanding"})) {
                    auto& cr = b.mock.correctness_rule;
                    rd.real(c, rw + ".correctness", "threshold", cr.threshold, -1e6, 1e6);
                    rd.real(c, rw + ".correctness", "pre_weight", cr.pre_weight, -1e6, 1e6);
                    rd.real(c, rw + ".correctness", "engagement_weight", cr.engagement_weight, -1e6, 1e6);
                    rd.real(c, rw + ".correctness", "no_understanding", cr.no_understanding, -1e6, 1e6);
                }
            }
        }
    } else if (b.kind == BackendKind::remote) {
        rd.scalar(n, w, "url", b.url);
        rd.scalar(n, w, "api_key_env", b.api_key_env);
        rd.integer(n, w, "timeout_s", b.timeout_s, 1, 3600);
        if (b.url.empty()) {
            rd.error(n, "backend.url", "required for a remote backend");
        } else {
            try {
                gateway::Endpoint::parse(b.url);
            } catch (const ConfigError& e) {
                rd.error(n["url"], "backend.url", e.what());
            }
        }
        if (b.api_key_env.empty()) rd.error(n, "backend.api_key_env", "must name an environment variable");
    }
}

inline void read_exp1(Reader& rd, const YAML::Node& n, Exp1Config& e) {
    const std::string w = "experiments.exp1";
    if (!rd.check_keys(n, w, {"dataset", "columns"})) return;
    if (auto p = rd.path(n, w, "dataset", true)) e.dataset = *p;
    if (auto c = n["columns"]; c && rd.check_keys(c, w + ".columns", {"grade", "id", "exclude"})) {
        rd.scalar(c, w + ".columns", "grade", e.columns.grade);
        if (c["id"]) {
            std::string id;
            rd.scalar(c, w + ".columns", "id", id);
            e.columns.id = id.empty() ? std::nullopt : std::optional(id);
        }
        e.columns.exclude = rd.strings(c, w + ".columns", "exclude");
    }
}

inline void read_exp2(Reader& rd, const YAML::Node& n, Exp2Config& e) {
    const std::string w = "experiments.exp2";
    if (!rd.check_keys(n, w, {"students", "assessments", "min_history", "kinds", "columns"})) return;
    if (auto p = rd.path(n, w, "students", true)) e.students = *p;
    if (auto p = rd.path(n, w, "assessments", true)) e.assessments = *p;
    rd.integer(n, w, "min_history", e.min_history, 1, 1000);
    if (auto k = rd.kinds<persona::Exp2Kind>(n, w, "kinds", persona::parse_exp2_kind)) e.kinds = *k;
    if (auto c = n["columns"]; c && rd.check_keys(c, w + ".columns",
                                                  {"student_id", "final_score", "region", "imd_band", "exclude",
                                                   "assessment_student_id", "assessment_index", "assessment_score"})) {
        const auto cw = w + ".columns";
        rd.scalar(c, cw, "student_id", e.columns.student_id);
        rd.scalar(c, cw, "final_score", e.columns.final_score);
        rd.scalar(c, cw, "region", e.columns.region);
        rd.scalar(c, cw, "imd_band", e.columns.imd_band);
        e.columns.exclude = rd.strings(c, cw, "exclude");
        rd.scalar(c, cw, "assessment_student_id", e.columns.assessment_student_id);
        rd.scalar(c, cw, "assessment_index", e.columns.assessment_index);
        rd.scalar(c, cw, "assessment_score", e.columns.assessment_score);
    }
}

inline void read_exp3(Reader& rd, const YAML::Node& n, Exp3Config& e) {
    const std::string w = "experiments.exp3";
    if (!rd.check_keys(n, w, {"courses", "understanding_kinds", "outcome_kinds", "chain_mode"})) return;
    if (auto k = rd.kinds<persona::Exp3UKind>(n, w, "understanding_kinds", persona::parse_exp3u_kind)) e.understanding_kinds = *k;
    if (auto k = rd.kinds<persona::Exp3OKind>(n, w, "outcome_kinds", persona::parse_exp3o_kind)) e.outcome_kinds = *k;
    if (e.outcome_kinds.empty() && !n["outcome_kinds"]) {
        for (std::size_t i = 0; i < persona::kExp3ONames.size(); ++i) e.outcome_kinds.push_back(static_cast<persona::Exp3OKind>(i));
    }
    if (n["chain_mode"]) {
        std::string s;
        rd.scalar(n, w, "chain_mode", s);
        if (auto m = experiments::parse_chain_mode(s)) {
            e.chain_mode = *m;
        } else {
            rd.error(n["chain_mode"], w + ".chain_mode", "must be real_priors or simulated_priors");
        }
    }
    const auto courses = n["courses"];
    if (!courses || !courses.IsMap() || courses.size() == 0) {
        rd.error(courses ? courses : n, w + ".courses", "expected a mapping of course name to inputs");
        return;
    }
    for (const auto& kv : courses) {
        const auto name = kv.first.as<std::string>();
        const auto cw = w + ".courses." + name;
        auto id = dataset::parse_course(name);
        if (!id) {
            rd.error(kv.first, cw, "unknown course (expected birth or star)");
            continue;
        }
        const auto& c = kv.second;
        if (!rd.check_keys(c, cw, {"assets", "profiles", "scoresheets", "pupil", "gaze", "isc", "columns"})) continue;
        CourseConfig cc;
        cc.course = *id;
        if (auto p = rd.path(c, cw, "assets", true, true)) cc.assets = *p;
        if (auto p = rd.path(c, cw, "profiles", true)) cc.profiles = *p;
        if (auto p = rd.path(c, cw, "scoresheets", true)) cc.scoresheets = *p;
        if (auto p = rd.path(c, cw, "pupil", true)) cc.pupil = *p;
        cc.gaze = rd.path(c, cw, "gaze", false);
        cc.isc = rd.path(c, cw, "isc", false);
        if (cc.gaze && cc.isc) rd.error(c, cw, "give either gaze or isc, not both");
        if (auto col = c["columns"]; col && rd.check_keys(col, cw + ".columns", {"student_id", "exclude"})) {
            rd.scalar(col, cw + ".columns", "student_id", cc.columns.student_id);
            cc.columns.exclude = rd.strings(col, cw + ".columns", "exclude");
        }
        e.courses.push_back(std::move(cc));
    }
}

}  // namespace detail

/// Parses and validates a configuration. Relative paths resolve against
/// `base_dir`. Every problem is reported; the config is returned only when
/// there are none.
inline ConfigResult parse_config(const std::string& text, const fs::path& base_dir) {
    ConfigResult result;
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        result.diagnostics.push_back({e.mark.line + 1, "", "YAML syntax error: " + e.msg});
        return result;
    }
    detail::Reader rd(base_dir, result.diagnostics);
    RunConfig cfg;
    if (!root || !root.IsMap()) {
        result.diagnostics.push_back({1, "", "the configuration must be a mapping"});
        return result;
    }
    rd.check_keys(root, "", {"model_id", "temperature", "runs", "max_tokens", "parallelism", "rate_limit", "retry",
                             "cache", "output_dir", "templates", "min_group_size", "backend", "experiments"});
    rd.scalar(root, "", "model_id", cfg.model_id);
    if (cfg.model_id.empty()) rd.error(root, "model_id", "must not be empty");
    rd.real(root, "", "temperature", cfg.temperature, 0, 2);
    rd.integer(root, "", "runs", cfg.runs, 1, 1000);
    rd.integer(root, "", "max_tokens", cfg.max_tokens, 1, 1 << 20);
    rd.integer(root, "", "parallelism", cfg.parallelism, 1, 1024);
    rd.real(root, "", "rate_limit", cfg.rate_limit, 0, 1e9);
    rd.integer(root, "", "min_group_size", cfg.min_group_size, 1, 1 << 30);
    if (auto r = root["retry"]; r && rd.check_keys(r, "retry", {"max_attempts", "base_delay_s", "factor", "jitter"})) {
        rd.integer(r, "retry", "max_attempts", cfg.retry.max_attempts, 1, 100);
        rd.real(r, "retry", "base_delay_s", cfg.retry.base_delay_s, 0, 3600);
        rd.real(r, "retry", "factor", cfg.retry.factor, 1, 100);
        rd.real(r, "retry", "jitter", cfg.retry.jitter, 0, 1);
    }

    std::string out = "out";
    rd.scalar(root, "", "output_dir", out);
    cfg.output_dir = rd.resolve(out);
    std::string cache;
    rd.scalar(root, "", "cache", cache);
    cfg.cache = cache.empty() ? cfg.output_dir / "cache.jsonl" : rd.resolve(cache);
    cfg.templates = rd.path(root, "", "templates", false, true);

    if (auto b = root["backend"]) {
        detail::read_backend(rd, b, cfg.backend);
    } else {
        rd.error(root, "backend", "a backend section is required");
    }
    if (auto e = root["experiments"]) {
        if (rd.check_keys(e, "experiments", {"exp1", "exp2", "exp3"})) {
            if (auto n = e["exp1"]) detail::read_exp1(rd, n, cfg.exp1.emplace());
            if (auto n = e["exp2"]) detail::read_exp2(rd, n, cfg.exp2.emplace());
            if (auto n = e["exp3"]) detail::read_exp3(rd, n, cfg.exp3.emplace());
        }
    } else {
        rd.error(root, "experiments", "an experiments section is required");
    }
    if (cfg.templates) {
        try {
            persona::TemplateSet::from_directory(*cfg.templates);
        } catch (const Error& ex) {
            rd.error(root["templates"], "templates", ex.what());
        }
    }
    if (result.diagnostics.empty()) result.config = std::move(cfg);
    return result;
}

inline ConfigResult load_config(const fs::path& path) {
    std::string text;
    try {
        text = csv::read_file(path);
    } catch (const Error& e) {
        return {std::nullopt, {{0, "", e.what()}}};
    }
    auto result = parse_config(text, path.has_parent_path() ? path.parent_path() : fs::path("."));
    if (result.config) result.config->source = path;
    return result;
}

}  // namespace edutwin::cli
