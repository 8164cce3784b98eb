#pragma once

// Simulation drivers: enumerate (student x configuration x run) jobs, render
// prompts, dispatch through the gateway, parse answers and collect rows.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edutwin/csv.hpp"
#include "edutwin/dataset.hpp"
#include "edutwin/errors.hpp"
#include "edutwin/gateway.hpp"
#include "edutwin/numeric.hpp"
#include "edutwin/parser.hpp"
#include "edutwin/persona.hpp"

namespace edutwin::experiments {

using dataset::StudentRecord;
using parser::AnswerSchema;
using parser::SimulationOutcome;
using persona::ExperimentConfig;

enum class Experiment { exp1, exp2, exp3t1, exp3t2 };

inline std::string_view to_string(Experiment e) {
    switch (e) {
        case Experiment::exp1: return "exp1";
        case Experiment::exp2: return "exp2";
        case Experiment::exp3t1: return "exp3t1";
        default: return "exp3t2";
    }
}

inline std::optional<Experiment> parse_experiment(std::string_view s) {
    if (s == "exp1") return Experiment::exp1;
    if (s == "exp2") return Experiment::exp2;
    if (s == "exp3t1") return Experiment::exp3t1;
    if (s == "exp3t2") return Experiment::exp3t2;
    return std::nullopt;
}

struct TableRow {
    std::string student_id;
    ExperimentConfig config;
    int run = 0;
    AnswerSchema kind = AnswerSchema::grade;
    std::optional<SimulationOutcome> outcome;
    std::string missing_reason;
    std::string request_key;  // empty when no request was issued
};

struct MissingStat {
    std::size_t jobs = 0;
    std::size_t missing = 0;
    [[nodiscard]] double rate() const { return jobs ? static_cast<double>(missing) / static_cast<double>(jobs) : 0.0; }
};

struct TableMetadata {
    std::string experiment;
    std::string model_id;
    double temperature = 0;
    int runs = 1;
    std::string backend;
    std::string first_response_at;  // earliest cache timestamp among answers
    std::string last_response_at;
    std::map<std::string, MissingStat> missing;  // per configuration group
};

struct SimulationTable {
    std::vector<TableRow> rows;
    TableMetadata metadata;
};

/// Configuration label without slide / question qualifier (exp3u:c, exp3o:3a).
inline std::string config_group(const ExperimentConfig& c) {
    auto label = c.label();
    auto first = label.find(':');
    if (first == std::string::npos) return label;
    auto second = label.find(':', first + 1);
    return second == std::string::npos ? label : label.substr(0, second);
}

// ---------------------------------------------------------------------------
// Serialisation: CSV (student_id,config,run,kind,value,flags,missing_reason)
// plus a JSON metadata sidecar.

inline const std::vector<std::string>& table_header() {
    static const std::vector<std::string> h{"student_id", "config", "run", "kind", "value", "flags", "missing_reason"};
    return h;
}

inline std::string encode_value(const parser::Payload& p) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, int>) {
                return std::to_string(v);
            } else if constexpr (std::is_same_v<T, double>) {
                return format_shortest(v);
            } else if constexpr (std::is_same_v<T, bool>) {
                return v ? "1" : "0";
            } else {
                std::string s;
                for (std::size_t i = 0; i < v.size(); ++i) {
                    if (i) s += ';';
                    if constexpr (std::is_same_v<T, std::vector<bool>>) {
                        s += v[i] ? "1" : "0";
                    } else {
                        s += format_shortest(v[i]);
                    }
                }
                return s;
            }
        },
        p);
}

inline parser::Payload decode_value(AnswerSchema kind, std::string_view text) {
    auto split = [&] {
        std::vector<std::string_view> parts;
        while (true) {
            auto semi = text.find(';');
            parts.push_back(text.substr(0, semi));
            if (semi == std::string_view::npos) break;
            text.remove_prefix(semi + 1);
        }
        return parts;
    };
    auto real = [](std::string_view s) {
        auto v = parse_real(s);
        if (!v) throw SchemaError("table: invalid value '" + std::string(s) + "'");
        return *v;
    };
    auto boolean = [](std::string_view s) {
        if (s == "1") return true;
        if (s == "0") return false;
        throw SchemaError("table: invalid boolean '" + std::string(s) + "'");
    };
    switch (kind) {
        case AnswerSchema::grade: {
            auto v = parse_integer(text);
            if (!v || *v < 0 || *v > 7) throw SchemaError("table: invalid grade '" + std::string(text) + "'");
            return static_cast<int>(*v);
        }
        case AnswerSchema::score:
        case AnswerSchema::understanding:
        case AnswerSchema::accuracy_average: return real(text);
        case AnswerSchema::understanding_vector: {
            std::vector<double> v;
            for (auto p : split()) v.push_back(real(p));
            return v;
        }
        case AnswerSchema::correctness_vector: {
            std::vector<bool> v;
            for (auto p : split()) v.push_back(boolean(p));
            return v;
        }
        default: return boolean(text);
    }
}

inline std::vector<std::string> row_cells(const TableRow& r) {
    return {r.student_id,
            r.config.label(),
            std::to_string(r.run),
            std::string(persona::to_string(r.kind)),
            r.outcome ? encode_value(r.outcome->value) : "",
            r.outcome ? r.outcome->flags.to_string() : "",
            r.missing_reason};
}

inline std::string to_csv(const SimulationTable& t) {
    std::ostringstream out;
    csv::write_row(out, table_header());
    for (const auto& r : t.rows) csv::write_row(out, row_cells(r));
    return out.str();
}

inline nlohmann::json metadata_json(const TableMetadata& m) {
    nlohmann::json missing = nlohmann::json::object();
    for (const auto& [g, s] : m.missing) missing[g] = {{"jobs", s.jobs}, {"missing", s.missing}, {"rate", s.rate()}};
    return {{"experiment", m.experiment},
            {"model_id", m.model_id},
            {"temperature", m.temperature},
            {"runs", m.runs},
            {"backend", m.backend},
            {"first_response_at", m.first_response_at},
            {"last_response_at", m.last_response_at},
            {"missing", missing}};
}

inline TableMetadata metadata_from_json(const nlohmann::json& j) {
    TableMetadata m;
    m.experiment = j.value("experiment", "");
    m.model_id = j.value("model_id", "");
    m.temperature = j.value("temperature", 0.0);
    m.runs = j.value("runs", 1);
    m.backend = j.value("backend", "");
    m.first_response_at = j.value("first_response_at", "");
    m.last_response_at = j.value("last_response_at", "");
    if (j.contains("missing")) {
        for (const auto& [g, s] : j.at("missing").items()) m.missing[g] = {s.value("jobs", 0u), s.value("missing", 0u)};
    }
    return m;
}

inline SimulationTable from_csv(const csv::Table& t) {
    std::vector<std::size_t> cols;
    for (const auto& h : table_header()) cols.push_back(t.require(h, "simulation table"));
    SimulationTable out;
    std::set<std::tuple<std::string, std::string, int>> seen;
    for (const auto& row : t.rows()) {
        TableRow r;
        r.student_id = row.cells[cols[0]];
        auto cfg = persona::parse_config_label(row.cells[cols[1]]);
        if (!cfg) throw SchemaError("simulation table: unknown config '" + row.cells[cols[1]] + "'", row.line);
        r.config = *cfg;
        auto run = parse_integer(row.cells[cols[2]]);
        if (!run || *run < 0) throw SchemaError("simulation table: invalid run", row.line);
        r.run = static_cast<int>(*run);
        r.config.run_index = r.run;
        auto kind = persona::parse_schema(row.cells[cols[3]]);
        if (!kind || *kind != persona::schema_for(r.config)) {
            throw SchemaError("simulation table: kind '" + row.cells[cols[3]] + "' does not match config", row.line);
        }
        r.kind = *kind;
        r.missing_reason = row.cells[cols[6]];
        if (r.missing_reason.empty()) {
            SimulationOutcome o;
            o.kind = r.kind;
            try {
                o.value = decode_value(r.kind, row.cells[cols[4]]);
            } catch (const SchemaError& e) {
                throw SchemaError(e.what(), row.line);
            }
            o.flags = parser::parse_flags(row.cells[cols[5]]);
            r.outcome = std::move(o);
        }
        if (!seen.emplace(r.student_id, r.config.label(), r.run).second) {
            throw SchemaError("simulation table: duplicate (student, config, run)", row.line);
        }
        out.rows.push_back(std::move(r));
    }
    return out;
}

inline SimulationTable read_table(const std::filesystem::path& csv_path) {
    auto table = from_csv(csv::read(csv_path));
    auto meta_path = csv_path;
    meta_path.replace_extension(".meta.json");
    if (std::filesystem::exists(meta_path)) {
        table.metadata = metadata_from_json(nlohmann::json::parse(csv::read_file(meta_path)));
    }
    return table;
}

// ---------------------------------------------------------------------------
// Job execution.

/// One structured audit line per job.
struct JobLog {
    std::string key;
    std::string student_id;
    std::string config;
    int run = 0;
    AnswerSchema kind = AnswerSchema::grade;
    bool cache_hit = false;
    bool missing = false;
    std::string flags;
};

struct RunOptions {
    std::string model_id = "gpt-3.5-turbo";
    int max_tokens = 256;
    int max_retries = 1;
    std::size_t batch_size = 256;
    const persona::TemplateSet* templates = &persona::default_templates();
    /// Receives rows as each batch lands (checkpointing).
    std::function<void(std::span<const TableRow>)> on_rows;
    std::function<void(const JobLog&)> on_job;
};

struct Job {
    std::string student_id;
    ExperimentConfig config;
    std::optional<persona::PromptBundle> bundle;
    std::string error;  // set when the prompt could not be rendered
};

namespace detail {

inline gateway::ModelRequest request_for(const Job& job, const RunOptions& opt) {
    gateway::ModelRequest r;
    r.model_id = opt.model_id;
    r.temperature = job.config.temperature;
    r.system_text = job.bundle->system_text;
    r.user_text = job.bundle->user_text;
    r.run_index = job.config.run_index;
    r.max_tokens = opt.max_tokens;
    return r;
}

/// Renders with `render`, turning a rendering precondition failure into a
/// Missing job instead of aborting the run.
template <typename Render>
Job make_job(std::string student_id, ExperimentConfig config, Render&& render) {
    Job j{std::move(student_id), config, std::nullopt, {}};
    try {
        auto b = render();
        b.config.temperature = config.temperature;
        b.config.run_index = config.run_index;
        j.bundle = std::move(b);
    } catch (const EmptyProfile& e) {
        j.error = std::string("EmptyProfile: ") + e.what();
    } catch (const InsufficientHistory& e) {
        j.error = std::string("InsufficientHistory: ") + e.what();
    } catch (const MissingPriorLevels& e) {
        j.error = std::string("MissingPriorLevels: ") + e.what();
    } catch (const MissingInput& e) {
        j.error = std::string("MissingInput: ") + e.what();
    }
    return j;
}

struct Collector {
    std::vector<TableRow> rows;
    std::string first_at, last_at;

    void note_time(const std::string& t) {
        if (t.empty()) return;
        if (first_at.empty() || t < first_at) first_at = t;
        if (last_at.empty() || t > last_at) last_at = t;
    }
};

}  // namespace detail

/// Executes `jobs` in order, `batch_size` at a time, and returns one row per
/// job in the same order.
inline std::vector<TableRow> execute_jobs(gateway::Gateway& gw, std::vector<Job> jobs, const RunOptions& opt,
                                          detail::Collector& collector) {
    std::vector<TableRow> out;
    out.reserve(jobs.size());
    const std::size_t batch = std::max<std::size_t>(1, opt.batch_size);
    for (std::size_t start = 0; start < jobs.size(); start += batch) {
        const std::size_t stop = std::min(jobs.size(), start + batch);
        std::vector<gateway::ModelRequest> requests;
        std::vector<std::size_t> owners;
        for (std::size_t i = start; i < stop; ++i) {
            if (!jobs[i].bundle) continue;
            requests.push_back(detail::request_for(jobs[i], opt));
            owners.push_back(i);
        }
        auto responses = gw.complete_all(requests);
        std::vector<std::optional<parser::ParsedOutcome>> parsed(stop - start);
        for (std::size_t k = 0; k < owners.size(); ++k) {
            const auto& job = jobs[owners[k]];
            parsed[owners[k] - start] = parser::parse_with_retry(
                [&gw](const gateway::ModelRequest& r) { return gw.complete(r); }, requests[k], std::move(responses[k]),
                job.bundle->expected, job.bundle->expected_count, opt.max_retries);
        }
        const std::size_t first_new = out.size();
        for (std::size_t i = start; i < stop; ++i) {
            auto& job = jobs[i];
            TableRow row;
            row.student_id = job.student_id;
            row.config = job.config;
            row.run = job.config.run_index;
            row.kind = persona::schema_for(job.config);
            JobLog log{"", row.student_id, row.config.label(), row.run, row.kind, false, false, ""};
            if (!job.bundle) {
                row.missing_reason = job.error;
            } else {
                auto& p = *parsed[i - start];
                row.request_key = p.responses.front().key;
                log.key = row.request_key;
                log.cache_hit = p.responses.front().cache_hit;
                for (const auto& r : p.responses) collector.note_time(r.created_at);
                if (p.outcome) {
                    row.outcome = std::move(p.outcome);
                    log.flags = row.outcome->flags.to_string();
                } else {
                    row.missing_reason = p.missing_reason;
                }
            }
            log.missing = !row.outcome;
            if (opt.on_job) opt.on_job(log);
            out.push_back(std::move(row));
        }
        if (opt.on_rows) opt.on_rows(std::span<const TableRow>(out).subspan(first_new));
    }
    return out;
}

namespace detail {

inline SimulationTable finish_table(std::vector<TableRow> rows, const Collector& c, std::string experiment,
                                    const RunOptions& opt, double temperature, int runs, const gateway::Gateway& gw) {
    SimulationTable t;
    t.rows = std::move(rows);
    t.metadata.experiment = std::move(experiment);
    t.metadata.model_id = opt.model_id;
    t.metadata.temperature = temperature;
    t.metadata.runs = runs;
    t.metadata.backend = gw.options().replay ? "replay" : "live";
    t.metadata.first_response_at = c.first_at;
    t.metadata.last_response_at = c.last_at;
    for (const auto& r : t.rows) {
        auto& s = t.metadata.missing[config_group(r.config)];
        ++s.jobs;
        if (!r.outcome) ++s.missing;
    }
    return t;
}

inline ExperimentConfig with_run(ExperimentConfig c, double temperature, int run) {
    c.temperature = temperature;
    c.run_index = run;
    return c;
}

}  // namespace detail

/// One grade per (student, run). The main study uses runs=1 at temperature
/// 0, the robustness study runs=4 at temperature 1.
inline SimulationTable run_exp1(std::span<const StudentRecord> records, gateway::Gateway& gw, int runs = 1,
                                double temperature = 0, const RunOptions& opt = {}) {
    if (runs < 1) throw ValueError("runs must be >= 1");
    std::vector<Job> jobs;
    for (const auto& rec : records) {
        for (int run = 0; run < runs; ++run) {
            jobs.push_back(detail::make_job(rec.student_id, detail::with_run(ExperimentConfig::exp1(), temperature, run),
                                            [&] { return persona::build_exp1_prompt(rec, *opt.templates); }));
        }
    }
    detail::Collector c;
    auto rows = execute_jobs(gw, std::move(jobs), opt, c);
    return detail::finish_table(std::move(rows), c, "exp1", opt, temperature, runs, gw);
}

inline const std::vector<persona::Exp2Kind>& all_exp2_kinds() {
    using K = persona::Exp2Kind;
    static const std::vector<K> k{K::i, K::ii, K::iii, K::iv, K::v, K::vi, K::vii, K::viii};
    return k;
}

/// One score per (student, kind), always at the given temperature (0 by default).
inline SimulationTable run_exp2(std::span<const StudentRecord> records, gateway::Gateway& gw,
                                std::span<const persona::Exp2Kind> kinds, const RunOptions& opt = {},
                                double temperature = 0) {
    std::vector<Job> jobs;
    for (const auto& rec : records) {
        for (auto kind : kinds) {
            jobs.push_back(detail::make_job(rec.student_id, detail::with_run(ExperimentConfig::exp2(kind), temperature, 0),
                                            [&] { return persona::build_exp2_prompt(rec, kind, *opt.templates); }));
        }
    }
    detail::Collector c;
    auto rows = execute_jobs(gw, std::move(jobs), opt, c);
    return detail::finish_table(std::move(rows), c, "exp2", opt, temperature, 1, gw);
}

enum class ChainMode { real_priors, simulated_priors };

inline std::optional<ChainMode> parse_chain_mode(std::string_view s) {
    if (s == "real_priors") return ChainMode::real_priors;
    if (s == "simulated_priors") return ChainMode::simulated_priors;
    return std::nullopt;
}

using MetricsMap = std::map<std::string, dataset::GazeDerivedMetrics>;
using ScoreSheets = std::map<std::string, dataset::ScoreSheet>;

/// Understanding simulation. Kind a: one vector job per student; kinds b
/// and c: one scalar job per (student, slide). Kind c priors come from the
/// measured levels (real_priors) or from this run's own kind-c answers for
/// earlier slides (simulated_priors).
inline SimulationTable run_exp3_task1(std::span<const StudentRecord> records, const dataset::CourseMaterial& course,
                                      const MetricsMap& metrics, gateway::Gateway& gw,
                                      std::span<const persona::Exp3UKind> kinds,
                                      ChainMode chain = ChainMode::real_priors, const RunOptions& opt = {},
                                      double temperature = 0) {
    using K = persona::Exp3UKind;
    const int n = static_cast<int>(course.slides.size());
    // Stable output order: (student, kind, slide).
    std::map<std::tuple<std::size_t, std::size_t, int>, TableRow> ordered;
    detail::Collector c;
    auto key_of = [&](std::size_t s, std::size_t k, int slide) { return std::tuple{s, k, slide}; };

    auto real_priors = [&](const StudentRecord& rec) -> std::optional<std::span<const double>> {
        auto it = metrics.find(rec.student_id);
        if (it == metrics.end()) return std::nullopt;
        return std::span<const double>(it->second.understanding);
    };

    std::vector<Job> jobs;
    std::vector<std::tuple<std::size_t, std::size_t, int>> keys;
    auto flush = [&] {
        auto rows = execute_jobs(gw, std::move(jobs), opt, c);
        for (std::size_t i = 0; i < rows.size(); ++i) ordered.emplace(keys[i], std::move(rows[i]));
        jobs.clear();
        keys.clear();
    };

    bool chained_c = false;
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
        if (kinds[ki] == K::c && chain == ChainMode::simulated_priors) {
            chained_c = true;
            continue;
        }
        for (std::size_t si = 0; si < records.size(); ++si) {
            const auto& rec = records[si];
            if (kinds[ki] == K::a) {
                jobs.push_back(detail::make_job(rec.student_id, detail::with_run(ExperimentConfig::exp3u(K::a), temperature, 0), [&] {
                    return persona::build_exp3_understanding_prompt(rec, course, K::a, std::nullopt, std::nullopt, *opt.templates);
                }));
                keys.push_back(key_of(si, ki, 0));
                continue;
            }
            for (int slide = 1; slide <= n; ++slide) {
                auto cfg = detail::with_run(ExperimentConfig::exp3u(kinds[ki], slide), temperature, 0);
                jobs.push_back(detail::make_job(rec.student_id, cfg, [&] {
                    return persona::build_exp3_understanding_prompt(rec, course, kinds[ki], slide, real_priors(rec),
                                                                    *opt.templates);
                }));
                keys.push_back(key_of(si, ki, slide));
            }
        }
    }
    flush();

    if (chained_c) {
        const std::size_t ki = static_cast<std::size_t>(std::find(kinds.begin(), kinds.end(), K::c) - kinds.begin());
        std::vector<std::optional<std::vector<double>>> chain_levels(records.size(), std::vector<double>{});
        for (int slide = 1; slide <= n; ++slide) {
            for (std::size_t si = 0; si < records.size(); ++si) {
                const auto& rec = records[si];
                auto cfg = detail::with_run(ExperimentConfig::exp3u(K::c, slide), temperature, 0);
                const auto& priors = chain_levels[si];
                jobs.push_back(detail::make_job(rec.student_id, cfg, [&]() -> persona::PromptBundle {
                    if (!priors) {
                        throw MissingPriorLevels("a simulated level for an earlier slide is missing (student " +
                                                 rec.student_id + ")");
                    }
                    return persona::build_exp3_understanding_prompt(rec, course, K::c, slide,
                                                                    std::span<const double>(*priors), *opt.templates);
                }));
                keys.push_back(key_of(si, ki, slide));
            }
            auto batch_keys = keys;
            flush();
            for (const auto& k : batch_keys) {
                const auto& row = ordered.at(k);
                auto& levels = chain_levels[std::get<0>(k)];
                if (!levels) continue;
                if (row.outcome) {
                    levels->push_back(row.outcome->scalar());
                } else {
                    levels.reset();
                }
            }
        }
    }

    std::vector<TableRow> rows;
    rows.reserve(ordered.size());
    for (auto& [k, r] : ordered) rows.push_back(std::move(r));
    return detail::finish_table(std::move(rows), c, "exp3t1", opt, temperature, 1, gw);
}

/// Post-test outcome simulation: 1x one accuracy per student, 2x one
/// correctness vector per student, 3x one verdict per (student, post question).
inline SimulationTable run_exp3_task2(std::span<const StudentRecord> records, const dataset::CourseAssets& assets,
                                      const MetricsMap& metrics, const ScoreSheets& sheets, gateway::Gateway& gw,
                                      std::span<const persona::Exp3OKind> kinds, const RunOptions& opt = {},
                                      double temperature = 0) {
    std::vector<Job> jobs;
    const auto post = assets.post_items();
    for (const auto& rec : records) {
        auto m = metrics.find(rec.student_id);
        auto s = sheets.find(rec.student_id);
        persona::OutcomeContext ctx{rec, assets, m == metrics.end() ? nullptr : &m->second,
                                    s == sheets.end() ? nullptr : &s->second};
        for (auto kind : kinds) {
            if (persona::outcome_level(kind) < 3) {
                jobs.push_back(detail::make_job(rec.student_id, detail::with_run(ExperimentConfig::exp3o(kind), temperature, 0),
                                                [&] { return persona::build_exp3_outcome_prompt(ctx, kind, std::nullopt, *opt.templates); }));
                continue;
            }
            for (const auto* q : post) {
                auto cfg = detail::with_run(ExperimentConfig::exp3o(kind, q->question_id), temperature, 0);
                jobs.push_back(detail::make_job(rec.student_id, cfg, [&] {
                    return persona::build_exp3_outcome_prompt(ctx, kind, q->question_id, *opt.templates);
                }));
            }
        }
    }
    detail::Collector c;
    auto rows = execute_jobs(gw, std::move(jobs), opt, c);
    return detail::finish_table(std::move(rows), c, "exp3t2", opt, temperature, 1, gw);
}

/// Simulated post score per student for one outcome kind: the accuracy for
/// 1x, the fraction of true entries for 2x and 3x. Students with any missing
/// answer for the kind are left out.
inline std::map<std::string, double> simulated_post_scores(const SimulationTable& t, persona::Exp3OKind kind) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    std::set<std::string> incomplete;
    for (const auto& r : t.rows) {
        const auto* v = std::get_if<persona::Exp3OVariant>(&r.config.variant);
        if (!v || v->kind != kind) continue;
        if (!r.outcome) {
            incomplete.insert(r.student_id);
            continue;
        }
        auto& a = acc[r.student_id];
        a.first += r.outcome->scalar();
        ++a.second;
    }
    std::map<std::string, double> out;
    for (const auto& [sid, a] : acc) {
        if (!incomplete.count(sid)) out[sid] = a.first / static_cast<double>(a.second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Files.

/// Streams rows to `<stem>.partial.csv` while a run is in progress and
/// writes the final `<stem>.csv` + `<stem>.meta.json` on completion.
class TableWriter {
public:
    explicit TableWriter(std::filesystem::path csv_path) : path_(std::move(csv_path)) {
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        partial_ = path_;
        partial_.replace_extension(".partial.csv");
        out_.open(partial_, std::ios::binary | std::ios::trunc);
        if (!out_) throw Error("cannot write '" + partial_.string() + "'");
        csv::write_row(out_, table_header());
        out_.flush();
    }

    void append(std::span<const TableRow> rows) {
        for (const auto& r : rows) csv::write_row(out_, row_cells(r));
        out_.flush();
    }

    /// Returns the paths written (table, metadata).
    std::pair<std::filesystem::path, std::filesystem::path> finish(const SimulationTable& t) {
        out_.close();
        write_text(path_, to_csv(t));
        auto meta = path_;
        meta.replace_extension(".meta.json");
        write_text(meta, metadata_json(t.metadata).dump(2) + "\n");
        std::filesystem::remove(partial_);
        return {path_, meta};
    }

    [[nodiscard]] const std::filesystem::path& partial_path() const noexcept { return partial_; }

    static void write_text(const std::filesystem::path& p, const std::string& text) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write '" + p.string() + "'");
        f << text;
    }

private:
    std::filesystem::path path_;
    std::filesystem::path partial_;
    std::ofstream out_;
};

}  // namespace edutwin::experiments
