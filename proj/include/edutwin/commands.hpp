#pragma once

// Subcommand implementations behind the edutwin executable. Each returns
// the process exit code: 0 success, 1 runtime failure, 2 invalid config.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edutwin/analysis.hpp"
#include "edutwin/config.hpp"
#include "edutwin/csv.hpp"
#include "edutwin/dataset.hpp"
#include "edutwin/digest.hpp"
#include "edutwin/experiments.hpp"
#include "edutwin/gateway.hpp"
#include "edutwin/mock_backend.hpp"
#include "edutwin/remote_backend.hpp"

namespace edutwin::cli {

using json = nlohmann::json;
using experiments::Experiment;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalidConfig = 2;

using BackendFactory = std::function<std::shared_ptr<gateway::Backend>(const RunConfig&)>;

/// Mock, remote (key from the environment) or none for replay.
inline std::shared_ptr<gateway::Backend> default_backend(const RunConfig& cfg) {
    switch (cfg.backend.kind) {
        case BackendKind::mock: return std::make_shared<gateway::MockBackend>(cfg.backend.mock);
        case BackendKind::remote:
            return std::make_shared<gateway::RemoteBackend>(
                gateway::RemoteBackend::from_environment(cfg.backend.url, cfg.backend.api_key_env, cfg.backend.timeout_s));
        default: return nullptr;
    }
}

struct Io {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
    BackendFactory backend = default_backend;
    gateway::Sleeper sleep = gateway::real_sleeper();
    bool log_jobs = true;
};

struct Overrides {
    std::optional<std::size_t> parallelism;
    std::optional<double> rate_limit;
    std::optional<BackendKind> backend;
};

// ---------------------------------------------------------------------------
// Inputs.

struct CourseData {
    CourseConfig config;
    dataset::CourseAssets assets;
    experiments::ScoreSheets sheets;
    std::vector<dataset::StudentRecord> records;
    experiments::MetricsMap metrics;
};

namespace detail {

inline void report_diagnostics(const dataset::LoadReport& r, const fs::path& source, std::ostream& err) {
    for (const auto& d : r.diagnostics) err << "warning: " << source.string() << " line " << d.line << ": " << d.message << "\n";
}

}  // namespace detail

inline std::vector<dataset::StudentRecord> load_exp1_records(const Exp1Config& c, std::ostream& err) {
    auto r = dataset::load_exp1_dataset(c.dataset, c.columns);
    detail::report_diagnostics(r, c.dataset, err);
    return std::move(r.records);
}

inline std::vector<dataset::StudentRecord> load_exp2_records(const Exp2Config& c, std::ostream& err) {
    auto r = dataset::load_exp2_dataset(c.students, c.assessments, c.min_history, c.columns);
    detail::report_diagnostics(r, c.students, err);
    return std::move(r.records);
}

inline CourseData load_course(const CourseConfig& c, std::ostream& err) {
    CourseData d;
    d.config = c;
    d.assets = dataset::load_course_assets(c.assets, c.course);
    d.sheets = dataset::load_scoresheets(c.scoresheets, d.assets);
    auto profiles = dataset::load_exp3_profiles(csv::read(c.profiles), d.sheets, c.columns);
    detail::report_diagnostics(profiles, c.profiles, err);
    d.records = std::move(profiles.records);
    std::map<std::string, std::optional<double>> engagement;
    if (c.gaze) {
        auto isc = dataset::compute_isc(dataset::load_gaze_traces(*c.gaze));
        for (const auto& note : isc.notes) err << "warning: " << c.gaze->string() << ": " << note << "\n";
        engagement = std::move(isc.engagement);
    } else if (c.isc) {
        engagement = dataset::load_isc_override(csv::read(*c.isc));
    }
    d.metrics = dataset::build_metrics(c.course, dataset::load_pupil_means(csv::read(c.pupil), c.course), engagement);
    return d;
}

/// Loads every configured dataset; any failure becomes a diagnostic.
inline std::vector<ConfigDiagnostic> check_inputs(const RunConfig& cfg) {
    std::vector<ConfigDiagnostic> out;
    std::ostringstream sink;
    auto attempt = [&](const std::string& field, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            out.push_back({0, field, e.what()});
        }
    };
    if (cfg.exp1) attempt("experiments.exp1", [&] { load_exp1_records(*cfg.exp1, sink); });
    if (cfg.exp2) attempt("experiments.exp2", [&] { load_exp2_records(*cfg.exp2, sink); });
    if (cfg.exp3) {
        for (const auto& c : cfg.exp3->courses) {
            attempt("experiments.exp3.courses." + std::string(dataset::to_string(c.course)), [&] { load_course(c, sink); });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Output layout and manifests.

inline fs::path experiment_dir(const RunConfig& cfg, Experiment e) { return cfg.output_dir / std::string(experiments::to_string(e)); }

inline fs::path table_path(const RunConfig& cfg, Experiment e, std::optional<dataset::CourseId> course = std::nullopt) {
    auto dir = experiment_dir(cfg, e);
    if (course) dir /= std::string(dataset::to_string(*course));
    return dir / "table.csv";
}

/// JSON list of artifacts (path relative to `root`, sha256, bytes), sorted by path.
inline std::string manifest_text(const fs::path& root, std::vector<fs::path> files) {
    std::sort(files.begin(), files.end());
    json list = json::array();
    for (const auto& f : files) {
        auto content = csv::read_file(f);
        list.push_back({{"path", fs::relative(f, root).generic_string()}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }
    return json{{"artifacts", list}}.dump(2) + "\n";
}

inline fs::path write_manifest(const fs::path& path, const fs::path& root, std::vector<fs::path> files) {
    experiments::TableWriter::write_text(path, manifest_text(root, std::move(files)));
    return path;
}

namespace detail {

inline fs::path write_artifact(const fs::path& path, const std::string& text, std::vector<fs::path>& written) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    experiments::TableWriter::write_text(path, text);
    written.push_back(path);
    return path;
}

inline std::string log_line(const experiments::JobLog& j) {
    std::string s = "job key=" + (j.key.empty() ? std::string("-") : j.key.substr(0, 16)) + " student=" + j.student_id +
                    " config=" + j.config + " run=" + std::to_string(j.run) + " kind=" + std::string(persona::to_string(j.kind)) +
                    " cache=" + (j.key.empty() ? "-" : j.cache_hit ? "hit" : "miss") + " status=" + (j.missing ? "missing" : "ok");
    if (!j.flags.empty()) s += " flags=" + j.flags;
    return s;
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json matrix_json(const analysis::CorrelationMatrix& m) {
    json values = json::array(), n = json::array();
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        json row = json::array();
        for (const auto& v : m.values[i]) row.push_back(opt_json(v));
        values.push_back(row);
        n.push_back(m.n[i]);
    }
    return {{"labels", m.labels}, {"r", values}, {"n", n}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// validate

inline ConfigResult resolve_config(const fs::path& path, const Overrides& ov) {
    auto result = load_config(path);
    if (!result.config) return result;
    auto& cfg = *result.config;
    if (ov.parallelism) cfg.parallelism = std::max<std::size_t>(1, *ov.parallelism);
    if (ov.rate_limit) cfg.rate_limit = *ov.rate_limit;
    if (ov.backend) {
        cfg.backend.kind = *ov.backend;
        if (cfg.backend.kind == BackendKind::remote && cfg.backend.url.empty()) {
            result.diagnostics.push_back({0, "backend.url", "--backend remote needs backend.url in the config"});
            result.config.reset();
        }
    }
    return result;
}

inline int cmd_validate(const fs::path& config_path, Io io = {}) {
    auto result = load_config(config_path);
    if (result.config) {
        for (auto& d : check_inputs(*result.config)) result.diagnostics.push_back(std::move(d));
    }
    if (!result.diagnostics.empty()) {
        for (const auto& d : result.diagnostics) io.err << config_path.string() << ": " << d.to_string() << "\n";
        return kExitInvalidConfig;
    }
    const auto& cfg = *result.config;
    io.out << "config ok: backend=" << to_string(cfg.backend.kind) << " model=" << cfg.model_id;
    if (cfg.exp1) io.out << " exp1";
    if (cfg.exp2) io.out << " exp2";
    if (cfg.exp3) io.out << " exp3";
    io.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateResult {
    int exit_code = kExitOk;
    gateway::GatewayStats stats;
    std::vector<fs::path> artifacts;
    std::optional<fs::path> manifest;
};

inline SimulateResult simulate(const RunConfig& cfg, Experiment exp, Io& io) {
    SimulateResult res;
    std::optional<persona::TemplateSet> templates;
    if (cfg.templates) templates = persona::TemplateSet::from_directory(*cfg.templates);

    gateway::GatewayOptions gopt;
    gopt.retry = cfg.retry;
    gopt.parallelism = cfg.parallelism;
    gopt.requests_per_minute = cfg.rate_limit;
    gopt.replay = cfg.backend.kind == BackendKind::replay;
    gopt.sleep = io.sleep;
    auto cache = std::make_shared<gateway::ResponseCache>(cfg.cache);
    gateway::Gateway gw(gopt.replay ? nullptr : io.backend(cfg), cache, gopt);

    experiments::RunOptions opt;
    opt.model_id = cfg.model_id;
    opt.max_tokens = cfg.max_tokens;
    opt.templates = templates ? &*templates : &persona::default_templates();
    if (io.log_jobs) {
        opt.on_job = [&io](const experiments::JobLog& j) { io.err << detail::log_line(j) << "\n"; };
    }

    auto run_one = [&](const fs::path& path, auto&& body) {
        experiments::TableWriter writer(path);
        opt.on_rows = [&writer](std::span<const experiments::TableRow> rows) { writer.append(rows); };
        experiments::SimulationTable table = body();
        auto [t, m] = writer.finish(table);
        res.artifacts.push_back(t);
        res.artifacts.push_back(m);
        std::size_t missing = 0;
        for (const auto& r : table.rows) missing += r.outcome ? 0 : 1;
        io.out << path.string() << ": " << table.rows.size() << " rows, " << missing << " missing\n";
    };

    switch (exp) {
        case Experiment::exp1: {
            auto records = load_exp1_records(*cfg.exp1, io.err);
            run_one(table_path(cfg, exp), [&] { return experiments::run_exp1(records, gw, cfg.runs, cfg.temperature, opt); });
            break;
        }
        case Experiment::exp2: {
            auto records = load_exp2_records(*cfg.exp2, io.err);
            run_one(table_path(cfg, exp),
                    [&] { return experiments::run_exp2(records, gw, cfg.exp2->kinds, opt, cfg.temperature); });
            break;
        }
        case Experiment::exp3t1:
        case Experiment::exp3t2: {
            for (const auto& course : cfg.exp3->courses) {
                auto data = load_course(course, io.err);
                run_one(table_path(cfg, exp, course.course), [&] {
                    if (exp == Experiment::exp3t1) {
                        return experiments::run_exp3_task1(data.records, data.assets.material, data.metrics, gw,
                                                           cfg.exp3->understanding_kinds, cfg.exp3->chain_mode, opt,
                                                           cfg.temperature);
                    }
                    return experiments::run_exp3_task2(data.records, data.assets, data.metrics, data.sheets, gw,
                                                       cfg.exp3->outcome_kinds, opt, cfg.temperature);
                });
            }
            break;
        }
    }
    const auto root = experiment_dir(cfg, exp);
    res.manifest = write_manifest(root / "simulate_manifest.json", root, res.artifacts);
    res.stats = gw.stats();
    return res;
}

inline bool experiment_configured(const RunConfig& cfg, Experiment e) {
    switch (e) {
        case Experiment::exp1: return cfg.exp1.has_value();
        case Experiment::exp2: return cfg.exp2.has_value();
        default: return cfg.exp3.has_value();
    }
}

inline int cmd_simulate(const fs::path& config_path, Experiment exp, const Overrides& ov = {}, Io io = {}) {
    auto result = resolve_config(config_path, ov);
    if (!result.ok()) {
        for (const auto& d : result.diagnostics) io.err << config_path.string() << ": " << d.to_string() << "\n";
        return kExitInvalidConfig;
    }
    const auto& cfg = *result.config;
    if (!experiment_configured(cfg, exp)) {
        io.err << config_path.string() << ": experiments." << (exp == Experiment::exp1 ? "exp1" : exp == Experiment::exp2 ? "exp2" : "exp3")
               << ": not configured\n";
        return kExitInvalidConfig;
    }
    try {
        auto res = simulate(cfg, exp, io);
        io.err << "backend calls: " << res.stats.backend_calls << ", cache hits: " << res.stats.cache_hits
               << ", retries: " << res.stats.retries << "\n";
        return res.exit_code;
    } catch (const MissingCacheEntry& e) {
        io.err << "error: replay cache is missing " << e.digests().size() << " entries (first " << e.digests().front() << ")\n";
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
    }
    return kExitFailure;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeResult {
    std::vector<fs::path> artifacts;
    fs::path manifest;
};

namespace detail {

inline experiments::SimulationTable read_checked(const fs::path& path, Experiment exp, std::vector<std::string>& problems) {
    try {
        auto t = experiments::read_table(path);
        if (!t.metadata.experiment.empty() && t.metadata.experiment != experiments::to_string(exp)) {
            problems.push_back(path.string() + ": table is from " + t.metadata.experiment + ", expected " +
                               std::string(experiments::to_string(exp)));
        }
        return t;
    } catch (const std::exception& e) {
        problems.push_back(path.string() + ": " + e.what());
        return {};
    }
}

inline void check_students(const experiments::SimulationTable& t, std::span<const dataset::StudentRecord> records,
                           const fs::path& path, std::vector<std::string>& problems) {
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.student_id);
    for (const auto& row : t.rows) {
        if (!ids.count(row.student_id)) {
            problems.push_back(path.string() + ": student '" + row.student_id + "' is not in the dataset");
            return;
        }
    }
}

}  // namespace detail

/// Writes the reports for `exp` under <output>/<exp>/report. `tables`
/// overrides the default table locations (one per course for exp3).
inline AnalyzeResult analyze(const RunConfig& cfg, Experiment exp, const std::vector<fs::path>& tables, std::ostream& err) {
    const auto root = experiment_dir(cfg, exp) / "report";
    AnalyzeResult res;
    std::vector<std::string> problems;
    auto table_for = [&](std::size_t i, std::optional<dataset::CourseId> course) {
        return i < tables.size() ? tables[i] : table_path(cfg, exp, course);
    };
    auto fail_if_problems = [&] {
        if (problems.empty()) return;
        std::string msg = "cannot analyze:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw Error(msg);
    };
    json summary{{"experiment", experiments::to_string(exp)}, {"model_id", cfg.model_id}};

    if (exp == Experiment::exp1) {
        auto records = load_exp1_records(*cfg.exp1, err);
        auto path = table_for(0, std::nullopt);
        auto table = detail::read_checked(path, exp, problems);
        detail::check_students(table, records, path, problems);
        fail_if_problems();
        auto rep = analysis::factor_alignment(table, records, cfg.min_group_size);
        detail::write_artifact(root / "alignment.csv", analysis::alignment_csv(rep), res.artifacts);
        detail::write_artifact(root / "level_points.csv", analysis::level_points_csv(rep), res.artifacts);
        detail::write_artifact(root / "cross_run.csv", analysis::cross_run_csv(rep), res.artifacts);
        json factors = json::array();
        for (const auto& f : rep.per_factor) {
            json runs = json::array();
            for (const auto& pr : f.per_run) runs.push_back({{"run", pr.run}, {"r", detail::opt_json(pr.r)}});
            factors.push_back({{"factor", f.factor}, {"r", detail::opt_json(f.r)}, {"per_run", runs}, {"note", f.note}});
        }
        summary["factors"] = factors;
        summary["missing_rows"] = rep.missing_rows;
        summary["notes"] = rep.notes;
    } else if (exp == Experiment::exp2) {
        auto records = load_exp2_records(*cfg.exp2, err);
        auto path = table_for(0, std::nullopt);
        auto table = detail::read_checked(path, exp, problems);
        detail::check_students(table, records, path, problems);
        fail_if_problems();
        auto cols = analysis::exp2_columns(table, records);
        auto m = analysis::correlation_matrix(cols);
        detail::write_artifact(root / "matrix.csv", analysis::matrix_csv(m), res.artifacts);
        detail::write_artifact(root / "region_summary.csv", analysis::region_csv(analysis::region_summary(records, table)),
                               res.artifacts);
        summary["matrix"] = detail::matrix_json(m);
        json vs_h = json::object();
        for (const auto& l : m.labels) {
            if (l != "H") vs_h[l] = detail::opt_json(m.at("H", l));
        }
        summary["r_with_H"] = vs_h;
    } else {
        json courses = json::object();
        for (std::size_t i = 0; i < cfg.exp3->courses.size(); ++i) {
            const auto& cc = cfg.exp3->courses[i];
            const std::string name(dataset::to_string(cc.course));
            auto data = load_course(cc, err);
            auto path = table_for(i, cc.course);
            auto table = detail::read_checked(path, exp, problems);
            detail::check_students(table, data.records, path, problems);
            fail_if_problems();
            const auto dir = root / name;
            json cs;
            if (exp == Experiment::exp3t1) {
                const auto slides = data.assets.material.slides.size();
                std::map<std::string, std::vector<analysis::SlideCorrelation>> by_kind;
                json traj = json::object();
                for (auto kind : cfg.exp3->understanding_kinds) {
                    auto v = analysis::per_slide_correlation(table, data.metrics, kind, slides);
                    json rs = json::array();
                    for (const auto& s : v) rs.push_back(detail::opt_json(s.r));
                    traj[std::string(persona::to_string(kind))] = rs;
                    by_kind[std::string(persona::to_string(kind))] = std::move(v);
                }
                detail::write_artifact(dir / "per_slide.csv", analysis::per_slide_csv(by_kind), res.artifacts);
                auto m = analysis::correlation_matrix(analysis::exp3_understanding_columns(table, data.records, data.metrics, slides));
                detail::write_artifact(dir / "matrix.csv", analysis::matrix_csv(m), res.artifacts);
                cs["per_slide_r"] = traj;
                cs["matrix"] = detail::matrix_json(m);
            } else {
                auto m = analysis::correlation_matrix(
                    analysis::exp3_outcome_columns(table, data.records, data.metrics, data.sheets));
                detail::write_artifact(dir / "matrix.csv", analysis::matrix_csv(m), res.artifacts);
                json grids = json::array();
                for (const auto& g : analysis::build_heatmaps(table, data.records, data.assets, data.metrics, data.sheets)) {
                    detail::write_artifact(dir / "heatmaps" / (g.name + ".csv"), analysis::heatmap_csv(g), res.artifacts);
                    grids.push_back({{"name", g.name}, {"rows", g.rows.size()}, {"columns", g.columns.size()}});
                }
                cs["matrix"] = detail::matrix_json(m);
                cs["heatmaps"] = grids;
            }
            courses[name] = cs;
        }
        summary["courses"] = courses;
    }
    detail::write_artifact(root / "summary.json", summary.dump(2) + "\n", res.artifacts);
    res.manifest = write_manifest(root / "manifest.json", root, res.artifacts);
    return res;
}

inline int cmd_analyze(const fs::path& config_path, Experiment exp, const std::vector<fs::path>& tables = {}, Io io = {}) {
    auto result = resolve_config(config_path, {});
    if (!result.ok()) {
        for (const auto& d : result.diagnostics) io.err << config_path.string() << ": " << d.to_string() << "\n";
        return kExitInvalidConfig;
    }
    const auto& cfg = *result.config;
    if (!experiment_configured(cfg, exp)) {
        io.err << config_path.string() << ": experiment " << experiments::to_string(exp) << " is not configured\n";
        return kExitInvalidConfig;
    }
    try {
        auto res = analyze(cfg, exp, tables, io.err);
        for (const auto& a : res.artifacts) io.out << a.string() << "\n";
        io.out << res.manifest.string() << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

// ---------------------------------------------------------------------------
// cache

inline int cmd_cache_inspect(const fs::path& cache_path, Io io = {}) {
    if (!fs::exists(cache_path)) {
        io.err << "error: no cache at " << cache_path.string() << "\n";
        return kExitFailure;
    }
    auto scan = gateway::ResponseCache::inspect(cache_path);
    io.out << "records: " << scan.records << "\n"
           << "duplicate keys: " << scan.duplicate_keys << "\n"
           << "truncated tail lines: " << scan.truncated_tail << "\n"
           << "corrupt lines: " << scan.corrupt.size() << "\n";
    for (const auto& c : scan.corrupt) io.out << "  " << c << "\n";
    return scan.corrupt.empty() ? kExitOk : kExitFailure;
}

inline int cmd_cache_prune(const fs::path& cache_path, const std::optional<std::string>& keep_model, Io io = {}) {
    try {
        auto kept = gateway::ResponseCache::prune(cache_path, keep_model);
        io.out << "kept " << kept << " records\n";
        return kExitOk;
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace edutwin::cli
