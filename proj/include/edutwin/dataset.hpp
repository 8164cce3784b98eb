#pragma once

// Ingestion of the three cohort shapes (demographics + grade, demographics +
// assessment history, gaze-instrumented lecture viewing) and the gaze-derived
// engagement and understanding signals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "edutwin/csv.hpp"
#include "edutwin/errors.hpp"
#include "edutwin/numeric.hpp"

namespace edutwin::dataset {

/// Level used for empty demographic cells so they still form a group.
inline constexpr std::string_view kUnknownLevel = "unknown";

struct Factor {
    std::string name;
    std::string level;
    bool operator==(const Factor&) const = default;
};

struct Assessment {
    int index = 0;
    double score = 0;  // [0, 100]
    bool operator==(const Assessment&) const = default;
};

/// Final grade on the 8-point scale 0: Fail ... 7: AA.
struct GradeOrdinal {
    int value = 0;
    bool operator==(const GradeOrdinal&) const = default;
};

/// Final exam / post-test score in [0, 100].
struct ExamScore {
    double value = 0;
    bool operator==(const ExamScore&) const = default;
};

using Outcome = std::variant<GradeOrdinal, ExamScore>;

inline double outcome_value(const Outcome& o) {
    return std::visit([](const auto& v) { return static_cast<double>(v.value); }, o);
}

struct StudentRecord {
    std::string student_id;
    std::vector<Factor> factors;
    std::optional<std::vector<Assessment>> assessments;
    Outcome outcome;
    std::optional<std::string> region;
    std::optional<std::string> imd_band;
    std::optional<double> average_assessment;

    [[nodiscard]] const std::string* level_of(std::string_view factor) const {
        for (const auto& f : factors) {
            if (f.name == factor) return &f.level;
        }
        return nullptr;
    }
};

struct Diagnostic {
    std::size_t line = 0;
    std::string message;
};

struct LoadReport {
    std::vector<StudentRecord> records;
    std::vector<Diagnostic> diagnostics;
    std::size_t rejected = 0;
};

inline std::string cell_or_unknown(std::string_view cell) {
    auto t = trim(cell);
    return t.empty() ? std::string(kUnknownLevel) : std::string(cell);
}

namespace detail {

inline void check_unique_header(const csv::Table& t, std::string_view source) {
    std::set<std::string> seen;
    for (const auto& h : t.header()) {
        if (!seen.insert(h).second) throw SchemaError(std::string(source) + ": duplicate column '" + h + "'", 1);
    }
}

inline bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Demographics + final grade cohort.

struct Exp1Columns {
    std::string grade = "GRADE";
    /// When unset, ids are synthesised from the data line number.
    std::optional<std::string> id = std::string("STUDENT ID");
    std::vector<std::string> exclude;
    /// Optional display names for factor columns (column header -> name).
    std::map<std::string, std::string> factor_names;
};

inline LoadReport load_exp1_dataset(const csv::Table& table, const Exp1Columns& cols = {},
                                    std::string_view source = "exp1") {
    detail::check_unique_header(table, source);
    std::size_t grade_col = table.require(cols.grade, source);
    std::optional<std::size_t> id_col;
    if (cols.id) id_col = table.require(*cols.id, source);

    std::vector<std::size_t> factor_cols;
    for (std::size_t c = 0; c < table.header().size(); ++c) {
        if (c == grade_col || (id_col && c == *id_col)) continue;
        if (detail::contains(cols.exclude, table.header()[c])) continue;
        factor_cols.push_back(c);
    }

    LoadReport report;
    std::unordered_set<std::string> ids;
    for (const auto& row : table.rows()) {
        auto reject = [&](std::string msg) {
            report.diagnostics.push_back({row.line, std::move(msg)});
            ++report.rejected;
        };
        auto grade = parse_integer(row.cells[grade_col]);
        if (!grade || *grade < 0 || *grade > 7) {
            reject("ValueError: grade '" + row.cells[grade_col] + "' outside the 0-7 scale");
            continue;
        }
        StudentRecord rec;
        rec.student_id = id_col ? std::string(trim(row.cells[*id_col])) : "row-" + std::to_string(row.line);
        if (rec.student_id.empty() || !ids.insert(rec.student_id).second) {
            reject("duplicate or empty student id '" + rec.student_id + "'");
            continue;
        }
        for (std::size_t c : factor_cols) {
            const auto& header = table.header()[c];
            auto it = cols.factor_names.find(header);
            rec.factors.push_back({it == cols.factor_names.end() ? header : it->second,
                                   cell_or_unknown(row.cells[c])});
        }
        rec.outcome = GradeOrdinal{static_cast<int>(*grade)};
        report.records.push_back(std::move(rec));
    }
    return report;
}

inline LoadReport load_exp1_dataset(const std::filesystem::path& path, const Exp1Columns& cols = {}) {
    return load_exp1_dataset(csv::read(path), cols, path.string());
}

/// Writes records back in the loader's input shape (id, factors..., grade).
inline std::string to_exp1_csv(std::span<const StudentRecord> records, const Exp1Columns& cols = {}) {
    std::ostringstream out;
    if (records.empty()) return {};
    std::vector<std::string> header;
    header.push_back(cols.id.value_or("STUDENT ID"));
    for (const auto& f : records.front().factors) header.push_back(f.name);
    header.push_back(cols.grade);
    csv::write_row(out, header);
    for (const auto& r : records) {
        std::vector<std::string> cells{r.student_id};
        for (const auto& f : r.factors) cells.push_back(f.level);
        cells.push_back(format_shortest(outcome_value(r.outcome)));
        csv::write_row(out, cells);
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Demographics + assessment history cohort.

struct Exp2Columns {
    std::string student_id = "id_student";
    std::string final_score = "final_score";
    std::string region = "region";
    std::string imd_band = "imd_band";
    std::vector<std::string> exclude;
    // long-format assessment file
    std::string assessment_student_id = "id_student";
    std::string assessment_index = "assessment_index";
    std::string assessment_score = "score";
};

inline LoadReport load_exp2_dataset(const csv::Table& students, const csv::Table& assessments,
                                    std::size_t min_history = 5, const Exp2Columns& cols = {},
                                    std::string_view source = "exp2") {
    detail::check_unique_header(students, source);
    const std::size_t id_col = students.require(cols.student_id, source);
    const std::size_t final_col = students.require(cols.final_score, source);
    const auto region_col = students.column(cols.region);
    const auto imd_col = students.column(cols.imd_band);

    const std::size_t a_id = assessments.require(cols.assessment_student_id, "assessments");
    const std::size_t a_idx = assessments.require(cols.assessment_index, "assessments");
    const std::size_t a_score = assessments.require(cols.assessment_score, "assessments");

    LoadReport report;
    std::unordered_map<std::string, std::vector<Assessment>> history;
    std::unordered_set<std::string> bad_history;
    for (const auto& row : assessments.rows()) {
        std::string sid(trim(row.cells[a_id]));
        auto idx = parse_integer(row.cells[a_idx]);
        if (!idx || *idx <= 0) {
            report.diagnostics.push_back({row.line, "assessments: invalid index '" + row.cells[a_idx] + "'"});
            bad_history.insert(sid);
            continue;
        }
        if (trim(row.cells[a_score]).empty()) {
            report.diagnostics.push_back({row.line, "assessments: empty score for " + sid + ", skipped"});
            continue;
        }
        auto score = parse_real(row.cells[a_score]);
        if (!score || *score < 0 || *score > 100) {
            report.diagnostics.push_back({row.line, "assessments: score '" + row.cells[a_score] +
                                                        "' outside [0,100] for " + sid});
            bad_history.insert(sid);
            continue;
        }
        history[sid].push_back({static_cast<int>(*idx), *score});
    }

    std::vector<std::size_t> factor_cols;
    for (std::size_t c = 0; c < students.header().size(); ++c) {
        if (c == id_col || c == final_col) continue;
        if (detail::contains(cols.exclude, students.header()[c])) continue;
        factor_cols.push_back(c);
    }

    std::unordered_set<std::string> ids;
    for (const auto& row : students.rows()) {
        auto skip = [&](std::string msg) {
            report.diagnostics.push_back({row.line, std::move(msg)});
            ++report.rejected;
        };
        std::string sid(trim(row.cells[id_col]));
        if (sid.empty() || !ids.insert(sid).second) {
            skip("duplicate or empty student id '" + sid + "'");
            continue;
        }
        if (trim(row.cells[final_col]).empty()) {
            skip("student " + sid + " has no final exam score, skipped");
            continue;
        }
        auto final_score = parse_real(row.cells[final_col]);
        if (!final_score || *final_score < 0 || *final_score > 100) {
            skip("ValueError: final score '" + row.cells[final_col] + "' outside [0,100] for " + sid);
            continue;
        }
        if (bad_history.count(sid)) {
            skip("student " + sid + " has invalid assessment rows");
            continue;
        }
        auto hist = history[sid];
        std::sort(hist.begin(), hist.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
        bool strictly_increasing = std::adjacent_find(hist.begin(), hist.end(), [](const auto& a, const auto& b) {
                                       return a.index == b.index;
                                   }) == hist.end();
        if (!strictly_increasing) {
            skip("student " + sid + " has duplicate assessment indices");
            continue;
        }
        if (hist.size() < min_history) {
            skip("student " + sid + " has " + std::to_string(hist.size()) + " assessments, below " +
                 std::to_string(min_history));
            continue;
        }

        StudentRecord rec;
        rec.student_id = sid;
        for (std::size_t c : factor_cols) rec.factors.push_back({students.header()[c], cell_or_unknown(row.cells[c])});
        rec.region = region_col ? cell_or_unknown(row.cells[*region_col]) : std::string(kUnknownLevel);
        rec.imd_band = imd_col ? cell_or_unknown(row.cells[*imd_col]) : std::string(kUnknownLevel);
        double sum = 0;
        for (const auto& a : hist) sum += a.score;
        rec.average_assessment = hist.empty() ? std::nullopt : std::optional(sum / static_cast<double>(hist.size()));
        rec.assessments = std::move(hist);
        rec.outcome = ExamScore{*final_score};
        report.records.push_back(std::move(rec));
    }
    return report;
}

inline LoadReport load_exp2_dataset(const std::filesystem::path& students, const std::filesystem::path& assessments,
                                    std::size_t min_history = 5, const Exp2Columns& cols = {}) {
    return load_exp2_dataset(csv::read(students), csv::read(assessments), min_history, cols, students.string());
}

// ---------------------------------------------------------------------------
// Lecture-viewing cohort: course assets, score sheets, gaze signals.

enum class CourseId { birth, star };

inline std::string_view to_string(CourseId c) { return c == CourseId::birth ? "birth" : "star"; }

inline std::optional<CourseId> parse_course(std::string_view s) {
    if (s == "birth") return CourseId::birth;
    if (s == "star") return CourseId::star;
    return std::nullopt;
}

inline constexpr std::size_t slide_count(CourseId c) { return c == CourseId::birth ? 10 : 6; }

struct Slide {
    int slide_id = 0;
    std::string text;
};

struct CourseMaterial {
    CourseId course = CourseId::birth;
    std::vector<Slide> slides;  // slide_id == position + 1

    [[nodiscard]] const Slide& slide(int id) const { return slides.at(static_cast<std::size_t>(id - 1)); }
};

enum class ItemKind { pre, post };

struct TestItem {
    std::string question_id;
    std::string text;
    ItemKind kind = ItemKind::post;
    std::vector<int> related_slide_ids;
    std::vector<std::string> options;
    std::string correct_option;
};

struct CourseAssets {
    CourseMaterial material;
    std::vector<TestItem> items;  // file order
    std::map<std::string, std::vector<int>> question_slides;

    [[nodiscard]] std::vector<const TestItem*> of_kind(ItemKind k) const {
        std::vector<const TestItem*> out;
        for (const auto& it : items) {
            if (it.kind == k) out.push_back(&it);
        }
        return out;
    }
    [[nodiscard]] std::vector<const TestItem*> post_items() const { return of_kind(ItemKind::post); }
    [[nodiscard]] std::vector<const TestItem*> pre_items() const { return of_kind(ItemKind::pre); }
    [[nodiscard]] const TestItem* find(std::string_view question_id) const {
        for (const auto& it : items) {
            if (it.question_id == question_id) return &it;
        }
        return nullptr;
    }
};

/// Builds and validates assets from parsed tables:
/// slides (slide_id,text), questions (question_id,kind,text,options,correct_option),
/// mapping (question_id,slide_id), options separated by '|'.
inline CourseAssets load_course_assets(CourseId course, const csv::Table& slides, const csv::Table& questions,
                                       const csv::Table& mapping) {
    CourseAssets assets;
    assets.material.course = course;
    {
        std::size_t id_c = slides.require("slide_id", "slides");
        std::size_t text_c = slides.require("text", "slides");
        for (const auto& row : slides.rows()) {
            auto id = parse_integer(row.cells[id_c]);
            if (!id) throw SchemaError("slides: invalid slide_id '" + row.cells[id_c] + "'", row.line);
            assets.material.slides.push_back({static_cast<int>(*id), row.cells[text_c]});
        }
        std::sort(assets.material.slides.begin(), assets.material.slides.end(),
                  [](const Slide& a, const Slide& b) { return a.slide_id < b.slide_id; });
        const std::size_t expected = slide_count(course);
        if (assets.material.slides.size() != expected) {
            throw SchemaError("course '" + std::string(to_string(course)) + "' must have " + std::to_string(expected) +
                              " slides, found " + std::to_string(assets.material.slides.size()));
        }
        for (std::size_t i = 0; i < expected; ++i) {
            if (assets.material.slides[i].slide_id != static_cast<int>(i + 1)) {
                throw SchemaError("slides: ids must be 1.." + std::to_string(expected));
            }
        }
    }
    {
        std::size_t q_c = questions.require("question_id", "questions");
        std::size_t k_c = questions.require("kind", "questions");
        std::size_t t_c = questions.require("text", "questions");
        auto o_c = questions.column("options");
        auto a_c = questions.column("correct_option");
        std::set<std::string> seen;
        for (const auto& row : questions.rows()) {
            TestItem item;
            item.question_id = std::string(trim(row.cells[q_c]));
            if (item.question_id.empty() || !seen.insert(item.question_id).second) {
                throw SchemaError("questions: duplicate or empty question_id '" + item.question_id + "'", row.line);
            }
            auto kind = trim(row.cells[k_c]);
            if (kind == "pre") {
                item.kind = ItemKind::pre;
            } else if (kind == "post") {
                item.kind = ItemKind::post;
            } else {
                throw SchemaError("questions: kind must be pre or post, got '" + std::string(kind) + "'", row.line);
            }
            item.text = row.cells[t_c];
            if (o_c && !row.cells[*o_c].empty()) {
                std::string_view rest = row.cells[*o_c];
                while (true) {
                    auto bar = rest.find('|');
                    item.options.emplace_back(trim(rest.substr(0, bar)));
                    if (bar == std::string_view::npos) break;
                    rest.remove_prefix(bar + 1);
                }
            }
            if (a_c) item.correct_option = row.cells[*a_c];
            assets.items.push_back(std::move(item));
        }
    }
    {
        std::size_t q_c = mapping.require("question_id", "mapping");
        std::size_t s_c = mapping.require("slide_id", "mapping");
        const int n = static_cast<int>(slide_count(course));
        for (const auto& row : mapping.rows()) {
            std::string qid(trim(row.cells[q_c]));
            auto sid = parse_integer(row.cells[s_c]);
            if (!sid || *sid < 1 || *sid > n) {
                throw MappingError("question " + qid + " references unknown slide '" + row.cells[s_c] + "' (course " +
                                   std::string(to_string(course)) + " has " + std::to_string(n) + " slides)");
            }
            if (!assets.find(qid)) throw MappingError("mapping references unknown question '" + qid + "'");
            auto& v = assets.question_slides[qid];
            if (std::find(v.begin(), v.end(), static_cast<int>(*sid)) == v.end()) v.push_back(static_cast<int>(*sid));
        }
        for (auto& [q, v] : assets.question_slides) std::sort(v.begin(), v.end());
    }
    for (auto& item : assets.items) {
        auto it = assets.question_slides.find(item.question_id);
        if (it != assets.question_slides.end()) item.related_slide_ids = it->second;
        if (item.kind == ItemKind::post && item.related_slide_ids.empty()) {
            throw MappingError("post question '" + item.question_id + "' is not mapped to any slide");
        }
    }
    return assets;
}

/// Loads slides.csv, questions.csv and mapping.csv from `dir`.
inline CourseAssets load_course_assets(const std::filesystem::path& dir, CourseId course) {
    return load_course_assets(course, csv::read(dir / "slides.csv"), csv::read(dir / "questions.csv"),
                              csv::read(dir / "mapping.csv"));
}

struct ScoreSheet {
    std::string student_id;
    std::map<std::string, bool> per_question_correct;  // post questions
    std::optional<double> pre_test_average;             // [0, 1]

    /// Fraction of post questions answered correctly.
    [[nodiscard]] double post_accuracy() const {
        if (per_question_correct.empty()) return 0;
        std::size_t k = 0;
        for (const auto& [q, ok] : per_question_correct) k += ok ? 1 : 0;
        return static_cast<double>(k) / static_cast<double>(per_question_correct.size());
    }
};

/// Long-format answers (student_id,question_id,correct) -> score sheets.
inline std::map<std::string, ScoreSheet> load_scoresheets(const csv::Table& t, const CourseAssets& assets) {
    std::size_t s_c = t.require("student_id", "scoresheets");
    std::size_t q_c = t.require("question_id", "scoresheets");
    std::size_t c_c = t.require("correct", "scoresheets");
    std::map<std::string, ScoreSheet> out;
    std::map<std::string, std::pair<std::size_t, std::size_t>> pre;  // correct, total
    for (const auto& row : t.rows()) {
        std::string sid(trim(row.cells[s_c]));
        std::string qid(trim(row.cells[q_c]));
        const TestItem* item = assets.find(qid);
        if (!item) throw MappingError("scoresheets: unknown question '" + qid + "' (line " + std::to_string(row.line) + ")");
        auto v = parse_integer(row.cells[c_c]);
        if (!v || (*v != 0 && *v != 1)) throw SchemaError("scoresheets: correct must be 0 or 1", row.line);
        auto& sheet = out[sid];
        sheet.student_id = sid;
        if (item->kind == ItemKind::post) {
            sheet.per_question_correct[qid] = *v == 1;
        } else {
            auto& p = pre[sid];
            p.first += static_cast<std::size_t>(*v);
            ++p.second;
        }
    }
    for (auto& [sid, p] : pre) {
        out[sid].student_id = sid;
        out[sid].pre_test_average = static_cast<double>(p.first) / static_cast<double>(p.second);
    }
    return out;
}

inline std::map<std::string, ScoreSheet> load_scoresheets(const std::filesystem::path& path, const CourseAssets& assets) {
    return load_scoresheets(csv::read(path), assets);
}

struct Exp3Columns {
    std::string student_id = "student_id";
    std::vector<std::string> exclude;
};

/// Demographic profiles for the lecture cohort; the outcome is the real
/// post-test accuracy (x100) from the matching score sheet.
inline LoadReport load_exp3_profiles(const csv::Table& t, const std::map<std::string, ScoreSheet>& sheets,
                                     const Exp3Columns& cols = {}, std::string_view source = "profiles") {
    detail::check_unique_header(t, source);
    std::size_t id_c = t.require(cols.student_id, source);
    LoadReport report;
    std::unordered_set<std::string> ids;
    for (const auto& row : t.rows()) {
        std::string sid(trim(row.cells[id_c]));
        if (sid.empty() || !ids.insert(sid).second) {
            report.diagnostics.push_back({row.line, "duplicate or empty student id '" + sid + "'"});
            ++report.rejected;
            continue;
        }
        auto sheet = sheets.find(sid);
        if (sheet == sheets.end() || sheet->second.per_question_correct.empty()) {
            report.diagnostics.push_back({row.line, "student " + sid + " has no post-test answers, skipped"});
            ++report.rejected;
            continue;
        }
        StudentRecord rec;
        rec.student_id = sid;
        for (std::size_t c = 0; c < t.header().size(); ++c) {
            if (c == id_c || detail::contains(cols.exclude, t.header()[c])) continue;
            rec.factors.push_back({t.header()[c], cell_or_unknown(row.cells[c])});
        }
        rec.outcome = ExamScore{100.0 * sheet->second.post_accuracy()};
        report.records.push_back(std::move(rec));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Gaze signals.

/// student -> dimension -> samples (index order).
using GazeTraces = std::map<std::string, std::map<std::string, std::vector<double>>>;

/// Long-format traces: student_id,dimension,sample_index,value.
inline GazeTraces load_gaze_traces(const csv::Table& t) {
    std::size_t s_c = t.require("student_id", "gaze");
    std::size_t d_c = t.require("dimension", "gaze");
    std::size_t i_c = t.require("sample_index", "gaze");
    std::size_t v_c = t.require("value", "gaze");
    std::map<std::string, std::map<std::string, std::map<long long, double>>> raw;
    for (const auto& row : t.rows()) {
        auto idx = parse_integer(row.cells[i_c]);
        auto val = parse_real(row.cells[v_c]);
        if (!idx || *idx < 0) throw SchemaError("gaze: invalid sample_index", row.line);
        if (!val) throw SchemaError("gaze: invalid value '" + row.cells[v_c] + "'", row.line);
        auto& series = raw[std::string(trim(row.cells[s_c]))][std::string(trim(row.cells[d_c]))];
        if (!series.emplace(*idx, *val).second) throw SchemaError("gaze: duplicate sample", row.line);
    }
    GazeTraces out;
    for (auto& [sid, dims] : raw) {
        for (auto& [dim, samples] : dims) {
            auto& v = out[sid][dim];
            long long expect = 0;
            for (auto& [i, x] : samples) {
                if (i != expect++) throw SchemaError("gaze: samples for " + sid + "/" + dim + " are not contiguous from 0");
                v.push_back(x);
            }
        }
    }
    return out;
}

inline GazeTraces load_gaze_traces(const std::filesystem::path& path) { return load_gaze_traces(csv::read(path)); }

struct IscResult {
    std::map<std::string, std::optional<double>> engagement;  // nullopt: degenerate
    std::vector<std::string> notes;
};

namespace detail {

inline std::optional<double> centred_pearson(std::span<const double> x, std::span<const double> y) {
    const double mx = mean(x), my = mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (negligible_spread(sxx, x) || negligible_spread(syy, y)) return std::nullopt;
    // Equal sums force identical deviations; report the bound exactly.
    if (sxx == syy && std::abs(sxy) == sxx) return sxy > 0 ? 1.0 : -1.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace detail

/// Intersubject correlation: for each student, the Pearson correlation of
/// each gaze dimension with the mean of all other students' series on that
/// dimension, averaged over dimensions.
inline IscResult compute_isc(const GazeTraces& traces) {
    if (traces.size() < 3) {
        throw ValueError("ISC needs at least 3 students, got " + std::to_string(traces.size()));
    }
    const auto& ref = traces.begin()->second;
    if (ref.empty()) throw SchemaError("gaze: student '" + traces.begin()->first + "' has no dimensions");
    std::map<std::string, std::size_t> lengths;
    for (const auto& [dim, v] : ref) lengths[dim] = v.size();
    for (const auto& [sid, dims] : traces) {
        if (dims.size() != lengths.size()) throw SchemaError("gaze: student '" + sid + "' has a different dimension set");
        for (const auto& [dim, v] : dims) {
            auto it = lengths.find(dim);
            if (it == lengths.end() || it->second != v.size() || v.size() < 2) {
                throw SchemaError("gaze: series " + sid + "/" + dim + " is missing or has unequal length");
            }
        }
    }

    const double n_others = static_cast<double>(traces.size() - 1);
    std::map<std::string, std::vector<double>> totals;
    for (const auto& [dim, len] : lengths) {
        auto& tot = totals[dim];
        tot.assign(len, 0.0);
        for (const auto& [sid, dims] : traces) {
            const auto& v = dims.at(dim);
            for (std::size_t i = 0; i < len; ++i) tot[i] += v[i];
        }
    }

    IscResult result;
    std::vector<double> loo;
    for (const auto& [sid, dims] : traces) {
        double acc = 0;
        bool degenerate = false;
        for (const auto& [dim, v] : dims) {
            const auto& tot = totals.at(dim);
            loo.resize(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) loo[i] = (tot[i] - v[i]) / n_others;
            auto r = detail::centred_pearson(v, loo);
            if (!r) {
                result.notes.push_back("DegenerateTrace: " + sid + "/" + dim + " has zero variance");
                degenerate = true;
                break;
            }
            acc += *r;
        }
        result.engagement[sid] =
            degenerate ? std::nullopt : std::optional(std::clamp(acc / static_cast<double>(dims.size()), -1.0, 1.0));
    }
    return result;
}

/// Precomputed engagement values (student_id,isc) overriding trace-derived ISC.
inline std::map<std::string, std::optional<double>> load_isc_override(const csv::Table& t) {
    std::size_t s_c = t.require("student_id", "isc");
    std::size_t v_c = t.require("isc", "isc");
    std::map<std::string, std::optional<double>> out;
    for (const auto& row : t.rows()) {
        auto v = parse_real(row.cells[v_c]);
        if (v && (*v < -1 || *v > 1)) throw ValueError("isc value outside [-1,1] on line " + std::to_string(row.line));
        out[std::string(trim(row.cells[s_c]))] = v;
    }
    return out;
}

/// Inverse min-max normalisation: the largest pupil mean maps to 0, the
/// smallest to 1. A constant series maps to 0.5 throughout.
inline std::vector<double> derive_understanding(std::span<const double> pupil) {
    if (pupil.empty()) throw ValueError("derive_understanding needs at least one slide");
    for (double p : pupil) {
        if (!std::isfinite(p)) throw ValueError("derive_understanding: non-finite pupil value");
    }
    auto [lo, hi] = std::minmax_element(pupil.begin(), pupil.end());
    const double min_p = *lo, range = *hi - *lo;
    std::vector<double> u(pupil.size());
    for (std::size_t i = 0; i < pupil.size(); ++i) {
        u[i] = range > 0 ? std::clamp(1.0 - (pupil[i] - min_p) / range, 0.0, 1.0) : 0.5;
    }
    return u;
}

struct GazeDerivedMetrics {
    std::string student_id;
    CourseId course = CourseId::birth;
    std::vector<double> per_slide_pupil_mean;
    std::vector<double> understanding;     // [0,1] per slide
    std::optional<double> isc_engagement;  // [-1,1]
};

/// Long-format pupil means (student_id,slide_id,pupil_mean); every student
/// must cover every slide of the course.
inline std::map<std::string, std::vector<double>> load_pupil_means(const csv::Table& t, CourseId course) {
    std::size_t s_c = t.require("student_id", "pupil");
    std::size_t k_c = t.require("slide_id", "pupil");
    std::size_t v_c = t.require("pupil_mean", "pupil");
    const std::size_t n = slide_count(course);
    std::map<std::string, std::vector<std::optional<double>>> raw;
    for (const auto& row : t.rows()) {
        auto k = parse_integer(row.cells[k_c]);
        auto v = parse_real(row.cells[v_c]);
        if (!k || *k < 1 || *k > static_cast<long long>(n)) throw MappingError("pupil: slide id out of range on line " + std::to_string(row.line));
        if (!v) throw SchemaError("pupil: invalid pupil_mean", row.line);
        auto& slot = raw[std::string(trim(row.cells[s_c]))];
        slot.resize(n);
        slot[static_cast<std::size_t>(*k - 1)] = *v;
    }
    std::map<std::string, std::vector<double>> out;
    for (auto& [sid, slots] : raw) {
        auto& v = out[sid];
        for (std::size_t i = 0; i < n; ++i) {
            if (!slots[i]) throw SchemaError("pupil: student " + sid + " lacks slide " + std::to_string(i + 1));
            v.push_back(*slots[i]);
        }
    }
    return out;
}

inline std::map<std::string, GazeDerivedMetrics> build_metrics(
    CourseId course, const std::map<std::string, std::vector<double>>& pupil,
    const std::map<std::string, std::optional<double>>& engagement) {
    std::map<std::string, GazeDerivedMetrics> out;
    for (const auto& [sid, p] : pupil) {
        GazeDerivedMetrics m;
        m.student_id = sid;
        m.course = course;
        m.per_slide_pupil_mean = p;
        m.understanding = derive_understanding(p);
        if (auto it = engagement.find(sid); it != engagement.end()) m.isc_engagement = it->second;
        out.emplace(sid, std::move(m));
    }
    return out;
}

}  // namespace edutwin::dataset
