#pragma once

// Persona prompt rendering for every simulation configuration. Feature blocks
// are rendered in a fixed order and format so that prompts are byte-stable,
// ablations are checkable by substring containment, and the mock backend
// can read features back out of the text.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "edutwin/dataset.hpp"
#include "edutwin/digest.hpp"
#include "edutwin/errors.hpp"
#include "edutwin/numeric.hpp"
#include "edutwin/template.hpp"

namespace edutwin::persona {

using dataset::CourseAssets;
using dataset::CourseMaterial;
using dataset::GazeDerivedMetrics;
using dataset::ScoreSheet;
using dataset::StudentRecord;

// ---------------------------------------------------------------------------
// Configuration space.

enum class Exp2Kind { i, ii, iii, iv, v, vi, vii, viii };
enum class Exp3UKind { a, b, c };
enum class Exp3OKind { k1a, k1b, k1c, k2a, k2b, k2c, k3a, k3b, k3c };

inline constexpr std::array<std::string_view, 8> kExp2Names{"i", "ii", "iii", "iv", "v", "vi", "vii", "viii"};
inline constexpr std::array<std::string_view, 3> kExp3UNames{"a", "b", "c"};
inline constexpr std::array<std::string_view, 9> kExp3ONames{"1a", "1b", "1c", "2a", "2b", "2c", "3a", "3b", "3c"};

inline std::string_view to_string(Exp2Kind k) { return kExp2Names[static_cast<std::size_t>(k)]; }
inline std::string_view to_string(Exp3UKind k) { return kExp3UNames[static_cast<std::size_t>(k)]; }
inline std::string_view to_string(Exp3OKind k) { return kExp3ONames[static_cast<std::size_t>(k)]; }

template <typename Kind, std::size_t N>
std::optional<Kind> parse_kind(std::string_view s, const std::array<std::string_view, N>& names) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == s) return static_cast<Kind>(i);
    }
    return std::nullopt;
}

inline std::optional<Exp2Kind> parse_exp2_kind(std::string_view s) { return parse_kind<Exp2Kind>(s, kExp2Names); }
inline std::optional<Exp3UKind> parse_exp3u_kind(std::string_view s) { return parse_kind<Exp3UKind>(s, kExp3UNames); }
inline std::optional<Exp3OKind> parse_exp3o_kind(std::string_view s) { return parse_kind<Exp3OKind>(s, kExp3ONames); }

/// 1..5 for kinds iv..viii, 0 otherwise.
inline int recent_history_window(Exp2Kind k) {
    int idx = static_cast<int>(k);
    return idx >= static_cast<int>(Exp2Kind::iv) ? idx - static_cast<int>(Exp2Kind::iii) : 0;
}

inline int outcome_level(Exp3OKind k) { return static_cast<int>(k) / 3 + 1; }   // 1, 2, 3
inline int outcome_inputs(Exp3OKind k) { return static_cast<int>(k) % 3; }      // 0=a, 1=b, 2=c

struct Exp1Variant {
    bool operator==(const Exp1Variant&) const = default;
};
struct Exp2Variant {
    Exp2Kind kind;
    bool operator==(const Exp2Variant&) const = default;
};
struct Exp3UVariant {
    Exp3UKind kind;
    std::optional<int> slide;  // required for b/c, absent for a
    bool operator==(const Exp3UVariant&) const = default;
};
struct Exp3OVariant {
    Exp3OKind kind;
    std::optional<std::string> question_id;  // required for 3x, absent otherwise
    bool operator==(const Exp3OVariant&) const = default;
};

using Variant = std::variant<Exp1Variant, Exp2Variant, Exp3UVariant, Exp3OVariant>;

struct ExperimentConfig {
    Variant variant;
    double temperature = 0;
    int run_index = 0;

    static ExperimentConfig exp1() { return {Exp1Variant{}}; }
    static ExperimentConfig exp2(Exp2Kind k) { return {Exp2Variant{k}}; }
    static ExperimentConfig exp3u(Exp3UKind k, std::optional<int> slide = std::nullopt) {
        if ((k == Exp3UKind::a) == slide.has_value()) {
            throw ValueError("understanding kind a covers all slides; kinds b and c need a slide index");
        }
        return {Exp3UVariant{k, slide}};
    }
    static ExperimentConfig exp3o(Exp3OKind k, std::optional<std::string> question = std::nullopt) {
        if ((outcome_level(k) == 3) != question.has_value()) {
            throw ValueError("outcome kinds 3a-3c need a question id; other kinds must not carry one");
        }
        return {Exp3OVariant{k, std::move(question)}};
    }

    /// Stable text label: exp1, exp2:iii, exp3u:a, exp3u:c:4, exp3o:2b, exp3o:3c:<question>.
    [[nodiscard]] std::string label() const {
        return std::visit(
            [](const auto& v) -> std::string {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Exp1Variant>) {
                    return "exp1";
                } else if constexpr (std::is_same_v<T, Exp2Variant>) {
                    return "exp2:" + std::string(to_string(v.kind));
                } else if constexpr (std::is_same_v<T, Exp3UVariant>) {
                    std::string s = "exp3u:" + std::string(to_string(v.kind));
                    if (v.slide) s += ":" + std::to_string(*v.slide);
                    return s;
                } else {
                    std::string s = "exp3o:" + std::string(to_string(v.kind));
                    if (v.question_id) s += ":" + *v.question_id;
                    return s;
                }
            },
            variant);
    }

    /// Kind name alone (i..viii, a..c, 1a..3c; "exp1" for the grade study).
    [[nodiscard]] std::string kind_name() const {
        return std::visit(
            [](const auto& v) -> std::string {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, Exp1Variant>) {
                    return "exp1";
                } else {
                    return std::string(to_string(v.kind));
                }
            },
            variant);
    }

    bool operator==(const ExperimentConfig&) const = default;
};

inline std::optional<ExperimentConfig> parse_config_label(std::string_view label) {
    auto colon = label.find(':');
    auto head = label.substr(0, colon);
    if (head == "exp1") return colon == std::string_view::npos ? std::optional(ExperimentConfig::exp1()) : std::nullopt;
    if (colon == std::string_view::npos) return std::nullopt;
    auto rest = label.substr(colon + 1);
    auto colon2 = rest.find(':');
    auto kind = rest.substr(0, colon2);
    std::optional<std::string_view> tail;
    if (colon2 != std::string_view::npos) tail = rest.substr(colon2 + 1);
    try {
        if (head == "exp2") {
            auto k = parse_exp2_kind(kind);
            if (!k || tail) return std::nullopt;
            return ExperimentConfig::exp2(*k);
        }
        if (head == "exp3u") {
            auto k = parse_exp3u_kind(kind);
            if (!k) return std::nullopt;
            std::optional<int> slide;
            if (tail) {
                auto v = parse_integer(*tail);
                if (!v) return std::nullopt;
                slide = static_cast<int>(*v);
            }
            return ExperimentConfig::exp3u(*k, slide);
        }
        if (head == "exp3o") {
            auto k = parse_exp3o_kind(kind);
            if (!k) return std::nullopt;
            return ExperimentConfig::exp3o(*k, tail ? std::optional<std::string>(std::string(*tail)) : std::nullopt);
        }
    } catch (const ValueError&) {
        return std::nullopt;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rendered prompts.

enum class AnswerSchema {
    grade,
    score,
    understanding,
    understanding_vector,
    accuracy_average,
    correctness_vector,
    correctness_single
};

inline constexpr std::array<std::string_view, 7> kSchemaNames{
    "grade", "score", "understanding", "understanding_vector", "accuracy_average", "correctness_vector",
    "correctness_single"};

inline std::string_view to_string(AnswerSchema s) { return kSchemaNames[static_cast<std::size_t>(s)]; }
inline std::optional<AnswerSchema> parse_schema(std::string_view s) { return parse_kind<AnswerSchema>(s, kSchemaNames); }

/// The answer schema is a function of the configuration variant alone.
inline AnswerSchema schema_for(const ExperimentConfig& cfg) {
    return std::visit(
        [](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Exp1Variant>) {
                return AnswerSchema::grade;
            } else if constexpr (std::is_same_v<T, Exp2Variant>) {
                return AnswerSchema::score;
            } else if constexpr (std::is_same_v<T, Exp3UVariant>) {
                return v.kind == Exp3UKind::a ? AnswerSchema::understanding_vector : AnswerSchema::understanding;
            } else {
                switch (outcome_level(v.kind)) {
                    case 1: return AnswerSchema::accuracy_average;
                    case 2: return AnswerSchema::correctness_vector;
                    default: return AnswerSchema::correctness_single;
                }
            }
        },
        cfg.variant);
}

struct PromptBundle {
    std::string system_text;
    std::string user_text;
    AnswerSchema expected = AnswerSchema::grade;
    std::size_t expected_count = 1;  // vector length for *_vector schemas
    ExperimentConfig config;
    std::string content_digest;
};

inline constexpr std::string_view kGradeScale = "0: Fail, 1: DD, 2: DC, 3: CC, 4: CB, 5: BB, 6: BA, 7: AA";

// Header lines of the feature blocks. The mock backend keys on these.
namespace block {
inline constexpr std::string_view demographics = "Demographics:";
inline constexpr std::string_view history = "Past assessment scores (oldest first):";
inline constexpr std::string_view materials = "Course materials";  // followed by " (<course>):"
inline constexpr std::string_view related_materials = "Course materials related to the question:";
inline constexpr std::string_view current_slide = "Current slide:";
inline constexpr std::string_view prior_levels = "Past understanding levels (0 = lowest, 1 = highest):";
inline constexpr std::string_view levels = "Understanding levels per slide (0 = lowest, 1 = highest):";
inline constexpr std::string_view pretest = "Pre-test:";
inline constexpr std::string_view engagement = "Course engagement (gaze intersubject correlation, -1 to 1):";
inline constexpr std::string_view questions = "Post-test questions:";
inline constexpr std::string_view question = "Post-test question:";
}  // namespace block

// Leading phrases of the answer-format instruction, one per schema.
namespace instruction {
inline constexpr std::string_view grade = "Answer format: predict your final grade.";
inline constexpr std::string_view score = "Answer format: predict your final exam score.";
inline constexpr std::string_view understanding = "Answer format: predict your understanding level of the current slide.";
inline constexpr std::string_view understanding_vector = "Answer format: predict your understanding level of every slide.";
inline constexpr std::string_view accuracy_average = "Answer format: predict your average accuracy over all post-test questions.";
inline constexpr std::string_view correctness_vector = "Answer format: predict whether you answer each post-test question correctly.";
inline constexpr std::string_view correctness_single = "Answer format: predict whether you answer this post-test question correctly.";
}  // namespace instruction

inline std::string format_score(double s) { return std::to_string(std::lround(s)); }
inline std::string format_level(double u) { return format_fixed(u, 2); }

namespace detail {

using Blocks = std::map<std::string, std::string>;

inline Blocks empty_blocks() {
    Blocks b;
    for (const auto& n : known_placeholders()) b[n] = "";
    return b;
}

inline std::string section(std::string_view header, const std::vector<std::string>& lines) {
    std::string s(header);
    s += '\n';
    if (lines.empty()) s += "- none\n";
    for (const auto& l : lines) s += "- " + l + "\n";
    s += '\n';
    return s;
}

inline std::string demographics(const StudentRecord& r) {
    std::vector<std::string> lines;
    for (const auto& f : r.factors) lines.push_back(f.name + ": " + f.level);
    return section(block::demographics, lines);
}

inline std::string history(std::span<const dataset::Assessment> h) {
    std::vector<std::string> lines;
    for (const auto& a : h) lines.push_back("assessment " + std::to_string(a.index) + ": " + format_score(a.score));
    return section(block::history, lines);
}

inline std::string slide_line(const dataset::Slide& s) { return "slide " + std::to_string(s.slide_id) + ": " + s.text; }

inline std::string materials(const CourseMaterial& m) {
    std::vector<std::string> lines;
    for (const auto& s : m.slides) lines.push_back(slide_line(s));
    return section(std::string(block::materials) + " (" + std::string(dataset::to_string(m.course)) + "):", lines);
}

inline std::string levels(std::string_view header, std::span<const int> slides, std::span<const double> u) {
    std::vector<std::string> lines;
    for (int k : slides) lines.push_back("slide " + std::to_string(k) + ": " + format_level(u[static_cast<std::size_t>(k - 1)]));
    return section(header, lines);
}

inline std::string item_line(const dataset::TestItem& q) {
    std::string s = q.question_id + ": " + q.text;
    if (!q.options.empty()) {
        s += " (options: ";
        for (std::size_t i = 0; i < q.options.size(); ++i) s += (i ? " | " : "") + q.options[i];
        s += ")";
    }
    return s;
}

inline std::string finish(const TemplateSet& t, const std::string& user_tmpl, Blocks blocks, AnswerSchema schema,
                          std::size_t count, ExperimentConfig cfg, PromptBundle& out) {
    out.system_text = render_template(t.system, blocks);
    out.user_text = render_template(user_tmpl, blocks);
    out.expected = schema;
    out.expected_count = count;
    out.config = std::move(cfg);
    nlohmann::json canon = nlohmann::json::array(
        {out.system_text, out.user_text, std::string(to_string(schema)), count, out.config.label()});
    out.content_digest = sha256_hex(canon.dump());
    return out.content_digest;
}

}  // namespace detail

inline PromptBundle build_exp1_prompt(const StudentRecord& record, const TemplateSet& t = default_templates()) {
    if (record.factors.empty()) throw EmptyProfile("student " + record.student_id + " has no demographic factors");
    auto blocks = detail::empty_blocks();
    blocks["demographics"] = detail::demographics(record);
    blocks["instruction"] = std::string(instruction::grade) + " Reply with exactly one grade from the scale " +
                            std::string(kGradeScale) + ", written as \"<number>: <label>\", then explain briefly.";
    PromptBundle b;
    detail::finish(t, t.exp1, std::move(blocks), AnswerSchema::grade, 1, ExperimentConfig::exp1(), b);
    return b;
}

inline PromptBundle build_exp2_prompt(const StudentRecord& record, Exp2Kind kind,
                                      const TemplateSet& t = default_templates()) {
    const bool wants_demo = kind == Exp2Kind::i || kind == Exp2Kind::iii;
    const bool wants_history = kind != Exp2Kind::i;
    if (wants_demo && record.factors.empty()) throw EmptyProfile("student " + record.student_id + " has no demographic factors");
    auto blocks = detail::empty_blocks();
    if (wants_demo) blocks["demographics"] = detail::demographics(record);
    if (wants_history) {
        if (!record.assessments || record.assessments->empty()) {
            throw InsufficientHistory("kind " + std::string(to_string(kind)) + " needs assessment history for student " +
                                      record.student_id);
        }
        std::span<const dataset::Assessment> h(*record.assessments);
        if (int w = recent_history_window(kind); w > 0) {
            if (h.size() < static_cast<std::size_t>(w)) {
                throw InsufficientHistory("kind " + std::string(to_string(kind)) + " needs " + std::to_string(w) +
                                          " past assessments, student " + record.student_id + " has " +
                                          std::to_string(h.size()));
            }
            h = h.last(static_cast<std::size_t>(w));
        }
        blocks["history"] = detail::history(h);
    }
    blocks["instruction"] = std::string(instruction::score) +
                            " Reply with a single integer from 0 to 100, then explain briefly.";
    PromptBundle b;
    detail::finish(t, t.exp2, std::move(blocks), AnswerSchema::score, 1, ExperimentConfig::exp2(kind), b);
    return b;
}

/// `prior_levels` holds understanding for slides 1..k-1 (extra entries are
/// ignored); needed only for kind c.
inline PromptBundle build_exp3_understanding_prompt(const StudentRecord& record, const CourseMaterial& course,
                                                    Exp3UKind kind, std::optional<int> slide,
                                                    std::optional<std::span<const double>> prior_levels,
                                                    const TemplateSet& t = default_templates()) {
    auto cfg = ExperimentConfig::exp3u(kind, slide);
    const int n = static_cast<int>(course.slides.size());
    if (slide && (*slide < 1 || *slide > n)) {
        throw ValueError("slide " + std::to_string(*slide) + " outside 1.." + std::to_string(n));
    }
    auto blocks = detail::empty_blocks();
    blocks["demographics"] = detail::demographics(record);
    blocks["materials"] = detail::materials(course);
    AnswerSchema schema = AnswerSchema::understanding;
    std::size_t count = 1;
    if (kind == Exp3UKind::a) {
        schema = AnswerSchema::understanding_vector;
        count = static_cast<std::size_t>(n);
        blocks["instruction"] = std::string(instruction::understanding_vector) + " Reply with " + std::to_string(n) +
                                " numbers from 0 to 1, one per slide in slide order, separated by commas, then "
                                "explain briefly.";
    } else {
        blocks["current_slide"] = detail::section(block::current_slide, {detail::slide_line(course.slide(*slide))});
        if (kind == Exp3UKind::c) {
            const auto needed = static_cast<std::size_t>(*slide - 1);
            if (!prior_levels || prior_levels->size() < needed) {
                throw MissingPriorLevels("kind c at slide " + std::to_string(*slide) + " needs understanding levels for " +
                                         std::to_string(needed) + " earlier slides (student " + record.student_id + ")");
            }
            std::vector<int> earlier;
            for (int k = 1; k < *slide; ++k) earlier.push_back(k);
            blocks["understanding"] = detail::levels(block::prior_levels, earlier, *prior_levels);
        }
        blocks["instruction"] = std::string(instruction::understanding) + " This is slide " + std::to_string(*slide) +
                                ". Reply with a single number from 0 to 1, then explain briefly.";
    }
    PromptBundle b;
    detail::finish(t, t.exp3_understanding, std::move(blocks), schema, count, std::move(cfg), b);
    return b;
}

inline PromptBundle build_exp3_understanding_prompt(const StudentRecord& record, const CourseMaterial& course,
                                                    const GazeDerivedMetrics& metrics, Exp3UKind kind,
                                                    std::optional<int> slide,
                                                    const TemplateSet& t = default_templates()) {
    return build_exp3_understanding_prompt(record, course, kind, slide, std::span<const double>(metrics.understanding), t);
}

/// Everything an outcome prompt may draw on for one student.
struct OutcomeContext {
    const StudentRecord& record;
    const CourseAssets& assets;
    const GazeDerivedMetrics* metrics = nullptr;
    const ScoreSheet* scoresheet = nullptr;
};

inline PromptBundle build_exp3_outcome_prompt(const OutcomeContext& ctx, Exp3OKind kind,
                                              std::optional<std::string> question_id = std::nullopt,
                                              const TemplateSet& t = default_templates()) {
    auto cfg = ExperimentConfig::exp3o(kind, question_id);
    const int level = outcome_level(kind);
    const int inputs = outcome_inputs(kind);
    const auto& material = ctx.assets.material;
    const auto post = ctx.assets.post_items();
    const std::string& sid = ctx.record.student_id;

    const bool needs_understanding = level == 3 || inputs >= 1;
    const bool needs_pretest = level == 3 ? inputs >= 1 : inputs >= 2;
    const bool needs_engagement = level == 3 && inputs == 2;

    if (needs_understanding && (!ctx.metrics || ctx.metrics->understanding.size() != material.slides.size())) {
        throw MissingInput("understanding", "no per-slide understanding levels for student " + sid);
    }
    if (needs_pretest && (!ctx.scoresheet || !ctx.scoresheet->pre_test_average)) {
        throw MissingInput("pretest", "no pre-test average for student " + sid);
    }
    if (needs_engagement && (!ctx.metrics || !ctx.metrics->isc_engagement)) {
        throw MissingInput("engagement", "no ISC engagement for student " + sid);
    }

    auto blocks = detail::empty_blocks();
    blocks["demographics"] = detail::demographics(ctx.record);

    if (level < 3) {
        blocks["materials"] = detail::materials(material);
        if (needs_understanding) {
            std::vector<int> all;
            for (const auto& s : material.slides) all.push_back(s.slide_id);
            blocks["understanding"] = detail::levels(block::levels, all, ctx.metrics->understanding);
        }
        std::vector<std::string> lines;
        for (const auto* q : post) lines.push_back(detail::item_line(*q));
        blocks["questions"] = detail::section(block::questions, lines);
    } else {
        const auto* q = ctx.assets.find(*question_id);
        if (!q || q->kind != dataset::ItemKind::post) throw MappingError("unknown post-test question '" + *question_id + "'");
        std::vector<std::string> lines;
        for (int k : q->related_slide_ids) lines.push_back(detail::slide_line(material.slide(k)));
        blocks["materials"] = detail::section(block::related_materials, lines);
        blocks["understanding"] = detail::levels(block::levels, q->related_slide_ids, ctx.metrics->understanding);
        blocks["questions"] = detail::section(block::question, {detail::item_line(*q)});
    }
    if (needs_pretest) {
        std::vector<std::string> lines;
        for (const auto* p : ctx.assets.pre_items()) lines.push_back(detail::item_line(*p));
        lines.push_back("average pre-test score: " + format_level(*ctx.scoresheet->pre_test_average));
        blocks["pretest"] = detail::section(block::pretest, lines);
    }
    if (needs_engagement) {
        blocks["engagement"] = detail::section(block::engagement, {"engagement: " + format_level(*ctx.metrics->isc_engagement)});
    }

    AnswerSchema schema = schema_for(cfg);
    std::size_t count = 1;
    switch (schema) {
        case AnswerSchema::accuracy_average:
            blocks["instruction"] = std::string(instruction::accuracy_average) +
                                    " Reply with a single number from 0 to 1, then explain briefly.";
            break;
        case AnswerSchema::correctness_vector:
            count = post.size();
            blocks["instruction"] = std::string(instruction::correctness_vector) + " Reply with " +
                                    std::to_string(post.size()) +
                                    " values in question order, 1 for correct and 0 for incorrect, separated by "
                                    "commas, then explain briefly.";
            break;
        default:
            blocks["instruction"] = std::string(instruction::correctness_single) +
                                    " Reply with exactly one word, correct or incorrect, then explain briefly.";
            break;
    }
    PromptBundle b;
    detail::finish(t, t.exp3_outcome, std::move(blocks), schema, count, std::move(cfg), b);
    return b;
}

}  // namespace edutwin::persona
