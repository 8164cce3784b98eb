#pragma once

// Rule-based stand-in for a language model. It reads the feature blocks
// back out of a rendered persona prompt and answers in the format the
// prompt's instruction asks for, so that end-to-end runs are offline and
// their correlations are known in advance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "edutwin/digest.hpp"
#include "edutwin/gateway.hpp"
#include "edutwin/numeric.hpp"
#include "edutwin/persona.hpp"

namespace edutwin::gateway {

using FactorWeights = std::map<std::pair<std::string, std::string>, double>;

struct GradeRule {
    double base = 4;
    FactorWeights weights;  // (factor, level) -> grade points
};

struct ScoreRule {
    double slope = 0.9;           // applied to the mean history score
    double intercept = 5;
    double no_history_base = 50;  // used when the prompt carries no history
    FactorWeights weights;        // added when demographics are present
};

struct UnderstandingRule {
    double slope = 1.0;  // applied to the mean of prior levels
    double intercept = 0;
    double fallback = 0.5;  // no prior levels in the prompt
};

struct CorrectnessRule {
    double threshold = 0.5;  // correct iff signal >= threshold
    double pre_weight = 0;   // times (pre-test average - 0.5)
    double engagement_weight = 0;
    double no_understanding = 0;  // signal when no levels are given
};

struct MockStudentModel {
    std::uint64_t seed = 0;
    double noise_sigma = 0;  // Gaussian noise on numeric answers, seeded per prompt
    GradeRule grade_rule;
    ScoreRule score_rule;
    UnderstandingRule understanding_rule;
    CorrectnessRule correctness_rule;
};

/// Features recovered from a rendered prompt.
struct PromptFeatures {
    persona::AnswerSchema schema = persona::AnswerSchema::grade;
    std::vector<std::pair<std::string, std::string>> demographics;
    bool has_demographics = false;
    std::vector<double> history;
    std::vector<double> prior_levels;
    bool has_prior_block = false;
    std::vector<double> levels;
    bool has_levels = false;
    std::optional<double> pre_average;
    std::optional<double> engagement;
    std::size_t slide_count = 0;      // slides listed under course materials
    std::size_t question_count = 0;   // lines under the post-test question block(s)
};

namespace detail {

/// Lines ("- " stripped) of the block whose header line starts with `header`.
inline std::optional<std::vector<std::string>> block_lines(std::string_view text, std::string_view header) {
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() : nl + 1;
        if (line.substr(0, header.size()) != header) continue;
        std::vector<std::string> out;
        while (pos < text.size()) {
            nl = text.find('\n', pos);
            auto item = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
            if (item.substr(0, 2) != "- ") break;
            pos = nl == std::string_view::npos ? text.size() : nl + 1;
            if (item != "- none") out.emplace_back(item.substr(2));
        }
        return out;
    }
    return std::nullopt;
}

inline double value_after_colon(const std::string& line) {
    auto c = line.rfind(": ");
    auto v = c == std::string::npos ? std::nullopt : parse_real(std::string_view(line).substr(c + 2));
    if (!v) throw UnrecognizedPromptShape("cannot read a value from line '" + line + "'");
    return *v;
}

}  // namespace detail

inline PromptFeatures read_prompt_features(std::string_view user_text) {
    using namespace persona;
    PromptFeatures f;
    const std::pair<std::string_view, AnswerSchema> phrases[] = {
        {instruction::grade, AnswerSchema::grade},
        {instruction::score, AnswerSchema::score},
        {instruction::understanding, AnswerSchema::understanding},
        {instruction::understanding_vector, AnswerSchema::understanding_vector},
        {instruction::accuracy_average, AnswerSchema::accuracy_average},
        {instruction::correctness_vector, AnswerSchema::correctness_vector},
        {instruction::correctness_single, AnswerSchema::correctness_single},
    };
    bool found = false;
    for (const auto& [phrase, schema] : phrases) {
        if (user_text.find(phrase) != std::string_view::npos) {
            f.schema = schema;
            found = true;
            break;
        }
    }
    if (!found) throw UnrecognizedPromptShape("no recognised answer-format instruction in prompt");

    if (auto lines = detail::block_lines(user_text, block::demographics)) {
        f.has_demographics = true;
        for (const auto& l : *lines) {
            auto c = l.find(": ");
            if (c == std::string::npos) throw UnrecognizedPromptShape("demographic line without ': ': " + l);
            f.demographics.emplace_back(l.substr(0, c), l.substr(c + 2));
        }
    }
    if (auto lines = detail::block_lines(user_text, block::history)) {
        for (const auto& l : *lines) f.history.push_back(detail::value_after_colon(l));
    }
    if (auto lines = detail::block_lines(user_text, block::prior_levels)) {
        f.has_prior_block = true;
        for (const auto& l : *lines) f.prior_levels.push_back(detail::value_after_colon(l));
    }
    if (auto lines = detail::block_lines(user_text, block::levels)) {
        f.has_levels = true;
        for (const auto& l : *lines) f.levels.push_back(detail::value_after_colon(l));
    }
    if (auto lines = detail::block_lines(user_text, block::pretest)) {
        for (const auto& l : *lines) {
            if (l.rfind("average pre-test score: ", 0) == 0) f.pre_average = detail::value_after_colon(l);
        }
    }
    if (auto lines = detail::block_lines(user_text, block::engagement)) {
        for (const auto& l : *lines) f.engagement = detail::value_after_colon(l);
    }
    if (auto lines = detail::block_lines(user_text, block::materials)) f.slide_count = lines->size();
    if (auto lines = detail::block_lines(user_text, block::questions)) f.question_count = lines->size();
    if (auto lines = detail::block_lines(user_text, block::question)) f.question_count = lines->size();
    return f;
}

/// Evaluates the rules on a prompt and formats the answer text.
inline std::string mock_answer(const MockStudentModel& model, const ModelRequest& request) {
    using persona::AnswerSchema;
    const PromptFeatures f = read_prompt_features(request.user_text);

    std::mt19937_64 rng(model.seed ^ std::stoull(sha256_hex(request.user_text).substr(0, 16), nullptr, 16) ^
                        (static_cast<std::uint64_t>(request.run_index) * 0x9E3779B97F4A7C15ULL));
    auto noise = [&](double scale) {
        if (model.noise_sigma <= 0) return 0.0;
        return std::normal_distribution<double>(0.0, model.noise_sigma * scale)(rng);
    };
    auto weighted = [&](const FactorWeights& w) {
        double s = 0;
        for (const auto& d : f.demographics) {
            if (auto it = w.find(d); it != w.end()) s += it->second;
        }
        return s;
    };
    auto mean_of = [](const std::vector<double>& v) { return v.empty() ? 0.0 : mean(v); };

    switch (f.schema) {
        case AnswerSchema::grade: {
            double g = model.grade_rule.base + weighted(model.grade_rule.weights) + noise(1.0);
            int grade = static_cast<int>(std::clamp<long>(std::lround(g), 0, 7));
            static constexpr std::string_view labels[] = {"Fail", "DD", "DC", "CC", "CB", "BB", "BA", "AA"};
            return std::to_string(grade) + ": " + std::string(labels[grade]);
        }
        case AnswerSchema::score: {
            const auto& r = model.score_rule;
            double s = f.history.empty() ? r.no_history_base : r.slope * mean_of(f.history) + r.intercept;
            if (f.has_demographics) s += weighted(r.weights);
            s = std::clamp(s + noise(10.0), 0.0, 100.0);
            return format_shortest(s);
        }
        case AnswerSchema::understanding: {
            const auto& r = model.understanding_rule;
            double u = f.prior_levels.empty() ? r.fallback : r.slope * mean_of(f.prior_levels) + r.intercept;
            return format_shortest(std::clamp(u + noise(0.1), 0.0, 1.0));
        }
        case AnswerSchema::understanding_vector: {
            if (f.slide_count == 0) throw UnrecognizedPromptShape("vector answer requested but no slides listed");
            std::string out;
            for (std::size_t i = 0; i < f.slide_count; ++i) {
                double u = std::clamp(model.understanding_rule.fallback + noise(0.1), 0.0, 1.0);
                out += (i ? ", " : "") + format_shortest(u);
            }
            return out;
        }
        default: break;
    }

    const auto& r = model.correctness_rule;
    double signal = f.levels.empty() ? r.no_understanding : mean_of(f.levels);
    if (f.pre_average) signal += r.pre_weight * (*f.pre_average - 0.5);
    if (f.engagement) signal += r.engagement_weight * *f.engagement;
    signal += noise(0.1);
    switch (f.schema) {
        case AnswerSchema::accuracy_average:
            return format_shortest(std::clamp(signal, 0.0, 1.0));
        case AnswerSchema::correctness_vector: {
            if (f.question_count == 0) throw UnrecognizedPromptShape("vector answer requested but no questions listed");
            std::string out;
            for (std::size_t i = 0; i < f.question_count; ++i) out += std::string(i ? ", " : "") + (signal >= r.threshold ? "1" : "0");
            return out;
        }
        default:
            return signal >= r.threshold ? "correct" : "incorrect";
    }
}

class MockBackend final : public Backend {
public:
    explicit MockBackend(MockStudentModel model) : model_(std::move(model)) {}
    std::string complete(const ModelRequest& request) override { return mock_answer(model_, request); }
    [[nodiscard]] BackendTag tag() const override { return BackendTag::mock; }
    [[nodiscard]] const MockStudentModel& model() const noexcept { return model_; }

private:
    MockStudentModel model_;
};

/// The mock as a direct call, bypassing cache and retries.
inline ModelResponse mock_complete(const ModelRequest& request, const MockStudentModel& model) {
    ModelResponse r;
    r.raw_text = mock_answer(model, request);
    r.backend_tag = BackendTag::mock;
    r.attempts = 1;
    r.key = request.cache_key();
    return r;
}

}  // namespace edutwin::gateway
