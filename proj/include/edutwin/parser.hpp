#pragma once

// Free-text model answers -> typed outcomes. Every parse is total: it either
// returns an in-range payload or throws Unparseable.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "edutwin/digest.hpp"
#include "edutwin/errors.hpp"
#include "edutwin/gateway.hpp"
#include "edutwin/numeric.hpp"
#include "edutwin/persona.hpp"

namespace edutwin::parser {

using persona::AnswerSchema;

struct Flags {
    bool clamped = false;
    bool midpoint_of_range = false;
    bool retry_used = false;

    [[nodiscard]] std::string to_string() const {
        std::string s;
        auto add = [&](bool on, const char* name) {
            if (!on) return;
            if (!s.empty()) s += '|';
            s += name;
        };
        add(clamped, "clamped");
        add(midpoint_of_range, "midpoint_of_range");
        add(retry_used, "retry_used");
        return s;
    }
    bool operator==(const Flags&) const = default;
};

inline Flags parse_flags(std::string_view s) {
    Flags f;
    while (!s.empty()) {
        auto bar = s.find('|');
        auto tok = s.substr(0, bar);
        if (tok == "clamped") f.clamped = true;
        else if (tok == "midpoint_of_range") f.midpoint_of_range = true;
        else if (tok == "retry_used") f.retry_used = true;
        if (bar == std::string_view::npos) break;
        s.remove_prefix(bar + 1);
    }
    return f;
}

/// int: grade 0-7; double: score [0,100] or level/accuracy [0,1];
/// vector<double>: per-slide levels; bool / vector<bool>: correctness.
using Payload = std::variant<int, double, std::vector<double>, bool, std::vector<bool>>;

struct SimulationOutcome {
    AnswerSchema kind = AnswerSchema::grade;
    Payload value;
    Flags flags;
    std::string raw_digest;  // SHA-256 of the response text it came from

    /// Scalar view used by the statistics: grade, score, level, accuracy,
    /// 0/1 for single correctness, fraction correct for vectors, mean level
    /// for level vectors.
    [[nodiscard]] double scalar() const {
        return std::visit(
            [](const auto& v) -> double {
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, int>) {
                    return v;
                } else if constexpr (std::is_same_v<T, double>) {
                    return v;
                } else if constexpr (std::is_same_v<T, bool>) {
                    return v ? 1.0 : 0.0;
                } else if constexpr (std::is_same_v<T, std::vector<bool>>) {
                    if (v.empty()) return 0.0;
                    return static_cast<double>(std::count(v.begin(), v.end(), true)) / static_cast<double>(v.size());
                } else {
                    return v.empty() ? 0.0 : mean(v);
                }
            },
            value);
    }
};

// ---------------------------------------------------------------------------
// Tokenisation.

namespace detail {

struct Token {
    enum Kind { number, word } kind = word;
    std::string text;  // words lower-cased
    std::string original;
    double value = 0;
    bool integer = false;
    bool percent = false;
    bool enumerator = false;  // "3:" / "3)" / "3." at line start, or "slide 3"
    std::size_t begin = 0, end = 0;
};

inline bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

inline std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    bool line_start = true;
    while (i < s.size()) {
        char c = s[i];
        if (c == '\n') {
            line_start = true;
            ++i;
            continue;
        }
        const bool sign = c == '-' && i + 1 < s.size() && is_digit(s[i + 1]) &&
                          (i == 0 || std::string_view(" \t\n(:=[").find(s[i - 1]) != std::string_view::npos);
        if (sign || is_digit(c) || is_alpha(c)) {
            std::size_t b = i;
            if (sign) ++i;
            while (i < s.size() && (is_digit(s[i]) || is_alpha(s[i]) || s[i] == '_' ||
                                    (s[i] == '.' && i + 1 < s.size() && is_digit(s[i + 1]) && i > b && is_digit(s[i - 1])))) {
                ++i;
            }
            Token t;
            t.begin = b;
            t.end = i;
            t.original = std::string(s.substr(b, i - b));
            bool numeric = std::all_of(t.original.begin() + (sign ? 1 : 0), t.original.end(),
                                       [](char ch) { return is_digit(ch) || ch == '.'; });
            if (numeric) {
                t.kind = Token::number;
                t.integer = t.original.find('.') == std::string::npos;
                auto digits = std::string_view(t.original);
                t.value = std::strtod(std::string(digits).c_str(), nullptr);
                if (!std::isfinite(t.value)) t.value = t.value > 0 ? 1e300 : -1e300;
                std::size_t j = i;
                while (j < s.size() && s[j] == ' ') ++j;
                if (j < s.size() && s[j] == '%') {
                    t.percent = true;
                    i = j + 1;
                }
                if (line_start && t.integer && !t.percent && i < s.size() &&
                    (s[i] == ':' || s[i] == ')' || (s[i] == '.' && i + 2 < s.size() && s[i + 1] == ' '))) {
                    t.enumerator = true;
                }
                if (!out.empty() && out.back().kind == Token::word && out.back().end + 1 >= b &&
                    (out.back().text == "slide" || out.back().text == "question" || out.back().text == "item" ||
                     out.back().text == "assessment" || out.back().text == "q")) {
                    t.enumerator = true;
                }
            } else {
                t.kind = Token::word;
                t.text = t.original;
                std::transform(t.text.begin(), t.text.end(), t.text.begin(),
                               [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
                // "70 percent" reads like "70%"
                if (t.text == "percent" && !out.empty() && out.back().kind == Token::number && !out.back().percent &&
                    std::all_of(s.begin() + static_cast<std::ptrdiff_t>(out.back().end), s.begin() + static_cast<std::ptrdiff_t>(b),
                                [](char ch) { return ch == ' '; })) {
                    out.back().percent = true;
                    out.back().enumerator = false;
                }
            }
            out.push_back(std::move(t));
            line_start = false;
            continue;
        }
        if (c != ' ' && c != '\t' && c != '\r' && c != '-' && c != '*' && c != '#') line_start = false;
        ++i;
    }
    return out;
}

struct Scalar {
    double value = 0;
    Flags flags;
};

/// First numeric token, collapsing "a-b", "a to b", "a and b" ranges to the
/// midpoint. Enumerators are skipped.
inline std::optional<std::pair<Scalar, bool>> first_number(std::string_view text) {
    auto toks = tokenize(text);
    for (std::size_t k = 0; k < toks.size(); ++k) {
        const auto& t = toks[k];
        if (t.kind != Token::number || t.enumerator) continue;
        Scalar s{t.value, {}};
        bool percent = t.percent;
        if (k + 1 < toks.size() && toks[k + 1].kind == Token::number) {
            auto gap = trim(text.substr(t.end, toks[k + 1].begin - t.end));
            if (gap == "-" || gap == "\xE2\x80\x93" || gap == "~") {
                s.value = (t.value + toks[k + 1].value) / 2;
                s.flags.midpoint_of_range = true;
                percent = percent || toks[k + 1].percent;
            }
        } else if (k + 2 < toks.size() && toks[k + 1].kind == Token::word && toks[k + 2].kind == Token::number &&
                   (toks[k + 1].text == "and" || toks[k + 1].text == "to")) {
            auto gap1 = trim(text.substr(t.end, toks[k + 1].begin - t.end));
            auto gap2 = trim(text.substr(toks[k + 1].end, toks[k + 2].begin - toks[k + 1].end));
            if ((gap1.empty() || gap1 == "%") && gap2.empty()) {
                s.value = (t.value + toks[k + 2].value) / 2;
                s.flags.midpoint_of_range = true;
                percent = percent || toks[k + 2].percent;
            }
        }
        return std::pair{s, percent};
    }
    return std::nullopt;
}

inline Scalar clamp_into(Scalar s, double lo, double hi) {
    if (s.value < lo || s.value > hi) {
        s.value = std::clamp(s.value, lo, hi);
        s.flags.clamped = true;
    }
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scalar parsers.

/// First digit 0-7 or scale label (Fail, DD, DC, CC, CB, BB, BA, AA) wins.
inline int parse_grade(std::string_view text) {
    static constexpr std::string_view labels[] = {"Fail", "DD", "DC", "CC", "CB", "BB", "BA", "AA"};
    auto label_of = [&](const detail::Token& t) {
        for (int g = 0; g < 8; ++g) {
            if (g == 0 ? t.text == "fail" : t.original == labels[g]) return g;
        }
        return -1;
    };
    auto toks = detail::tokenize(text);
    for (std::size_t k = 0; k < toks.size(); ++k) {
        const auto& t = toks[k];
        if (t.kind == detail::Token::number) {
            // "5: BB" keeps the digit; an enumerator like "1." before prose is skipped
            if (t.enumerator && !(k + 1 < toks.size() && label_of(toks[k + 1]) >= 0)) continue;
            if (!t.integer || t.percent || t.value < 0 || t.value > 7) {
                throw Unparseable("grade must be an integer on the 0-7 scale, got '" + t.original + "'");
            }
            return static_cast<int>(t.value);
        }
        if (int g = label_of(t); g >= 0) return g;
    }
    throw Unparseable("no grade digit or label found");
}

using detail::Scalar;

/// First number on the 0-100 scale; out-of-range values clamp.
inline Scalar parse_score(std::string_view text) {
    auto n = detail::first_number(text);
    if (!n) throw Unparseable("no numeric score found");
    return detail::clamp_into(n->first, 0, 100);
}

/// First number on the 0-1 scale; "73%" reads as 0.73; out-of-range clamps.
inline Scalar parse_unit_scalar(std::string_view text) {
    auto n = detail::first_number(text);
    if (!n) throw Unparseable("no numeric value found");
    Scalar s = n->first;
    if (n->second) s.value /= 100.0;
    return detail::clamp_into(s, 0, 1);
}

struct UnitVector {
    std::vector<double> values;
    Flags flags;
};

/// Exactly `n` numbers in order, each read like parse_unit_scalar.
inline UnitVector parse_unit_vector(std::string_view text, std::size_t n) {
    UnitVector out;
    for (const auto& t : detail::tokenize(text)) {
        if (t.kind != detail::Token::number || t.enumerator) continue;
        Scalar s{t.percent ? t.value / 100.0 : t.value, {}};
        s = detail::clamp_into(s, 0, 1);
        out.flags.clamped = out.flags.clamped || s.flags.clamped;
        out.values.push_back(s.value);
    }
    if (out.values.size() != n) throw LengthMismatch(n, out.values.size());
    return out;
}

inline Scalar parse_understanding(std::string_view text) { return parse_unit_scalar(text); }

inline UnitVector parse_understanding(std::string_view text, std::size_t n_slides) {
    return parse_unit_vector(text, n_slides);
}

namespace detail {

/// Correctness verdicts in reading order. A negator ("not", "never", "n't")
/// flips the next verdict word within three tokens.
inline std::vector<bool> verdicts(std::string_view text) {
    static const std::vector<std::string_view> yes{"correct", "correctly", "yes", "true", "right"};
    static const std::vector<std::string_view> no{"incorrect", "incorrectly", "no", "false", "wrong"};
    auto in = [](const std::vector<std::string_view>& set, const std::string& w) {
        return std::find(set.begin(), set.end(), w) != set.end();
    };
    auto verdict_word = [&](const Token& t) { return t.kind == Token::word && (in(yes, t.text) || in(no, t.text)); };
    std::vector<bool> out;
    auto toks = tokenize(text);
    std::size_t negate_until = 0;  // token index bound of a pending negation
    for (std::size_t k = 0; k < toks.size(); ++k) {
        const auto& t = toks[k];
        if (t.kind == Token::number) {
            negate_until = 0;
            if (t.enumerator || !t.integer || t.percent) continue;
            if (t.original != "1" && t.original != "0") continue;
            // "1: correct" / "1) wrong" label the verdict that follows
            if (k + 1 < toks.size() && verdict_word(toks[k + 1])) {
                auto gap = text.substr(t.end, toks[k + 1].begin - t.end);
                if (gap.find_first_of(":)") != std::string_view::npos) continue;
            }
            out.push_back(t.original == "1");
            continue;
        }
        const bool negator = t.text == "not" || t.text == "never" ||
                             (t.text == "t" && k > 0 && toks[k - 1].kind == Token::word && toks[k - 1].text.back() == 'n' &&
                              (text.substr(toks[k - 1].end, t.begin - toks[k - 1].end) == "'" ||
                               text.substr(toks[k - 1].end, t.begin - toks[k - 1].end) == "\xE2\x80\x99"));
        if (negator) {
            negate_until = k + 3;
            continue;
        }
        const bool negated = k <= negate_until && negate_until != 0;
        if (in(yes, t.text)) {
            out.push_back(!negated);
            negate_until = 0;
        } else if (in(no, t.text)) {
            out.push_back(negated);
            negate_until = 0;
        }
    }
    return out;
}

}  // namespace detail

enum class CorrectnessMode { single, vector, average };

inline bool parse_correctness_single(std::string_view text) {
    auto v = detail::verdicts(text);
    if (v.empty()) throw Unparseable("no correct/incorrect verdict found");
    return v.front();
}

inline std::vector<bool> parse_correctness_vector(std::string_view text, std::size_t n_questions) {
    auto v = detail::verdicts(text);
    if (v.size() != n_questions) throw LengthMismatch(n_questions, v.size());
    return v;
}

inline Scalar parse_accuracy_average(std::string_view text) { return parse_unit_scalar(text); }

/// Dispatches on the schema recorded in a prompt bundle.
inline SimulationOutcome parse(std::string_view text, AnswerSchema schema, std::size_t count = 1) {
    SimulationOutcome o;
    o.kind = schema;
    o.raw_digest = sha256_hex(text);
    switch (schema) {
        case AnswerSchema::grade:
            o.value = parse_grade(text);
            break;
        case AnswerSchema::score: {
            auto s = parse_score(text);
            o.value = s.value;
            o.flags = s.flags;
            break;
        }
        case AnswerSchema::understanding:
        case AnswerSchema::accuracy_average: {
            auto s = parse_unit_scalar(text);
            o.value = s.value;
            o.flags = s.flags;
            break;
        }
        case AnswerSchema::understanding_vector: {
            auto v = parse_unit_vector(text, count);
            o.value = std::move(v.values);
            o.flags = v.flags;
            break;
        }
        case AnswerSchema::correctness_vector:
            o.value = parse_correctness_vector(text, count);
            break;
        case AnswerSchema::correctness_single:
            o.value = parse_correctness_single(text);
            break;
    }
    return o;
}

// ---------------------------------------------------------------------------
// Retry on unparseable answers.

inline std::string format_reminder(AnswerSchema schema, std::size_t count) {
    switch (schema) {
        case AnswerSchema::grade:
            return "Reminder: start your reply with exactly one grade written as \"<number>: <label>\" from the scale " +
                   std::string(persona::kGradeScale) + ".";
        case AnswerSchema::score: return "Reminder: start your reply with a single integer from 0 to 100.";
        case AnswerSchema::understanding:
        case AnswerSchema::accuracy_average: return "Reminder: start your reply with a single number from 0 to 1.";
        case AnswerSchema::understanding_vector:
            return "Reminder: start your reply with exactly " + std::to_string(count) +
                   " numbers from 0 to 1 separated by commas.";
        case AnswerSchema::correctness_vector:
            return "Reminder: start your reply with exactly " + std::to_string(count) +
                   " values, 1 or 0, separated by commas.";
        default: return "Reminder: start your reply with exactly one word, correct or incorrect.";
    }
}

/// A parsed outcome, or Missing (outcome empty, reason set).
struct ParsedOutcome {
    std::optional<SimulationOutcome> outcome;
    std::string missing_reason;
    std::vector<gateway::ModelResponse> responses;  // every response consulted, in order

    [[nodiscard]] bool missing() const noexcept { return !outcome.has_value(); }
};

/// Parses `first`; on failure re-issues `request` with a format reminder
/// appended, up to `max_retries` times. `complete` is any callable
/// ModelRequest -> ModelResponse (normally Gateway::complete).
template <typename Complete>
ParsedOutcome parse_with_retry(Complete&& complete, const gateway::ModelRequest& request, gateway::ModelResponse first,
                               AnswerSchema schema, std::size_t count = 1, int max_retries = 1) {
    ParsedOutcome result;
    result.responses.push_back(std::move(first));
    for (int attempt = 0;; ++attempt) {
        try {
            auto o = parse(result.responses.back().raw_text, schema, count);
            o.flags.retry_used = attempt > 0;
            result.outcome = std::move(o);
            return result;
        } catch (const Unparseable& e) {
            if (attempt >= max_retries) {
                result.missing_reason = std::string("unparseable: ") + e.what();
                return result;
            }
        }
        gateway::ModelRequest again = request;
        again.user_text += "\n" + format_reminder(schema, count) + "\n";
        result.responses.push_back(complete(again));
    }
}

template <typename Complete>
ParsedOutcome parse_with_retry(Complete&& complete, const gateway::ModelRequest& request, AnswerSchema schema,
                               std::size_t count = 1, int max_retries = 1) {
    auto first = complete(request);
    return parse_with_retry(complete, request, std::move(first), schema, count, max_retries);
}

}  // namespace edutwin::parser
