#pragma once

#include <cctype>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "edutwin/csv.hpp"
#include "edutwin/errors.hpp"

namespace edutwin::persona {

/// `{name}` substitution over a fixed vocabulary. `{{` and `}}` emit literal
/// braces. Referencing a name absent from `values` is a RenderError.
inline std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size() * 2);
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        char c = tmpl[i];
        if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
            out.push_back('{');
            ++i;
            continue;
        }
        if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
            out.push_back('}');
            ++i;
            continue;
        }
        if (c == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close == std::string_view::npos) throw RenderError("unterminated placeholder at offset " + std::to_string(i));
            std::string name(tmpl.substr(i + 1, close - i - 1));
            auto it = values.find(name);
            if (it == values.end()) throw RenderError("unknown placeholder {" + name + "}");
            out += it->second;
            i = close;
            continue;
        }
        if (c == '}') throw RenderError("stray '}' at offset " + std::to_string(i));
        out.push_back(c);
    }
    return out;
}

/// Placeholder names referenced by `tmpl`, for validation.
inline std::set<std::string> placeholders(std::string_view tmpl) {
    std::set<std::string> names;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
            ++i;
            continue;
        }
        if (tmpl[i] != '{') continue;
        auto close = tmpl.find('}', i + 1);
        if (close == std::string_view::npos) break;
        names.emplace(tmpl.substr(i + 1, close - i - 1));
        i = close;
    }
    return names;
}

/// Every placeholder the prompt builders provide; absent blocks render empty.
inline const std::set<std::string>& known_placeholders() {
    static const std::set<std::string> names{"demographics", "history",    "materials", "current_slide",
                                             "understanding", "pretest",   "engagement", "questions",
                                             "instruction"};
    return names;
}

inline constexpr std::string_view kDefaultSystem =
    "You are a virtual student taking part in a learning study. Stay in character as the student described by "
    "the user. Always give the requested answer first, then a brief explanation.";

inline constexpr std::string_view kDefaultUser =
    "You are simulating a student with the following profile.\n\n"
    "{demographics}{history}{materials}{current_slide}{understanding}{pretest}{engagement}{questions}"
    "{instruction}\n";

struct TemplateSet {
    std::string system{kDefaultSystem};
    std::string exp1{kDefaultUser};
    std::string exp2{kDefaultUser};
    std::string exp3_understanding{kDefaultUser};
    std::string exp3_outcome{kDefaultUser};

    /// Overrides any of system.txt, exp1.txt, exp2.txt, exp3_understanding.txt,
    /// exp3_outcome.txt present in `dir` and validates their placeholders.
    static TemplateSet from_directory(const std::filesystem::path& dir) {
        TemplateSet t;
        auto load = [&](const char* file, std::string& slot) {
            auto p = dir / file;
            if (!std::filesystem::exists(p)) return;
            slot = csv::read_file(p);
            for (const auto& name : placeholders(slot)) {
                if (!known_placeholders().count(name)) {
                    throw RenderError(p.string() + ": unknown placeholder {" + name + "}");
                }
            }
        };
        load("system.txt", t.system);
        load("exp1.txt", t.exp1);
        load("exp2.txt", t.exp2);
        load("exp3_understanding.txt", t.exp3_understanding);
        load("exp3_outcome.txt", t.exp3_outcome);
        return t;
    }
};

inline const TemplateSet& default_templates() {
    static const TemplateSet t;
    return t;
}

}  // namespace edutwin::persona
