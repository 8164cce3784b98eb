#pragma once

// Synthetic cohorts whose ground truth is generated by the same rules the
// mock backend applies, so offline runs have known alignment. Used by the
// test suites and by the demo fixture tool.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "edutwin/csv.hpp"
#include "edutwin/dataset.hpp"
#include "edutwin/experiments.hpp"
#include "edutwin/mock_backend.hpp"
#include "edutwin/numeric.hpp"
#include "edutwin/persona.hpp"

namespace edutwin::synthetic {

namespace fs = std::filesystem;

struct FactorSpec {
    std::string name;
    std::vector<std::string> levels;
};

inline const std::vector<FactorSpec>& default_exp1_factors() {
    static const std::vector<FactorSpec> f{
        {"Sex", {"female", "male"}},
        {"Accommodation", {"dormitory", "with family", "rental", "other"}},
        {"Mother's education", {"primary", "secondary", "high school", "university"}},
        {"Weekly study hours", {"none", "<5 hours", "6-10 hours", "11-20 hours"}},
        {"Scholarship", {"none", "25%", "50%", "75%", "full"}},
    };
    return f;
}

struct Exp1Cohort {
    std::string csv;  // STUDENT ID, factors..., GRADE
    gateway::GradeRule rule;
};

/// Grades follow `rule` exactly: round(base + sum of level weights), clamped to 0-7.
inline Exp1Cohort make_exp1_cohort(std::size_t n, std::uint64_t seed,
                                   const std::vector<FactorSpec>& factors = default_exp1_factors()) {
    std::mt19937_64 rng(seed);
    Exp1Cohort c;
    c.rule.base = 1.0;
    std::uniform_real_distribution<double> w(0.0, 1.2);
    for (const auto& f : factors) {
        for (std::size_t i = 0; i < f.levels.size(); ++i) c.rule.weights[{f.name, f.levels[i]}] = w(rng);
    }
    std::ostringstream out;
    std::vector<std::string> header{"STUDENT ID"};
    for (const auto& f : factors) header.push_back(f.name);
    header.push_back("GRADE");
    csv::write_row(out, header);
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<std::string> cells{"STUDENT" + std::to_string(s + 1)};
        double g = c.rule.base;
        for (const auto& f : factors) {
            const auto& level = f.levels[std::uniform_int_distribution<std::size_t>(0, f.levels.size() - 1)(rng)];
            cells.push_back(level);
            g += c.rule.weights.at({f.name, level});
        }
        cells.push_back(std::to_string(std::clamp<long>(std::lround(g), 0, 7)));
        csv::write_row(out, cells);
    }
    c.csv = out.str();
    return c;
}

struct Exp2Cohort {
    std::string students_csv;     // id_student, gender, region, imd_band, age_band, final_score
    std::string assessments_csv;  // id_student, assessment_index, score
    gateway::ScoreRule rule;
};

/// Integer assessment scores around a per-student ability; the final score
/// is slope * mean(all assessments) + intercept, matching the mock rule.
inline Exp2Cohort make_exp2_cohort(std::size_t n, std::uint64_t seed, std::size_t min_history = 5,
                                   std::size_t max_history = 8) {
    static const std::vector<std::string> regions{"East Anglian Region", "London Region", "Scotland", "Wales",
                                                  "North Region"};
    static const std::vector<std::string> bands{"0-10%", "10-20%", "20-30%", "30-40%", "40-50%",
                                                "50-60%", "60-70%", "70-80%", "80-90%", "90-100%"};
    std::mt19937_64 rng(seed);
    Exp2Cohort c;
    std::ostringstream students, assessments;
    csv::write_row(students, {"id_student", "gender", "region", "imd_band", "age_band", "final_score"});
    csv::write_row(assessments, {"id_student", "assessment_index", "score"});
    std::uniform_real_distribution<double> ability(30.0, 90.0);
    std::normal_distribution<double> noise(0.0, 10.0);
    for (std::size_t s = 0; s < n; ++s) {
        const std::string id = std::to_string(100000 + s);
        const double a = ability(rng);
        const std::size_t len = std::uniform_int_distribution<std::size_t>(min_history, max_history)(rng);
        std::vector<double> scores;
        for (std::size_t k = 0; k < len; ++k) {
            double v = std::clamp(std::round(a + noise(rng)), 0.0, 100.0);
            scores.push_back(v);
            csv::write_row(assessments, {id, std::to_string(k + 1), format_shortest(v)});
        }
        const double final_score = std::clamp(c.rule.slope * mean(scores) + c.rule.intercept, 0.0, 100.0);
        csv::write_row(students, {id, rng() % 2 ? "F" : "M", regions[rng() % regions.size()], bands[rng() % bands.size()],
                                  rng() % 3 == 0 ? "35-55" : "0-35", format_shortest(final_score)});
    }
    c.students_csv = students.str();
    c.assessments_csv = assessments.str();
    return c;
}

struct CourseFixture {
    dataset::CourseId course = dataset::CourseId::birth;
    std::string slides_csv;
    std::string questions_csv;
    std::string mapping_csv;
    std::string profiles_csv;
    std::string scoresheets_csv;
    std::string pupil_csv;
    std::string gaze_csv;
    std::size_t post_questions = 0;
};

/// A lecture cohort: per-slide pupil means, gaze traces sharing a common
/// stimulus, pre/post items mapped to slides. A post answer is correct when
/// the mean understanding of the related slides (as rendered, two decimals)
/// reaches 0.5, which is the mock's default correctness rule.
inline CourseFixture make_course_fixture(dataset::CourseId course, std::size_t students, std::uint64_t seed,
                                         std::size_t post_questions = 0, std::size_t pre_questions = 3,
                                         std::size_t gaze_samples = 40) {
    std::mt19937_64 rng(seed);
    CourseFixture f;
    f.course = course;
    const std::size_t slides = dataset::slide_count(course);
    if (post_questions == 0) post_questions = course == dataset::CourseId::birth ? 8 : 6;
    f.post_questions = post_questions;
    const std::string topic = course == dataset::CourseId::birth ? "star formation" : "stellar evolution";
    std::ostringstream sl, qs, mp, pr, sc, pu, gz;
    csv::write_row(sl, {"slide_id", "text"});
    for (std::size_t k = 1; k <= slides; ++k) {
        csv::write_row(sl, {std::to_string(k), "Slide " + std::to_string(k) + " on " + topic + ", part " + std::to_string(k)});
    }
    csv::write_row(qs, {"question_id", "kind", "text", "options", "correct_option"});
    csv::write_row(mp, {"question_id", "slide_id"});
    std::vector<std::vector<int>> related(post_questions);
    for (std::size_t q = 0; q < pre_questions; ++q) {
        csv::write_row(qs, {"pre" + std::to_string(q + 1), "pre", "Warm-up question " + std::to_string(q + 1) + " on " + topic,
                            "yes|no", "yes"});
    }
    for (std::size_t q = 0; q < post_questions; ++q) {
        const std::string qid = "q" + std::to_string(q + 1);
        csv::write_row(qs, {qid, "post", "Question " + std::to_string(q + 1) + " about " + topic, "A|B|C|D", "A"});
        int first = static_cast<int>(q % slides) + 1;
        related[q].push_back(first);
        if (q % 2 == 1 && static_cast<std::size_t>(first) < slides) related[q].push_back(first + 1);
        for (int s : related[q]) csv::write_row(mp, {qid, std::to_string(s)});
    }

    csv::write_row(pr, {"student_id", "gender", "major"});
    csv::write_row(sc, {"student_id", "question_id", "correct"});
    csv::write_row(pu, {"student_id", "slide_id", "pupil_mean"});
    csv::write_row(gz, {"student_id", "dimension", "sample_index", "value"});
    std::uniform_real_distribution<double> pupil(2.5, 5.0);
    std::normal_distribution<double> jitter(0.0, 0.4);
    static const std::vector<std::string> majors{"physics", "biology", "history", "economics"};
    for (std::size_t s = 0; s < students; ++s) {
        const std::string id = "S" + std::to_string(s + 1);
        csv::write_row(pr, {id, rng() % 2 ? "female" : "male", majors[rng() % majors.size()]});
        std::vector<double> p(slides);
        for (auto& v : p) v = std::round(pupil(rng) * 1000.0) / 1000.0;
        for (std::size_t k = 0; k < slides; ++k) csv::write_row(pu, {id, std::to_string(k + 1), format_shortest(p[k])});
        const auto u = dataset::derive_understanding(p);
        for (std::size_t q = 0; q < pre_questions; ++q) {
            csv::write_row(sc, {id, "pre" + std::to_string(q + 1), rng() % 2 ? "1" : "0"});
        }
        for (std::size_t q = 0; q < post_questions; ++q) {
            double sum = 0;
            for (int k : related[q]) sum += *parse_real(persona::format_level(u[static_cast<std::size_t>(k - 1)]));
            const bool ok = sum / static_cast<double>(related[q].size()) >= 0.5;
            csv::write_row(sc, {id, "q" + std::to_string(q + 1), ok ? "1" : "0"});
        }
        const double gain = 0.5 + static_cast<double>(rng() % 100) / 100.0;
        for (const char* dim : {"x", "y"}) {
            const double phase = dim[0] == 'x' ? 0.0 : 1.3;
            for (std::size_t t = 0; t < gaze_samples; ++t) {
                double stim = std::sin(static_cast<double>(t) / 3.0 + phase) + 0.3 * std::cos(static_cast<double>(t) / 7.0);
                double v = std::round((gain * stim + jitter(rng)) * 1e6) / 1e6;
                csv::write_row(gz, {id, dim, std::to_string(t), format_shortest(v)});
            }
        }
    }
    f.slides_csv = sl.str();
    f.questions_csv = qs.str();
    f.mapping_csv = mp.str();
    f.profiles_csv = pr.str();
    f.scoresheets_csv = sc.str();
    f.pupil_csv = pu.str();
    f.gaze_csv = gz.str();
    return f;
}

inline void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    experiments::TableWriter::write_text(p, text);
}

inline void write_course(const fs::path& dir, const CourseFixture& f) {
    write_file(dir / "assets" / "slides.csv", f.slides_csv);
    write_file(dir / "assets" / "questions.csv", f.questions_csv);
    write_file(dir / "assets" / "mapping.csv", f.mapping_csv);
    write_file(dir / "profiles.csv", f.profiles_csv);
    write_file(dir / "scoresheets.csv", f.scoresheets_csv);
    write_file(dir / "pupil.csv", f.pupil_csv);
    write_file(dir / "gaze.csv", f.gaze_csv);
}

struct DemoSizes {
    std::size_t exp1 = 145;
    std::size_t exp2 = 200;
    std::size_t exp3 = 27;
    int runs = 1;
    double temperature = 0;
};

/// YAML weights block for a grade rule, indented by `indent` spaces.
inline std::string weights_yaml(const gateway::FactorWeights& w, int indent) {
    const std::string pad(static_cast<std::size_t>(indent), ' ');
    std::ostringstream out;
    for (const auto& [key, value] : w) {
        auto quote = [](const std::string& s) {
            std::string q = "\"";
            for (char ch : s) {
                if (ch == '"' || ch == '\\') q += '\\';
                q += ch;
            }
            return q + "\"";
        };
        out << pad << "- {factor: " << quote(key.first) << ", level: " << quote(key.second)
            << ", weight: " << format_shortest(value) << "}\n";
    }
    return out.str();
}

/// Writes every dataset plus a mock-backed config.yaml under `dir`.
inline fs::path write_demo(const fs::path& dir, std::uint64_t seed, const DemoSizes& sizes = {}) {
    auto e1 = make_exp1_cohort(sizes.exp1, seed);
    auto e2 = make_exp2_cohort(sizes.exp2, seed + 1);
    write_file(dir / "exp1" / "students.csv", e1.csv);
    write_file(dir / "exp2" / "students.csv", e2.students_csv);
    write_file(dir / "exp2" / "assessments.csv", e2.assessments_csv);
    write_course(dir / "exp3" / "birth", make_course_fixture(dataset::CourseId::birth, sizes.exp3, seed + 2));
    write_course(dir / "exp3" / "star", make_course_fixture(dataset::CourseId::star, sizes.exp3, seed + 3));

    std::ostringstream y;
    y << "model_id: gpt-3.5-turbo\n"
      << "temperature: " << format_shortest(sizes.temperature) << "\n"
      << "runs: " << sizes.runs << "\n"
      << "parallelism: 4\n"
      << "output_dir: out\n"
      << "cache: out/cache.jsonl\n"
      << "backend:\n"
      << "  type: mock\n"
      << "  seed: " << seed << "\n"
      << "  rules:\n"
      << "    grade:\n"
      << "      base: " << format_shortest(e1.rule.base) << "\n"
      << "      weights:\n"
      << weights_yaml(e1.rule.weights, 8)
      << "    score: {slope: " << format_shortest(e2.rule.slope) << ", intercept: " << format_shortest(e2.rule.intercept)
      << "}\n"
      << "experiments:\n"
      << "  exp1:\n"
      << "    dataset: exp1/students.csv\n"
      << "  exp2:\n"
      << "    students: exp2/students.csv\n"
      << "    assessments: exp2/assessments.csv\n"
      << "    kinds: [i, ii, iii, iv, v, vi, vii, viii]\n"
      << "  exp3:\n"
      << "    understanding_kinds: [a, b, c]\n"
      << "    outcome_kinds: [1a, 1b, 1c, 2a, 2b, 2c, 3a, 3b, 3c]\n"
      << "    courses:\n";
    for (const char* course : {"birth", "star"}) {
        y << "      " << course << ":\n"
          << "        assets: exp3/" << course << "/assets\n"
          << "        profiles: exp3/" << course << "/profiles.csv\n"
          << "        scoresheets: exp3/" << course << "/scoresheets.csv\n"
          << "        pupil: exp3/" << course << "/pupil.csv\n"
          << "        gaze: exp3/" << course << "/gaze.csv\n";
    }
    const auto config = dir / "config.yaml";
    write_file(config, y.str());
    return config;
}

}  // namespace edutwin::synthetic
