#pragma once

// Alignment statistics between real and simulated students, plus CSV
// writers for the resulting reports.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "edutwin/csv.hpp"
#include "edutwin/dataset.hpp"
#include "edutwin/errors.hpp"
#include "edutwin/experiments.hpp"
#include "edutwin/numeric.hpp"
#include "edutwin/persona.hpp"

namespace edutwin::analysis {

using dataset::StudentRecord;
using experiments::SimulationTable;

// ---------------------------------------------------------------------------
// Pearson.

/// Sample Pearson correlation, or nullopt when either series has no spread.
inline std::optional<double> try_pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw SizeMismatch("pearson: lengths differ (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
    }
    if (x.size() < 2) throw ValueError("pearson needs at least 2 pairs");
    return dataset::detail::centred_pearson(x, y);
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    auto r = try_pearson(x, y);
    if (!r) throw ZeroVariance("pearson: a series has zero variance");
    return *r;
}

// ---------------------------------------------------------------------------
// Per-factor alignment (level means, one r per run, averaged over runs).

struct LevelPoint {
    std::string level;
    double real_mean = 0;
    double sim_mean = 0;
    std::size_t n = 0;  // student-runs contributing
};

struct RunCorrelation {
    int run = 0;
    std::optional<double> r;
};

struct FactorAlignment {
    std::string factor;
    std::optional<double> r;  // mean of the defined per-run values
    std::vector<RunCorrelation> per_run;
    std::vector<LevelPoint> level_points;  // pooled over runs, dataset level order
    std::string note;                      // why r is absent
};

struct RunPair {
    int run_a = 0;
    int run_b = 0;
    std::optional<double> r;
};

struct AlignmentReport {
    std::vector<FactorAlignment> per_factor;  // dataset factor order
    std::map<std::string, std::vector<RunPair>> cross_run;
    std::size_t missing_rows = 0;
    std::size_t unmatched_rows = 0;  // rows whose student is not in the records
    std::vector<std::string> notes;
};

namespace detail {

struct Observation {
    const StudentRecord* record;
    int run;
    double sim;
};

struct Joined {
    std::vector<Observation> obs;
    std::vector<int> runs;
    std::size_t missing = 0;
    std::size_t unmatched = 0;
};

inline Joined join_exp1(const SimulationTable& table, std::span<const StudentRecord> records) {
    std::map<std::string_view, const StudentRecord*> by_id;
    for (const auto& r : records) by_id.emplace(r.student_id, &r);
    Joined j;
    std::set<int> runs;
    for (const auto& row : table.rows) {
        if (!std::holds_alternative<persona::Exp1Variant>(row.config.variant)) continue;
        runs.insert(row.run);
        auto it = by_id.find(row.student_id);
        if (it == by_id.end()) {
            ++j.unmatched;
            continue;
        }
        if (!row.outcome) {
            ++j.missing;
            continue;
        }
        j.obs.push_back({it->second, row.run, row.outcome->scalar()});
    }
    j.runs.assign(runs.begin(), runs.end());
    return j;
}

/// Factor names in first-seen order; level names in first-seen order per factor.
inline std::vector<std::pair<std::string, std::vector<std::string>>> factor_levels(std::span<const StudentRecord> records) {
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    for (const auto& rec : records) {
        for (const auto& f : rec.factors) {
            auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == f.name; });
            if (it == out.end()) {
                out.emplace_back(f.name, std::vector<std::string>{});
                it = std::prev(out.end());
            }
            if (std::find(it->second.begin(), it->second.end(), f.level) == it->second.end()) it->second.push_back(f.level);
        }
    }
    return out;
}

struct LevelMeans {
    std::vector<std::string> levels;
    std::vector<double> real, sim;
    std::vector<std::size_t> n;
};

/// Level means of real and simulated values over the same observations,
/// keeping levels with at least `min_group` observations.
inline LevelMeans level_means(const std::vector<Observation>& obs, const std::string& factor,
                              const std::vector<std::string>& order, std::optional<int> run, std::size_t min_group) {
    std::map<std::string, std::tuple<double, double, std::size_t>> acc;
    for (const auto& o : obs) {
        if (run && o.run != *run) continue;
        const auto* level = o.record->level_of(factor);
        if (!level) continue;
        auto& [rs, ss, n] = acc[*level];
        rs += dataset::outcome_value(o.record->outcome);
        ss += o.sim;
        ++n;
    }
    LevelMeans m;
    for (const auto& level : order) {
        auto it = acc.find(level);
        if (it == acc.end()) continue;
        auto [rs, ss, n] = it->second;
        if (n < std::max<std::size_t>(1, min_group)) continue;
        m.levels.push_back(level);
        m.real.push_back(rs / static_cast<double>(n));
        m.sim.push_back(ss / static_cast<double>(n));
        m.n.push_back(n);
    }
    return m;
}

}  // namespace detail

/// Pairwise correlation of the simulated level-mean vectors of every
/// unordered run pair, per factor, over the levels populated in both runs.
inline std::map<std::string, std::vector<RunPair>> cross_run_consistency(const SimulationTable& table,
                                                                         std::span<const StudentRecord> records,
                                                                         std::size_t min_group_size = 1) {
    const auto joined = detail::join_exp1(table, records);
    std::map<std::string, std::vector<RunPair>> out;
    for (const auto& [factor, order] : detail::factor_levels(records)) {
        std::map<int, detail::LevelMeans> per_run;
        for (int run : joined.runs) per_run[run] = detail::level_means(joined.obs, factor, order, run, min_group_size);
        auto& pairs = out[factor];
        for (std::size_t a = 0; a < joined.runs.size(); ++a) {
            for (std::size_t b = a + 1; b < joined.runs.size(); ++b) {
                const auto& ma = per_run[joined.runs[a]];
                const auto& mb = per_run[joined.runs[b]];
                std::vector<double> xa, xb;
                for (std::size_t i = 0; i < ma.levels.size(); ++i) {
                    auto it = std::find(mb.levels.begin(), mb.levels.end(), ma.levels[i]);
                    if (it == mb.levels.end()) continue;
                    xa.push_back(ma.sim[i]);
                    xb.push_back(mb.sim[static_cast<std::size_t>(it - mb.levels.begin())]);
                }
                RunPair p{joined.runs[a], joined.runs[b], std::nullopt};
                if (xa.size() >= 2) p.r = try_pearson(xa, xb);
                pairs.push_back(p);
            }
        }
    }
    return out;
}

/// Per factor: group students by level, correlate mean real and mean
/// simulated grade over the levels, per run; r is the mean over runs.
inline AlignmentReport factor_alignment(const SimulationTable& table, std::span<const StudentRecord> records,
                                        std::size_t min_group_size = 1) {
    const auto joined = detail::join_exp1(table, records);
    AlignmentReport report;
    report.missing_rows = joined.missing;
    report.unmatched_rows = joined.unmatched;
    if (joined.missing) report.notes.push_back(std::to_string(joined.missing) + " missing simulated outcomes excluded");
    if (joined.unmatched) report.notes.push_back(std::to_string(joined.unmatched) + " rows without a matching student");

    for (const auto& [factor, order] : detail::factor_levels(records)) {
        FactorAlignment fa;
        fa.factor = factor;
        auto pooled = detail::level_means(joined.obs, factor, order, std::nullopt, 1);
        for (std::size_t i = 0; i < pooled.levels.size(); ++i) {
            fa.level_points.push_back({pooled.levels[i], pooled.real[i], pooled.sim[i], pooled.n[i]});
        }
        double sum = 0;
        std::size_t defined = 0;
        bool enough_levels = false;
        for (int run : joined.runs) {
            auto m = detail::level_means(joined.obs, factor, order, run, min_group_size);
            RunCorrelation rc{run, std::nullopt};
            if (m.levels.size() >= 2) {
                enough_levels = true;
                rc.r = try_pearson(m.real, m.sim);
            }
            if (rc.r) {
                sum += *rc.r;
                ++defined;
            }
            fa.per_run.push_back(rc);
        }
        if (defined) {
            fa.r = std::clamp(sum / static_cast<double>(defined), -1.0, 1.0);
        } else {
            fa.note = enough_levels ? "not computable: level means have zero variance"
                                    : "not computable: fewer than 2 populated levels";
        }
        report.per_factor.push_back(std::move(fa));
    }
    if (joined.runs.size() >= 2) report.cross_run = cross_run_consistency(table, records, min_group_size);
    return report;
}

// ---------------------------------------------------------------------------
// Correlation matrices with listwise deletion.

struct NamedColumn {
    std::string label;
    std::vector<std::optional<double>> values;  // one slot per student
};

struct CorrelationMatrix {
    std::vector<std::string> labels;
    std::vector<std::vector<std::optional<double>>> values;  // nullopt: undefined
    std::vector<std::vector<std::size_t>> n;

    [[nodiscard]] std::optional<std::size_t> index_of(std::string_view label) const {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == label) return i;
        }
        return std::nullopt;
    }
    [[nodiscard]] std::optional<double> at(std::string_view a, std::string_view b) const {
        auto i = index_of(a), j = index_of(b);
        if (!i || !j) throw ValueError("correlation matrix has no label '" + std::string(!i ? a : b) + "'");
        return values[*i][*j];
    }
};

inline CorrelationMatrix correlation_matrix(std::span<const NamedColumn> columns) {
    const std::size_t k = columns.size();
    for (const auto& c : columns) {
        if (c.values.size() != columns.front().values.size()) throw SizeMismatch("correlation matrix: columns differ in length");
    }
    CorrelationMatrix m;
    m.values.assign(k, std::vector<std::optional<double>>(k));
    m.n.assign(k, std::vector<std::size_t>(k, 0));
    for (const auto& c : columns) m.labels.push_back(c.label);
    std::vector<double> x, y;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i; j < k; ++j) {
            x.clear();
            y.clear();
            const auto& a = columns[i].values;
            const auto& b = columns[j].values;
            for (std::size_t s = 0; s < a.size(); ++s) {
                if (a[s] && b[s]) {
                    x.push_back(*a[s]);
                    y.push_back(*b[s]);
                }
            }
            m.n[i][j] = m.n[j][i] = x.size();
            std::optional<double> r;
            if (x.size() >= 2) r = dataset::detail::centred_pearson(x, y);
            if (i == j && r) r = 1.0;
            m.values[i][j] = m.values[j][i] = r;
        }
    }
    return m;
}

namespace detail {

inline std::vector<std::optional<double>> column_from(std::span<const StudentRecord> records,
                                                      const std::map<std::string, double>& values) {
    std::vector<std::optional<double>> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        auto it = values.find(r.student_id);
        out.push_back(it == values.end() ? std::nullopt : std::optional(it->second));
    }
    return out;
}

template <typename Pred>
std::map<std::string, double> scalar_outcomes(const SimulationTable& t, Pred&& pred) {
    std::map<std::string, double> out;
    for (const auto& row : t.rows) {
        if (row.outcome && pred(row)) out[row.student_id] = row.outcome->scalar();
    }
    return out;
}

}  // namespace detail

/// Columns i..viii (those present in the table), H (real final score) and A
/// (average assessment score), one slot per record.
inline std::vector<NamedColumn> exp2_columns(const SimulationTable& table, std::span<const StudentRecord> records) {
    std::vector<NamedColumn> cols;
    for (auto kind : experiments::all_exp2_kinds()) {
        bool present = std::any_of(table.rows.begin(), table.rows.end(), [&](const auto& row) {
            const auto* v = std::get_if<persona::Exp2Variant>(&row.config.variant);
            return v && v->kind == kind;
        });
        if (!present) continue;
        auto values = detail::scalar_outcomes(table, [&](const experiments::TableRow& row) {
            const auto* v = std::get_if<persona::Exp2Variant>(&row.config.variant);
            return v && v->kind == kind;
        });
        cols.push_back({std::string(persona::to_string(kind)), detail::column_from(records, values)});
    }
    NamedColumn h{"H", {}}, a{"A", {}};
    for (const auto& r : records) {
        h.values.push_back(dataset::outcome_value(r.outcome));
        a.values.push_back(r.average_assessment);
    }
    cols.push_back(std::move(h));
    cols.push_back(std::move(a));
    return cols;
}

using MetricsMap = experiments::MetricsMap;
using ScoreSheets = experiments::ScoreSheets;

/// Columns Hu (real post score), 1a..3c (simulated post scores, kinds present
/// in the table), U (mean real understanding), Pre (pre-test average) and
/// ISC (engagement). Post scores are fractions in [0,1].
inline std::vector<NamedColumn> exp3_outcome_columns(const SimulationTable& table, std::span<const StudentRecord> records,
                                                     const MetricsMap& metrics, const ScoreSheets& sheets) {
    std::vector<NamedColumn> cols;
    NamedColumn hu{"Hu", {}};
    for (const auto& r : records) {
        auto s = sheets.find(r.student_id);
        hu.values.push_back(s == sheets.end() ? std::nullopt : std::optional(s->second.post_accuracy()));
    }
    cols.push_back(std::move(hu));
    for (std::size_t k = 0; k < persona::kExp3ONames.size(); ++k) {
        auto kind = static_cast<persona::Exp3OKind>(k);
        bool present = std::any_of(table.rows.begin(), table.rows.end(), [&](const auto& row) {
            const auto* v = std::get_if<persona::Exp3OVariant>(&row.config.variant);
            return v && v->kind == kind;
        });
        if (!present) continue;
        cols.push_back({std::string(persona::to_string(kind)),
                        detail::column_from(records, experiments::simulated_post_scores(table, kind))});
    }
    NamedColumn u{"U", {}}, pre{"Pre", {}}, isc{"ISC", {}};
    for (const auto& r : records) {
        auto m = metrics.find(r.student_id);
        auto s = sheets.find(r.student_id);
        u.values.push_back(m == metrics.end() || m->second.understanding.empty()
                               ? std::nullopt
                               : std::optional(mean(m->second.understanding)));
        pre.values.push_back(s == sheets.end() ? std::nullopt : s->second.pre_test_average);
        isc.values.push_back(m == metrics.end() ? std::nullopt : m->second.isc_engagement);
    }
    cols.push_back(std::move(u));
    cols.push_back(std::move(pre));
    cols.push_back(std::move(isc));
    return cols;
}

namespace detail {

/// Simulated understanding of `slide` (1-based) for a kind from a task-1 row.
inline std::optional<double> simulated_level(const experiments::TableRow& row, persona::Exp3UKind kind, int slide) {
    const auto* v = std::get_if<persona::Exp3UVariant>(&row.config.variant);
    if (!v || v->kind != kind || !row.outcome) return std::nullopt;
    if (kind == persona::Exp3UKind::a) {
        const auto& vec = std::get<std::vector<double>>(row.outcome->value);
        if (slide < 1 || static_cast<std::size_t>(slide) > vec.size()) return std::nullopt;
        return vec[static_cast<std::size_t>(slide - 1)];
    }
    if (v->slide != slide) return std::nullopt;
    return row.outcome->scalar();
}

}  // namespace detail

/// Columns Hu (mean real understanding over slides) and a, b, c (mean
/// simulated understanding over slides; students lacking any slide are
/// left out for that kind).
inline std::vector<NamedColumn> exp3_understanding_columns(const SimulationTable& table,
                                                           std::span<const StudentRecord> records,
                                                           const MetricsMap& metrics, std::size_t slides) {
    std::vector<NamedColumn> cols;
    NamedColumn hu{"Hu", {}};
    for (const auto& r : records) {
        auto m = metrics.find(r.student_id);
        hu.values.push_back(m == metrics.end() || m->second.understanding.empty()
                                ? std::nullopt
                                : std::optional(mean(m->second.understanding)));
    }
    cols.push_back(std::move(hu));
    for (std::size_t k = 0; k < persona::kExp3UNames.size(); ++k) {
        auto kind = static_cast<persona::Exp3UKind>(k);
        std::map<std::string, std::vector<std::optional<double>>> per_student;
        bool present = false;
        for (const auto& row : table.rows) {
            const auto* v = std::get_if<persona::Exp3UVariant>(&row.config.variant);
            if (!v || v->kind != kind) continue;
            present = true;
            auto& slots = per_student[row.student_id];
            slots.resize(slides);
            for (std::size_t s = 1; s <= slides; ++s) {
                if (auto lv = detail::simulated_level(row, kind, static_cast<int>(s))) slots[s - 1] = lv;
            }
        }
        if (!present) continue;
        std::map<std::string, double> means;
        for (const auto& [sid, slots] : per_student) {
            if (std::all_of(slots.begin(), slots.end(), [](const auto& o) { return o.has_value(); })) {
                double sum = 0;
                for (const auto& o : slots) sum += *o;
                means[sid] = sum / static_cast<double>(slides);
            }
        }
        cols.push_back({std::string(persona::to_string(kind)), detail::column_from(records, means)});
    }
    return cols;
}

// ---------------------------------------------------------------------------
// Per-slide trajectories.

struct SlideCorrelation {
    int slide = 0;
    std::optional<double> r;
    std::size_t n = 0;
};

/// For each slide, pearson between simulated and real understanding across
/// students having both.
inline std::vector<SlideCorrelation> per_slide_correlation(const SimulationTable& table, const MetricsMap& metrics,
                                                           persona::Exp3UKind kind, std::size_t slides) {
    std::map<int, std::map<std::string, double>> sim;
    for (const auto& row : table.rows) {
        for (std::size_t s = 1; s <= slides; ++s) {
            if (auto lv = detail::simulated_level(row, kind, static_cast<int>(s))) sim[static_cast<int>(s)][row.student_id] = *lv;
        }
    }
    std::vector<SlideCorrelation> out;
    for (std::size_t s = 1; s <= slides; ++s) {
        std::vector<double> x, y;
        for (const auto& [sid, v] : sim[static_cast<int>(s)]) {
            auto m = metrics.find(sid);
            if (m == metrics.end() || m->second.understanding.size() < s) continue;
            x.push_back(v);
            y.push_back(m->second.understanding[s - 1]);
        }
        SlideCorrelation sc{static_cast<int>(s), std::nullopt, x.size()};
        if (x.size() >= 2) sc.r = dataset::detail::centred_pearson(x, y);
        out.push_back(sc);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Region summary.

struct MeanN {
    std::optional<double> mean;
    std::size_t n = 0;
};

struct RegionRow {
    std::string region;
    std::size_t students = 0;
    std::string modal_imd_band;  // ties broken by lexical order
    MeanN assessment;
    MeanN real_final;
    std::map<std::string, MeanN> simulated;  // per config label
};

struct RegionSummary {
    std::vector<RegionRow> rows;  // sorted by region name
    std::vector<std::string> configs;
};

namespace detail {

struct MeanAcc {
    double sum = 0;
    std::size_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    [[nodiscard]] MeanN get() const { return {n ? std::optional(sum / static_cast<double>(n)) : std::nullopt, n}; }
};

}  // namespace detail

inline RegionSummary region_summary(std::span<const StudentRecord> records, const SimulationTable& table) {
    std::map<std::string, std::vector<const StudentRecord*>> groups;
    for (const auto& r : records) {
        groups[r.region && !r.region->empty() ? *r.region : std::string(dataset::kUnknownLevel)].push_back(&r);
    }
    std::map<std::string, std::map<std::string, double>> sim;  // config -> student -> value
    RegionSummary out;
    for (const auto& row : table.rows) {
        auto label = row.config.label();
        if (std::find(out.configs.begin(), out.configs.end(), label) == out.configs.end()) out.configs.push_back(label);
        if (row.outcome) sim[label][row.student_id] = row.outcome->scalar();
    }
    for (const auto& [region, members] : groups) {
        RegionRow rr;
        rr.region = region;
        rr.students = members.size();
        std::map<std::string, std::size_t> imd;
        detail::MeanAcc assess, real;
        std::map<std::string, detail::MeanAcc> s;
        for (const auto* r : members) {
            ++imd[r->imd_band && !r->imd_band->empty() ? *r->imd_band : std::string(dataset::kUnknownLevel)];
            if (r->average_assessment) assess.add(*r->average_assessment);
            real.add(dataset::outcome_value(r->outcome));
            for (const auto& label : out.configs) {
                auto& acc = s[label];
                if (auto it = sim[label].find(r->student_id); it != sim[label].end()) acc.add(it->second);
            }
        }
        std::size_t best = 0;
        for (const auto& [band, count] : imd) {
            if (count > best) {
                best = count;
                rr.modal_imd_band = band;
            }
        }
        rr.assessment = assess.get();
        rr.real_final = real.get();
        for (const auto& [label, acc] : s) rr.simulated[label] = acc.get();
        out.rows.push_back(std::move(rr));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Heatmap grids.

struct HeatmapGrid {
    std::string name;
    std::vector<std::string> rows;     // student ids
    std::vector<std::string> columns;  // post question ids
    std::vector<std::vector<std::optional<double>>> cells;
};

/// Per-question correctness grids for every 2x/3x kind in the table, a grid
/// of real correctness, and a grid of mean real understanding over each
/// question's related slides. Rows follow `records`.
inline std::vector<HeatmapGrid> build_heatmaps(const SimulationTable& table, std::span<const StudentRecord> records,
                                               const dataset::CourseAssets& assets, const MetricsMap& metrics,
                                               const ScoreSheets& sheets) {
    const auto post = assets.post_items();
    std::vector<std::string> ids, qids;
    std::map<std::string, std::size_t> row_of, col_of;
    for (const auto& r : records) {
        row_of.emplace(r.student_id, ids.size());
        ids.push_back(r.student_id);
    }
    for (const auto* q : post) {
        col_of.emplace(q->question_id, qids.size());
        qids.push_back(q->question_id);
    }
    auto blank = [&](std::string name) {
        return HeatmapGrid{std::move(name), ids, qids,
                           std::vector<std::vector<std::optional<double>>>(ids.size(), std::vector<std::optional<double>>(qids.size()))};
    };

    std::vector<HeatmapGrid> out;
    for (std::size_t k = 0; k < persona::kExp3ONames.size(); ++k) {
        auto kind = static_cast<persona::Exp3OKind>(k);
        if (persona::outcome_level(kind) < 2) continue;
        bool present = false;
        auto grid = blank(std::string(persona::to_string(kind)));
        for (const auto& row : table.rows) {
            const auto* v = std::get_if<persona::Exp3OVariant>(&row.config.variant);
            if (!v || v->kind != kind) continue;
            present = true;
            auto r = row_of.find(row.student_id);
            if (r == row_of.end() || !row.outcome) continue;
            if (persona::outcome_level(kind) == 2) {
                const auto& vec = std::get<std::vector<bool>>(row.outcome->value);
                for (std::size_t c = 0; c < std::min(vec.size(), qids.size()); ++c) grid.cells[r->second][c] = vec[c] ? 1.0 : 0.0;
            } else if (v->question_id) {
                if (auto c = col_of.find(*v->question_id); c != col_of.end()) {
                    grid.cells[r->second][c->second] = row.outcome->scalar();
                }
            }
        }
        if (present) out.push_back(std::move(grid));
    }

    auto real = blank("real_correctness");
    auto understanding = blank("real_understanding");
    for (std::size_t r = 0; r < ids.size(); ++r) {
        auto s = sheets.find(ids[r]);
        auto m = metrics.find(ids[r]);
        for (std::size_t c = 0; c < post.size(); ++c) {
            if (s != sheets.end()) {
                if (auto it = s->second.per_question_correct.find(qids[c]); it != s->second.per_question_correct.end()) {
                    real.cells[r][c] = it->second ? 1.0 : 0.0;
                }
            }
            if (m != metrics.end() && !post[c]->related_slide_ids.empty()) {
                double sum = 0;
                bool ok = true;
                for (int sl : post[c]->related_slide_ids) {
                    if (sl < 1 || static_cast<std::size_t>(sl) > m->second.understanding.size()) {
                        ok = false;
                        break;
                    }
                    sum += m->second.understanding[static_cast<std::size_t>(sl - 1)];
                }
                if (ok) understanding.cells[r][c] = sum / static_cast<double>(post[c]->related_slide_ids.size());
            }
        }
    }
    out.push_back(std::move(real));
    out.push_back(std::move(understanding));
    return out;
}

// ---------------------------------------------------------------------------
// Report writers.

inline std::string opt_cell(const std::optional<double>& v) { return v ? format_shortest(*v) : ""; }

inline std::string alignment_csv(const AlignmentReport& rep) {
    std::ostringstream out;
    csv::write_row(out, {"factor", "r", "levels", "runs_defined", "note"});
    for (const auto& f : rep.per_factor) {
        std::size_t defined = 0;
        for (const auto& pr : f.per_run) defined += pr.r ? 1 : 0;
        csv::write_row(out, {f.factor, opt_cell(f.r), std::to_string(f.level_points.size()), std::to_string(defined), f.note});
    }
    return out.str();
}

inline std::string level_points_csv(const AlignmentReport& rep) {
    std::ostringstream out;
    csv::write_row(out, {"factor", "level", "real_mean", "sim_mean", "n"});
    for (const auto& f : rep.per_factor) {
        for (const auto& p : f.level_points) {
            csv::write_row(out, {f.factor, p.level, format_shortest(p.real_mean), format_shortest(p.sim_mean), std::to_string(p.n)});
        }
    }
    return out.str();
}

inline std::string cross_run_csv(const AlignmentReport& rep) {
    std::ostringstream out;
    csv::write_row(out, {"factor", "run_a", "run_b", "r"});
    for (const auto& f : rep.per_factor) {
        auto it = rep.cross_run.find(f.factor);
        if (it == rep.cross_run.end()) continue;
        for (const auto& p : it->second) {
            csv::write_row(out, {f.factor, std::to_string(p.run_a), std::to_string(p.run_b), opt_cell(p.r)});
        }
    }
    return out.str();
}

/// Long form: one line per ordered label pair.
inline std::string matrix_csv(const CorrelationMatrix& m) {
    std::ostringstream out;
    csv::write_row(out, {"label_a", "label_b", "r", "n"});
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        for (std::size_t j = 0; j < m.labels.size(); ++j) {
            csv::write_row(out, {m.labels[i], m.labels[j], opt_cell(m.values[i][j]), std::to_string(m.n[i][j])});
        }
    }
    return out.str();
}

inline std::string region_csv(const RegionSummary& s) {
    std::ostringstream out;
    std::vector<std::string> header{"region", "students", "modal_imd_band", "mean_assessment", "n_assessment",
                                    "mean_real_final", "n_real_final"};
    for (const auto& c : s.configs) {
        header.push_back("mean_sim:" + c);
        header.push_back("n_sim:" + c);
    }
    csv::write_row(out, header);
    for (const auto& r : s.rows) {
        std::vector<std::string> cells{r.region, std::to_string(r.students), r.modal_imd_band,
                                       opt_cell(r.assessment.mean), std::to_string(r.assessment.n),
                                       opt_cell(r.real_final.mean), std::to_string(r.real_final.n)};
        for (const auto& c : s.configs) {
            auto it = r.simulated.find(c);
            MeanN m = it == r.simulated.end() ? MeanN{} : it->second;
            cells.push_back(opt_cell(m.mean));
            cells.push_back(std::to_string(m.n));
        }
        csv::write_row(out, cells);
    }
    return out.str();
}

inline std::string per_slide_csv(const std::map<std::string, std::vector<SlideCorrelation>>& by_kind) {
    std::ostringstream out;
    csv::write_row(out, {"kind", "slide", "r", "n"});
    for (const auto& [kind, v] : by_kind) {
        for (const auto& s : v) csv::write_row(out, {kind, std::to_string(s.slide), opt_cell(s.r), std::to_string(s.n)});
    }
    return out.str();
}

inline std::string heatmap_csv(const HeatmapGrid& g) {
    std::ostringstream out;
    std::vector<std::string> header{"student_id"};
    header.insert(header.end(), g.columns.begin(), g.columns.end());
    csv::write_row(out, header);
    for (std::size_t r = 0; r < g.rows.size(); ++r) {
        std::vector<std::string> cells{g.rows[r]};
        for (const auto& c : g.cells[r]) cells.push_back(opt_cell(c));
        csv::write_row(out, cells);
    }
    return out.str();
}

}  // namespace edutwin::analysis
