#include <gtest/gtest.h>

#include <random>

#include "edutwin/analysis.hpp"
#include "support/oracles.hpp"
#include "support/worlds.hpp"

using namespace edutwin;
using namespace edutwin::analysis;
using experiments::ExperimentConfig;
using experiments::SimulationTable;
using experiments::TableRow;

namespace {

dataset::StudentRecord grade_student(std::string id, std::vector<dataset::Factor> factors, int grade) {
    dataset::StudentRecord r;
    r.student_id = std::move(id);
    r.factors = std::move(factors);
    r.outcome = dataset::GradeOrdinal{grade};
    return r;
}

TableRow row(std::string sid, ExperimentConfig cfg, int run, std::optional<parser::Payload> value) {
    TableRow r;
    r.student_id = std::move(sid);
    r.kind = persona::schema_for(cfg);
    cfg.run_index = run;
    r.config = std::move(cfg);
    r.run = run;
    if (value) {
        parser::SimulationOutcome o;
        o.kind = r.kind;
        o.value = *value;
        r.outcome = o;
    } else {
        r.missing_reason = "unparseable: x";
    }
    return r;
}

// Random exp1-style data: records, a table with `runs` runs, and the oracle view.
struct Exp1Case {
    std::vector<dataset::StudentRecord> records;
    SimulationTable table;
};

Exp1Case random_case(std::mt19937& rng, std::size_t n, int runs) {
    Exp1Case c;
    const std::vector<std::string> levels{"a", "b", "c", "d"};
    for (std::size_t s = 0; s < n; ++s) {
        c.records.push_back(grade_student("s" + std::to_string(s),
                                          {{"f1", levels[rng() % 4]}, {"f2", levels[rng() % 2]}},
                                          static_cast<int>(rng() % 8)));
    }
    for (int run = 0; run < runs; ++run) {
        for (const auto& r : c.records) {
            std::optional<parser::Payload> v = static_cast<int>(rng() % 8);
            if (rng() % 10 == 0) v.reset();
            c.table.rows.push_back(row(r.student_id, ExperimentConfig::exp1(), run, v));
        }
    }
    return c;
}

std::vector<oracle::Obs> oracle_obs(const Exp1Case& c, const std::string& factor) {
    std::map<std::string, const dataset::StudentRecord*> by_id;
    for (const auto& r : c.records) by_id[r.student_id] = &r;
    std::vector<oracle::Obs> out;
    for (const auto& r : c.table.rows) {
        if (!r.outcome) continue;
        const auto* rec = by_id.at(r.student_id);
        out.push_back({*rec->level_of(factor), r.run, dataset::outcome_value(rec->outcome), r.outcome->scalar()});
    }
    return out;
}

}  // namespace

TEST(Pearson, KnownValues) {
    const std::vector<double> x{1, 2, 3, 4, 5};
    EXPECT_DOUBLE_EQ(pearson(x, std::vector<double>{2, 4, 6, 8, 10}), 1.0);
    EXPECT_DOUBLE_EQ(pearson(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0);
    // cov 8, var 10 and 10
    EXPECT_NEAR(pearson(x, std::vector<double>{1, 3, 2, 5, 4}), 0.8, 1e-15);
    EXPECT_FALSE(try_pearson(x, std::vector<double>{3, 3, 3, 3, 3}));
    EXPECT_THROW(pearson(x, std::vector<double>{3, 3, 3, 3, 3}), ZeroVariance);
    EXPECT_THROW(pearson(x, std::vector<double>{1, 2}), SizeMismatch);
    EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{1}), ValueError);
}

TEST(Pearson, PropertiesAgainstOracle) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(0, 3);
    for (int iter = 0; iter < 300; ++iter) {
        std::size_t n = 2 + rng() % 40;
        std::vector<double> x(n), y(n);
        for (auto& v : x) v = d(rng);
        for (auto& v : y) v = d(rng);
        auto r = try_pearson(x, y);
        auto o = oracle::pearson(x, y);
        ASSERT_EQ(r.has_value(), o.has_value());
        if (!r) continue;
        EXPECT_NEAR(*r, static_cast<double>(*o), 1e-12);
        EXPECT_GE(*r, -1.0);
        EXPECT_LE(*r, 1.0);
        EXPECT_NEAR(*try_pearson(y, x), *r, 1e-12);
        std::vector<double> ax(n), neg(n);
        for (std::size_t i = 0; i < n; ++i) {
            ax[i] = 2.5 * x[i] - 7;
            neg[i] = -y[i];
        }
        EXPECT_NEAR(*try_pearson(ax, y), *r, 1e-12);
        EXPECT_NEAR(*try_pearson(x, neg), -*r, 1e-12);
    }
}

TEST(FactorAlignment, ThreeLevelExample) {
    // level means real [2,4,6], simulated [2.1,4.0,5.8]
    std::vector<dataset::StudentRecord> recs{
        grade_student("a1", {{"f", "low"}}, 2), grade_student("a2", {{"f", "low"}}, 2),
        grade_student("b1", {{"f", "mid"}}, 4), grade_student("c1", {{"f", "high"}}, 6),
        grade_student("c2", {{"f", "high"}}, 6)};
    SimulationTable t;
    std::vector<double> sims{2.0, 2.2, 4.0, 5.6, 6.0};
    for (std::size_t i = 0; i < recs.size(); ++i) t.rows.push_back(row(recs[i].student_id, ExperimentConfig::exp1(), 0, sims[i]));
    auto rep = factor_alignment(t, recs);
    ASSERT_EQ(rep.per_factor.size(), 1u);
    const auto& f = rep.per_factor[0];
    ASSERT_TRUE(f.r);
    auto expect = oracle::pearson({2, 4, 6}, {2.1, 4.0, 5.8});
    EXPECT_NEAR(*f.r, static_cast<double>(*expect), 1e-12);
    ASSERT_EQ(f.level_points.size(), 3u);
    EXPECT_EQ(f.level_points[0].level, "low");
    EXPECT_NEAR(f.level_points[0].sim_mean, 2.1, 1e-12);
    EXPECT_EQ(f.level_points[2].n, 2u);
    EXPECT_TRUE(rep.cross_run.empty());
}

TEST(FactorAlignment, SingleLevelIsNotComputable) {
    std::vector<dataset::StudentRecord> recs{grade_student("a", {{"f", "x"}}, 2), grade_student("b", {{"f", "x"}}, 5)};
    SimulationTable t;
    t.rows.push_back(row("a", ExperimentConfig::exp1(), 0, 3));
    t.rows.push_back(row("b", ExperimentConfig::exp1(), 0, 4));
    auto rep = factor_alignment(t, recs);
    EXPECT_FALSE(rep.per_factor[0].r);
    EXPECT_NE(rep.per_factor[0].note.find("fewer than 2"), std::string::npos);
}

TEST(FactorAlignment, MatchesOracleOnRandomData) {
    std::mt19937 rng(77);
    for (int iter = 0; iter < 100; ++iter) {
        auto c = random_case(rng, 5 + rng() % 30, 1 + static_cast<int>(rng() % 4));
        auto rep = factor_alignment(c.table, c.records);
        for (const auto& f : rep.per_factor) {
            auto o = oracle::factor_r(oracle_obs(c, f.factor));
            ASSERT_EQ(f.r.has_value(), o.has_value()) << f.factor;
            if (f.r) { EXPECT_NEAR(*f.r, static_cast<double>(*o), 1e-12); }
        }
    }
}

TEST(FactorAlignment, InvariantUnderRowOrderAndRecordOrder) {
    std::mt19937 rng(8);
    auto c = random_case(rng, 30, 3);
    auto base = factor_alignment(c.table, c.records);
    auto shuffled = c;
    std::shuffle(shuffled.table.rows.begin(), shuffled.table.rows.end(), rng);
    std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
    auto rep = factor_alignment(shuffled.table, shuffled.records);
    for (std::size_t i = 0; i < base.per_factor.size(); ++i) {
        ASSERT_EQ(rep.per_factor[i].r.has_value(), base.per_factor[i].r.has_value());
        if (base.per_factor[i].r) { EXPECT_NEAR(*rep.per_factor[i].r, *base.per_factor[i].r, 1e-12); }
    }
    // every level keeps its mean when each student appears twice
    auto doubled = c;
    for (const auto& r : c.table.rows) doubled.table.rows.push_back(r);
    auto rep2 = factor_alignment(doubled.table, doubled.records);
    for (std::size_t i = 0; i < base.per_factor.size(); ++i) {
        if (base.per_factor[i].r) { EXPECT_NEAR(*rep2.per_factor[i].r, *base.per_factor[i].r, 1e-12); }
    }
}

TEST(CrossRun, FourRunsGiveSixPairs) {
    std::mt19937 rng(4);
    auto c = random_case(rng, 40, 4);
    auto rep = factor_alignment(c.table, c.records);
    ASSERT_EQ(rep.cross_run.size(), 2u);
    for (const auto& [factor, pairs] : rep.cross_run) {
        ASSERT_EQ(pairs.size(), 6u) << factor;
        EXPECT_EQ(pairs.front().run_a, 0);
        EXPECT_EQ(pairs.front().run_b, 1);
        EXPECT_EQ(pairs.back().run_a, 2);
        EXPECT_EQ(pairs.back().run_b, 3);
    }
}

TEST(CrossRun, IdenticalRunsCorrelatePerfectly) {
    std::mt19937 rng(4);
    auto c = random_case(rng, 40, 1);
    for (auto& r : c.table.rows) {
        if (!r.outcome) r = row(r.student_id, ExperimentConfig::exp1(), 0, 3);
    }
    auto base = c.table.rows;
    for (int run = 1; run < 4; ++run) {
        for (auto r : base) {
            r.run = run;
            r.config.run_index = run;
            c.table.rows.push_back(r);
        }
    }
    for (const auto& [factor, pairs] : cross_run_consistency(c.table, c.records)) {
        for (const auto& p : pairs) {
            ASSERT_TRUE(p.r) << factor;
            EXPECT_EQ(*p.r, 1.0);
        }
    }
}

TEST(Matrix, SymmetricUnitDiagonalAndListwise) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> d;
    std::vector<NamedColumn> cols;
    for (int k = 0; k < 5; ++k) {
        NamedColumn c{"c" + std::to_string(k), {}};
        for (int s = 0; s < 25; ++s) {
            if (rng() % 6 == 0) c.values.push_back(std::nullopt);
            else c.values.push_back(d(rng));
        }
        cols.push_back(c);
    }
    auto m = correlation_matrix(cols);
    std::vector<std::vector<std::optional<double>>> raw;
    for (const auto& c : cols) raw.push_back(c.values);
    auto o = oracle::matrix(raw);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(*m.values[i][i], 1.0);
        for (std::size_t j = 0; j < 5; ++j) {
            EXPECT_EQ(m.values[i][j], m.values[j][i]);
            EXPECT_EQ(m.n[i][j], o.n[i][j]);
            if (i != j) { EXPECT_NEAR(*m.values[i][j], static_cast<double>(*o.r[i][j]), 1e-12); }
        }
    }
    // permuting columns permutes the matrix
    std::vector<NamedColumn> rev(cols.rbegin(), cols.rend());
    auto mr = correlation_matrix(rev);
    EXPECT_EQ(mr.at("c0", "c3"), m.at("c0", "c3"));
    EXPECT_THROW((void)m.at("c0", "zz"), ValueError);
}

TEST(Matrix, NegatedColumnAndConstantColumn) {
    NamedColumn x{"x", {1.0, 2.0, 4.0, 8.0}}, nx{"nx", {-1.0, -2.0, -4.0, -8.0}}, k{"k", {3.0, 3.0, 3.0, 3.0}};
    std::vector<NamedColumn> cols{x, nx, k};
    auto m = correlation_matrix(cols);
    EXPECT_EQ(*m.at("x", "nx"), -1.0);
    EXPECT_FALSE(m.at("x", "k"));
    std::vector<NamedColumn> bad{x, NamedColumn{"short", {1.0}}};
    EXPECT_THROW(correlation_matrix(bad), SizeMismatch);
}

TEST(Exp2Columns, LabelsFollowKindsPresent) {
    auto w = worlds::exp2(12, 3);
    auto gw = worlds::gateway_for(worlds::mock(w.model));
    auto t = experiments::run_exp2(w.records, gw, experiments::all_exp2_kinds());
    auto cols = exp2_columns(t, w.records);
    std::vector<std::string> labels;
    for (const auto& c : cols) labels.push_back(c.label);
    EXPECT_EQ(labels, (std::vector<std::string>{"i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "H", "A"}));
    for (const auto& c : cols) EXPECT_EQ(c.values.size(), 12u);
}

TEST(Exp3Columns, OutcomeAndUnderstandingLabels) {
    auto w = worlds::course(dataset::CourseId::birth, 8, 2, 4);
    auto gw = worlds::gateway_for(worlds::mock());
    std::vector<persona::Exp3OKind> all;
    for (std::size_t k = 0; k < persona::kExp3ONames.size(); ++k) all.push_back(static_cast<persona::Exp3OKind>(k));
    auto t = experiments::run_exp3_task2(w.records, w.assets, w.metrics, w.sheets, gw, all);
    std::vector<std::string> labels;
    for (const auto& c : exp3_outcome_columns(t, w.records, w.metrics, w.sheets)) labels.push_back(c.label);
    EXPECT_EQ(labels, (std::vector<std::string>{"Hu", "1a", "1b", "1c", "2a", "2b", "2c", "3a", "3b", "3c", "U", "Pre", "ISC"}));

    const std::vector<persona::Exp3UKind> uk{persona::Exp3UKind::a, persona::Exp3UKind::b, persona::Exp3UKind::c};
    auto tu = experiments::run_exp3_task1(w.records, w.assets.material, w.metrics, gw, uk);
    auto ucols = exp3_understanding_columns(tu, w.records, w.metrics, 10);
    labels.clear();
    for (const auto& c : ucols) labels.push_back(c.label);
    EXPECT_EQ(labels, (std::vector<std::string>{"Hu", "a", "b", "c"}));
    for (const auto& c : ucols) {
        for (const auto& v : c.values) EXPECT_TRUE(v);
    }
    auto slides = per_slide_correlation(tu, w.metrics, persona::Exp3UKind::b, 10);
    ASSERT_EQ(slides.size(), 10u);
    for (const auto& s : slides) EXPECT_EQ(s.n, 8u);
}

TEST(Regions, CountsAndMeans) {
    std::vector<dataset::StudentRecord> recs;
    auto add = [&](std::string id, std::string region, std::string band, double avg, double final_score) {
        dataset::StudentRecord r;
        r.student_id = std::move(id);
        r.region = std::move(region);
        r.imd_band = std::move(band);
        r.average_assessment = avg;
        r.outcome = dataset::ExamScore{final_score};
        recs.push_back(r);
    };
    add("1", "Wales", "10-20%", 70, 80);
    add("2", "Wales", "10-20%", 80, 70);
    add("3", "Wales", "0-10%", 90, 90);
    add("4", "London Region", "20-30%", 50, 60);
    add("5", "London Region", "0-10%", 60, 60);
    SimulationTable t;
    for (const auto& r : recs) t.rows.push_back(row(r.student_id, ExperimentConfig::exp2(persona::Exp2Kind::ii), 0, 50.0));
    t.rows[4] = row("5", ExperimentConfig::exp2(persona::Exp2Kind::ii), 0, std::nullopt);
    auto s = region_summary(recs, t);
    ASSERT_EQ(s.rows.size(), 2u);
    EXPECT_EQ(s.rows[0].region, "London Region");
    EXPECT_EQ(s.rows[0].students, 2u);
    EXPECT_EQ(s.rows[0].modal_imd_band, "0-10%");
    EXPECT_DOUBLE_EQ(*s.rows[0].real_final.mean, 60);
    EXPECT_EQ(s.rows[0].simulated.at("exp2:ii").n, 1u);
    EXPECT_EQ(s.rows[1].students, 3u);
    EXPECT_EQ(s.rows[1].modal_imd_band, "10-20%");
    EXPECT_DOUBLE_EQ(*s.rows[1].assessment.mean, 80);
    EXPECT_DOUBLE_EQ(*s.rows[1].real_final.mean, 80);
    EXPECT_DOUBLE_EQ(*s.rows[1].simulated.at("exp2:ii").mean, 50);
}

TEST(Heatmaps, DimensionsAndValues) {
    auto w = worlds::course(dataset::CourseId::star, 27, 6, 7);
    const std::size_t q = w.assets.post_items().size();
    auto gw = worlds::gateway_for(worlds::mock());
    const std::vector<persona::Exp3OKind> kinds{persona::Exp3OKind::k2a, persona::Exp3OKind::k3c};
    auto t = experiments::run_exp3_task2(w.records, w.assets, w.metrics, w.sheets, gw, kinds);
    auto grids = build_heatmaps(t, w.records, w.assets, w.metrics, w.sheets);
    std::vector<std::string> names;
    for (const auto& g : grids) names.push_back(g.name);
    EXPECT_EQ(names, (std::vector<std::string>{"2a", "3c", "real_correctness", "real_understanding"}));
    for (const auto& g : grids) {
        ASSERT_EQ(g.cells.size(), 27u);
        for (const auto& r : g.cells) {
            ASSERT_EQ(r.size(), q);
            for (const auto& c : r) {
                ASSERT_TRUE(c) << g.name;
                EXPECT_GE(*c, 0.0);
                EXPECT_LE(*c, 1.0);
            }
        }
    }
    // real correctness matches the score sheets
    const auto& real = grids[2];
    for (std::size_t r = 0; r < real.rows.size(); ++r) {
        for (std::size_t c = 0; c < q; ++c) {
            EXPECT_EQ(*real.cells[r][c], w.sheets.at(real.rows[r]).per_question_correct.at(real.columns[c]) ? 1.0 : 0.0);
        }
    }

    SimulationTable all_true;
    for (const auto& r : w.records) {
        for (const auto* item : w.assets.post_items()) {
            all_true.rows.push_back(row(r.student_id, ExperimentConfig::exp3o(persona::Exp3OKind::k3a, item->question_id), 0, true));
        }
    }
    auto g = build_heatmaps(all_true, w.records, w.assets, w.metrics, w.sheets).front();
    EXPECT_EQ(g.name, "3a");
    for (const auto& r : g.cells) {
        for (const auto& c : r) EXPECT_EQ(*c, 1.0);
    }
}

TEST(Csv, WritersEmitHeaders) {
    std::mt19937 rng(1);
    auto c = random_case(rng, 20, 2);
    auto rep = factor_alignment(c.table, c.records);
    auto a = csv::parse(alignment_csv(rep));
    EXPECT_EQ(a.rows().size(), rep.per_factor.size());
    auto p = csv::parse(cross_run_csv(rep));
    EXPECT_EQ(p.rows().size(), 2u);
    std::vector<NamedColumn> cols{{"x", {1.0, 2.0, 3.0}}, {"y", {1.0, 3.0, 2.0}}};
    auto m = csv::parse(matrix_csv(correlation_matrix(cols)));
    EXPECT_EQ(m.rows().size(), 4u);
    EXPECT_EQ(m.header().size(), 4u);
}
