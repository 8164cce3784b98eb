#include <gtest/gtest.h>

#include <regex>
#include <sstream>

#include "edutwin/commands.hpp"
#include "edutwin/synthetic.hpp"
#include "support/fakes.hpp"

using namespace edutwin;
using namespace edutwin::cli;
namespace fs = std::filesystem;

namespace {

struct Demo {
    fakes::TempDir dir;
    fs::path config;
    std::ostringstream out, err;
    std::shared_ptr<fakes::CountingBackend> counting;

    explicit Demo(synthetic::DemoSizes sizes = {20, 10, 5, 1, 0}) { config = synthetic::write_demo(dir.path(), 31, sizes); }

    Io io() {
        out.str("");
        err.str("");
        return Io{out, err,
                  [this](const RunConfig& cfg) {
                      counting = std::make_shared<fakes::CountingBackend>(default_backend(cfg));
                      return std::static_pointer_cast<gateway::Backend>(counting);
                  },
                  [](gateway::Seconds) {}, false};
    }

    /// Rewrites one line of the generated config.
    void edit(const std::string& from, const std::string& to) {
        auto text = fakes::read(config);
        auto at = text.find(from);
        ASSERT_NE(at, std::string::npos) << from;
        text.replace(at, from.size(), to);
        synthetic::write_file(config, text);
    }

    fs::path out_dir() const { return dir.path() / "out"; }
};

std::vector<std::string> labels_of(const nlohmann::json& matrix) { return matrix["labels"].get<std::vector<std::string>>(); }

}  // namespace

TEST(Validate, AcceptsTheDemoConfig) {
    Demo d;
    EXPECT_EQ(cmd_validate(d.config, d.io()), kExitOk);
    EXPECT_NE(d.out.str().find("config ok"), std::string::npos);
}

TEST(Validate, UnknownKindNamesTheField) {
    Demo d;
    d.edit("kinds: [i, ii, iii, iv, v, vi, vii, viii]", "kinds: [i, ix]");
    EXPECT_EQ(cmd_validate(d.config, d.io()), kExitInvalidConfig);
    EXPECT_NE(d.err.str().find("experiments.exp2.kinds"), std::string::npos) << d.err.str();
    EXPECT_NE(d.err.str().find("ix"), std::string::npos);
}

TEST(Validate, MissingDatasetAndUnknownField) {
    Demo d;
    d.edit("dataset: exp1/students.csv", "dataset: exp1/nope.csv");
    EXPECT_EQ(cmd_validate(d.config, d.io()), kExitInvalidConfig);
    EXPECT_NE(d.err.str().find("experiments.exp1"), std::string::npos) << d.err.str();

    Demo e;
    e.edit("parallelism: 4\n", "parallelism: 4\nparalelism: 2\n");
    EXPECT_EQ(cmd_validate(e.config, e.io()), kExitInvalidConfig);
    EXPECT_NE(e.err.str().find("paralelism"), std::string::npos) << e.err.str();

    EXPECT_EQ(cmd_validate(e.dir / "absent.yaml", e.io()), kExitInvalidConfig);
}

TEST(Simulate, Exp2SelectedKindsAndWarmRerun) {
    Demo d;
    d.edit("kinds: [i, ii, iii, iv, v, vi, vii, viii]", "kinds: [i, ii, iii]");
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp2, {}, d.io()), kExitOk) << d.err.str();
    auto table_file = d.out_dir() / "exp2" / "table.csv";
    auto table = experiments::read_table(table_file);
    EXPECT_EQ(table.rows.size(), 30u);
    EXPECT_EQ(d.counting->calls.load(), 30);
    EXPECT_FALSE(fs::exists(d.out_dir() / "exp2" / "table.partial.csv"));
    const auto first_table = fakes::read(table_file);
    const auto first_manifest = fakes::read(d.out_dir() / "exp2" / "simulate_manifest.json");

    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp2, {}, d.io()), kExitOk);
    EXPECT_EQ(d.counting->calls.load(), 0);
    EXPECT_EQ(fakes::read(table_file), first_table);
    EXPECT_EQ(fakes::read(d.out_dir() / "exp2" / "simulate_manifest.json"), first_manifest);
    EXPECT_NE(d.err.str().find("backend calls: 0, cache hits: 30"), std::string::npos) << d.err.str();

    // replay serves the same answers from the cache alone
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp2, Overrides{std::nullopt, std::nullopt, BackendKind::replay}, d.io()),
              kExitOk)
        << d.err.str();
    EXPECT_EQ(fakes::read(table_file), first_table);
}

TEST(Simulate, Exp1RowCountAndJobLog) {
    Demo d({145, 10, 5, 1, 0});
    auto io = d.io();
    io.log_jobs = true;
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp1, {}, io), kExitOk) << d.err.str();
    EXPECT_EQ(experiments::read_table(d.out_dir() / "exp1" / "table.csv").rows.size(), 145u);
    const std::regex line("job key=[0-9a-f]{16} student=\\S+ config=exp1 run=0 kind=grade cache=(miss|hit) status=ok");
    std::istringstream lines(d.err.str());
    std::size_t jobs = 0, misses = 0;
    for (std::string l; std::getline(lines, l);) {
        if (l.rfind("job ", 0) == 0) {
            EXPECT_TRUE(std::regex_match(l, line)) << l;
            ++jobs;
            misses += l.find("cache=miss") != std::string::npos ? 1 : 0;
        }
    }
    EXPECT_EQ(jobs, 145u);
    // students sharing every factor level share one prompt
    EXPECT_EQ(static_cast<int>(misses), d.counting->calls.load());
}

TEST(Simulate, ReplayWithColdCacheFails) {
    Demo d;
    EXPECT_EQ(cmd_simulate(d.config, Experiment::exp1, Overrides{std::nullopt, std::nullopt, BackendKind::replay}, d.io()),
              kExitFailure);
    EXPECT_NE(d.err.str().find("replay cache is missing 20 entries"), std::string::npos) << d.err.str();
}

TEST(Analyze, Exp2LabelsAndManifest) {
    Demo d;
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp2, {}, d.io()), kExitOk);
    ASSERT_EQ(cmd_analyze(d.config, Experiment::exp2, {}, d.io()), kExitOk) << d.err.str();
    auto summary = nlohmann::json::parse(fakes::read(d.out_dir() / "exp2" / "report" / "summary.json"));
    EXPECT_EQ(labels_of(summary["matrix"]),
              (std::vector<std::string>{"i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "H", "A"}));
    auto manifest = nlohmann::json::parse(fakes::read(d.out_dir() / "exp2" / "report" / "manifest.json"));
    std::vector<std::string> paths;
    for (const auto& a : manifest["artifacts"]) paths.push_back(a["path"]);
    EXPECT_EQ(paths, (std::vector<std::string>{"matrix.csv", "region_summary.csv", "summary.json"}));
    for (const auto& a : manifest["artifacts"]) {
        EXPECT_EQ(a["sha256"], sha256_hex(fakes::read(d.out_dir() / "exp2" / "report" / a["path"].get<std::string>())));
    }
}

TEST(Analyze, Exp3LabelsForBothTasks) {
    Demo d;
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp3t2, {}, d.io()), kExitOk) << d.err.str();
    ASSERT_EQ(cmd_analyze(d.config, Experiment::exp3t2, {}, d.io()), kExitOk) << d.err.str();
    auto s2 = nlohmann::json::parse(fakes::read(d.out_dir() / "exp3t2" / "report" / "summary.json"));
    for (const char* course : {"birth", "star"}) {
        EXPECT_EQ(labels_of(s2["courses"][course]["matrix"]),
                  (std::vector<std::string>{"Hu", "1a", "1b", "1c", "2a", "2b", "2c", "3a", "3b", "3c", "U", "Pre", "ISC"}));
        EXPECT_EQ(s2["courses"][course]["heatmaps"].size(), 8u);
    }
    EXPECT_TRUE(fs::exists(d.out_dir() / "exp3t2" / "report" / "birth" / "heatmaps" / "3b.csv"));

    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp3t1, {}, d.io()), kExitOk) << d.err.str();
    ASSERT_EQ(cmd_analyze(d.config, Experiment::exp3t1, {}, d.io()), kExitOk) << d.err.str();
    auto s1 = nlohmann::json::parse(fakes::read(d.out_dir() / "exp3t1" / "report" / "summary.json"));
    EXPECT_EQ(labels_of(s1["courses"]["birth"]["matrix"]), (std::vector<std::string>{"Hu", "a", "b", "c"}));
    EXPECT_EQ(s1["courses"]["star"]["per_slide_r"]["b"].size(), 6u);
}

TEST(Analyze, MissingTableFails) {
    Demo d;
    EXPECT_EQ(cmd_analyze(d.config, Experiment::exp1, {}, d.io()), kExitFailure);
    EXPECT_NE(d.err.str().find("cannot analyze"), std::string::npos);
    // a table from another experiment is refused
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp2, {}, d.io()), kExitOk);
    std::vector<fs::path> wrong{d.out_dir() / "exp2" / "table.csv"};
    EXPECT_EQ(cmd_analyze(d.config, Experiment::exp1, wrong, d.io()), kExitFailure);
    EXPECT_NE(d.err.str().find("expected exp1"), std::string::npos) << d.err.str();
}

TEST(Cache, InspectAndPrune) {
    Demo d;
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp1, {}, d.io()), kExitOk);
    auto cache = d.out_dir() / "cache.jsonl";
    ASSERT_EQ(cmd_cache_inspect(cache, d.io()), kExitOk);
    EXPECT_NE(d.out.str().find("records: 20"), std::string::npos) << d.out.str();
    ASSERT_EQ(cmd_cache_prune(cache, std::string("other-model"), d.io()), kExitOk);
    EXPECT_NE(d.out.str().find("kept 0 records"), std::string::npos);
    EXPECT_EQ(cmd_cache_inspect(d.dir / "none.jsonl", d.io()), kExitFailure);

    // appended garbage makes inspect fail and prune discard it
    ASSERT_EQ(cmd_simulate(d.config, Experiment::exp1, {}, d.io()), kExitOk);
    {
        std::ofstream f(cache, std::ios::app);
        f << "{\"oops\":1}\n";
    }
    EXPECT_EQ(cmd_cache_inspect(cache, d.io()), kExitFailure);
    ASSERT_EQ(cmd_cache_prune(cache, std::nullopt, d.io()), kExitOk);
    EXPECT_NE(d.out.str().find("kept 20 records"), std::string::npos) << d.out.str();
    EXPECT_EQ(cmd_cache_inspect(cache, d.io()), kExitOk);
}

TEST(Simulate, UnconfiguredExperimentIsAConfigError) {
    Demo d;
    d.edit("  exp1:\n    dataset: exp1/students.csv\n", "");
    EXPECT_EQ(cmd_simulate(d.config, Experiment::exp1, {}, d.io()), kExitInvalidConfig);
    EXPECT_EQ(cmd_analyze(d.config, Experiment::exp1, {}, d.io()), kExitInvalidConfig);
}
