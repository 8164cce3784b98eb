// edutwin: validate a run config, simulate virtual students, analyze the
// resulting tables, and maintain the response cache.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "edutwin/commands.hpp"

int main(int argc, char** argv) {
    using namespace edutwin;
    CLI::App app{"Virtual-student simulation and alignment analysis"};
    app.require_subcommand(1);

    std::string config;
    std::string experiment;
    std::optional<std::size_t> parallelism;
    std::optional<double> rate_limit;
    std::string backend;
    std::vector<std::string> tables;
    bool quiet = false;

    auto* validate = app.add_subcommand("validate", "Check a run config and its inputs");
    validate->add_option("-c,--config", config, "Run config (YAML)")->required();

    auto experiment_check = CLI::IsMember({"exp1", "exp2", "exp3t1", "exp3t2"});
    auto* simulate = app.add_subcommand("simulate", "Run an experiment and write its table");
    simulate->add_option("-c,--config", config, "Run config (YAML)")->required();
    simulate->add_option("experiment", experiment, "exp1, exp2, exp3t1 or exp3t2")->required()->check(experiment_check);
    simulate->add_option("--parallelism", parallelism, "Maximum requests in flight")->check(CLI::PositiveNumber);
    simulate->add_option("--rate-limit", rate_limit, "Requests per minute (0 = unlimited)")->check(CLI::NonNegativeNumber);
    simulate->add_option("--backend", backend, "Override backend type")->check(CLI::IsMember({"mock", "remote", "replay"}));
    simulate->add_flag("-q,--quiet", quiet, "Do not log one line per job");

    auto* analyze = app.add_subcommand("analyze", "Compute alignment reports from a table");
    analyze->add_option("-c,--config", config, "Run config (YAML)")->required();
    analyze->add_option("experiment", experiment, "exp1, exp2, exp3t1 or exp3t2")->required()->check(experiment_check);
    analyze->add_option("--table", tables, "Table path(s); defaults to the output directory layout");

    auto* cache = app.add_subcommand("cache", "Inspect or prune the response cache");
    cache->require_subcommand(1);
    std::string cache_path;
    std::optional<std::string> keep_model;
    auto* inspect = cache->add_subcommand("inspect", "Count and verify cache records");
    inspect->add_option("path", cache_path, "Cache file")->required();
    auto* prune = cache->add_subcommand("prune", "Drop invalid and duplicate records");
    prune->add_option("path", cache_path, "Cache file")->required();
    prune->add_option("--keep-model", keep_model, "Drop records for every other model");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    cli::Io io;
    if (validate->parsed()) return cli::cmd_validate(config, io);
    if (simulate->parsed()) {
        cli::Overrides ov{parallelism, rate_limit, std::nullopt};
        if (!backend.empty()) ov.backend = cli::parse_backend_kind(backend);
        io.log_jobs = !quiet;
        return cli::cmd_simulate(config, *experiments::parse_experiment(experiment), ov, io);
    }
    if (analyze->parsed()) {
        std::vector<std::filesystem::path> paths(tables.begin(), tables.end());
        return cli::cmd_analyze(config, *experiments::parse_experiment(experiment), paths, io);
    }
    if (inspect->parsed()) return cli::cmd_cache_inspect(cache_path, io);
    return cli::cmd_cache_prune(cache_path, keep_model, io);
}
