// Writes a synthetic demo workspace (datasets + mock-backed config.yaml).

#include <iostream>

#include <CLI11.hpp>

#include "edutwin/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic edutwin workspace"};
    std::string dir;
    std::uint64_t seed = 7;
    edutwin::synthetic::DemoSizes sizes;
    app.add_option("dir", dir, "Output directory")->required();
    app.add_option("--seed", seed, "Generator seed");
    app.add_option("--exp1-students", sizes.exp1, "Exp-1 cohort size");
    app.add_option("--exp2-students", sizes.exp2, "Exp-2 cohort size");
    app.add_option("--exp3-students", sizes.exp3, "Lecture cohort size per course");
    app.add_option("--runs", sizes.runs, "Exp-1 runs")->check(CLI::PositiveNumber);
    app.add_option("--temperature", sizes.temperature, "Sampling temperature")->check(CLI::Range(0.0, 2.0));
    CLI11_PARSE(app, argc, argv);
    try {
        std::cout << edutwin::synthetic::write_demo(dir, seed, sizes).string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
