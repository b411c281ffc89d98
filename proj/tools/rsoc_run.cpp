// rsoc_run run <config> [--seed N] [--out DIR] [--dump-paths] [--print-defaults]
// Exit status: 0 pass, 1 fail, 2 configuration error.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "rsoc/rsoc.hpp"

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kConfigError = 2;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Controlled diffusions on manifolds: experiment runner"};
    app.require_subcommand(1);
    auto* run = app.add_subcommand("run", "run the experiment named in a configuration file");
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    bool dump_paths = false;
    bool print_defaults = false;
    run->add_option("config", config_path, "configuration file (key = value lines)");
    run->add_option("--seed", seed, "override the master seed");
    run->add_option("--out", out_dir, "output directory")->capture_default_str();
    run->add_flag("--dump-paths", dump_paths, "also write 64 simulated paths to paths.csv");
    run->add_flag("--print-defaults", print_defaults, "print the default configuration and exit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfigError;
    }

    if (print_defaults) {
        std::cout << rsoc::default_config_text();
        return kPass;
    }
    if (config_path.empty()) {
        std::cerr << "error: a configuration file is required\n";
        return kConfigError;
    }

    try {
        auto cfg = rsoc::ExperimentConfig::load(config_path);
        if (seed) cfg.set("seed", std::to_string(*seed));
        const auto report = rsoc::harness::run(cfg, {out_dir, dump_paths, true});
        for (const auto& c : report.checks) {
            const double v = report.metrics.at(c.metric);
            std::printf("%-4s %-36s %.6g %s %.6g\n", c.holds(report.metrics) ? "ok" : "FAIL", c.metric.c_str(), v,
                        c.op.c_str(), c.threshold);
        }
        std::printf("%s %s (seed %llu, %.2f s) -> %s\n", report.pass ? "PASS" : "FAIL", report.experiment.c_str(),
                    static_cast<unsigned long long>(report.seed), report.wall_time, out_dir.c_str());
        return report.pass ? kPass : kFail;
    } catch (const rsoc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFail;
    }
}
