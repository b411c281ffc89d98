#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "test_support.hpp"

using namespace rsoc;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = RSOC_CONFIG_DIR;

ExperimentConfig config(const std::string& text) { return ExperimentConfig::parse(text); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("rsoc_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int cli(const std::string& args) {
    const std::string cmd = std::string(RSOC_RUN_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Harness, OracleConfigPasses) {
    const auto r = harness::run(ExperimentConfig::load(kConfigs / "oracle_circle.conf"));
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.metrics.at("error_in_se"), 3.0);
    EXPECT_LE(r.metrics.at("max_constraint_violation"), 1e-9);
}

TEST(Harness, SingletonDppMeetsTheTighterTolerance) {
    const auto r = harness::run(ExperimentConfig::load(kConfigs / "dpp_singleton.conf"));
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.metrics.at("max_residual"), 1e-2);
}

TEST(Harness, ConfigErrors) {
    EXPECT_THROW(config("no_such_key = 1"), ConfigError);
    EXPECT_THROW(config("experiment oracle-circle"), ConfigError);
    EXPECT_THROW(harness::run(config("manifold = klein")), ConfigError);
    EXPECT_THROW(harness::run(config("fields = rot, spin")), ConfigError);
    EXPECT_THROW(harness::run(config("experiment = nothing")), ConfigError);
    EXPECT_THROW(harness::run(config("driver = cubic")), ConfigError);
    EXPECT_THROW(harness::run(config("x0 = 1, 0, 0")), ConfigError);
    EXPECT_THROW(harness::run(config("control.lower = 0\ncontrol.upper = 1")), ConfigError);
    EXPECT_THROW(harness::run(config("mc.n_sub = 511")), ConfigError);
    EXPECT_THROW(harness::run(config("seed = -3")), ConfigError);
    EXPECT_THROW(harness::run(config("experiment = estimates\nestimates.parts = nothing")), ConfigError);
    EXPECT_THROW(harness::run(config("experiment = convergence-table\nconvergence.meshes = 64, 128")), ConfigError);
}

TEST(Harness, LadderNeedsThreeLevels) {
    const auto cfg = config("driver = zero\ncontrol.lower = 0, 1\ncontrol.upper = 0, 1\ncontrol.points = 1");
    EXPECT_THROW(harness::convergence_table(cfg, {{32, 0, 0}, {64, 0, 0}}), ConfigError);
}

TEST(Harness, ConstantSolutionLadder) {
    const auto cfg = config(
        "driver = zero\nterminal = const\nterminal.c = 0.6\ncontrol.lower = 0, 1\ncontrol.upper = 0, 1\n"
        "control.points = 1");
    const auto rows = harness::convergence_table(cfg, {{16, 0, 0}, {32, 0, 0}, {64, 0, 0}});
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) {
        EXPECT_LE(r.error, 1e-10);
        EXPECT_EQ(r.ratio, 1.0);
    }
    EXPECT_EQ(rows[1].n_steps, 4 * rows[0].n_steps);
}

TEST(Harness, ReportRecheck) {
    auto r = harness::run(ExperimentConfig::load(kConfigs / "max_principle.conf"));
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(harness::recheck(r.to_json()), r.pass);
    r.metrics["max_excess"] = 1.0;
    EXPECT_FALSE(harness::recheck(r.to_json()));
    const auto j = io::Json::parse(r.to_json());
    EXPECT_FALSE(j.contains("wall_time"));
    EXPECT_TRUE(j.at("artifacts").is_array());
}

TEST(Harness, WorkerCountDoesNotChangeOutputs) {
    auto cfg = ExperimentConfig::load(kConfigs / "max_principle.conf");
    cfg.set("mesh.n_theta", "64");
    cfg.set("workers", "1");
    const auto a = harness::run(cfg, {{}, true, false});
    cfg.set("workers", "3");
    const auto b = harness::run(cfg, {{}, true, false});
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_EQ(a.files, b.files);
    set_workers(1);
}

TEST(Harness, DefaultsRoundTrip) {
    const auto parsed = config(default_config_text());
    EXPECT_EQ(parsed.dump(), ExperimentConfig().dump());
    EXPECT_NO_THROW(parsed.validate());
}

TEST(Harness, HundredStabilityInstances) {
    const auto r = harness::run(config("experiment = estimates\nestimates.parts = stability\nestimates.instances = 100"));
    EXPECT_EQ(r.metrics.at("stability_instances"), 100.0);
    EXPECT_EQ(r.metrics.at("stability_failures"), 0.0);
    EXPECT_TRUE(r.pass);
}

TEST(Harness, SphereHypothesesFailOnlyWhereExpected) {
    const auto r = harness::run(ExperimentConfig::load(kConfigs / "hypotheses_sphere.conf"));
    EXPECT_FALSE(r.pass);
    EXPECT_GT(r.metrics.at("h2.v1.max_violation"), 1e-3);
    EXPECT_EQ(r.metrics.at("uniqueness_certified"), 0.0);
    const auto c = harness::run(ExperimentConfig::load(kConfigs / "hypotheses_circle.conf"));
    EXPECT_TRUE(c.pass);
    EXPECT_LE(c.metrics.at("h2.v1.max_violation"), 1e-10);
    EXPECT_EQ(c.metrics.at("uniqueness_certified"), 1.0);
}

TEST(Cli, ExitCodesAndArtifacts) {
    const fs::path out = scratch("cli");
    EXPECT_EQ(cli("run --print-defaults"), 0);
    EXPECT_EQ(cli("run " + (out / "missing.conf").string()), 2);
    {
        std::ofstream bad(out / "bad.conf");
        bad << "experiment = oracle-circle\nbogus = 1\n";
    }
    EXPECT_EQ(cli("run " + (out / "bad.conf").string()), 2);
    EXPECT_EQ(cli("run " + (kConfigs / "hypotheses_sphere.conf").string() + " --out " + (out / "sphere").string()), 1);
    EXPECT_EQ(cli("run " + (kConfigs / "oracle_circle.conf").string() + " --seed 7 --dump-paths --out " +
                  (out / "oracle").string()),
              0);
    for (const char* f : {"report.json", "metrics.csv", "schema.csv", "config.txt", "paths.csv", "timing.json"})
        EXPECT_TRUE(fs::exists(out / "oracle" / f)) << f;
    const std::string report = slurp(out / "oracle" / "report.json");
    EXPECT_TRUE(harness::recheck(report));
    EXPECT_EQ(io::Json::parse(report).at("seed").get<std::uint64_t>(), 7u);
    EXPECT_NE(slurp(out / "oracle" / "config.txt").find("seed = 7"), std::string::npos);
}
