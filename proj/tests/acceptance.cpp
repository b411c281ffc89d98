// Acceptance suite: one line per criterion, nonzero exit on any failure.
//   acceptance [out_dir]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rsoc/rsoc.hpp"

namespace fs = std::filesystem;
using rsoc::ExperimentConfig;
using rsoc::harness::RunReport;

namespace {

const fs::path kConfigs = RSOC_CONFIG_DIR;

struct Run {
    std::string name;
    ExperimentConfig cfg;
    double budget;  // seconds
};

ExperimentConfig from_file(const std::string& file, const std::string& extra = "") {
    auto cfg = ExperimentConfig::load(kConfigs / file);
    const auto more = ExperimentConfig::parse(extra);
    const ExperimentConfig defaults;
    for (const auto& [k, v] : more.values())
        if (v != defaults.values().at(k)) cfg.set(k, v);
    return cfg;
}

std::vector<Run> runs() {
    return {
        {"defaults", ExperimentConfig(), 10},
        {"oracle", from_file("oracle_circle.conf"), 10},
        {"dpp", from_file("dpp_check.conf"), 120},
        {"agreement", from_file("solver_agreement.conf"), 180},
        {"stability", from_file("estimates.conf", "estimates.parts = stability"), 60},
        {"generator", from_file("estimates.conf", "estimates.parts = generator"), 30},
        {"frozen_gap", from_file("estimates.conf", "estimates.parts = frozen_gap"), 60},
        {"bracket", from_file("estimates.conf", "estimates.parts = bracket"), 10},
        {"hyp_circle", from_file("hypotheses_circle.conf"), 10},
        {"hyp_sphere", from_file("hypotheses_sphere.conf"), 10},
        {"max_principle", from_file("max_principle.conf"), 30},
    };
}

struct Outcome {
    RunReport report;
    double seconds = 0.0;
};

Outcome execute(const Run& r, unsigned workers, const fs::path& out) {
    ExperimentConfig cfg = r.cfg;
    cfg.set("workers", std::to_string(workers));
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{rsoc::harness::run(cfg, {out, false, !out.empty()})};
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

double metric(const Outcome& o, const std::string& k) { return o.report.metrics.at(k); }

int failures = 0;

void line(int id, bool ok, const std::string& what, double seconds) {
    if (!ok) ++failures;
    std::printf("C%-2d %s  %s  [%.2f s]\n", id, ok ? "PASS" : "FAIL", what.c_str(), seconds);
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
    const auto suite = runs();
    std::map<std::string, Outcome> res;
    for (const auto& r : suite) {
        try {
            res[r.name] = execute(r, 1, out / r.name);
        } catch (const std::exception& e) {
            std::printf("run %s raised: %s\n", r.name.c_str(), e.what());
            return 1;
        }
    }
    auto within = [&](const std::string& n) {
        for (const auto& r : suite)
            if (r.name == n) return res[n].seconds < r.budget;
        return false;
    };

    double viol = 0.0, total = 0.0;
    for (const auto& [n, o] : res) {
        viol = std::max(viol, metric(o, "max_constraint_violation"));
        total += o.seconds;
    }
    line(1, viol <= 1e-9 && within("defaults"),
         fmt("max constraint violation %.3g over all runs (<= 1e-9), defaults run %.2f s (< 10)", viol,
             res["defaults"].seconds),
         total);

    const auto& o = res["oracle"];
    line(2, o.report.pass && within("oracle"),
         fmt("|J - exp(-1/2)| = %.3g = %.3g SE (<= 3)", metric(o, "abs_error"), metric(o, "error_in_se")), o.seconds);

    const auto& d = res["dpp"];
    line(3, d.report.pass && metric(d, "max_residual") <= 2e-2 && within("dpp"),
         fmt("max DPP residual %.3g (delta 1: %.3g, delta 4: %.3g; <= 2e-2)", metric(d, "max_residual"),
             metric(d, "max_residual_delta1"), metric(d, "max_residual_delta4")),
         d.seconds);

    const auto& a = res["agreement"];
    line(4, metric(a, "sup_diff") <= 5e-2 && metric(a, "sup_diff_refined") <= 2.5e-2 && within("agreement"),
         fmt("sup |u_prob - u_pde| %.3g (<= 5e-2), refined %.3g (<= 2.5e-2)", metric(a, "sup_diff"),
             metric(a, "sup_diff_refined")),
         a.seconds);

    const auto& l24 = res["stability"];
    line(5, metric(l24, "stability_failures") == 0 && metric(l24, "stability_instances") == 100 && within("stability"),
         fmt("stability estimate failures %.0f / %.0f (max lhs/rhs %.3g)", metric(l24, "stability_failures"),
             metric(l24, "stability_instances"), metric(l24, "stability_max_ratio")),
         l24.seconds);

    const auto& l33 = res["generator"];
    line(6, metric(l33, "generator_gap") <= 1e-4 && metric(l33, "generator_gap_const") <= 1e-10 && within("generator"),
         fmt("generator identity gap %.3g (<= 1e-4), constant test function %.3g (<= 1e-10)",
             metric(l33, "generator_gap"), metric(l33, "generator_gap_const")),
         l33.seconds);

    const auto& l34 = res["frozen_gap"];
    line(7, metric(l34, "frozen_gap_decay") >= 0.2 && within("frozen_gap"),
         fmt("gap/delta relative decay from 1/4 to 1/32: %.3g (>= 0.2)", metric(l34, "frozen_gap_decay")), l34.seconds);

    const auto& l35 = res["bracket"];
    line(8,
         metric(l35, "bracket_abs_diff") <= 1e-8 && metric(l35, "bracket_fine_excess") <= 1e-8 && within("bracket"),
         fmt("|frozen - grid min| %.3g (<= 1e-8), frozen - fine min %.3g (<= 1e-8)", metric(l35, "bracket_abs_diff"),
             metric(l35, "bracket_fine_excess")),
         l35.seconds);

    const auto& hc = res["hyp_circle"];
    const auto& hs = res["hyp_sphere"];
    line(9,
         metric(hc, "h2.v1.max_violation") <= 1e-10 && metric(hs, "h2.v1.max_violation") > 1e-3 &&
             metric(hc, "h1.pass") == 1.0 && within("hyp_circle") && within("hyp_sphere"),
         fmt("H2 circle %.3g (<= 1e-10), H2 sphere e3 x x %.3g (> 1e-3), H1 circle mu = 0 violation %.3g",
             metric(hc, "h2.v1.max_violation"), metric(hs, "h2.v1.max_violation"), metric(hc, "h1.max_violation")),
         hc.seconds + hs.seconds);

    const auto& mp = res["max_principle"];
    line(10, metric(mp, "max_excess") <= 1e-10 && within("max_principle"),
         fmt("max excursion outside [min Phi, max Phi] %.3g (<= 1e-10), CFL ratio %.3g", metric(mp, "max_excess"),
             metric(mp, "cfl_ratio")),
         mp.seconds);

    // Same seeds under 1, 2 and 8 workers: reports and every artifact must match.
    const auto t11 = std::chrono::steady_clock::now();
    std::size_t mismatches = 0, compared = 0;
    for (const auto& r : suite)
        for (unsigned w : {2u, 8u}) {
            const Outcome again = execute(r, w, {});
            const auto& base = res[r.name].report;
            ++compared;
            if (again.report.to_json() != base.to_json() || again.report.files != base.files) {
                ++mismatches;
                std::printf("    %s differs under %u workers\n", r.name.c_str(), w);
            }
        }
    rsoc::set_workers(1);
    line(11, mismatches == 0,
         fmt("%.0f of %.0f reruns under 2 and 8 workers byte-identical to 1 worker", double(compared - mismatches),
             double(compared)),
         std::chrono::duration<double>(std::chrono::steady_clock::now() - t11).count());

    std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}
