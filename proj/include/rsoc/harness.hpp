#pragma once

// Experiment runner: wires a configuration into the solvers, evaluates the
// pass checks and collects CSV/JSON artifacts in memory before writing them.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rsoc/config.hpp"
#include "rsoc/hjb.hpp"
#include "rsoc/hypotheses.hpp"
#include "rsoc/io.hpp"
#include "rsoc/value.hpp"

namespace rsoc::harness {

/// One pass condition: metric <op> threshold.
struct Check {
    std::string metric;
    std::string op;  // "<=" or ">="
    double threshold = 0.0;

    bool holds(const std::map<std::string, double>& metrics) const {
        const auto it = metrics.find(metric);
        if (it == metrics.end()) return false;
        return op == "<=" ? it->second <= threshold : it->second >= threshold;
    }
};

/// Pass is a pure function of the metrics and the checks.
inline bool decide(const std::vector<Check>& checks, const std::map<std::string, double>& metrics) {
    for (const auto& c : checks)
        if (!c.holds(metrics)) return false;
    return true;
}

struct RunReport {
    std::string experiment;
    std::uint64_t seed = 0;
    std::map<std::string, double> metrics;
    std::vector<Check> checks;
    bool pass = false;
    double wall_time = 0.0;
    /// Emitted files, name -> content.
    std::map<std::string, std::string> files;

    std::vector<std::string> artifact_paths() const {
        std::vector<std::string> out;
        for (const auto& [name, content] : files) out.push_back(name);
        out.push_back("report.json");
        return out;
    }

    /// Deterministic report; wall time is kept out so reruns compare equal.
    std::string to_json() const {
        io::Json j;
        j["experiment"] = experiment;
        j["seed"] = seed;
        j["pass"] = pass;
        io::Json m = io::Json::object();
        for (const auto& [k, v] : metrics) m[k] = v;
        j["metrics"] = m;
        io::Json cs = io::Json::array();
        for (const auto& c : checks) {
            io::Json e;
            e["metric"] = c.metric;
            e["op"] = c.op;
            e["threshold"] = c.threshold;
            e["pass"] = c.holds(metrics);
            cs.push_back(e);
        }
        j["checks"] = cs;
        j["artifacts"] = artifact_paths();
        return j.dump(2) + "\n";
    }
};

/// Rebuilds the checks and the pass flag from a report.json document.
inline bool recheck(const std::string& report_json) {
    const auto j = io::Json::parse(report_json);
    std::map<std::string, double> metrics;
    for (const auto& [k, v] : j.at("metrics").items()) metrics[k] = v.get<double>();
    std::vector<Check> checks;
    for (const auto& c : j.at("checks"))
        checks.push_back({c.at("metric").get<std::string>(), c.at("op").get<std::string>(), c.at("threshold").get<double>()});
    return decide(checks, metrics);
}

struct RunOptions {
    std::filesystem::path out_dir;
    bool dump_paths = false;
    bool write_files = false;
};

namespace detail {

inline std::string key_of(double v) {
    std::string s = io::num(v);
    for (char& c : s)
        if (c == '.') c = 'p';
    return s;
}

/// Working context shared by the experiments.
struct Context {
    const ExperimentConfig& cfg;
    ControlProblem pb;
    std::uint64_t seed;
    RunReport& report;

    double tol(const std::string& name) const { return cfg.number("tol." + name); }
    void metric(const std::string& name, double v) { report.metrics[name] = v; }
    void check(const std::string& metric, const std::string& op, double threshold) {
        report.checks.push_back({metric, op, threshold});
    }
    void violation(double v) {
        auto& slot = report.metrics["max_constraint_violation"];
        slot = std::max(slot, v);
    }
    ManifoldMesh mesh() const { return ManifoldMesh(pb.manifold, cfg.mesh_sizes()); }
    ValueOptions value_options(std::uint64_t tag) const {
        return ValueOptions{cfg.count("mc.n_sub", 2), hash_counters(seed, tag), true,
                            static_cast<int>(cfg.count("mc.picard_iters", 1))};
    }
    RegressionBasis basis() const {
        return RegressionBasis(pb.manifold.ambient_dim(), static_cast<int>(cfg.count("mc.basis_degree", 1)));
    }
};

/// Angular speed w of a catalog circle field V(x) = w J x; throws if the field
/// is not of that form.
inline double circle_speed(const VectorField& v, const std::string& key) {
    const double w = v(0.0, circle_point(0.0))(1);
    for (double th : {0.7, 2.1, -1.3}) {
        const Vec x = circle_point(th);
        const Vec expect = w * make_vec({-x(1), x(0)});
        if ((v(0.0, x) - expect).norm() > 1e-12) throw ConfigError(key, "field '" + v.id + "' is not a rotation");
    }
    return w;
}

inline std::size_t hjb_steps(const Context& c, const ManifoldMesh& mesh, const TimeGrid& grid) {
    const std::size_t configured = c.cfg.count("hjb.n_steps");
    if (configured > 0 && mesh.sizes().n_theta == c.cfg.mesh_sizes().n_theta) return configured;
    return hjb_steps_for_cfl(c.pb, mesh, grid.t0(), grid.T(), c.cfg.number("hjb.cfl"), grid.n_steps());
}

/// HJB layers restricted to a coarser time grid that divides them.
inline MeshField restrict_time(const MeshField& fine, const TimeGrid& coarse) {
    const std::size_t r = fine.n_steps() / coarse.n_steps();
    if (r * coarse.n_steps() != fine.n_steps()) throw GridMismatch("restrict_time: grids do not nest");
    MeshField out(coarse, fine.mesh);
    for (std::size_t i = 0; i <= coarse.n_steps(); ++i)
        for (std::size_t j = 0; j < fine.n_nodes(); ++j) {
            out.at(i, j) = fine.at(i * r, j);
            if (i < coarse.n_steps()) out.argmin[i * fine.n_nodes() + j] = fine.control(i * r, j);
        }
    return out;
}

inline double sup_difference(const MeshField& a, const MeshField& b) {
    if (a.u.size() != b.u.size()) throw GridMismatch("sup_difference: shapes differ");
    double s = 0.0;
    for (std::size_t k = 0; k < a.u.size(); ++k) s = std::max(s, std::abs(a.u[k] - b.u[k]));
    return s;
}

// ---------------------------------------------------------------------------

inline void oracle_circle(Context& c) {
    if (c.pb.manifold.kind() != ManifoldKind::Circle) throw ConfigError("manifold", "oracle-circle needs the circle");
    const double w = circle_speed(c.pb.fields[1], "fields");
    const double sigma = c.cfg.number("oracle.sigma");
    ControlValue v = ControlValue::Zero(c.pb.d() + 1);
    v(1) = sigma;
    Params tp;
    tp.set("index", 0.0);
    ControlProblem pb{c.pb.manifold, c.pb.fields, driver_from_id("zero", {}, c.pb.d()),
                      terminal_from_id("coord", tp, c.pb.manifold), ControlSet::singleton(v)};
    const TimeGrid grid = c.cfg.time_grid();
    const Vec x0 = c.cfg.x0(pb.manifold);
    const CostOptions opts{grid.n_steps(), c.cfg.count("mc.n_paths", 2), hash_counters(c.seed, 1),
                           static_cast<int>(c.cfg.count("mc.basis_degree", 1)),
                           static_cast<int>(c.cfg.count("mc.picard_iters", 1)), false};
    const auto est = cost_functional(pb, grid.t0(), grid.T(), x0, ControlPolicy::constant(v), opts);
    const double exact = x0(0) * std::exp(-0.5 * sigma * sigma * w * w * (grid.T() - grid.t0()));
    const double err = std::abs(est.value - exact);
    c.metric("J", est.value);
    c.metric("exact", exact);
    c.metric("abs_error", err);
    c.metric("standard_error", est.standard_error);
    c.metric("error_in_se", est.standard_error > 0 ? err / est.standard_error : 0.0);
    c.violation(est.max_constraint_violation);
    c.check("error_in_se", "<=", c.tol("oracle_se"));
}

inline void dpp_check(Context& c) {
    const TimeGrid grid = c.cfg.time_grid();
    const ManifoldMesh mesh = c.mesh();
    const auto vf = value_function(c.pb, grid, mesh, c.value_options(2));
    c.violation(vf.max_constraint_violation);
    double max_abs = 0.0;
    for (double u : vf.u) max_abs = std::max(max_abs, std::abs(u));
    c.metric("max_abs_u", max_abs);
    c.metric("value_bound", value_bound(c.pb, mesh, grid));

    const DppOptions opts{c.cfg.count("mc.window_paths", 2), true, static_cast<int>(c.cfg.count("mc.basis_degree", 1)),
                          static_cast<int>(c.cfg.count("mc.picard_iters", 1)), c.tol("dpp")};
    std::vector<DppReport> reps;
    double worst = 0.0;
    for (double dd : c.cfg.numbers("dpp.deltas")) {
        if (dd < 1 || dd != std::floor(dd) || dd > static_cast<double>(grid.n_steps()))
            throw ConfigError("dpp.deltas", "window lengths must be integers in [1, time.n_steps]");
        const auto delta = static_cast<std::size_t>(dd);
        const auto probes = default_probes(grid.n_steps(), mesh.size(), delta, c.cfg.count("dpp.probes", 1));
        auto r = dpp_residual_check(c.pb, vf, delta, probes, hash_counters(c.seed, 3, delta), opts);
        c.metric("max_residual_delta" + std::to_string(delta), r.max_residual);
        c.violation(r.max_constraint_violation);
        worst = std::max(worst, r.max_residual);
        reps.push_back(std::move(r));
    }
    c.metric("max_residual", worst);
    c.check("max_residual", "<=", c.tol("dpp"));
    c.report.files["value_field.csv"] = io::field_csv(vf);
    c.report.files["dpp_residuals.csv"] = io::dpp_csv(reps);
}

inline void solver_agreement(Context& c) {
    const HjbOptions hopts{c.cfg.number("hjb.cfl")};
    auto level = [&](const TimeGrid& grid, const ManifoldMesh& mesh, const std::string& suffix) {
        const auto vf = value_function(c.pb, grid, mesh, c.value_options(2));
        const auto hf = solve_hjb(c.pb, TimeGrid(grid.t0(), grid.T(), hjb_steps(c, mesh, grid)), mesh, hopts);
        const MeshField shared = restrict_time(hf, grid);
        const double diff = sup_difference(vf, shared);
        std::size_t same = 0;
        for (std::size_t k = 0; k < vf.argmin.size(); ++k) same += vf.argmin[k] == shared.argmin[k];
        c.metric("sup_diff" + suffix, diff);
        c.metric("argmin_agreement" + suffix, static_cast<double>(same) / static_cast<double>(vf.argmin.size()));
        c.metric("hjb_cfl_ratio" + suffix, hf.cfl_ratio);
        c.metric("hjb_n_steps" + suffix, static_cast<double>(hf.n_steps()));
        c.metric("hjb_consistency_residual" + suffix,
                 hjb_consistency_residual(c.pb, c.cfg.probe(c.pb.manifold), mesh, grid.t0()));
        c.violation(vf.max_constraint_violation);
        c.violation(hf.max_constraint_violation);
        c.report.files["value_field" + suffix + ".csv"] = io::field_csv(vf);
        c.report.files["hjb_field" + suffix + ".csv"] = io::field_csv(shared);
    };
    const TimeGrid grid = c.cfg.time_grid();
    const ManifoldMesh mesh = c.mesh();
    level(grid, mesh, "");
    level(TimeGrid(grid.t0(), grid.T(), grid.n_steps() * 2), mesh.refined(), "_refined");
    c.check("sup_diff", "<=", c.tol("agreement"));
    c.check("sup_diff_refined", "<=", c.tol("agreement_refined"));
}

// --- estimates -------------------------------------------------------------

/// Randomized a priori estimate instances on the circle: two BSDEs with a
/// shared Lipschitz driver g(y, z) = a sin y + b tanh z (C_L = max(|a|, |b|)),
/// different terminal values and different additive perturbations.
inline void stability(Context& c) {
    const std::size_t n = c.cfg.count("estimates.instances", 1);
    const Manifold m = Manifold::circle();
    const std::vector<VectorField> fields = {field_from_id(m, "rot"), field_from_id(m, "rot")};
    const RegressionBasis basis(2, 2);
    std::size_t failures = 0;
    double worst_ratio = 0.0, viol = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        SampleRng rng(hash_counters(c.seed, 24, k));
        const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
        const double c_l = std::max(std::abs(a), std::abs(b));
        const double T = rng.uniform(0.05, 1.0);
        const double sigma = rng.uniform(0.3, 1.2);
        const double xi[2][2] = {{rng.uniform(-1, 1), rng.uniform(-1, 1)}, {rng.uniform(-1, 1), rng.uniform(-1, 1)}};
        const double ph[2][2] = {{rng.uniform(-1, 1), rng.uniform(-1, 1)}, {rng.uniform(-1, 1), rng.uniform(-1, 1)}};
        const Vec x0 = circle_point(rng.uniform(0.0, 2.0 * std::numbers::pi));
        auto noise = std::make_shared<const BrownianGrid>(TimeGrid(0.0, T, 16), 512, 1, hash_counters(c.seed, 240, k));
        const auto ens = simulate(m, fields, x0, ControlPolicy::constant(make_control({0.0, sigma})), noise);
        viol = std::max(viol, ens.max_constraint_violation());
        const std::size_t np = ens.n_paths(), ns = ens.n_steps();
        const ConditionalExpectations cond(ens, 0, ns, basis);
        std::vector<double> terminal[2], perturb[2];
        std::vector<BsdeSolution> sols;
        for (int s = 0; s < 2; ++s) {
            terminal[s].resize(np);
            perturb[s].resize(ns * np);
            for (std::size_t p = 0; p < np; ++p) {
                const Vec& x = ens.state(ns, p);
                terminal[s][p] = xi[s][0] * x(0) + xi[s][1] * x(1) * x(1);
            }
            for (std::size_t i = 0; i < ns; ++i)
                for (std::size_t p = 0; p < np; ++p)
                    perturb[s][i * np + p] = ph[s][0] * ens.state(i, p)(1) + ph[s][1] * ens.grid().time(i);
            const auto& phi = perturb[s];
            const PathDriver g = [&phi, np, a, b](std::size_t i, std::size_t p, double y, std::span<const double> z) {
                return a * std::sin(y) + b * std::tanh(z[0]) + phi[i * np + p];
            };
            sols.push_back(solve_backward_window(ens, 0, ns, terminal[s], g, c_l, cond));
        }
        const auto r = stability_check(sols[0], sols[1], terminal[0], terminal[1], perturb[0], perturb[1], c_l,
                                       c.tol("stability_slack"));
        if (!r.pass) ++failures;
        if (r.rhs > 0) worst_ratio = std::max(worst_ratio, r.lhs / r.rhs);
    }
    c.metric("stability_instances", static_cast<double>(n));
    c.metric("stability_failures", static_cast<double>(failures));
    c.metric("stability_max_ratio", worst_ratio);
    c.violation(viol);
    c.check("stability_failures", "<=", 0.0);
}

inline void flow(Context& c) {
    const std::size_t n = c.cfg.count("estimates.flow_instances", 1);
    const TimeGrid grid = c.cfg.time_grid();
    const double C = c.cfg.number("estimates.flow_C");
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        SampleRng rng(hash_counters(c.seed, 77, k));
        const Vec x = c.pb.manifold.random_point(rng);
        const Vec xp = c.pb.manifold.random_point(rng);
        ControlValue v(c.pb.controls.dimension()), vp(c.pb.controls.dimension());
        for (int a = 0; a < v.size(); ++a) {
            v(a) = rng.uniform(c.pb.controls.lower()(a), c.pb.controls.upper()(a));
            vp(a) = rng.uniform(c.pb.controls.lower()(a), c.pb.controls.upper()(a));
        }
        auto noise = std::make_shared<const BrownianGrid>(TimeGrid(grid.t0(), grid.T(), 32), 512, c.pb.d(),
                                                          hash_counters(c.seed, 770, k));
        const auto r = flow_continuity_check(c.pb.manifold, c.pb.fields, x, xp, ControlPolicy::constant(v),
                                             ControlPolicy::constant(vp), noise, C);
        if (r.rhs > 0) worst = std::max(worst, r.lhs / r.rhs);
    }
    c.metric("flow_max_ratio", worst);
    c.check("flow_max_ratio", "<=", 1.0);
}

inline void generator(Context& c) {
    const TimeGrid grid = c.cfg.time_grid();
    const double delta = c.cfg.number("window.delta");
    const TimeGrid window(grid.t0(), grid.t0() + delta, c.cfg.count("window.substeps", 1));
    auto noise = std::make_shared<const BrownianGrid>(window, c.cfg.count("window.n_paths", 2), c.pb.d(),
                                                      hash_counters(c.seed, 33));
    const Vec x0 = c.cfg.x0(c.pb.manifold);
    const auto policy = ControlPolicy::constant(c.pb.controls.upper());
    const BsdeOptions bo{static_cast<int>(c.cfg.count("mc.picard_iters", 1))};
    const auto r = lemma33_check(c.pb, c.cfg.probe(c.pb.manifold), x0, policy, noise, c.basis(), bo, c.tol("generator"));
    Params cp;
    cp.set("c", c.cfg.number("window.const_probe"));
    const auto rc = lemma33_check(c.pb, probe_from_id("const", cp, c.pb.manifold), x0, policy, noise, c.basis(), bo,
                                  c.tol("generator_const"));
    c.metric("generator_gap", r.gap);
    c.metric("generator_continuum_gap", r.continuum_gap);
    c.metric("generator_gap_const", rc.gap);
    c.violation(r.max_constraint_violation);
    c.check("generator_gap", "<=", c.tol("generator"));
    c.check("generator_gap_const", "<=", c.tol("generator_const"));
}

inline void frozen_gap(Context& c) {
    const TimeGrid grid = c.cfg.time_grid();
    const auto deltas = c.cfg.numbers("frozen_gap.deltas");
    if (deltas.size() < 2) throw ConfigError("frozen_gap.deltas", "need at least two window lengths");
    for (std::size_t k = 1; k < deltas.size(); ++k)
        if (!(deltas[k] < deltas[k - 1])) throw ConfigError("frozen_gap.deltas", "must be decreasing");
    const FrozenGapOptions opts{c.cfg.count("window.substeps", 1), c.cfg.count("window.n_paths", 2),
                              hash_counters(c.seed, 34), true, static_cast<int>(c.cfg.count("mc.basis_degree", 1)),
                              static_cast<int>(c.cfg.count("mc.picard_iters", 1)), c.tol("frozen_gap_decay")};
    const auto r = lemma34_gap(c.pb, c.cfg.probe(c.pb.manifold), grid.t0(), c.cfg.x0(c.pb.manifold), deltas, opts);
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        c.metric("frozen_gap_" + key_of(deltas[k]), r.gaps[k]);
        c.metric("frozen_ratio_" + key_of(deltas[k]), r.ratios[k]);
    }
    const double decay = r.ratios.front() > 0 ? 1.0 - r.ratios.back() / r.ratios.front() : 1.0;
    c.metric("frozen_gap_decay", decay);
    c.violation(r.max_constraint_violation);
    c.check("frozen_gap_decay", ">=", c.tol("frozen_gap_decay"));
}

inline void bracket(Context& c) {
    const TimeGrid grid = c.cfg.time_grid();
    const auto b = frozen_ode_bracket(c.pb, c.cfg.probe(c.pb.manifold), c.cfg.x0(c.pb.manifold), grid.t0(),
                                      c.cfg.number("window.delta"), static_cast<int>(c.cfg.count("bracket.refine", 1)),
                                      c.tol("bracket"));
    c.metric("bracket_frozen", b.frozen);
    c.metric("bracket_grid_min", b.grid_min);
    c.metric("bracket_fine_min", b.fine_min);
    c.metric("bracket_abs_diff", std::abs(b.frozen - b.grid_min));
    c.metric("bracket_fine_excess", b.frozen - b.fine_min);
    c.check("bracket_abs_diff", "<=", c.tol("bracket"));
    c.check("bracket_fine_excess", "<=", c.tol("bracket"));
}

inline void moduli(Context& c) {
    const std::size_t coarsen = c.cfg.count("estimates.moduli_coarsen", 1);
    const TimeGrid grid = c.cfg.time_grid();
    MeshSizes s = c.cfg.mesh_sizes();
    s.n_theta = std::max<int>(3, s.n_theta / static_cast<int>(coarsen));
    s.n_lat = std::max<int>(3, (s.n_lat - 1) / static_cast<int>(coarsen) + 1);
    s.n_lon = std::max<int>(3, s.n_lon / static_cast<int>(coarsen));
    const std::size_t steps = std::max<std::size_t>(1, grid.n_steps() / coarsen);
    const auto study = moduli_refinement(c.pb, TimeGrid(grid.t0(), grid.T(), steps), ManifoldMesh(c.pb.manifold, s),
                                         c.value_options(5), 3);
    const double band = c.tol("moduli_halving");
    double worst_band = 0.0;
    for (std::size_t l = 0; l < study.levels.size(); ++l) {
        c.metric("moduli_space_" + std::to_string(l), study.levels[l].space_modulus);
        c.metric("moduli_time_" + std::to_string(l), study.levels[l].time_modulus);
        if (l > 0) {
            const double coarse = study.levels[l - 1].space_modulus;
            const double ratio = coarse > 1e-12 ? study.levels[l].space_modulus / coarse : 0.5;
            c.metric("moduli_space_ratio_" + std::to_string(l), ratio);
            worst_band = std::max(worst_band, std::abs(ratio - 0.5) / 0.5);
        }
    }
    c.metric("moduli_monotone", study.monotone_decay ? 1.0 : 0.0);
    c.metric("moduli_halving_deviation", worst_band);
    c.check("moduli_monotone", ">=", 1.0);
    c.check("moduli_halving_deviation", "<=", band);
}

inline void estimates(Context& c) {
    static const std::set<std::string> known = {"stability", "flow", "generator", "frozen_gap", "bracket", "moduli"};
    const auto parts = c.cfg.list("estimates.parts");
    if (parts.empty()) throw ConfigError("estimates.parts", "no parts selected");
    for (const auto& p : parts)
        if (!known.contains(p)) throw ConfigError("estimates.parts", "unknown part '" + p + "'");
    auto want = [&](const char* p) { return std::find(parts.begin(), parts.end(), p) != parts.end(); };
    if (want("stability")) stability(c);
    if (want("flow")) flow(c);
    if (want("generator")) generator(c);
    if (want("frozen_gap")) frozen_gap(c);
    if (want("bracket")) bracket(c);
    if (want("moduli")) moduli(c);
}

inline void hypotheses(Context& c) {
    const std::size_t n = c.cfg.count("hypotheses.samples", 1);
    const auto cert = uniqueness_certified(c.pb, c.cfg.number("hypotheses.mu"), n, hash_counters(c.seed, 5));
    const auto mod = sample_modulus_311(c.pb, c.cfg.probe(c.pb.manifold), c.cfg.numbers("hypotheses.alphas"), n,
                                        c.cfg.number("hypotheses.c_bar"), hash_counters(c.seed, 6));
    io::Json doc = io::Json::array();
    double viol = 0.0;
    auto record = [&](const HypothesisReport& r, const std::string& key) {
        c.metric(key + ".max_violation", r.max_violation);
        c.metric(key + ".pass", r.pass ? 1.0 : 0.0);
        c.check(key + ".max_violation", "<=", r.threshold);
        doc.push_back(io::to_json(r));
        if (r.witness.x.size() > 0) viol = std::max(viol, c.pb.manifold.constraint_violation(r.witness.x));
        if (r.witness.y.size() > 0) viol = std::max(viol, c.pb.manifold.constraint_violation(r.witness.y));
    };
    for (std::size_t k = 0; k < cert.reports.size(); ++k) {
        const auto& r = cert.reports[k];
        std::string key = r.name.substr(0, 2);
        for (char& ch : key) ch = static_cast<char>(std::tolower(ch));
        if (r.name.rfind("H2", 0) == 0) key += ".v" + std::to_string(k - 2);
        record(r, key);
    }
    record(mod.summary, "modulus");
    io::Json per_alpha = io::Json::object();
    for (std::size_t k = 0; k < mod.alphas.size(); ++k) {
        c.metric("modulus.ratio_alpha" + key_of(mod.alphas[k]), mod.max_ratio[k]);
        per_alpha[io::num(mod.alphas[k])] = mod.max_ratio[k];
    }
    doc.back()["per_alpha"] = per_alpha;
    c.metric("uniqueness_certified", cert.certified ? 1.0 : 0.0);
    c.violation(viol);
    c.report.files["hypotheses.json"] = doc.dump(2) + "\n";
}

/// Closed form of the circle heat problem with rotation fields, f = 0 and
/// Phi = c + a x_k under a constant control.
struct CircleHeatOracle {
    double c = 0.0, a = 0.0;
    int index = 0;
    double drift = 0.0;      // angular speed of the drift
    double diffusion = 0.0;  // sum (v_a w_a)^2
    double T = 1.0;

    double operator()(double t, const Vec& x) const {
        const double tau = T - t;
        const double th = std::atan2(x(1), x(0)) + drift * tau;
        const double base = index == 0 ? std::cos(th) : std::sin(th);
        return c + a * base * std::exp(-0.5 * diffusion * tau);
    }
};

inline CircleHeatOracle circle_heat_oracle(const Context& c) {
    if (c.pb.manifold.kind() != ManifoldKind::Circle)
        throw ConfigError("manifold", "the closed-form oracle needs the circle");
    if (c.pb.driver.id != "zero") throw ConfigError("driver", "the closed-form oracle needs driver = zero");
    const auto cgrid = c.pb.controls.grid();
    if (cgrid.size() != 1) throw ConfigError("control.points", "the closed-form oracle needs a single control");
    CircleHeatOracle o;
    o.T = c.cfg.time_grid().T();
    const ControlValue& v = cgrid.front();
    o.drift = v(0) * circle_speed(c.pb.fields[0], "fields");
    for (int a = 1; a <= c.pb.d(); ++a) o.diffusion += std::pow(v(a) * circle_speed(c.pb.fields[static_cast<std::size_t>(a)], "fields"), 2);
    const std::string& term = c.cfg.text("terminal");
    if (term == "const") {
        o.c = c.cfg.number("terminal.c");
    } else {
        o.c = c.cfg.number("terminal.c");
        o.a = c.cfg.number("terminal.scale");
        o.index = static_cast<int>(c.cfg.integer("terminal.index"));
    }
    return o;
}

}  // namespace detail

struct LadderLevel {
    std::size_t mesh_size = 0;
    std::size_t n_steps = 0;  // 0: chosen by the CFL guard, dt / 4 per level
    std::size_t n_paths = 0;
};

/// Runs the PDE solver per ladder level against the circle closed form.
inline std::vector<io::ConvergenceRow> convergence_table(const ExperimentConfig& cfg,
                                                         const std::vector<LadderLevel>& ladder) {
    if (ladder.size() < 3) throw ConfigError("convergence.meshes", "ladder needs at least 3 levels");
    RunReport scratch;
    detail::Context c{cfg, cfg.problem(), cfg.seed(), scratch};
    const auto oracle = detail::circle_heat_oracle(c);
    const TimeGrid base = cfg.time_grid();
    std::vector<io::ConvergenceRow> rows;
    std::size_t steps0 = 0;
    for (std::size_t l = 0; l < ladder.size(); ++l) {
        MeshSizes s = cfg.mesh_sizes();
        s.n_theta = static_cast<int>(ladder[l].mesh_size);
        const ManifoldMesh mesh(c.pb.manifold, s);
        std::size_t steps = ladder[l].n_steps;
        if (steps == 0) {
            if (l == 0) steps0 = hjb_steps_for_cfl(c.pb, mesh, base.t0(), base.T(), cfg.number("hjb.cfl"), 1);
            steps = steps0 << (2 * l);
        }
        const TimeGrid grid(base.t0(), base.T(), steps);
        const auto hf = solve_hjb(c.pb, grid, mesh, HjbOptions{cfg.number("hjb.cfl")});
        double err = 0.0;
        for (std::size_t i = 0; i <= grid.n_steps(); ++i)
            for (std::size_t j = 0; j < mesh.size(); ++j)
                err = std::max(err, std::abs(hf.at(i, j) - oracle(grid.time(i), mesh.node(j))));
        io::ConvergenceRow row{l, mesh.size(), steps, ladder[l].n_paths, mesh.spacing(), grid.dt(), err, 1.0};
        if (l > 0) {
            const double prev = rows.back().error;
            row.ratio = (err <= 1e-10 && prev <= 1e-10) ? 1.0 : prev / err;
        }
        rows.push_back(row);
    }
    return rows;
}

namespace detail {

inline void convergence(Context& c) {
    std::vector<LadderLevel> ladder;
    for (double m : c.cfg.numbers("convergence.meshes")) {
        if (m < 3 || m != std::floor(m)) throw ConfigError("convergence.meshes", "mesh sizes must be integers >= 3");
        ladder.push_back({static_cast<std::size_t>(m), 0, c.cfg.count("convergence.n_paths")});
    }
    const auto rows = convergence_table(c.cfg, ladder);
    const double need = c.tol("convergence_ratio");
    for (const auto& r : rows) {
        const std::string l = std::to_string(r.level);
        c.metric("error_" + l, r.error);
        if (r.level == 0) continue;
        c.metric("ratio_" + l, r.ratio);
        const bool ok = r.ratio >= need || r.error <= 1e-10;
        c.metric("level_ok_" + l, ok ? 1.0 : 0.0);
        c.check("level_ok_" + l, ">=", 1.0);
    }
    c.violation(0.0);
    c.report.files["convergence.csv"] = io::convergence_csv(rows);
}

inline void max_principle(Context& c) {
    if (c.pb.driver.id != "zero") throw ConfigError("driver", "max-principle needs driver = zero");
    const TimeGrid grid = c.cfg.time_grid();
    const ManifoldMesh mesh = c.mesh();
    const auto hf = solve_hjb(c.pb, TimeGrid(grid.t0(), grid.T(), hjb_steps(c, mesh, grid)), mesh,
                              HjbOptions{c.cfg.number("hjb.cfl")});
    c.metric("max_excess", max_principle_excess(hf));
    c.metric("cfl_ratio", hf.cfl_ratio);
    c.metric("hjb_n_steps", static_cast<double>(hf.n_steps()));
    c.violation(hf.max_constraint_violation);
    c.check("max_excess", "<=", c.tol("max_principle"));
    c.report.files["hjb_field.csv"] = io::field_csv(restrict_time(hf, grid));
}

inline void dump_paths(Context& c) {
    const TimeGrid grid = c.cfg.time_grid();
    auto noise = std::make_shared<const BrownianGrid>(grid, 64, c.pb.d(), hash_counters(c.seed, 99));
    const auto ens = simulate(c.pb.manifold, c.pb.fields, c.cfg.x0(c.pb.manifold),
                              ControlPolicy::constant(c.pb.controls.upper()), noise);
    c.violation(ens.max_constraint_violation());
    c.report.files["paths.csv"] = io::paths_csv(ens, 64);
}

}  // namespace detail

/// Validates the configuration, runs its experiment and (optionally) writes
/// the artifacts. Configuration problems surface as ConfigError.
inline RunReport run(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
    const auto start = std::chrono::steady_clock::now();
    cfg.validate();
    const std::size_t w = cfg.count("workers");
    set_workers(w > 0 ? static_cast<unsigned>(w) : std::max(1u, std::thread::hardware_concurrency()));

    RunReport report;
    report.experiment = cfg.experiment();
    report.seed = cfg.seed();
    detail::Context c{cfg, cfg.problem(), report.seed, report};
    c.metric("max_constraint_violation", 0.0);

    const std::string& e = report.experiment;
    if (e == "oracle-circle") detail::oracle_circle(c);
    else if (e == "dpp-check") detail::dpp_check(c);
    else if (e == "solver-agreement") detail::solver_agreement(c);
    else if (e == "estimates") detail::estimates(c);
    else if (e == "hypotheses") detail::hypotheses(c);
    else if (e == "convergence-table") detail::convergence(c);
    else if (e == "max-principle") detail::max_principle(c);
    if (opts.dump_paths) detail::dump_paths(c);

    c.check("max_constraint_violation", "<=", c.tol("constraint"));
    report.pass = decide(report.checks, report.metrics);
    report.files["metrics.csv"] = io::metrics_csv(report.metrics);
    report.files["schema.csv"] = io::schema_csv();
    report.files["config.txt"] = cfg.dump();
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (opts.write_files) {
        for (const auto& [name, content] : report.files) io::write_text(opts.out_dir / name, content);
        io::write_text(opts.out_dir / "report.json", report.to_json());
        io::Json timing;
        timing["wall_time_seconds"] = report.wall_time;
        io::write_text(opts.out_dir / "timing.json", timing.dump(2) + "\n");
    }
    return report;
}

}  // namespace rsoc::harness
