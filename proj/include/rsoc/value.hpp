#pragma once

// Cost functional and value function of the recursive control problem.
//
// The value function is built layer by layer:
//   u(t_N, .) = Phi,
//   u(t_i, x_j) = min_{v in U_h} G^{t_i, x_j; v}_{t_i, t_{i+1}}[ u^(t_{i+1}, X_{t_{i+1}}) ],
// with one-step ensembles restarted from every node and u^ the mesh
// interpolant of the next layer.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "rsoc/bsde.hpp"
#include "rsoc/mesh.hpp"
#include "rsoc/problem.hpp"

namespace rsoc {

/// Values on (time layer, mesh node) plus the minimizing control per step.
/// Shared shape of the probabilistic and PDE solutions.
struct MeshField {
    TimeGrid grid;
    ManifoldMesh mesh;
    std::vector<double> u;               // [n_steps + 1][n_nodes]
    std::vector<ControlValue> argmin;    // [n_steps][n_nodes]

    MeshField(TimeGrid g, ManifoldMesh m)
        : grid(g), mesh(std::move(m)), u((g.n_steps() + 1) * mesh.size()), argmin(g.n_steps() * mesh.size()) {}

    std::size_t n_nodes() const noexcept { return mesh.size(); }
    std::size_t n_steps() const noexcept { return grid.n_steps(); }
    double at(std::size_t i, std::size_t j) const { return u[i * n_nodes() + j]; }
    double& at(std::size_t i, std::size_t j) { return u[i * n_nodes() + j]; }
    std::span<const double> layer(std::size_t i) const { return {u.data() + i * n_nodes(), n_nodes()}; }
    const ControlValue& control(std::size_t i, std::size_t j) const { return argmin[i * n_nodes() + j]; }
};

struct ValueField : MeshField {
    using MeshField::MeshField;
    double max_constraint_violation = 0.0;
};

// ---------------------------------------------------------------------------
// Cost functional

struct CostOptions {
    std::size_t n_steps = 64;
    std::size_t n_paths = 8192;
    std::uint64_t seed = 0;
    int basis_degree = 2;
    int picard_iters = 3;
    bool antithetic = false;
};

struct CostEstimate {
    double value = 0.0;
    /// Standard error of the pathwise representation xi + sum dt f.
    double standard_error = 0.0;
    double max_constraint_violation = 0.0;
};

/// J(t, x; v) over [t, T] with fresh noise keyed by `opts.seed`.
inline CostEstimate cost_functional(const ControlProblem& pb, double t, double T, const Vec& x,
                                    const ControlPolicy& policy, const CostOptions& opts) {
    const TimeGrid grid(t, T, opts.n_steps);
    policy.validate(pb.controls, grid.n_steps());
    auto noise = std::make_shared<const BrownianGrid>(grid, opts.n_paths, pb.d(), opts.seed, opts.antithetic);
    const auto ens = simulate(pb.manifold, pb.fields, x, policy, noise);
    const RegressionBasis basis(pb.manifold.ambient_dim(), opts.basis_degree);
    const auto sol = solve_backward(ens, pb.driver, pb.terminal, basis, BsdeOptions{opts.picard_iters});

    const std::size_t np = ens.n_paths();
    const std::size_t n = grid.n_steps();
    std::vector<double> pathwise(np);
    parallel_for(np, [&](std::size_t p) {
        double s = sol.y(n, p);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec& xi = ens.state(i, p);
            s += grid.dt() * pb.driver(grid.time(i), xi, sol.y(i, p), sol.z_at(i, p), ens.control(i, p));
        }
        pathwise[p] = s;
    });
    // Antithetic pairs are averaged first so the error estimate sees independent samples.
    std::vector<double> samples;
    if (opts.antithetic) {
        const std::size_t half = np / 2;
        samples.resize(half);
        for (std::size_t p = 0; p < half; ++p) samples[p] = 0.5 * (pathwise[p] + pathwise[p + half]);
    } else {
        samples = pathwise;
    }
    const double mean = path_mean(samples);
    double ss = 0.0;
    for (double s : samples) ss += (s - mean) * (s - mean);
    const double n_s = static_cast<double>(samples.size());

    CostEstimate out;
    out.value = sol.y_at_t0();
    out.standard_error = samples.size() > 1 ? std::sqrt(ss / (n_s - 1.0) / n_s) : 0.0;
    out.max_constraint_violation = ens.max_constraint_violation();
    return out;
}

// ---------------------------------------------------------------------------
// Value function

struct ValueOptions {
    std::size_t n_sub = 512;
    std::uint64_t seed = 0;
    bool antithetic = true;
    int picard_iters = 3;
};

/// Noise of layer i, shared by every node and control of that layer.
inline BrownianGrid layer_noise(const TimeGrid& grid, std::size_t i, std::size_t n_sub, int d, std::uint64_t seed,
                                bool antithetic) {
    return BrownianGrid(grid.window(i, 1), n_sub, d, hash_counters(seed, 0x7a1e, i), antithetic);
}

/// One DP layer from node x at step i: min over the control grid of the
/// one-step semigroup applied to the interpolated next layer.
struct NodeMinimum {
    double value = std::numeric_limits<double>::infinity();
    ControlValue argmin;
    double max_constraint_violation = 0.0;
};

inline NodeMinimum minimize_one_step(const ControlProblem& pb, const ManifoldMesh& mesh,
                                     std::span<const double> next, const std::vector<ControlValue>& cgrid,
                                     const BrownianGrid& noise, const Vec& x, int picard_iters) {
    const std::size_t np = noise.n_paths();
    const int d = noise.d();
    const double t = noise.grid().t0();
    const double dt = noise.grid().dt();
    const std::span<const double> dw(noise.at(0, 0).data(), np * static_cast<std::size_t>(d));
    std::vector<double> eta(np);
    NodeMinimum best;
    for (const auto& v : cgrid) {
        for (std::size_t p = 0; p < np; ++p) {
            const Vec y = detail::euler_step(pb.manifold, pb.fields, t, dt, x, v, noise.at(0, p));
            best.max_constraint_violation = std::max(best.max_constraint_violation, pb.manifold.constraint_violation(y));
            eta[p] = mesh.interpolate(next, y);
        }
        const double g = one_step_semigroup(
            eta, dw, d, dt, [&](double y, std::span<const double> z) { return pb.driver(t, x, y, z, v); },
            picard_iters);
        // Grid is in lexicographic order, so strict < keeps the smallest tie.
        if (g < best.value) {
            best.value = g;
            best.argmin = v;
        }
    }
    return best;
}

inline ValueField value_function(const ControlProblem& pb, const TimeGrid& grid, const ManifoldMesh& mesh,
                                 const ValueOptions& opts = {}) {
    if (grid.dt() > 0.1) throw std::invalid_argument("value_function: dt must be <= 0.1");
    if (!(pb.driver.lipschitz_K * grid.dt() < 1.0)) throw ContractionViolated("value_function: K*dt >= 1");
    detail::check_fields(pb.manifold, pb.fields, pb.d());
    const auto cgrid = pb.controls.grid();
    if (cgrid.empty()) throw std::invalid_argument("value_function: empty control grid");

    ValueField vf(grid, mesh);
    const std::size_t n = grid.n_steps();
    const std::size_t nn = mesh.size();
    for (std::size_t j = 0; j < nn; ++j) vf.at(n, j) = pb.terminal(mesh.node(j));

    std::vector<double> violation(nn, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        const BrownianGrid noise = layer_noise(grid, i, opts.n_sub, pb.d(), opts.seed, opts.antithetic);
        const auto next = vf.layer(i + 1);
        parallel_for(nn, [&](std::size_t j) {
            const NodeMinimum m = minimize_one_step(pb, mesh, next, cgrid, noise, mesh.node(j), opts.picard_iters);
            vf.at(i, j) = m.value;
            vf.argmin[i * nn + j] = m.argmin;
            violation[j] = std::max(violation[j], m.max_constraint_violation);
        });
    }
    for (double v : violation) vf.max_constraint_violation = std::max(vf.max_constraint_violation, v);
    return vf;
}

/// Bound on |u| from the driver and terminal bounds:
/// (sup|Phi| + K0 tau) exp(K tau), tau = T - t0.
inline double value_bound(const ControlProblem& pb, const ManifoldMesh& mesh, const TimeGrid& grid) {
    double phi = 0.0;
    for (const auto& x : mesh.nodes()) phi = std::max(phi, std::abs(pb.terminal(x)));
    const double tau = grid.T() - grid.t0();
    return (phi + pb.driver.bound_K0 * tau) * std::exp(pb.driver.lipschitz_K * tau);
}

// ---------------------------------------------------------------------------
// DPP residuals

struct DppProbe {
    std::size_t step = 0;
    std::size_t node = 0;
};

struct DppResidual {
    std::size_t step = 0;
    std::size_t node = 0;
    double stored = 0.0;
    double recomputed = 0.0;
    double residual = 0.0;
};

struct DppReport {
    std::size_t delta_steps = 0;
    std::vector<DppResidual> residuals;
    double max_residual = 0.0;
    double tolerance = 0.0;
    double max_constraint_violation = 0.0;
    bool pass = false;
};

struct DppOptions {
    std::size_t n_paths = 2048;
    bool antithetic = true;
    int basis_degree = 2;
    int picard_iters = 3;
    double tolerance = 2e-2;
};

/// `count` spread-out probes with room for a window of `delta` steps.
inline std::vector<DppProbe> default_probes(std::size_t n_steps, std::size_t n_nodes, std::size_t delta,
                                            std::size_t count = 16) {
    std::vector<DppProbe> out;
    for (std::size_t k = 0; k < count; ++k)
        out.push_back({k * (n_steps - delta) / count, (37 * k) % n_nodes});
    return out;
}

inline DppReport dpp_residual_check(const ControlProblem& pb, const ValueField& vf, std::size_t delta_steps,
                                    const std::vector<DppProbe>& probes, std::uint64_t fresh_seed,
                                    const DppOptions& opts = {}) {
    if (delta_steps < 1 || delta_steps > vf.n_steps())
        throw std::invalid_argument("dpp_residual_check: delta_steps out of range");
    const auto cgrid = pb.controls.grid();
    const RegressionBasis basis(pb.manifold.ambient_dim(), opts.basis_degree);
    DppReport rep;
    rep.delta_steps = delta_steps;
    rep.tolerance = opts.tolerance;
    rep.residuals.resize(probes.size());
    std::vector<double> violation(probes.size(), 0.0);
    for (std::size_t k = 0; k < probes.size(); ++k) {
        const auto [i, j] = probes[k];
        if (i + delta_steps > vf.n_steps() || j >= vf.n_nodes())
            throw std::invalid_argument("dpp_residual_check: probe outside the field");
        const TimeGrid window = vf.grid.window(i, delta_steps);
        auto noise = std::make_shared<const BrownianGrid>(window, opts.n_paths, pb.d(),
                                                          hash_counters(fresh_seed, i, j), opts.antithetic);
        const auto target = vf.layer(i + delta_steps);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& v : cgrid) {
            const auto ens = simulate(pb.manifold, pb.fields, vf.mesh.node(j), ControlPolicy::constant(v), noise);
            violation[k] = std::max(violation[k], ens.max_constraint_violation());
            std::vector<double> eta(ens.n_paths());
            for (std::size_t p = 0; p < eta.size(); ++p) eta[p] = vf.mesh.interpolate(target, ens.state(delta_steps, p));
            best = std::min(best, semigroup(ens, 0, delta_steps, pb.driver, eta, basis, BsdeOptions{opts.picard_iters}));
        }
        rep.residuals[k] = {i, j, vf.at(i, j), best, std::abs(vf.at(i, j) - best)};
    }
    for (std::size_t k = 0; k < probes.size(); ++k) {
        rep.max_residual = std::max(rep.max_residual, rep.residuals[k].residual);
        rep.max_constraint_violation = std::max(rep.max_constraint_violation, violation[k]);
    }
    rep.pass = rep.max_residual <= rep.tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Continuity moduli

struct ContinuityModuli {
    /// Neighbor distance -> max |u(t, x) - u(t, y)| over layers.
    std::map<double, double> space_modulus;
    /// dt -> max |u(t_{i+1}, x) - u(t_i, x)|.
    std::map<double, double> time_modulus;

    double max_space() const {
        double m = 0.0;
        for (const auto& [h, w] : space_modulus) m = std::max(m, w);
        return m;
    }
    double max_time() const {
        double m = 0.0;
        for (const auto& [h, w] : time_modulus) m = std::max(m, w);
        return m;
    }
};

inline ContinuityModuli continuity_moduli(const MeshField& f) {
    ContinuityModuli out;
    const auto& pairs = f.mesh.neighbor_pairs();
    std::vector<double> dist(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const double d = distance(f.mesh.manifold(), f.mesh.node(pairs[k].first), f.mesh.node(pairs[k].second));
        dist[k] = std::round(d * 1e9) / 1e9;  // merge equal spacings up to roundoff
    }
    for (std::size_t i = 0; i <= f.n_steps(); ++i)
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const double du = std::abs(f.at(i, pairs[k].first) - f.at(i, pairs[k].second));
            auto& slot = out.space_modulus[dist[k]];
            slot = std::max(slot, du);
        }
    double tm = 0.0;
    for (std::size_t i = 0; i < f.n_steps(); ++i)
        for (std::size_t j = 0; j < f.n_nodes(); ++j) tm = std::max(tm, std::abs(f.at(i + 1, j) - f.at(i, j)));
    out.time_modulus[f.grid.dt()] = tm;
    return out;
}

struct ModuliLevel {
    double spacing = 0.0;
    double dt = 0.0;
    double space_modulus = 0.0;
    double time_modulus = 0.0;
};

struct ModuliStudy {
    std::vector<ModuliLevel> levels;
    bool monotone_decay = false;
};

/// Moduli across `levels` refinements, each halving the mesh spacing and dt.
inline ModuliStudy moduli_refinement(const ControlProblem& pb, const TimeGrid& grid, const ManifoldMesh& mesh,
                                     const ValueOptions& opts, int levels = 3) {
    ModuliStudy out;
    ManifoldMesh m = mesh;
    TimeGrid g = grid;
    for (int l = 0; l < levels; ++l) {
        const auto vf = value_function(pb, g, m, opts);
        const auto mod = continuity_moduli(vf);
        out.levels.push_back({m.spacing(), g.dt(), mod.max_space(), mod.max_time()});
        m = m.refined();
        g = TimeGrid(g.t0(), g.T(), g.n_steps() * 2);
    }
    out.monotone_decay = true;
    // A modulus that is already zero counts as decayed.
    auto shrinks = [](double fine, double coarse) { return fine < coarse || fine <= 1e-12; };
    for (std::size_t l = 1; l < out.levels.size(); ++l)
        if (!shrinks(out.levels[l].space_modulus, out.levels[l - 1].space_modulus) ||
            !shrinks(out.levels[l].time_modulus, out.levels[l - 1].time_modulus))
            out.monotone_decay = false;
    return out;
}

}  // namespace rsoc
