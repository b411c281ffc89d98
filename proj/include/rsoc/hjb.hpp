#pragma once

// PDE side: the explicit HJB scheme on a manifold mesh, the Hamiltonians F and
// F0 built from a smooth test function, the frozen ODE, and the shared-noise
// checks that tie the BSDE pipeline to the PDE.

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "rsoc/bsde.hpp"
#include "rsoc/mesh.hpp"
#include "rsoc/problem.hpp"
#include "rsoc/value.hpp"

namespace rsoc {

struct HjbField : MeshField {
    using MeshField::MeshField;
    /// Achieved dt * max_v sum_a v_a^2 / h^2.
    double cfl_ratio = 0.0;
    double max_constraint_violation = 0.0;
};

struct HjbOptions {
    double cfl = 0.4;
};

inline double max_diffusion_speed(const ControlSet& controls) {
    double s = 0.0;
    for (const auto& v : controls.grid()) s = std::max(s, v.tail(v.size() - 1).squaredNorm());
    return s;
}

/// Smallest step count, a multiple of `multiple_of`, that satisfies the CFL guard.
inline std::size_t hjb_steps_for_cfl(const ControlProblem& pb, const ManifoldMesh& mesh, double t0, double T,
                                     double cfl = 0.4, std::size_t multiple_of = 1) {
    const double h = mesh.spacing();
    const double s = max_diffusion_speed(pb.controls);
    std::size_t n = multiple_of;
    while ((T - t0) / static_cast<double>(n) * s > cfl * h * h) n += multiple_of;
    return n;
}

namespace detail {

/// Flow-point stencils x(+-h) along every field, for one node.
struct FlowStencils {
    std::vector<Stencil> plus;
    std::vector<Stencil> minus;
};

inline std::vector<FlowStencils> flow_stencils(const ControlProblem& pb, const ManifoldMesh& mesh, double t,
                                               double h, double& violation) {
    const std::size_t nn = mesh.size();
    std::vector<FlowStencils> out(nn);
    std::vector<double> viol(nn, 0.0);
    parallel_for(nn, [&](std::size_t j) {
        for (const auto& f : pb.fields) {
            const Vec xp = flow_step(pb.manifold, f, t, mesh.node(j), h);
            const Vec xm = flow_step(pb.manifold, f, t, mesh.node(j), -h);
            viol[j] = std::max({viol[j], pb.manifold.constraint_violation(xp), pb.manifold.constraint_violation(xm)});
            out[j].plus.push_back(mesh.stencil(xp));
            out[j].minus.push_back(mesh.stencil(xm));
        }
    });
    for (double v : viol) violation = std::max(violation, v);
    return out;
}

}  // namespace detail

/// Explicit backward Euler for the HJB equation with derivatives along the
/// integral curves of each field, all taken on the later layer.
inline HjbField solve_hjb(const ControlProblem& pb, const TimeGrid& grid, const ManifoldMesh& mesh,
                          const HjbOptions& opts = {}) {
    detail::check_fields(pb.manifold, pb.fields, pb.d());
    const double h = mesh.spacing();
    const double dt = grid.dt();
    const auto cgrid = pb.controls.grid();
    const double ratio = dt * max_diffusion_speed(pb.controls) / (h * h);
    if (ratio > opts.cfl)
        throw CflViolated("dt * max sum v^2 / h^2 = " + std::to_string(ratio) + " exceeds " + std::to_string(opts.cfl));

    HjbField out(grid, mesh);
    out.cfl_ratio = ratio;
    const std::size_t n = grid.n_steps();
    const std::size_t nn = mesh.size();
    const int d = pb.d();
    for (std::size_t j = 0; j < nn; ++j) out.at(n, j) = pb.terminal(mesh.node(j));

    bool autonomous = true;
    for (const auto& f : pb.fields) autonomous = autonomous && f.autonomous;
    std::vector<detail::FlowStencils> st;
    if (autonomous) st = detail::flow_stencils(pb, mesh, grid.T(), h, out.max_constraint_violation);

    for (std::size_t i = n; i-- > 0;) {
        const double t_next = grid.time(i + 1);
        if (!autonomous) st = detail::flow_stencils(pb, mesh, t_next, h, out.max_constraint_violation);
        const auto next = out.layer(i + 1);
        parallel_for(nn, [&](std::size_t j) {
            const double u0 = next[j];
            double first[8], second[8], z[8];
            for (int a = 0; a <= d; ++a) {
                const double up = st[j].plus[static_cast<std::size_t>(a)].apply(next);
                const double um = st[j].minus[static_cast<std::size_t>(a)].apply(next);
                first[a] = (up - um) / (2.0 * h);
                second[a] = (up - 2.0 * u0 + um) / (h * h);
            }
            const Vec& x = mesh.node(j);
            double best = std::numeric_limits<double>::infinity();
            ControlValue arg;
            for (const auto& v : cgrid) {
                double gen = v(0) * first[0];
                for (int a = 1; a <= d; ++a) {
                    gen += 0.5 * v(a) * v(a) * second[a];
                    z[a - 1] = v(a) * first[a];
                }
                const double val = gen + pb.driver(t_next, x, u0, std::span<const double>(z, static_cast<std::size_t>(d)), v);
                if (val < best) {
                    best = val;
                    arg = v;
                }
            }
            out.at(i, j) = u0 + dt * best;
            out.argmin[i * nn + j] = arg;
        });
    }
    return out;
}

/// Largest excursion of any layer outside [min Phi, max Phi] over the nodes.
inline double max_principle_excess(const MeshField& f) {
    const auto terminal = f.layer(f.n_steps());
    const auto [lo, hi] = std::minmax_element(terminal.begin(), terminal.end());
    double excess = 0.0;
    for (double u : f.u) excess = std::max({excess, u - *hi, *lo - u});
    return excess;
}

// ---------------------------------------------------------------------------
// Hamiltonians of a test function

/// F(t, x, y, z, v) = d_t phi + v0 V0 phi + 1/2 sum v_a^2 V_a V_a phi
///                    + f(t, x, y + phi, z + {v_a V_a phi}, v)
inline double hamiltonian_F(const ControlProblem& pb, const TestFunctionProbe& probe, double t, const Vec& x,
                            double y, std::span<const double> z, const ControlValue& v) {
    const int d = pb.d();
    double gen = probe.time_derivative(t, x);
    if (v(0) != 0.0) gen += v(0) * probe.along(pb.fields[0], t, x);
    double zz[8];
    for (int a = 1; a <= d; ++a) {
        const auto& field = pb.fields[static_cast<std::size_t>(a)];
        const double va = v(a);
        double first = 0.0;
        if (va != 0.0) {
            first = probe.along(field, t, x);
            gen += 0.5 * va * va * probe.along_twice(pb.manifold, field, t, x);
        }
        zz[a - 1] = z[static_cast<std::size_t>(a - 1)] + va * first;
    }
    return gen + pb.driver(t, x, y + probe(t, x), std::span<const double>(zz, static_cast<std::size_t>(d)), v);
}

struct HamiltonianMin {
    double value = std::numeric_limits<double>::infinity();
    ControlValue argmin;
};

/// F0 = min of F over the control grid (lexicographic tie-break).
inline HamiltonianMin hamiltonian_F0(const ControlProblem& pb, const TestFunctionProbe& probe, double t, const Vec& x,
                                     double y, std::span<const double> z) {
    HamiltonianMin out;
    for (const auto& v : pb.controls.grid()) {
        const double f = hamiltonian_F(pb, probe, t, x, y, z, v);
        if (f < out.value) {
            out.value = f;
            out.argmin = v;
        }
    }
    return out;
}

/// Interior consistency of the scheme on a smooth probe: the discrete
/// operator min_v {v0 D1 phi + 1/2 sum v_a^2 D2 phi + f} + d_t phi at every
/// node, against the closed-form F0 with y = 0, z = 0. O(h^2) for the
/// catalog fields.
inline double hjb_consistency_residual(const ControlProblem& pb, const TestFunctionProbe& probe,
                                       const ManifoldMesh& mesh, double t) {
    detail::check_fields(pb.manifold, pb.fields, pb.d());
    const double h = mesh.spacing();
    const int d = pb.d();
    const auto cgrid = pb.controls.grid();
    double violation = 0.0;
    const auto st = detail::flow_stencils(pb, mesh, t, h, violation);
    std::vector<double> phi(mesh.size());
    for (std::size_t j = 0; j < mesh.size(); ++j) phi[j] = probe(t, mesh.node(j));
    const std::vector<double> zero(static_cast<std::size_t>(d), 0.0);
    std::vector<double> res(mesh.size());
    parallel_for(mesh.size(), [&](std::size_t j) {
        double first[8], second[8], z[8];
        for (int a = 0; a <= d; ++a) {
            const double up = st[j].plus[static_cast<std::size_t>(a)].apply(phi);
            const double um = st[j].minus[static_cast<std::size_t>(a)].apply(phi);
            first[a] = (up - um) / (2.0 * h);
            second[a] = (up - 2.0 * phi[j] + um) / (h * h);
        }
        const Vec& x = mesh.node(j);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& v : cgrid) {
            double gen = v(0) * first[0];
            for (int a = 1; a <= d; ++a) {
                gen += 0.5 * v(a) * v(a) * second[a];
                z[a - 1] = v(a) * first[a];
            }
            best = std::min(best, gen + pb.driver(t, x, phi[j], std::span<const double>(z, static_cast<std::size_t>(d)), v));
        }
        res[j] = std::abs(best + probe.time_derivative(t, x) - hamiltonian_F0(pb, probe, t, x, 0.0, zero).value);
    });
    double worst = 0.0;
    for (double r : res) worst = std::max(worst, r);
    return worst;
}

namespace detail {

/// RK4 for -Y' = g(s, Y) backward from Y(t + delta) = 0.
template <typename G>
double backward_rk4(G&& g, double t, double delta, int substeps) {
    const double h = delta / substeps;
    double y = 0.0;
    for (int k = substeps; k > 0; --k) {
        const double s = t + k * h;
        // dY/ds = -g; stepping from s to s - h.
        const double k1 = g(s, y);
        const double k2 = g(s - 0.5 * h, y + 0.5 * h * k1);
        const double k3 = g(s - 0.5 * h, y + 0.5 * h * k2);
        const double k4 = g(s - h, y + h * k3);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

}  // namespace detail

/// Y0(t) for -Y0' = F0(s, x, Y0, 0), Y0(t + delta) = 0.
inline double frozen_ode_solve(const ControlProblem& pb, const TestFunctionProbe& probe, const Vec& x, double t,
                               double delta, int substeps = 64) {
    if (!(delta > 0.0)) throw std::invalid_argument("frozen_ode_solve: delta must be positive");
    const std::vector<double> zero(static_cast<std::size_t>(pb.d()), 0.0);
    return detail::backward_rk4(
        [&](double s, double y) { return hamiltonian_F0(pb, probe, s, x, y, zero).value; }, t, delta,
        std::max(substeps, 32));
}

/// Same ODE with F at one fixed control instead of F0.
inline double constant_control_ode_solve(const ControlProblem& pb, const TestFunctionProbe& probe, const Vec& x,
                                         double t, double delta, const ControlValue& v, int substeps = 64) {
    if (!(delta > 0.0)) throw std::invalid_argument("constant_control_ode_solve: delta must be positive");
    const std::vector<double> zero(static_cast<std::size_t>(pb.d()), 0.0);
    return detail::backward_rk4([&](double s, double y) { return hamiltonian_F(pb, probe, s, x, y, zero, v); }, t,
                                delta, std::max(substeps, 32));
}

struct FrozenOdeBracket {
    double frozen = 0.0;
    double grid_min = 0.0;
    double fine_min = 0.0;
    bool agrees = false;      // |frozen - grid_min| <= tol
    bool below_fine = false;  // frozen <= fine_min + tol
};

/// Frozen ODE against brute-force minima of constant-control ODEs over the
/// control grid and over a grid `refine` times finer.
inline FrozenOdeBracket frozen_ode_bracket(const ControlProblem& pb, const TestFunctionProbe& probe, const Vec& x,
                                           double t, double delta, int refine = 4, double tol = 1e-8) {
    FrozenOdeBracket r;
    r.frozen = frozen_ode_solve(pb, probe, x, t, delta);
    auto brute = [&](const ControlSet& cs) {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& v : cs.grid()) m = std::min(m, constant_control_ode_solve(pb, probe, x, t, delta, v));
        return m;
    };
    r.grid_min = brute(pb.controls);
    r.fine_min = brute(pb.controls.refined(refine));
    r.agrees = std::abs(r.frozen - r.grid_min) <= tol;
    r.below_fine = r.frozen <= r.fine_min + tol;
    return r;
}

// ---------------------------------------------------------------------------
// Shared-noise identity and gap checks

struct GeneratorIdentityReport {
    double semigroup_side = 0.0;   // G[phi(t+delta, X)] - phi(t, x)
    double bsde_side = 0.0;        // Y^1_t with the discrete generator of phi
    double gap = 0.0;
    double continuum_bsde_side = 0.0;
    double continuum_gap = 0.0;    // same with the closed-form F
    double tolerance = 1e-6;
    double max_constraint_violation = 0.0;
    bool pass = false;
};

/// Compares G_{t,t+delta}[phi(t+delta, X)] - phi(t, x) with the BSDE whose
/// driver is f shifted by phi. The shift uses the scheme's own generator of
/// phi (regressed one-step moments), which makes the identity exact up to the
/// Picard residual; the closed-form F is reported alongside.
inline GeneratorIdentityReport lemma33_check(const ControlProblem& pb, const TestFunctionProbe& probe, const Vec& x,
                                   const ControlPolicy& policy, std::shared_ptr<const BrownianGrid> noise,
                                   const RegressionBasis& basis, BsdeOptions opts = {}, double tolerance = 1e-6) {
    const auto ens = simulate(pb.manifold, pb.fields, x, policy, noise);
    const TimeGrid& grid = ens.grid();
    const std::size_t n = grid.n_steps();
    const std::size_t np = ens.n_paths();
    const int d = noise->d();
    const double dt = grid.dt();
    const ConditionalExpectations cond(ens, 0, n, basis);

    std::vector<double> phi((n + 1) * np);
    for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t p = 0; p < np; ++p) phi[i * np + p] = probe(grid.time(i), ens.state(i, p));

    GeneratorIdentityReport r;
    r.tolerance = tolerance;
    r.max_constraint_violation = ens.max_constraint_violation();
    const std::span<const double> phi_T(phi.data() + n * np, np);
    const auto g_sol = solve_backward_window(ens, 0, n, phi_T, along_paths(ens, 0, pb.driver),
                                             pb.driver.lipschitz_K, cond, opts);
    r.semigroup_side = g_sol.y_at_t0() - probe(grid.t0(), x);

    // Regressed one-step moments of phi: E_i[phi_{i+1}] and E_i[phi_{i+1} dW] / dt.
    std::vector<double> ephi(n * np), ephiw(n * np * static_cast<std::size_t>(d));
    std::vector<double> tmp(np);
    for (std::size_t i = 0; i < n; ++i) {
        const std::span<const double> next(phi.data() + (i + 1) * np, np);
        const auto e = cond[i](next);
        std::copy(e.begin(), e.end(), ephi.begin() + static_cast<std::ptrdiff_t>(i * np));
        for (int a = 0; a < d; ++a) {
            for (std::size_t p = 0; p < np; ++p) tmp[p] = next[p] * ens.noise()(i, p, a) / dt;
            const auto ew = cond[i](tmp);
            for (std::size_t p = 0; p < np; ++p) ephiw[(i * np + p) * d + a] = ew[p];
        }
    }
    const std::vector<double> zero_terminal(np, 0.0);
    const PathDriver discrete = [&](std::size_t k, std::size_t p, double y, std::span<const double> z) {
        double zz[8];
        for (int a = 0; a < d; ++a) zz[a] = z[static_cast<std::size_t>(a)] + ephiw[(k * np + p) * d + a];
        const double shift = (ephi[k * np + p] - phi[k * np + p]) / dt;
        return shift + pb.driver(grid.time(k), ens.state(k, p), y + phi[k * np + p],
                                 std::span<const double>(zz, static_cast<std::size_t>(d)), ens.control(k, p));
    };
    const auto y1 = solve_backward_window(ens, 0, n, zero_terminal, discrete, pb.driver.lipschitz_K, cond, opts);
    r.bsde_side = y1.y_at_t0();
    r.gap = std::abs(r.bsde_side - r.semigroup_side);

    const PathDriver continuum = [&](std::size_t k, std::size_t p, double y, std::span<const double> z) {
        return hamiltonian_F(pb, probe, grid.time(k), ens.state(k, p), y, z, ens.control(k, p));
    };
    const auto y1c = solve_backward_window(ens, 0, n, zero_terminal, continuum, pb.driver.lipschitz_K, cond, opts);
    r.continuum_bsde_side = y1c.y_at_t0();
    r.continuum_gap = std::abs(r.continuum_bsde_side - r.semigroup_side);
    r.pass = r.gap <= r.tolerance;
    return r;
}

struct FrozenGapOptions {
    std::size_t substeps = 16;
    std::size_t n_paths = 4096;
    std::uint64_t seed = 0;
    bool antithetic = true;
    int basis_degree = 2;
    int picard_iters = 3;
    double required_decay = 0.2;
};

struct FrozenGapReport {
    std::vector<double> deltas;
    std::vector<double> gaps;
    std::vector<double> ratios;  // gap / delta
    double max_constraint_violation = 0.0;
    bool monotone_decay = false;
};

/// For each delta and control: the BSDE driven by F along the state versus
/// the one with the state frozen at x, on shared noise.
inline FrozenGapReport lemma34_gap(const ControlProblem& pb, const TestFunctionProbe& probe, double t, const Vec& x,
                                 const std::vector<double>& deltas, const FrozenGapOptions& opts = {}) {
    for (std::size_t k = 1; k < deltas.size(); ++k)
        if (!(deltas[k] < deltas[k - 1])) throw std::invalid_argument("frozen_gap_gap: deltas must decrease");
    const RegressionBasis basis(pb.manifold.ambient_dim(), opts.basis_degree);
    const auto cgrid = pb.controls.grid();
    FrozenGapReport r;
    r.deltas = deltas;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        const TimeGrid grid(t, t + deltas[k], opts.substeps);
        auto noise = std::make_shared<const BrownianGrid>(grid, opts.n_paths, pb.d(), hash_counters(opts.seed, 0x34, k),
                                                          opts.antithetic);
        const std::vector<double> zero_terminal(opts.n_paths, 0.0);
        double gap = 0.0;
        for (const auto& v : cgrid) {
            const auto ens = simulate(pb.manifold, pb.fields, x, ControlPolicy::constant(v), noise);
            r.max_constraint_violation = std::max(r.max_constraint_violation, ens.max_constraint_violation());
            const ConditionalExpectations cond(ens, 0, grid.n_steps(), basis);
            const PathDriver moving = [&](std::size_t i, std::size_t p, double y, std::span<const double> z) {
                return hamiltonian_F(pb, probe, grid.time(i), ens.state(i, p), y, z, v);
            };
            const PathDriver frozen = [&](std::size_t i, std::size_t, double y, std::span<const double> z) {
                return hamiltonian_F(pb, probe, grid.time(i), x, y, z, v);
            };
            const BsdeOptions bo{opts.picard_iters};
            const auto y1 = solve_backward_window(ens, 0, grid.n_steps(), zero_terminal, moving, pb.driver.lipschitz_K, cond, bo);
            const auto y2 = solve_backward_window(ens, 0, grid.n_steps(), zero_terminal, frozen, pb.driver.lipschitz_K, cond, bo);
            gap = std::max(gap, std::abs(y1.y_at_t0() - y2.y_at_t0()));
        }
        r.gaps.push_back(gap);
        r.ratios.push_back(gap / deltas[k]);
    }
    r.monotone_decay = !r.ratios.empty() && r.ratios.back() <= (1.0 - opts.required_decay) * r.ratios.front();
    return r;
}

}  // namespace rsoc
