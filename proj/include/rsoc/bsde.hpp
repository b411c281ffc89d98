#pragma once

// Discrete backward SDE solver along a trajectory ensemble:
//
//   Z_i = E[Y_{i+1} dW_i | X_i] / dt
//   Y_i = E[Y_{i+1} | X_i] + dt g(i, Y_i, Z_i)     (Picard iterations)
//
// Conditional expectations come from ConditionalExpectation, which reduces
// to plain averaging at a deterministic start.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "rsoc/dynamics.hpp"
#include "rsoc/problem.hpp"
#include "rsoc/regression.hpp"

namespace rsoc {

struct BsdeOptions {
    int picard_iters = 3;
};

class BsdeSolution {
public:
    BsdeSolution(TimeGrid grid, std::size_t n_paths, int d)
        : grid_(grid), n_paths_(n_paths), d_(d), Y_((grid.n_steps() + 1) * n_paths),
          Z_(grid.n_steps() * n_paths * static_cast<std::size_t>(d)), picard_initial_(grid.n_steps()),
          picard_final_(grid.n_steps()), degree_used_(grid.n_steps()) {}

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t n_paths() const noexcept { return n_paths_; }
    std::size_t n_steps() const noexcept { return grid_.n_steps(); }
    int d() const noexcept { return d_; }

    double y(std::size_t i, std::size_t p) const { return Y_[i * n_paths_ + p]; }
    double& y(std::size_t i, std::size_t p) { return Y_[i * n_paths_ + p]; }
    double z(std::size_t i, std::size_t p, int a) const { return Z_[(i * n_paths_ + p) * d_ + a]; }
    double& z(std::size_t i, std::size_t p, int a) { return Z_[(i * n_paths_ + p) * d_ + a]; }
    std::span<const double> y_layer(std::size_t i) const { return {Y_.data() + i * n_paths_, n_paths_}; }
    std::span<const double> z_at(std::size_t i, std::size_t p) const {
        return {Z_.data() + (i * n_paths_ + p) * d_, static_cast<std::size_t>(d_)};
    }

    /// Deterministic value Y_t at the start of the grid (path average of Y_0).
    double y_at_t0() const { return path_mean(y_layer(0)); }

    /// Largest fixed-point residual left after the Picard iterations.
    double picard_residual() const {
        double r = 0.0;
        for (double v : picard_final_) r = std::max(r, v);
        return r;
    }
    const std::vector<double>& picard_initial() const noexcept { return picard_initial_; }
    const std::vector<double>& picard_final() const noexcept { return picard_final_; }
    const std::vector<int>& basis_degree_used() const noexcept { return degree_used_; }

    std::vector<double>& picard_initial() noexcept { return picard_initial_; }
    std::vector<double>& picard_final() noexcept { return picard_final_; }
    std::vector<int>& basis_degree_used() noexcept { return degree_used_; }

private:
    TimeGrid grid_;
    std::size_t n_paths_;
    int d_;
    std::vector<double> Y_;
    std::vector<double> Z_;
    std::vector<double> picard_initial_;
    std::vector<double> picard_final_;
    std::vector<int> degree_used_;
};

/// Driver seen by the generic solver: g(step, path, y, z), step relative to
/// the solved window.
using PathDriver = std::function<double(std::size_t step, std::size_t path, double y, std::span<const double> z)>;

/// Per-layer regression operators of an ensemble window, shareable between
/// several BSDE solves on the same paths.
class ConditionalExpectations {
public:
    ConditionalExpectations(const TrajectoryEnsemble& ens, std::size_t first, std::size_t count,
                            const RegressionBasis& basis) {
        layers_.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t layer = first + i;
            layers_.emplace_back(
                ens.n_paths(), [&ens, layer](std::size_t p) -> const Vec& { return ens.state(layer, p); }, basis);
        }
    }

    const ConditionalExpectation& operator[](std::size_t i) const { return layers_[i]; }
    std::size_t size() const noexcept { return layers_.size(); }

private:
    std::vector<ConditionalExpectation> layers_;
};

/// Solves the BSDE on ensemble steps [first, first + count] with per-path
/// terminal values at step first + count.
inline BsdeSolution solve_backward_window(const TrajectoryEnsemble& ens, std::size_t first, std::size_t count,
                                          std::span<const double> terminal, const PathDriver& g,
                                          double lipschitz_K, const ConditionalExpectations& cond,
                                          BsdeOptions opts = {}) {
    if (count == 0) throw std::invalid_argument("solve_backward_window: empty window");
    const TimeGrid grid = ens.grid().window(first, count);
    const double dt = grid.dt();
    if (!(lipschitz_K * dt < 1.0))
        throw ContractionViolated("K*dt = " + std::to_string(lipschitz_K * dt) + " >= 1");
    const std::size_t np = ens.n_paths();
    const int d = ens.noise().d();
    if (terminal.size() != np) throw std::invalid_argument("solve_backward_window: terminal size mismatch");

    BsdeSolution sol(grid, np, d);
    for (std::size_t p = 0; p < np; ++p) sol.y(count, p) = terminal[p];

    std::vector<double> weighted(np);
    std::vector<double> init_res(np), final_res(np);
    for (std::size_t k = count; k-- > 0;) {
        const std::size_t step = first + k;
        const auto& ce = cond[k];
        const auto next = sol.y_layer(k + 1);
        const std::vector<double> ey = ce(next);
        std::vector<std::vector<double>> ez(static_cast<std::size_t>(d));
        for (int a = 0; a < d; ++a) {
            for (std::size_t p = 0; p < np; ++p) weighted[p] = next[p] * ens.noise()(step, p, a) / dt;
            ez[static_cast<std::size_t>(a)] = ce(weighted);
        }
        parallel_for(np, [&](std::size_t p) {
            for (int a = 0; a < d; ++a) sol.z(k, p, a) = ez[static_cast<std::size_t>(a)][p];
            const auto z = sol.z_at(k, p);
            double y = ey[p];
            init_res[p] = std::abs(dt * g(k, p, y, z));
            for (int it = 0; it < opts.picard_iters; ++it) y = ey[p] + dt * g(k, p, y, z);
            final_res[p] = std::abs(y - ey[p] - dt * g(k, p, y, z));
            sol.y(k, p) = y;
        });
        double ri = 0.0, rf = 0.0;
        for (std::size_t p = 0; p < np; ++p) {
            ri = std::max(ri, init_res[p]);
            rf = std::max(rf, final_res[p]);
        }
        sol.picard_initial()[k] = ri;
        sol.picard_final()[k] = rf;
        sol.basis_degree_used()[k] = ce.degree_used();
    }
    return sol;
}

/// Driver f evaluated along the ensemble paths and controls of a window.
inline PathDriver along_paths(const TrajectoryEnsemble& ens, std::size_t first, const Driver& driver) {
    const TimeGrid& grid = ens.grid();
    return [&ens, &driver, &grid, first](std::size_t k, std::size_t p, double y, std::span<const double> z) {
        const std::size_t i = first + k;
        const Vec& x = ens.state(i, p);
        return driver(grid.time(i), x, y, z, ens.policy().at(i, x));
    };
}

/// Full-horizon solve with terminal Phi(X_T).
inline BsdeSolution solve_backward(const TrajectoryEnsemble& ens, const Driver& driver, const TerminalCost& terminal,
                                   const RegressionBasis& basis, BsdeOptions opts = {}) {
    const std::size_t n = ens.n_steps();
    std::vector<double> xi(ens.n_paths());
    for (std::size_t p = 0; p < ens.n_paths(); ++p) xi[p] = terminal(ens.state(n, p));
    const ConditionalExpectations cond(ens, 0, n, basis);
    return solve_backward_window(ens, 0, n, xi, along_paths(ens, 0, driver), driver.lipschitz_K, cond, opts);
}

/// Backward semigroup G_{t_first, t_first+count}[eta] along the ensemble. With
/// an empty window it returns eta at the start (averaged over paths).
inline double semigroup(const TrajectoryEnsemble& ens, std::size_t first, std::size_t count, const Driver& driver,
                        std::span<const double> eta, const RegressionBasis& basis, BsdeOptions opts = {}) {
    if (count == 0) return path_mean(eta);
    const ConditionalExpectations cond(ens, first, count, basis);
    const auto sol = solve_backward_window(ens, first, count, eta, along_paths(ens, first, driver),
                                           driver.lipschitz_K, cond, opts);
    return path_mean(sol.y_layer(0));
}

/// One BSDE step from a deterministic start: averaging estimator over the
/// samples of eta and their Brownian increments (row-major [path][component]).
/// `f(y, z)` is the driver frozen at (t, x, v).
template <typename F>
double one_step_semigroup(std::span<const double> eta, std::span<const double> dw, int d, double dt, F&& f,
                          int picard_iters = 3) {
    const std::size_t np = eta.size();
    const double ey = path_mean(eta);
    double zbuf[8] = {0.0};
    std::vector<double> tmp(np);
    for (int a = 0; a < d; ++a) {
        for (std::size_t p = 0; p < np; ++p) tmp[p] = eta[p] * dw[p * static_cast<std::size_t>(d) + a] / dt;
        zbuf[a] = path_mean(tmp);
    }
    const std::span<const double> z(zbuf, static_cast<std::size_t>(d));
    double y = ey;
    for (int it = 0; it < picard_iters; ++it) y = ey + dt * f(y, z);
    return y;
}

// ---------------------------------------------------------------------------
// A priori estimate and comparison

struct StabilityReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double beta0 = 0.0;
    bool pass = false;
};

/// Discrete witness of the a priori estimate between two BSDEs
///   Y^k_t = xi^k + int [g(s, Y^k, Z^k) + phi^k] ds - int Z^k dW,  k = 1, 2,
/// with beta0 = 16 (1 + C_L^2). Integrals are left-endpoint Riemann sums;
/// the inequality is accepted with 5% Monte Carlo slack.
/// phi arrays are laid out [step][path].
inline StabilityReport stability_check(const BsdeSolution& sol1, const BsdeSolution& sol2,
                                       std::span<const double> xi1, std::span<const double> xi2,
                                       std::span<const double> phi1, std::span<const double> phi2, double C_L,
                                       double slack = 0.05) {
    if (!(sol1.grid() == sol2.grid()) || sol1.n_paths() != sol2.n_paths() || sol1.d() != sol2.d())
        throw GridMismatch("stability_check: solutions live on different grids");
    const std::size_t n = sol1.n_steps();
    const std::size_t np = sol1.n_paths();
    if (xi1.size() != np || xi2.size() != np || phi1.size() != n * np || phi2.size() != n * np)
        throw GridMismatch("stability_check: perturbation sizes do not match the grid");
    const double dt = sol1.grid().dt();
    const double beta0 = 16.0 * (1.0 + C_L * C_L);

    StabilityReport r;
    r.beta0 = beta0;
    const double dy0 = sol1.y_at_t0() - sol2.y_at_t0();
    double integral_lhs = 0.0, integral_rhs = 0.0;
    std::vector<double> a(np), b(np);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(beta0 * (sol1.grid().time(i) - sol1.grid().t0())) * dt;
        for (std::size_t p = 0; p < np; ++p) {
            double s = std::pow(sol1.y(i, p) - sol2.y(i, p), 2);
            for (int k = 0; k < sol1.d(); ++k) s += std::pow(sol1.z(i, p, k) - sol2.z(i, p, k), 2);
            a[p] = s;
            b[p] = std::pow(phi1[i * np + p] - phi2[i * np + p], 2);
        }
        integral_lhs += w * path_mean(a);
        integral_rhs += w * path_mean(b);
    }
    for (std::size_t p = 0; p < np; ++p) a[p] = std::pow(xi1[p] - xi2[p], 2);
    const double terminal = path_mean(a) * std::exp(beta0 * (sol1.grid().T() - sol1.grid().t0()));
    r.lhs = dy0 * dy0 + 0.5 * integral_lhs;
    r.rhs = terminal + integral_rhs;
    r.pass = r.lhs <= r.rhs * (1.0 + slack);
    return r;
}

/// Checks Y_low <= Y_high + tol at every node; throws ComparisonViolated with
/// the first offending node.
inline bool comparison_check(const BsdeSolution& low, const BsdeSolution& high, double tol = 1e-8 + 1e-3) {
    if (!(low.grid() == high.grid()) || low.n_paths() != high.n_paths())
        throw GridMismatch("comparison_check: solutions live on different grids");
    for (std::size_t i = 0; i <= low.n_steps(); ++i)
        for (std::size_t p = 0; p < low.n_paths(); ++p) {
            const double excess = low.y(i, p) - high.y(i, p);
            if (excess > tol) throw ComparisonViolated(i, p, excess);
        }
    return true;
}

}  // namespace rsoc
