#pragma once

// Controlled SDE on an embedded manifold, simulated in ambient Ito form:
//
//   dX = v0 V0 dt + sum_a v_a V_a dW^a + 1/2 sum_a v_a^2 (D_{V_a} V_a) dt,
//
// with Euler-Maruyama steps followed by metric projection.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "rsoc/geometry.hpp"
#include "rsoc/parallel.hpp"
#include "rsoc/random.hpp"

namespace rsoc {

class TimeGrid {
public:
    TimeGrid(double t0, double T, std::size_t n_steps) : t0_(t0), T_(T), n_steps_(n_steps) {
        if (!(t0 < T)) throw std::invalid_argument("TimeGrid: t0 must be < T");
        if (n_steps < 1) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
    }

    double t0() const noexcept { return t0_; }
    double T() const noexcept { return T_; }
    std::size_t n_steps() const noexcept { return n_steps_; }
    double dt() const noexcept { return (T_ - t0_) / static_cast<double>(n_steps_); }
    double time(std::size_t i) const noexcept {
        return i == n_steps_ ? T_ : t0_ + static_cast<double>(i) * dt();
    }

    /// Sub-grid covering steps [first, first + count).
    TimeGrid window(std::size_t first, std::size_t count) const {
        return TimeGrid(time(first), time(first + count), count);
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    double t0_;
    double T_;
    std::size_t n_steps_;
};

/// Brownian increments on a time grid. Increment (i, p, a) is a pure function
/// of (seed, i, p, a) and is N(0, dt). With `antithetic`, paths in the second
/// half reuse the negated increments of the first half.
class BrownianGrid {
public:
    BrownianGrid(TimeGrid grid, std::size_t n_paths, int d, std::uint64_t seed, bool antithetic = false)
        : grid_(grid), n_paths_(n_paths), d_(d), seed_(seed), antithetic_(antithetic),
          increments_(grid.n_steps() * n_paths * static_cast<std::size_t>(d)) {
        if (n_paths == 0) throw std::invalid_argument("BrownianGrid: n_paths must be positive");
        if (antithetic && n_paths % 2 != 0) throw std::invalid_argument("BrownianGrid: antithetic needs even n_paths");
        const double sd = std::sqrt(grid.dt());
        const std::size_t half = n_paths / 2;
        parallel_for(grid.n_steps(), [&](std::size_t i) {
            for (std::size_t p = 0; p < n_paths_; ++p) {
                for (int a = 0; a < d_; ++a) {
                    double z;
                    if (antithetic_ && p >= half)
                        z = -counter_normal(seed_, i, p - half, static_cast<std::uint64_t>(a));
                    else
                        z = counter_normal(seed_, i, p, static_cast<std::uint64_t>(a));
                    increments_[index(i, p, a)] = sd * z;
                }
            }
        });
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t n_paths() const noexcept { return n_paths_; }
    int d() const noexcept { return d_; }
    std::uint64_t seed() const noexcept { return seed_; }
    bool antithetic() const noexcept { return antithetic_; }

    double operator()(std::size_t i, std::size_t p, int a) const { return increments_[index(i, p, a)]; }

    std::span<const double> at(std::size_t i, std::size_t p) const {
        return {increments_.data() + index(i, p, 0), static_cast<std::size_t>(d_)};
    }

private:
    std::size_t index(std::size_t i, std::size_t p, int a) const {
        return (i * n_paths_ + p) * static_cast<std::size_t>(d_) + static_cast<std::size_t>(a);
    }

    TimeGrid grid_;
    std::size_t n_paths_;
    int d_;
    std::uint64_t seed_;
    bool antithetic_;
    std::vector<double> increments_;
};

/// Box U = [lower, upper] in R^{d+1} and its finite grid.
class ControlSet {
public:
    ControlSet(ControlValue lower, ControlValue upper, int points_per_axis)
        : lower_(std::move(lower)), upper_(std::move(upper)), points_(points_per_axis) {
        if (lower_.size() != upper_.size() || lower_.size() < 1)
            throw std::invalid_argument("ControlSet: bound sizes differ");
        if (points_ < 1) throw std::invalid_argument("ControlSet: grid_points_per_axis must be >= 1");
        for (Eigen::Index k = 0; k < lower_.size(); ++k)
            if (!(lower_(k) <= upper_(k))) throw std::invalid_argument("ControlSet: lower > upper");
    }

    static ControlSet singleton(const ControlValue& v) { return ControlSet(v, v, 1); }

    const ControlValue& lower() const noexcept { return lower_; }
    const ControlValue& upper() const noexcept { return upper_; }
    int points_per_axis() const noexcept { return points_; }
    int dimension() const noexcept { return static_cast<int>(lower_.size()); }

    std::vector<double> axis_values(Eigen::Index k) const {
        if (lower_(k) == upper_(k) || points_ == 1) return {lower_(k)};
        std::vector<double> out(static_cast<std::size_t>(points_));
        for (int j = 0; j < points_; ++j)
            out[static_cast<std::size_t>(j)] =
                j == points_ - 1 ? upper_(k) : lower_(k) + (upper_(k) - lower_(k)) * j / (points_ - 1);
        return out;
    }

    /// Grid points in lexicographic order (first component most significant).
    std::vector<ControlValue> grid() const {
        std::vector<std::vector<double>> axes;
        for (Eigen::Index k = 0; k < lower_.size(); ++k) axes.push_back(axis_values(k));
        std::vector<ControlValue> out;
        std::vector<std::size_t> idx(axes.size(), 0);
        for (;;) {
            ControlValue v(lower_.size());
            for (std::size_t k = 0; k < axes.size(); ++k) v(static_cast<Eigen::Index>(k)) = axes[k][idx[k]];
            out.push_back(v);
            std::size_t k = axes.size();
            while (k > 0) {
                --k;
                if (++idx[k] < axes[k].size()) break;
                idx[k] = 0;
                if (k == 0) return out;
            }
        }
    }

    /// Same box with the grid spacing divided by `factor`.
    ControlSet refined(int factor) const { return ControlSet(lower_, upper_, (points_ - 1) * factor + 1); }

    bool contains(const ControlValue& v, double tol = 1e-12) const {
        if (v.size() != lower_.size()) return false;
        for (Eigen::Index k = 0; k < v.size(); ++k)
            if (v(k) < lower_(k) - tol || v(k) > upper_(k) + tol) return false;
        return true;
    }

private:
    ControlValue lower_;
    ControlValue upper_;
    int points_;
};

/// Lexicographic comparison used for deterministic argmin tie-breaking.
inline bool lexicographic_less(const ControlValue& a, const ControlValue& b) {
    for (Eigen::Index k = 0; k < std::min(a.size(), b.size()); ++k) {
        if (a(k) < b(k)) return true;
        if (a(k) > b(k)) return false;
    }
    return a.size() < b.size();
}

/// Piecewise-constant admissible control: open-loop constant, open-loop per
/// step, or state feedback.
class ControlPolicy {
public:
    using FeedbackFn = std::function<ControlValue(std::size_t step, const Vec& x)>;

    static ControlPolicy constant(ControlValue v) { return ControlPolicy(Constant{std::move(v)}); }
    static ControlPolicy piecewise(std::vector<ControlValue> values) {
        return ControlPolicy(Piecewise{std::move(values)});
    }
    static ControlPolicy feedback(FeedbackFn fn) { return ControlPolicy(Feedback{std::move(fn)}); }

    ControlValue at(std::size_t step, const Vec& x) const {
        return std::visit(
            [&](const auto& k) -> ControlValue {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, Constant>) return k.value;
                else if constexpr (std::is_same_v<K, Piecewise>) return k.values.at(step);
                else return k.fn(step, x);
            },
            kind_);
    }

    bool is_open_loop() const { return !std::holds_alternative<Feedback>(kind_); }

    /// Checks open-loop values against U and the piecewise length against n_steps.
    void validate(const ControlSet& controls, std::size_t n_steps) const {
        if (const auto* c = std::get_if<Constant>(&kind_)) {
            if (!controls.contains(c->value)) throw std::invalid_argument("ControlPolicy: value outside U");
        } else if (const auto* p = std::get_if<Piecewise>(&kind_)) {
            if (p->values.size() != n_steps) throw std::invalid_argument("ControlPolicy: piecewise length != n_steps");
            for (const auto& v : p->values)
                if (!controls.contains(v)) throw std::invalid_argument("ControlPolicy: value outside U");
        }
    }

private:
    struct Constant { ControlValue value; };
    struct Piecewise { std::vector<ControlValue> values; };
    struct Feedback { FeedbackFn fn; };

    explicit ControlPolicy(std::variant<Constant, Piecewise, Feedback> k) : kind_(std::move(k)) {}

    std::variant<Constant, Piecewise, Feedback> kind_;
};

/// Sampled manifold-valued paths on a shared grid.
class TrajectoryEnsemble {
public:
    TrajectoryEnsemble(Manifold m, std::shared_ptr<const BrownianGrid> noise, ControlPolicy policy,
                       std::vector<Vec> states)
        : manifold_(std::move(m)), noise_(std::move(noise)), policy_(std::move(policy)), states_(std::move(states)) {}

    const Manifold& manifold() const noexcept { return manifold_; }
    const TimeGrid& grid() const noexcept { return noise_->grid(); }
    const BrownianGrid& noise() const noexcept { return *noise_; }
    std::shared_ptr<const BrownianGrid> noise_ptr() const noexcept { return noise_; }
    const ControlPolicy& policy() const noexcept { return policy_; }
    std::size_t n_paths() const noexcept { return noise_->n_paths(); }
    std::size_t n_steps() const noexcept { return grid().n_steps(); }

    const Vec& state(std::size_t i, std::size_t p) const { return states_[i * n_paths() + p]; }

    ControlValue control(std::size_t i, std::size_t p) const { return policy_.at(i, state(i, p)); }

    double max_constraint_violation() const {
        double worst = 0.0;
        for (const auto& x : states_) worst = std::max(worst, manifold_.constraint_violation(x));
        return worst;
    }

private:
    Manifold manifold_;
    std::shared_ptr<const BrownianGrid> noise_;
    ControlPolicy policy_;
    std::vector<Vec> states_;
};

namespace detail {

inline void check_fields(const Manifold& m, std::span<const VectorField> fields, int d) {
    if (static_cast<int>(fields.size()) != d + 1)
        throw std::invalid_argument("simulate: expected d+1 = " + std::to_string(d + 1) + " fields");
    for (std::size_t a = 1; a < fields.size(); ++a)
        if (!fields[a].tangency_certified)
            throw NonTangentField("diffusion field '" + fields[a].id + "' is not tangency-certified on " + m.name());
}

/// One projected Euler-Maruyama step.
inline Vec euler_step(const Manifold& m, std::span<const VectorField> fields, double t, double dt, const Vec& x,
                      const ControlValue& v, std::span<const double> dw) {
    Vec incr = (v(0) * dt) * fields[0](t, x);
    for (std::size_t a = 1; a < fields.size(); ++a) {
        const double va = v(static_cast<Eigen::Index>(a));
        if (va == 0.0) continue;
        incr += (va * dw[a - 1]) * fields[a](t, x);
        incr += (0.5 * va * va * dt) * ambient_derivative(m, fields[a], fields[a], t, x);
    }
    return project(m, x + incr);
}

}  // namespace detail

/// Simulates all paths of the controlled SDE from x0.
inline TrajectoryEnsemble simulate(const Manifold& m, std::span<const VectorField> fields, const Vec& x0,
                                   const ControlPolicy& policy, std::shared_ptr<const BrownianGrid> noise) {
    detail::check_fields(m, fields, noise->d());
    if (!m.contains(x0, 1e-9)) throw std::invalid_argument("simulate: x0 is not on " + m.name());
    const TimeGrid& grid = noise->grid();
    const std::size_t n = grid.n_steps();
    const std::size_t np = noise->n_paths();
    const double dt = grid.dt();
    std::vector<Vec> states((n + 1) * np);
    parallel_for(np, [&](std::size_t p) {
        Vec x = x0;
        states[p] = x;
        for (std::size_t i = 0; i < n; ++i) {
            const ControlValue v = policy.at(i, x);
            if (v.size() != noise->d() + 1) throw std::invalid_argument("simulate: control has wrong dimension");
            x = detail::euler_step(m, fields, grid.time(i), dt, x, v, noise->at(i, p));
            states[(i + 1) * np + p] = x;
        }
    });
    return TrajectoryEnsemble(m, std::move(noise), policy, std::move(states));
}

struct FlowContinuityReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double constant_C = 0.0;
    bool pass = false;
};

/// Shared-noise witness of  E sup_s |X - X'|^2 <= C (|x - x'|^2 + E int |v - v'|^2 ds).
inline FlowContinuityReport flow_continuity_check(const Manifold& m, std::span<const VectorField> fields,
                                                  const Vec& x, const Vec& x_prime, const ControlPolicy& policy,
                                                  const ControlPolicy& policy_prime,
                                                  std::shared_ptr<const BrownianGrid> noise, double constant_C) {
    const auto a = simulate(m, fields, x, policy, noise);
    const auto b = simulate(m, fields, x_prime, policy_prime, noise);
    const std::size_t np = noise->n_paths();
    const std::size_t n = noise->grid().n_steps();
    const double dt = noise->grid().dt();
    std::vector<double> sup_sq(np), control_sq(np);
    parallel_for(np, [&](std::size_t p) {
        double s = 0.0, c = 0.0;
        for (std::size_t i = 0; i <= n; ++i) {
            s = std::max(s, (a.state(i, p) - b.state(i, p)).squaredNorm());
            if (i < n) c += (a.control(i, p) - b.control(i, p)).squaredNorm() * dt;
        }
        sup_sq[p] = s;
        control_sq[p] = c;
    });
    double lhs = 0.0, ctl = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
        lhs += sup_sq[p];
        ctl += control_sq[p];
    }
    lhs /= static_cast<double>(np);
    ctl /= static_cast<double>(np);
    FlowContinuityReport r;
    r.lhs = lhs;
    r.constant_C = constant_C;
    r.rhs = constant_C * ((x - x_prime).squaredNorm() + ctl);
    r.pass = r.lhs <= r.rhs;
    return r;
}

}  // namespace rsoc
