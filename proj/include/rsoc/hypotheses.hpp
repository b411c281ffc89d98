#pragma once

// Sampled checks of the standing assumptions on the problem data: Lipschitz
// and bound conditions on (f, Phi), parallelism of the fields under
// transport, and the structural modulus condition of the uniqueness theorem.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rsoc/geometry.hpp"
#include "rsoc/problem.hpp"

namespace rsoc {

struct HypothesisWitness {
    Vec x;
    Vec y;
    double t = 0.0;
    ControlValue v;
    double alpha = 0.0;
};

/// `max_violation` is the measured quantity compared against `threshold`:
///   H2: max |L_xy V(x) - V(y)|
///   H1: max |L_xy V0(x) - V0(y)| / d(x, y)
///   A1, A2: largest excess over the declared constants
///   Mod311: max LHS / (alpha d^2 + d)
struct HypothesisReport {
    std::string name;
    double max_violation = 0.0;
    double threshold = 0.0;
    bool pass = false;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    HypothesisWitness witness;
};

namespace detail {

/// Random pair at distance below half the injectivity radius.
inline std::pair<Vec, Vec> close_pair(const Manifold& m, SampleRng& rng) {
    const Vec x = m.random_point(rng);
    Vec w = m.random_tangent(x, rng);
    while (w.norm() < 1e-12) w = m.random_tangent(x, rng);
    const double r = rng.uniform(0.0, 0.5 * m.injectivity_radius() * (1.0 - 1e-6));
    w *= r / w.norm();
    return {x, exp_map(m, TangentVector{x, w})};
}

inline double transport_defect(const Manifold& m, const VectorField& v, double t, const Vec& x, const Vec& y) {
    const TangentVector moved = parallel_transport(m, TangentVector{x, v(t, x)}, y);
    return (moved.components - v(t, y)).norm();
}

inline void finish(HypothesisReport& r) { r.pass = r.max_violation <= r.threshold; }

}  // namespace detail

inline HypothesisReport check_H2(const Manifold& m, const VectorField& v, std::size_t n_samples,
                                 std::uint64_t seed = 0) {
    if (!v.tangency_certified) throw NonTangentField("check_H2: field '" + v.id + "' is not tangency-certified");
    HypothesisReport r{"H2", 0.0, 1e-8, false, n_samples, seed, {}};
    SampleRng rng(seed);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const auto [x, y] = detail::close_pair(m, rng);
        const double t = rng.uniform();
        const double defect = detail::transport_defect(m, v, t, x, y);
        if (defect > r.max_violation || k == 0) {
            r.max_violation = std::max(r.max_violation, defect);
            r.witness = {x, y, t, {}, 0.0};
        }
    }
    detail::finish(r);
    return r;
}

inline HypothesisReport check_H1(const Manifold& m, const VectorField& v0, double mu, std::size_t n_samples,
                                 std::uint64_t seed = 0) {
    if (!v0.tangency_certified) throw NonTangentField("check_H1: field '" + v0.id + "' is not tangency-certified");
    // Relative slack on mu plus the same absolute roundoff floor as H2.
    HypothesisReport r{"H1", 0.0, mu * (1.0 + 1e-6) + 1e-8, false, n_samples, seed, {}};
    SampleRng rng(seed);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const auto [x, y] = detail::close_pair(m, rng);
        const double t = rng.uniform();
        const double d = distance(m, x, y);
        if (d < 1e-10) continue;
        const double ratio = detail::transport_defect(m, v0, t, x, y) / d;
        if (ratio > r.max_violation || k == 0) {
            r.max_violation = std::max(r.max_violation, ratio);
            r.witness = {x, y, t, {}, 0.0};
        }
    }
    detail::finish(r);
    return r;
}

/// Lipschitz condition on f in (x, y, z) and on Phi in x, against the
/// declared constants.
inline HypothesisReport check_A1(const ControlProblem& pb, std::size_t n_samples, std::uint64_t seed = 0) {
    HypothesisReport r{"A1", 0.0, 1e-9, false, n_samples, seed, {}};
    SampleRng rng(seed);
    const auto cgrid = pb.controls.grid();
    const int d = pb.d();
    std::vector<double> z1(static_cast<std::size_t>(d)), z2(static_cast<std::size_t>(d));
    for (std::size_t k = 0; k < n_samples; ++k) {
        const Vec x1 = pb.manifold.random_point(rng);
        const Vec x2 = pb.manifold.random_point(rng);
        const double t = rng.uniform();
        const double y1 = rng.uniform(-2.0, 2.0), y2 = rng.uniform(-2.0, 2.0);
        double dz = 0.0;
        for (int a = 0; a < d; ++a) {
            z1[static_cast<std::size_t>(a)] = rng.uniform(-2.0, 2.0);
            z2[static_cast<std::size_t>(a)] = rng.uniform(-2.0, 2.0);
            dz += std::pow(z1[static_cast<std::size_t>(a)] - z2[static_cast<std::size_t>(a)], 2);
        }
        const ControlValue& v = cgrid[rng.next() % cgrid.size()];
        const double dx = distance(pb.manifold, x1, x2);
        const double df = std::abs(pb.driver(t, x1, y1, z1, v) - pb.driver(t, x2, y2, z2, v));
        const double excess_f = df - pb.driver.lipschitz_K * (dx + std::abs(y1 - y2) + std::sqrt(dz));
        const double excess_phi = std::abs(pb.terminal(x1) - pb.terminal(x2)) - pb.terminal.lipschitz_K * dx;
        const double excess = std::max(excess_f, excess_phi);
        if (excess > r.max_violation) {
            r.max_violation = excess;
            r.witness = {x1, x2, t, v, 0.0};
        }
    }
    detail::finish(r);
    return r;
}

/// Bound |f(t, x, 0, 0, v)| <= K0.
inline HypothesisReport check_A2(const ControlProblem& pb, std::size_t n_samples, std::uint64_t seed = 0) {
    HypothesisReport r{"A2", 0.0, 1e-9, false, n_samples, seed, {}};
    SampleRng rng(seed);
    const auto cgrid = pb.controls.grid();
    const std::vector<double> zero(static_cast<std::size_t>(pb.d()), 0.0);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const Vec x = pb.manifold.random_point(rng);
        const double t = rng.uniform();
        const ControlValue& v = cgrid[rng.next() % cgrid.size()];
        const double excess = std::abs(pb.driver(t, x, 0.0, zero, v)) - pb.driver.bound_K0;
        if (excess > r.max_violation) {
            r.max_violation = excess;
            r.witness = {x, x, t, v, 0.0};
        }
    }
    detail::finish(r);
    return r;
}

/// H(t, x, r, zeta, P, v) = -f(t, x, r, {<zeta, v_a V_a>}, v) - <zeta, v0 V0>
///                          - 1/2 sum v_a^2 <P V_a, V_a>,
/// with the quadratic form <P V_a, V_a> supplied by the probe as V_a V_a psi.
inline double structural_hamiltonian(const ControlProblem& pb, const TestFunctionProbe& psi, double t, const Vec& x,
                                     double r, const Vec& zeta, const ControlValue& v) {
    const int d = pb.d();
    double z[8];
    double second = 0.0;
    for (int a = 1; a <= d; ++a) {
        const auto& field = pb.fields[static_cast<std::size_t>(a)];
        z[a - 1] = zeta.dot(v(a) * field(t, x));
        if (v(a) != 0.0) second += v(a) * v(a) * psi.along_twice(pb.manifold, field, t, x);
    }
    return -pb.driver(t, x, r, std::span<const double>(z, static_cast<std::size_t>(d)), v) -
           zeta.dot(v(0) * pb.fields[0](t, x)) - 0.5 * second;
}

struct Modulus311Report {
    std::vector<double> alphas;
    std::vector<double> max_ratio;  // per alpha
    HypothesisReport summary;
};

/// Sampled structural modulus condition against the linear majorant
/// C_bar (alpha d^2 + d).
inline Modulus311Report sample_modulus_311(const ControlProblem& pb, const TestFunctionProbe& psi,
                                           const std::vector<double>& alphas, std::size_t n_samples,
                                           double c_bar = 10.0, std::uint64_t seed = 0) {
    Modulus311Report out;
    out.alphas = alphas;
    out.summary = HypothesisReport{"Mod311", 0.0, c_bar, false, n_samples, seed, {}};
    const auto cgrid = pb.controls.grid();
    SampleRng rng(seed);
    for (double alpha : alphas) {
        double worst = 0.0;
        for (std::size_t k = 0; k < n_samples; ++k) {
            const auto [x, y] = detail::close_pair(pb.manifold, rng);
            const double t = rng.uniform();
            const double r = rng.uniform(-2.0, 2.0);
            const double d = distance(pb.manifold, x, y);
            if (d < 1e-10) continue;
            const Vec zeta_y = alpha * log_map(pb.manifold, y, x).components;
            const Vec zeta_x = -alpha * log_map(pb.manifold, x, y).components;
            double lhs = -std::numeric_limits<double>::infinity();
            ControlValue arg;
            for (const auto& v : cgrid) {
                const double h = structural_hamiltonian(pb, psi, t, y, r, zeta_y, v) -
                                 structural_hamiltonian(pb, psi, t, x, r, zeta_x, v);
                if (h > lhs) {
                    lhs = h;
                    arg = v;
                }
            }
            const double ratio = lhs / (alpha * d * d + d);
            if (ratio > worst) worst = ratio;
            if (ratio > out.summary.max_violation) {
                out.summary.max_violation = ratio;
                out.summary.witness = {x, y, t, arg, alpha};
            }
        }
        out.max_ratio.push_back(worst);
    }
    detail::finish(out.summary);
    return out;
}

struct UniquenessCertificate {
    std::vector<HypothesisReport> reports;
    bool certified = false;
};

/// A1, A2, H1 for V0 with the given mu, and H2 for every diffusion field.
inline UniquenessCertificate uniqueness_certified(const ControlProblem& pb, double mu, std::size_t n_samples,
                                                  std::uint64_t seed = 0) {
    UniquenessCertificate c;
    c.reports.push_back(check_A1(pb, n_samples, hash_counters(seed, 1)));
    c.reports.push_back(check_A2(pb, n_samples, hash_counters(seed, 2)));
    c.reports.push_back(check_H1(pb.manifold, pb.fields[0], mu, n_samples, hash_counters(seed, 3)));
    for (std::size_t a = 1; a < pb.fields.size(); ++a) {
        auto r = check_H2(pb.manifold, pb.fields[a], n_samples, hash_counters(seed, 4, a));
        r.name = "H2[" + pb.fields[a].id + "]";
        c.reports.push_back(std::move(r));
    }
    c.certified = true;
    for (const auto& r : c.reports) c.certified = c.certified && r.pass;
    return c;
}

}  // namespace rsoc
