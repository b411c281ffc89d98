#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace rsoc;
using namespace rsoc::testing;

namespace {

const Manifold kCircle = Manifold::circle();

ManifoldMesh circle_mesh(int n) { return ManifoldMesh(kCircle, MeshSizes{n, 32, 64}); }

HjbField solve_cfl(const ControlProblem& pb, int n_theta) {
    const auto mesh = circle_mesh(n_theta);
    return solve_hjb(pb, TimeGrid(0, 1, hjb_steps_for_cfl(pb, mesh, 0, 1)), mesh);
}

double heat_error(const HjbField& f, double sigma) {
    double e = 0.0;
    for (std::size_t j = 0; j < f.n_nodes(); ++j)
        e = std::max(e, std::abs(f.at(0, j) - f.mesh.node(j)(0) * std::exp(-0.5 * sigma * sigma)));
    return e;
}

TestFunctionProbe cos_probe(double rate = 0.0) {
    return probe_from_id("coord", Params{{"index", 0.0}, {"rate", rate}}, kCircle);
}

ControlSet drift_box() {
    // v0 in [-1, 1], sigma in [0.5, 1], 5 points per axis.
    return ControlSet(make_control({-1, 0.5}), make_control({1, 1}), 5);
}

}  // namespace

// --- scheme ---------------------------------------------------------------------

TEST(Hjb, ConstantTerminalGivesConstantSolution) {
    const auto f = solve_cfl(circle_problem(zero_driver(), const_terminal(1.25), sigma_set({0.5, 1.0})), 64);
    for (double u : f.u) EXPECT_NEAR(u, 1.25, 1e-13);
}

TEST(Hjb, HeatOracle) {
    const double sigma = 0.8;
    const auto f = solve_cfl(circle_problem(zero_driver(), cos_terminal(), sigma_set({sigma})), 256);
    EXPECT_LE(heat_error(f, sigma), 5e-3);
    EXPECT_LE(f.cfl_ratio, 0.4);
    EXPECT_LE(f.max_constraint_violation, 1e-9);
}

TEST(Hjb, TwoControlsBelowEachClosedFormAndPickTheRightOne) {
    const double sa = 0.5, sb = 1.0;
    const auto f = solve_cfl(circle_problem(zero_driver(), cos_terminal(), sigma_set({sa, sb})), 128);
    for (std::size_t j = 0; j < f.n_nodes(); ++j) {
        const double c = f.mesh.node(j)(0);
        EXPECT_LE(f.at(0, j), c * std::exp(-0.5 * sa * sa) + 5e-3);
        EXPECT_LE(f.at(0, j), c * std::exp(-0.5 * sb * sb) + 5e-3);
        if (std::abs(c) < 0.1) continue;
        // The last step differences Phi = cos itself: concave where cos > 0,
        // so more diffusion lowers the value there.
        EXPECT_EQ(f.control(f.n_steps() - 1, j)(1), c > 0 ? sb : sa) << "node " << j;
    }
}

TEST(Hjb, CflGuard) {
    const auto pb = circle_problem(zero_driver(), cos_terminal(), sigma_set({1.0}));
    EXPECT_THROW(solve_hjb(pb, TimeGrid(0, 1, 10), circle_mesh(256)), CflViolated);
    const auto mesh = circle_mesh(64);
    const std::size_t n = hjb_steps_for_cfl(pb, mesh, 0, 1, 0.4, 16);
    EXPECT_EQ(n % 16, 0u);
    EXPECT_LE(1.0 / static_cast<double>(n), 0.4 * mesh.spacing() * mesh.spacing());
    EXPECT_GT(1.0 / static_cast<double>(n - 16), 0.4 * mesh.spacing() * mesh.spacing());
}

TEST(Hjb, DiscreteMaximumPrinciple) {
    const auto f = solve_cfl(circle_problem(zero_driver(), cos_terminal(0.2, 2.0), drift_box()), 64);
    EXPECT_LE(max_principle_excess(f), 1e-10);
}

TEST(Hjb, SecondOrderInSpace) {
    const double sigma = 1.0;
    const auto pb = circle_problem(zero_driver(), cos_terminal(), sigma_set({sigma}));
    std::vector<double> e;
    for (int n : {32, 64, 128}) e.push_back(heat_error(solve_cfl(pb, n), sigma));
    EXPECT_GE(e[0] / e[1], 2.0);
    EXPECT_GE(e[1] / e[2], 2.0);
}

TEST(Hjb, ConsistencyResidualIsSecondOrder) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), drift_box());
    std::vector<double> r;
    for (int n : {32, 64, 128}) r.push_back(hjb_consistency_residual(pb, cos_probe(0.3), circle_mesh(n), 0.2));
    EXPECT_GT(r[0], 0.0);
    EXPECT_GE(r[0] / r[1], 3.5);
    EXPECT_GE(r[1] / r[2], 3.5);
    // Constant in space: every difference vanishes.
    const auto flat = probe_from_id("time", {}, kCircle);
    EXPECT_LE(hjb_consistency_residual(pb, flat, circle_mesh(32), 0.2), 1e-12);
}

// --- Hamiltonians ------------------------------------------------------------------

TEST(Hamiltonian, ZeroProbeReducesToTheDriver) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({0.5, 1.0}));
    const auto probe = probe_from_id("zero", {}, kCircle);
    const Vec x = circle_point(0.4);
    const std::vector<double> z{0.3};
    const auto v = make_control({0, 1.0});
    EXPECT_DOUBLE_EQ(hamiltonian_F(pb, probe, 0.2, x, 0.7, z, v), pb.driver(0.2, x, 0.7, z, v));
}

TEST(Hamiltonian, TimeProbe) {
    const auto pb = circle_problem(zero_driver(), cos_terminal(), sigma_set({0.5, 1.0}));
    const auto probe = probe_from_id("time", {}, kCircle);
    const std::vector<double> z{0.0};
    EXPECT_DOUBLE_EQ(hamiltonian_F(pb, probe, 0.3, circle_point(1.0), 0.0, z, make_control({0, 1.0})), 1.0);
}

TEST(Hamiltonian, CosineProbeOnTheCircle) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), drift_box());
    const auto probe = cos_probe();
    SampleRng rng(3);
    for (int k = 0; k < 50; ++k) {
        const double th = rng.uniform(-kPi, kPi), v0 = rng.uniform(-1, 1), s = rng.uniform(0.5, 1);
        const double y = rng.uniform(-1, 1), zz = rng.uniform(-1, 1);
        const Vec x = circle_point(th);
        const auto v = make_control({v0, s});
        const std::vector<double> z{zz};
        // V phi = -sin, V V phi = -cos.
        const std::vector<double> shifted{zz - s * std::sin(th)};
        const double expected =
            -v0 * std::sin(th) - 0.5 * s * s * std::cos(th) + pb.driver(0.0, x, y + std::cos(th), shifted, v);
        EXPECT_NEAR(hamiltonian_F(pb, probe, 0.0, x, y, z, v), expected, 1e-12);
    }
}

TEST(Hamiltonian, F0IsTheGridMinimumWithBangBangDrift) {
    const auto pb = circle_problem(zero_driver(), cos_terminal(), drift_box());
    const auto probe = cos_probe();
    const std::vector<double> z{0.0};
    const auto cgrid = pb.controls.grid();
    for (double th : {0.3, 1.2, 2.5, -0.7, -2.0}) {
        const Vec x = circle_point(th);
        double brute = std::numeric_limits<double>::infinity();
        for (const auto& v : cgrid) brute = std::min(brute, hamiltonian_F(pb, probe, 0.0, x, 0.0, z, v));
        const auto m = hamiltonian_F0(pb, probe, 0.0, x, 0.0, z);
        EXPECT_EQ(m.value, brute);
        // F is affine in v0 with slope -sin, so the minimizer sits at an end.
        EXPECT_EQ(m.argmin(0), std::sin(th) > 0 ? 1.0 : -1.0);
        EXPECT_EQ(m.argmin(1), std::cos(th) > 0 ? 1.0 : 0.5);
    }
}

TEST(Hamiltonian, ProbeDerivativesMatchFlowDifferences) {
    const Manifold s2 = Manifold::sphere2();
    const std::vector<VectorField> fields = {field_from_id(s2, "rot_x"), field_from_id(s2, "rot_z")};
    const auto probe = probe_from_id("product", Params{{"i", 0.0}, {"j", 2.0}}, s2);
    SampleRng rng(9);
    const double h = 1e-3;
    for (int k = 0; k < 30; ++k) {
        const Vec x = s2.random_point(rng);
        for (const auto& f : fields) {
            const double p = probe(0, flow_step(s2, f, 0, x, h)), m = probe(0, flow_step(s2, f, 0, x, -h));
            const double c = probe(0, x);
            EXPECT_NEAR(probe.along(f, 0, x), (p - m) / (2 * h), 1e-5);
            EXPECT_NEAR(probe.along_twice(s2, f, 0, x), (p - 2 * c + m) / (h * h), 1e-5);
        }
    }
}

// --- frozen ODE ---------------------------------------------------------------------

TEST(FrozenOde, ConstantHamiltonian) {
    const auto pb = circle_problem(driver_from_id("const", {{"c", 0.7}}, 1), cos_terminal(), sigma_set({0.5, 1.0}));
    EXPECT_NEAR(frozen_ode_solve(pb, probe_from_id("zero", {}, kCircle), circle_point(0.2), 0.1, 0.3), 0.21, 1e-14);
}

TEST(FrozenOde, DiscountWithZeroProbeStaysAtZero) {
    const auto pb = circle_problem(driver_from_id("discount", {{"beta", 0.8}}, 1), cos_terminal(), sigma_set({1.0}));
    EXPECT_EQ(frozen_ode_solve(pb, probe_from_id("zero", {}, kCircle), circle_point(0.2), 0.0, 0.5), 0.0);
}

TEST(FrozenOde, DiscountClosedForm) {
    // -Y' = 1 - beta (Y + s) with the time probe.
    const double beta = 0.8, t = 0.1, delta = 0.5;
    const auto pb = circle_problem(driver_from_id("discount", {{"beta", beta}}, 1), cos_terminal(), sigma_set({1.0}));
    const double T = t + delta;
    // Y(s) = -s + T exp(-beta (T - s)).
    const double exact = -t + T * std::exp(-beta * (T - t));
    EXPECT_NEAR(frozen_ode_solve(pb, probe_from_id("time", {}, kCircle), circle_point(0.0), t, delta), exact, 1e-10);
}

TEST(FrozenOde, BracketAgainstConstantControls) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), drift_box());
    for (double th : {0.4, 2.0, -1.1}) {
        const auto r = frozen_ode_bracket(pb, cos_probe(0.3), circle_point(th), 0.2, 0.25);
        EXPECT_TRUE(r.below_fine) << th;
        EXPECT_LE(r.frozen, r.grid_min + 1e-8);
    }
    EXPECT_THROW(frozen_ode_solve(pb, cos_probe(), circle_point(0), 0.0, 0.0), std::invalid_argument);
}

// --- shared-noise checks ------------------------------------------------------------------

TEST(GeneratorIdentity, ConstantProbes) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({1.0}));
    const RegressionBasis basis(2, 2);
    const auto policy = ControlPolicy::constant(make_control({0.5, 1.0}));
    for (const char* id : {"zero", "const"}) {
        const auto probe = probe_from_id(id, Params{{"c", 0.4}}, kCircle);
        const auto r = lemma33_check(pb, probe, circle_point(0.3), policy, noise(TimeGrid(0, 0.25, 8), 1024, 1, 5, true),
                                     basis);
        EXPECT_LE(r.gap, 1e-10) << id;
    }
}

TEST(GeneratorIdentity, CosineProbeOnTheCircle) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({1.0}));
    const auto r = lemma33_check(pb, cos_probe(0.5), circle_point(0.3), ControlPolicy::constant(make_control({0.5, 1.0})),
                                 noise(TimeGrid(0, 0.25, 16), 4096, 1, 6, true), RegressionBasis(2, 2));
    EXPECT_LE(r.gap, 1e-4);
    EXPECT_TRUE(std::isfinite(r.continuum_gap));
}

TEST(FrozenGap, FrozenStateGivesZeroGap) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(),
                                   ControlSet::singleton(make_control({0, 0})));
    const auto r = lemma34_gap(pb, cos_probe(), 0.1, circle_point(0.5), {0.4, 0.2, 0.1});
    for (double g : r.gaps) EXPECT_EQ(g, 0.0);
}

TEST(FrozenGap, GapIsSmallerThanDelta) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({0.5, 1.0}));
    const auto r = lemma34_gap(pb, cos_probe(), 0.1, circle_point(0.5), {0.4, 0.2, 0.1}, FrozenGapOptions{16, 4096, 8});
    ASSERT_EQ(r.ratios.size(), 3u);
    EXPECT_TRUE(r.monotone_decay);
    EXPECT_LE(r.max_constraint_violation, 1e-9);
    EXPECT_THROW(lemma34_gap(pb, cos_probe(), 0.1, circle_point(0.5), {0.1, 0.2}), std::invalid_argument);
}
