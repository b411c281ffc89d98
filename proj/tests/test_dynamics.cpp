#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace rsoc;
using namespace rsoc::testing;

namespace {

const Manifold kCircle = Manifold::circle();
const Manifold kSphere = Manifold::sphere2();

std::vector<VectorField> circle_fields() { return {field_from_id(kCircle, "rot"), field_from_id(kCircle, "rot")}; }

}  // namespace

TEST(TimeGrid, NodesAndValidation) {
    const TimeGrid g(0.25, 1.25, 8);
    EXPECT_DOUBLE_EQ(g.dt(), 0.125);
    EXPECT_EQ(g.time(8), 1.25);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_LT(g.time(i), g.time(i + 1));
    EXPECT_THROW(TimeGrid(1.0, 1.0, 4), std::invalid_argument);
    EXPECT_THROW(TimeGrid(0.0, 1.0, 0), std::invalid_argument);
    const TimeGrid w = g.window(2, 3);
    EXPECT_EQ(w.t0(), g.time(2));
    EXPECT_EQ(w.T(), g.time(5));
}

TEST(BrownianGrid, CounterBasedIncrements) {
    const TimeGrid g(0.0, 1.0, 4);
    const BrownianGrid small(g, 8, 2, 99);
    const BrownianGrid large(g, 64, 2, 99);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t p = 0; p < 8; ++p)
            for (int a = 0; a < 2; ++a) EXPECT_EQ(small(i, p, a), large(i, p, a));
    const BrownianGrid other(g, 8, 2, 100);
    EXPECT_NE(small(0, 0, 0), other(0, 0, 0));
}

TEST(BrownianGrid, NormalWithVarianceDt) {
    const TimeGrid g(0.0, 1.0, 16);
    const BrownianGrid w(g, 20000, 1, 7);
    double s = 0.0, ss = 0.0;
    const double n = 16.0 * 20000.0;
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t p = 0; p < 20000; ++p) {
            s += w(i, p, 0);
            ss += w(i, p, 0) * w(i, p, 0);
        }
    const double var = ss / n;
    EXPECT_NEAR(s / n, 0.0, 4.0 * std::sqrt(g.dt() / n));
    EXPECT_NEAR(var / g.dt(), 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(BrownianGrid, AntitheticPairs) {
    const BrownianGrid w(TimeGrid(0.0, 1.0, 3), 10, 2, 5, true);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t p = 0; p < 5; ++p)
            for (int a = 0; a < 2; ++a) EXPECT_EQ(w(i, p, a), -w(i, p + 5, a));
    EXPECT_THROW(BrownianGrid(TimeGrid(0.0, 1.0, 3), 9, 1, 5, true), std::invalid_argument);
}

TEST(ControlSet, GridSizeAndOrder) {
    const ControlSet u(make_control({0, 0.5, -1}), make_control({0, 1.0, 1}), 3);
    const auto g = u.grid();
    EXPECT_EQ(g.size(), 9u);  // the collapsed first axis contributes one point
    for (std::size_t k = 1; k < g.size(); ++k) EXPECT_TRUE(lexicographic_less(g[k - 1], g[k]));
    for (const auto& v : g) EXPECT_TRUE(u.contains(v));
    EXPECT_FALSE(u.contains(make_control({0, 2.0, 0})));
    EXPECT_EQ(ControlSet::singleton(make_control({0, 1})).grid().size(), 1u);
    EXPECT_EQ(u.refined(4).grid().size(), 81u);
    EXPECT_THROW(ControlSet(make_control({1}), make_control({0}), 2), std::invalid_argument);
}

TEST(ControlPolicy, Validation) {
    const ControlSet u = sigma_set({0.5, 1.0});
    EXPECT_NO_THROW(ControlPolicy::constant(make_control({0, 1.0})).validate(u, 4));
    EXPECT_THROW(ControlPolicy::constant(make_control({0, 2.0})).validate(u, 4), std::invalid_argument);
    const auto pw = ControlPolicy::piecewise({make_control({0, 0.5}), make_control({0, 1.0})});
    EXPECT_NO_THROW(pw.validate(u, 2));
    EXPECT_THROW(pw.validate(u, 3), std::invalid_argument);
    EXPECT_EQ(pw.at(1, make_vec({1, 0}))(1), 1.0);
}

TEST(Simulate, FrozenDynamicsWithZeroPolicy) {
    const Vec x0 = circle_point(0.3);
    const auto ens = simulate(kCircle, circle_fields(), x0, ControlPolicy::constant(make_control({0, 0})),
                              noise(TimeGrid(0, 1, 16), 64, 1, 3));
    for (std::size_t i = 0; i <= 16; ++i)
        for (std::size_t p = 0; p < 64; ++p) EXPECT_EQ(ens.state(i, p), x0);
}

TEST(Simulate, CircleDiffusionOracle) {
    const double sigma = 1.0;
    const Vec x0 = make_vec({1, 0});
    const auto ens = simulate(kCircle, circle_fields(), x0, ControlPolicy::constant(make_control({0, sigma})),
                              noise(TimeGrid(0, 1, 64), 8192, 1, 11));
    std::vector<double> c(8192);
    for (std::size_t p = 0; p < 8192; ++p) c[p] = ens.state(64, p).dot(x0);
    const double mean = path_mean(c);
    double ss = 0.0;
    for (double v : c) ss += (v - mean) * (v - mean);
    const double se = std::sqrt(ss / 8191.0 / 8192.0);
    EXPECT_LE(std::abs(mean - std::exp(-0.5 * sigma * sigma)), 3.0 * se);
    for (std::size_t p = 0; p < 8192; ++p) EXPECT_EQ(ens.state(0, p), x0);
}

TEST(Simulate, SphereStaysOnManifold) {
    const std::vector<VectorField> f = {field_from_id(kSphere, "rot_z"), field_from_id(kSphere, "rot_x"),
                                        field_from_id(kSphere, "rot_y")};
    const auto ens = simulate(kSphere, f, sphere_point(0.5, 0.5), ControlPolicy::constant(make_control({1, 1, 1})),
                              noise(TimeGrid(0, 1, 64), 2048, 2, 12));
    EXPECT_LE(ens.max_constraint_violation(), 1e-9);
}

TEST(Simulate, RejectsUncertifiedDiffusionAndBadStart) {
    auto f = circle_fields();
    f[1].tangency_certified = false;
    const auto w = noise(TimeGrid(0, 1, 4), 8, 1, 1);
    EXPECT_THROW(simulate(kCircle, f, make_vec({1, 0}), ControlPolicy::constant(make_control({0, 1})), w),
                 NonTangentField);
    EXPECT_THROW(simulate(kCircle, circle_fields(), make_vec({2, 0}), ControlPolicy::constant(make_control({0, 1})), w),
                 std::invalid_argument);
}

TEST(Simulate, IndependentOfWorkerCount) {
    const auto w = noise(TimeGrid(0, 1, 32), 1000, 1, 13);
    const auto policy = ControlPolicy::feedback([](std::size_t, const Vec& x) {
        return make_control({0, x(0) > 0 ? 1.0 : 0.5});
    });
    set_workers(1);
    const auto a = simulate(kCircle, circle_fields(), make_vec({1, 0}), policy, w);
    set_workers(4);
    const auto b = simulate(kCircle, circle_fields(), make_vec({1, 0}), policy, w);
    set_workers(1);
    for (std::size_t i = 0; i <= 32; ++i)
        for (std::size_t p = 0; p < 1000; ++p) ASSERT_EQ(a.state(i, p), b.state(i, p));
}

TEST(Simulate, ZeroDiffusionConvergesToTheFlow) {
    // Drift-only rotation at unit speed: the exact solution turns by T.
    std::vector<double> errors;
    for (std::size_t n : {32u, 64u, 128u}) {
        const auto ens = simulate(kCircle, circle_fields(), make_vec({1, 0}),
                                  ControlPolicy::constant(make_control({1, 0})), noise(TimeGrid(0, 1, n), 2, 1, 1));
        errors.push_back((ens.state(n, 0) - circle_point(1.0)).norm());
    }
    EXPECT_GE(std::log2(errors[0] / errors[1]), 1.0);
    EXPECT_GE(std::log2(errors[1] / errors[2]), 1.0);
}

TEST(FlowContinuity, IdenticalInputs) {
    const auto p = ControlPolicy::constant(make_control({0, 1}));
    const auto r = flow_continuity_check(kCircle, circle_fields(), make_vec({1, 0}), make_vec({1, 0}), p, p,
                                         noise(TimeGrid(0, 1, 32), 256, 1, 2), 50.0);
    EXPECT_EQ(r.lhs, 0.0);
    EXPECT_TRUE(r.pass);
}

TEST(FlowContinuity, NearbyStartsPassWithCalibratedConstant) {
    const auto p = ControlPolicy::constant(make_control({0.5, 1}));
    const auto r = flow_continuity_check(kCircle, circle_fields(), circle_point(0.0), circle_point(0.1), p, p,
                                         noise(TimeGrid(0, 1, 32), 1024, 1, 3), 50.0);
    EXPECT_GT(r.lhs, 0.0);
    EXPECT_TRUE(r.pass);
}

TEST(FlowContinuity, PoliciesDifferingOnTheLastStep) {
    const std::size_t n = 32;
    std::vector<ControlValue> a(n, make_control({0, 1.0})), b = a;
    b.back() = make_control({0, 0.5});
    const auto r = flow_continuity_check(kCircle, circle_fields(), make_vec({1, 0}), make_vec({1, 0}),
                                         ControlPolicy::piecewise(a), ControlPolicy::piecewise(b),
                                         noise(TimeGrid(0, 1, n), 1024, 1, 4), 50.0);
    EXPECT_TRUE(r.pass);
    EXPECT_NEAR(r.rhs, 50.0 * 0.25 / static_cast<double>(n), 1e-12);
}

TEST(FlowContinuity, CalibrationFamilyStaysBelowTheConstant) {
    // Brute-force maximum of lhs / (|x - x'|^2 + E int |v - v'|^2) over a random family.
    SampleRng rng(20240601);
    double worst = 0.0;
    for (int k = 0; k < 40; ++k) {
        const Vec x = kCircle.random_point(rng), xp = kCircle.random_point(rng);
        const auto v = make_control({rng.uniform(-1, 1), rng.uniform(0, 1)});
        const auto vp = make_control({rng.uniform(-1, 1), rng.uniform(0, 1)});
        const auto r = flow_continuity_check(kCircle, circle_fields(), x, xp, ControlPolicy::constant(v),
                                             ControlPolicy::constant(vp), noise(TimeGrid(0, 1, 32), 256, 1, 100 + k),
                                             1.0);
        worst = std::max(worst, r.lhs / r.rhs);
    }
    EXPECT_GT(worst, 0.0);
    EXPECT_LT(worst, 50.0);
}
