#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace rsoc;
using namespace rsoc::testing;

namespace {

const Manifold kCircle = Manifold::circle();
const Manifold kSphere = Manifold::sphere2();

ControlProblem sphere_problem() {
    return ControlProblem{kSphere,
                          {field_from_id(kSphere, "rot_z"), field_from_id(kSphere, "rot_z")},
                          zero_driver(),
                          terminal_from_id("coord", Params{{"index", 2.0}}, kSphere),
                          ControlSet(make_control({0, 0.5}), make_control({0, 1}), 2)};
}

}  // namespace

TEST(H2, CircleRotationIsParallel) {
    const auto r = check_H2(kCircle, field_from_id(kCircle, "rot"), 2000, 1);
    EXPECT_LE(r.max_violation, 1e-10);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.samples, 2000u);
}

TEST(H2, ZeroFieldIsParallel) {
    EXPECT_EQ(check_H2(kSphere, field_from_id(kSphere, "zero"), 500, 2).max_violation, 0.0);
}

TEST(H2, SphereRotationIsNotParallel) {
    const auto r = check_H2(kSphere, field_from_id(kSphere, "rot_z"), 2000, 3);
    EXPECT_GT(r.max_violation, 1e-3);
    EXPECT_FALSE(r.pass);
    // The witness reproduces the reported defect.
    const auto& w = r.witness;
    const auto v = field_from_id(kSphere, "rot_z");
    const Vec moved = parallel_transport(kSphere, TangentVector{w.x, v(w.t, w.x)}, w.y).components;
    EXPECT_NEAR((moved - v(w.t, w.y)).norm(), r.max_violation, 1e-12);
}

TEST(H2, DefectIsSymmetricInThePair) {
    const auto v = field_from_id(kSphere, "rot_x");
    SampleRng rng(4);
    for (int k = 0; k < 200; ++k) {
        const auto [x, y] = detail::close_pair(kSphere, rng);
        EXPECT_NEAR(detail::transport_defect(kSphere, v, 0, x, y), detail::transport_defect(kSphere, v, 0, y, x), 1e-9);
    }
}

TEST(H2, RefusesUncertifiedFields) {
    auto v = field_from_id(kCircle, "rot");
    v.tangency_certified = false;
    EXPECT_THROW(check_H2(kCircle, v, 10), NonTangentField);
    EXPECT_THROW(check_H1(kCircle, v, 1.0, 10), NonTangentField);
}

TEST(H1, ParallelDriftsPassWithZeroConstant) {
    EXPECT_TRUE(check_H1(kCircle, field_from_id(kCircle, "zero"), 0.0, 500, 5).pass);
    EXPECT_TRUE(check_H1(kCircle, field_from_id(kCircle, "rot"), 0.0, 500, 5).pass);
}

TEST(H1, SphereRotationNeedsAPositiveConstant) {
    const auto v = field_from_id(kSphere, "rot_z");
    const auto loose = check_H1(kSphere, v, 2.0, 2000, 6);
    EXPECT_TRUE(loose.pass);
    EXPECT_LE(loose.max_violation, 2.0);
    EXPECT_FALSE(check_H1(kSphere, v, 0.01, 2000, 6).pass);
}

TEST(A1A2, SuiteDriverMeetsItsConstants) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({0.5, 1.0}));
    EXPECT_TRUE(check_A1(pb, 2000, 7).pass);
    EXPECT_TRUE(check_A2(pb, 2000, 7).pass);
}

TEST(A1A2, UnderstatedConstantsAreCaught) {
    auto d = linear_driver();
    d.lipschitz_K = 0.05;
    auto pb = circle_problem(d, cos_terminal(), sigma_set({0.5, 1.0}));
    EXPECT_FALSE(check_A1(pb, 2000, 8).pass);
    pb.driver = driver_from_id("const", {{"c", 0.4}}, 1);
    pb.driver.bound_K0 = 0.3;
    const auto r = check_A2(pb, 200, 8);
    EXPECT_FALSE(r.pass);
    EXPECT_NEAR(r.max_violation, 0.1, 1e-12);
}

TEST(Sampling, DeterministicGivenTheSeed) {
    const auto v = field_from_id(kSphere, "rot_y");
    const auto a = check_H2(kSphere, v, 300, 11), b = check_H2(kSphere, v, 300, 11), c = check_H2(kSphere, v, 300, 12);
    EXPECT_EQ(a.max_violation, b.max_violation);
    EXPECT_EQ(a.witness.x, b.witness.x);
    EXPECT_NE(a.max_violation, c.max_violation);
}

TEST(Modulus, VanishesOnTheDiagonalPoint) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({0.5, 1.0}));
    const auto psi = probe_from_id("coord", Params{{"index", 0.0}}, kCircle);
    const Vec x = circle_point(0.7);
    const Vec zeta = Vec::Zero(2);
    for (const auto& v : pb.controls.grid())
        EXPECT_EQ(structural_hamiltonian(pb, psi, 0.1, x, 0.3, zeta, v) -
                      structural_hamiltonian(pb, psi, 0.1, x, 0.3, zeta, v),
                  0.0);
}

TEST(Modulus, CircleRatioBelowTheMajorant) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({0.5, 1.0}));
    const auto psi = probe_from_id("coord", Params{{"index", 0.0}}, kCircle);
    const auto r = sample_modulus_311(pb, psi, {0.1, 1.0, 10.0}, 500, 10.0, 9);
    ASSERT_EQ(r.max_ratio.size(), 3u);
    for (double m : r.max_ratio) EXPECT_LE(m, 10.0);
    EXPECT_TRUE(r.summary.pass);
}

TEST(Uniqueness, CertifiedOnTheCircleOnly) {
    const auto pb = circle_problem(linear_driver(), cos_terminal(), sigma_set({0.5, 1.0}));
    const auto c = uniqueness_certified(pb, 0.0, 500, 10);
    EXPECT_TRUE(c.certified);
    EXPECT_EQ(c.reports.size(), 4u);
    const auto s = uniqueness_certified(sphere_problem(), 2.0, 500, 10);
    EXPECT_FALSE(s.certified);
    bool h2_failed = false;
    for (const auto& r : s.reports)
        if (r.name.rfind("H2", 0) == 0) h2_failed = h2_failed || !r.pass;
    EXPECT_TRUE(h2_failed);
}
