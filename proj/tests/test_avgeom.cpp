#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace nakring;
using namespace nakring::testing;

TEST(Lattice, ReductionReconstructsThePoint)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(1);
    for (int s = 0; s < 50; ++s) {
        const Vec2 z = random_cell_point(om, rng, -3.0, 3.0) + Vec2(cplx(5.0 * uniform(rng, -1, 1), 0), cplx(-4.2, 0));
        const AbelianPoint p = reduce_mod_lattice(z, om);
        const Vec2 m(static_cast<double>(p.shift[0]), static_cast<double>(p.shift[1]));
        const Vec2 n(static_cast<double>(p.shift[2]), static_cast<double>(p.shift[3]));
        EXPECT_LT((p.rep + om.omega() * m + n - z).norm(), 1e-12);
        const auto [sv, tv] = lattice_coordinates(p.rep, om);
        for (int j = 0; j < 2; ++j) {
            EXPECT_GE(sv(j), 0.0);
            EXPECT_LT(sv(j), 1.0);
            EXPECT_GE(tv(j), 0.0);
            EXPECT_LT(tv(j), 1.0);
        }
    }
}

TEST(Lattice, ReductionIsIdempotent)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(2);
    for (int s = 0; s < 50; ++s) {
        const AbelianPoint p = reduce_mod_lattice(random_cell_point(om, rng, -2.0, 2.0), om);
        const AbelianPoint q = reduce_mod_lattice(p.rep, om);
        EXPECT_LT((q.rep - p.rep).norm(), 1e-14);
        EXPECT_EQ(q.shift, (std::array<long, 4>{0, 0, 0, 0}));
    }
}

TEST(Lattice, ReductionOfAKnownPoint)
{
    const RiemannMatrix om(diagonal_period_matrix(1.0, 1.0));
    // 1.25 + 2.5i = 0.25 + 0.5i + 1 + 2i
    const AbelianPoint p = reduce_mod_lattice(Vec2(cplx(1.25, 2.5), cplx(-0.75, 0.25)), om);
    EXPECT_LT(std::abs(p.rep(0) - cplx(0.25, 0.5)), 1e-14);
    EXPECT_LT(std::abs(p.rep(1) - cplx(0.25, 0.25)), 1e-14);
    EXPECT_EQ(p.shift, (std::array<long, 4>{2, 0, 1, -1}));
}

TEST(Lattice, DistanceIgnoresPeriods)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(3);
    const Vec2 z = random_cell_point(om, rng);
    const Vec2 shifted = z + om.omega() * Vec2(1.0, -2.0) + Vec2(3.0, 1.0);
    EXPECT_LT(lattice_distance(z, shifted, om), 1e-12);
    EXPECT_GT(lattice_distance(z, z + Vec2(0.3, 0.0), om), 0.1);
}

TEST(ThetaZero, IsASmoothPointOfTheDivisor)
{
    const RiemannMatrix om(default_period_matrix());
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const DivisorPoint p = find_theta_zero(om, seed);
        EXPECT_LT(normalized_theta_modulus(p.z(), om), 1e-11);
        const auto jet = theta_jet(p.z(), om, {}, 1);
        const double grad = std::hypot(std::abs(jet[1]), std::abs(jet[2])) / om.theta_scale(p.z());
        EXPECT_GT(grad, 1e-6);
    }
}

TEST(ThetaZero, SameSeedSamePoint)
{
    const RiemannMatrix om(default_period_matrix());
    const DivisorPoint a = find_theta_zero(om, 99);
    const DivisorPoint b = find_theta_zero(om, 99);
    EXPECT_EQ(a.z(), b.z());
}

TEST(Intersection, TwoClassesSymmetricUnderReflection)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(4);
    int checked = 0;
    for (int attempt = 0; attempt < 12 && checked < 3; ++attempt) {
        const Vec2 cp = random_cell_point(om, rng);
        std::pair<DivisorPoint, DivisorPoint> pts;
        try {
            pts = intersect_divisors(om, cp, rng());
        } catch (const Error &e) {
            ASSERT_EQ(e.error_class(), ErrorClass::genericity) << e.what();
            continue;
        }
        ++checked;
        const auto &[p1, p2] = pts;
        for (const auto *p : {&p1, &p2}) {
            EXPECT_LT(normalized_theta_modulus(p->z(), om), 1e-11);
            EXPECT_LT(normalized_theta_modulus(p->z() - cp, om), 1e-11);
            EXPECT_LT(p->residual, 1e-11);
        }
        EXPECT_GT(lattice_distance(p1.z(), p2.z(), om), 1e-6);
        // z -> c' - z maps the intersection to itself
        EXPECT_LT(lattice_distance(p2.z(), cp - p1.z(), om), 1e-9);
    }
    EXPECT_EQ(checked, 3);
}

TEST(Intersection, RejectsLatticeShift)
{
    const RiemannMatrix om(default_period_matrix());
    EXPECT_THROW(intersect_divisors(om, Vec2(1.0, 0.0), 5), Degenerate);
}
