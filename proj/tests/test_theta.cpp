#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace nakring;
using namespace nakring::testing;

namespace
{

Characteristic random_char(std::mt19937_64 &rng)
{
    Characteristic ch;
    auto r = [&] {
        const auto den = static_cast<std::int64_t>(1 + rng() % 6);
        return Rational(static_cast<std::int64_t>(rng() % (2 * den + 1)) - den, den);
    };
    ch.a = {r(), r()};
    ch.b = {r(), r()};
    return ch;
}

} // namespace

TEST(Theta, FrozenValueAtOriginForSquareLattice)
{
    const RiemannMatrix om(diagonal_period_matrix(1.0, 1.0));
    const cplx v = theta_eval(Vec2::Zero(), om);
    // theta_3(0 | i)^2 = sqrt(pi) / Gamma(3/4)^2
    const double closed_form = std::sqrt(pi) / std::pow(std::tgamma(0.75), 2);
    EXPECT_NEAR(v.real(), 1.18034059901609622604533794056, 1e-13);
    EXPECT_NEAR(v.real(), closed_form, 1e-13);
    EXPECT_NEAR(v.imag(), 0.0, 1e-15);
}

TEST(Theta, DiagonalPeriodMatrixFactorizes)
{
    const RiemannMatrix om(diagonal_period_matrix(0.8, 1.7));
    std::mt19937_64 rng(3);
    for (int s = 0; s < 20; ++s) {
        const Vec2 z = random_cell_point(om, rng, -0.5, 0.5);
        const cplx expected = jacobi_theta3(z(0), cplx(0, 0.8)) * jacobi_theta3(z(1), cplx(0, 1.7));
        EXPECT_LT(rel_diff(theta_eval(z, om), expected), 1e-12);
    }
}

TEST(Theta, EvenFunctionAndCharacteristicSignFlip)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(5);
    for (int s = 0; s < 20; ++s) {
        const Vec2 z = random_cell_point(om, rng, -0.5, 0.5);
        EXPECT_LT(rel_diff(theta_eval(-z, om), theta_eval(z, om)), 1e-13);
        const Characteristic ch = random_char(rng);
        Characteristic neg;
        neg.a = {Rational(-ch.a[0].num, ch.a[0].den), Rational(-ch.a[1].num, ch.a[1].den)};
        neg.b = {Rational(-ch.b[0].num, ch.b[0].den), Rational(-ch.b[1].num, ch.b[1].den)};
        EXPECT_LT(std::abs(theta_eval(-z, om, ch) - theta_eval(z, om, neg)), 1e-12 * om.theta_scale(z));
    }
}

TEST(Theta, IntegerShiftLaw)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(7);
    for (int s = 0; s < 30; ++s) {
        const Vec2 z = random_cell_point(om, rng, -0.5, 0.5);
        const Characteristic ch = random_char(rng);
        const RVec2 m(static_cast<double>(rng() % 5) - 2, static_cast<double>(rng() % 5) - 2);
        const cplx lhs = theta_eval(z + m.cast<cplx>(), om, ch);
        const cplx rhs = std::exp(2.0 * pi * I * ch.a_vec().dot(m)) * theta_eval(z, om, ch);
        EXPECT_LT(std::abs(lhs - rhs), 1e-12 * om.theta_scale(z));
    }
}

TEST(Theta, PeriodShiftLaw)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(11);
    for (int s = 0; s < 30; ++s) {
        const Vec2 z = random_cell_point(om, rng, -0.5, 0.5);
        const Characteristic ch = random_char(rng);
        const Vec2 m(static_cast<double>(rng() % 5) - 2, static_cast<double>(rng() % 5) - 2);
        const Vec2 om_m = om.omega() * m;
        const cplx factor = std::exp(-2.0 * pi * I * ch.b_vec().dot(m.real()) - pi * I * (m.transpose() * om_m)(0) -
                                     2.0 * pi * I * (m.transpose() * z)(0));
        const cplx lhs = theta_eval(z + om_m, om, ch);
        const cplx rhs = factor * theta_eval(z, om, ch);
        EXPECT_LT(std::abs(lhs - rhs), 1e-11 * std::max(om.theta_scale(z + om_m), std::abs(lhs)));
    }
}

TEST(Theta, DerivativesMatchCentralDifferences)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(13);
    const double h = 1e-5;
    for (int s = 0; s < 10; ++s) {
        const Vec2 z = random_cell_point(om, rng);
        const Characteristic ch = random_char(rng);
        for (int j = 1; j <= 2; ++j) {
            Vec2 e = Vec2::Zero();
            e(j - 1) = h;
            const cplx fd = (theta_eval(z + e, om, ch) - theta_eval(z - e, om, ch)) / (2 * h);
            const cplx an = theta_eval(z, om, ch, MultiIndex::unit(j));
            EXPECT_LT(std::abs(fd - an), 1e-7 * std::max(1.0, std::abs(an)));
            // second derivative from first derivatives
            const cplx fd2 = (theta_eval(z + e, om, ch, MultiIndex::unit(1)) -
                              theta_eval(z - e, om, ch, MultiIndex::unit(1))) /
                             (2 * h);
            const cplx an2 = theta_eval(z, om, ch, MultiIndex::unit(1) + MultiIndex::unit(j));
            EXPECT_LT(std::abs(fd2 - an2), 1e-6 * std::max(1.0, std::abs(an2)));
        }
    }
}

TEST(Theta, JetAgreesWithSingleDerivatives)
{
    const RiemannMatrix om(default_period_matrix());
    std::mt19937_64 rng(17);
    const Vec2 z = random_cell_point(om, rng);
    const auto jet = theta_jet(z, om, {}, 4);
    for (const auto &beta : multi_indices_up_to(4)) {
        EXPECT_LT(rel_diff(jet[jet_index(beta)], theta_eval(z, om, {}, beta)), 1e-13) << beta.str();
    }
}

TEST(Theta, TailBoundShrinksWithRadius)
{
    const RiemannMatrix om(default_period_matrix());
    double prev = detail::theta_tail_bound(om, RVec2::Zero(), 0, 1.0);
    for (double r = 1.5; r < 8.0; r += 0.5) {
        const double b = detail::theta_tail_bound(om, RVec2::Zero(), 0, r);
        EXPECT_LE(b, prev);
        prev = b;
    }
    EXPECT_LT(prev, 1e-20);
}

TEST(Theta, RejectsInvalidPeriodMatrices)
{
    Mat2 asym = default_period_matrix();
    asym(0, 1) += cplx(0, 0.1);
    EXPECT_THROW(RiemannMatrix{asym}, InvalidOmega);
    Mat2 indefinite;
    indefinite << cplx(0, 1), cplx(0, 2), cplx(0, 2), cplx(0, 1);
    EXPECT_THROW(RiemannMatrix{indefinite}, InvalidOmega);
}

TEST(Theta, LogDerivativeRefusesPointsOnTheDivisor)
{
    const RiemannMatrix om(default_period_matrix());
    const DivisorPoint p = find_theta_zero(om, 21);
    EXPECT_THROW(log_theta_deriv(p.z(), om, MultiIndex(2, 0)), OnDivisor);
}
