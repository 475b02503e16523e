#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace nakring;
using namespace nakring::testing;

namespace
{

const SpectralConfig &cfg()
{
    return default_build().cfg;
}

const OperatorRing &ring()
{
    return default_build().ring;
}

std::vector<Vec2> sample_xs(std::uint64_t seed, int n = 8)
{
    std::mt19937_64 rng(seed);
    std::vector<Vec2> xs;
    for (int i = 0; i < n; ++i) {
        xs.push_back(random_polydisc(rng, 0.1));
    }
    return xs;
}

double spectral_residual(const MatDiffOp &op, const std::string &idx, std::uint64_t seed, int samples = 10)
{
    const BAParams &p = cfg().params;
    std::mt19937_64 rng(seed);
    return detail::eigen_residual(op, p, rng, samples, 0.1, 0.05,
                                  [&](const Vec2 &z, const Vec2 &, Evaluator &ev, const std::array<CoeffExpr, 2> &f) {
                                      const cplx lam = spectral_value(idx, z, p.omega);
                                      return std::array<cplx, 2>{lam * ev(f[0]), lam * ev(f[1])};
                                  });
}

double derivation_residual(const MatDiffOp &Z, int j, std::uint64_t seed, int samples = 10)
{
    const BAParams &p = cfg().params;
    std::mt19937_64 rng(seed);
    return detail::eigen_residual(Z, p, rng, samples, 0.1, 0.05,
                                  [&](const Vec2 &z, const Vec2 &x, Evaluator &, const std::array<CoeffExpr, 2> &) {
                                      return std::array<cplx, 2>{psi_dz(p, j, z, x), psi_cprime_dz(p, j, z, x)};
                                  });
}

} // namespace

TEST(Alphas, FitReproducesTheProductAtFreshPoints)
{
    const RiemannMatrix &om = cfg().params.omega;
    const Vec2 &cp = cfg().params.c_prime;
    const Alphas &a = cfg().alphas;
    std::mt19937_64 rng(1);
    for (int s = 0; s < 20; ++s) {
        const Vec2 z = random_generic_z(om, rng);
        const cplx lhs = theta_eval(z - cp, om) * theta_eval(z + cp, om) / std::pow(theta_eval(z, om), 2);
        const cplx rhs = a.a11 * log_theta_deriv(z, om, MultiIndex(2, 0)) +
                         a.a12 * log_theta_deriv(z, om, MultiIndex(1, 1)) +
                         a.a22 * log_theta_deriv(z, om, MultiIndex(0, 2)) + a.a;
        EXPECT_LT(rel_diff(lhs, rhs), 1e-9);
    }
}

TEST(Alphas, UnchangedWhenShiftChangesSign)
{
    const RiemannMatrix &om = cfg().params.omega;
    const Vec2 &cp = cfg().params.c_prime;
    const Alphas a = solve_alphas(om, cp, 7);
    const Alphas b = solve_alphas(om, -cp, 7);
    EXPECT_LT(std::abs(a.a11 - b.a11), 1e-10 * std::abs(a.a11));
    EXPECT_LT(std::abs(a.a12 - b.a12), 1e-10 * std::max(1.0, std::abs(a.a12)));
    EXPECT_LT(std::abs(a.a22 - b.a22), 1e-10 * std::abs(a.a22));
    EXPECT_LT(std::abs(a.a - b.a), 1e-10 * std::max(1.0, std::abs(a.a)));
}

TEST(Alphas, FitBasisIsIndependent)
{
    const RiemannMatrix &om = cfg().params.omega;
    std::mt19937_64 rng(2);
    MatXc m(16, 4);
    for (int r = 0; r < 16; ++r) {
        const Vec2 z = random_generic_z(om, rng);
        m(r, 0) = 1.0;
        m(r, 1) = log_theta_deriv(z, om, MultiIndex(2, 0));
        m(r, 2) = log_theta_deriv(z, om, MultiIndex(1, 1));
        m(r, 3) = log_theta_deriv(z, om, MultiIndex(0, 2));
    }
    EXPECT_EQ(numerical_rank(m).rank, 4);
}

TEST(SpectralConfig, PointsLieOnTheRightDivisors)
{
    const SpectralConfig &c = cfg();
    const RiemannMatrix &om = c.params.omega;
    const Vec2 &cp = c.params.c_prime;
    EXPECT_LT(normalized_theta_modulus(c.delta.z(), om), 1e-11);
    for (const auto *p : {&c.p1, &c.p2}) {
        EXPECT_LT(normalized_theta_modulus(p->z(), om), 1e-11);
        EXPECT_LT(normalized_theta_modulus(p->z() - cp, om), 1e-11);
    }
    // the swapped configuration uses p_i - c'
    EXPECT_LT(lattice_distance(c.q1.z(), c.p1.z() - cp, om), 1e-12);
    EXPECT_LT(lattice_distance(c.q2.z(), c.p2.z() - cp, om), 1e-12);
}

TEST(SpectralConfig, SameSeedSameConfiguration)
{
    const SpectralConfig again = make_spectral_config(cfg().params, cfg().seed, cfg().opts);
    EXPECT_EQ(to_json_value(again).dump(), to_json_value(cfg()).dump());
}

TEST(SecondOrder, SymmetricInItsIndices)
{
    const MatDiffOp a = build_second_order(cfg(), 1, 2);
    const MatDiffOp b = build_second_order(cfg(), 2, 1);
    EXPECT_EQ(detail::relative_difference(a, b, cfg().params.omega, sample_xs(3)), 0.0);
}

TEST(SecondOrder, LeadingTermIsMinusMixedPartial)
{
    const auto xs = sample_xs(4, 3);
    for (const auto &[k, j] : {std::pair{1, 1}, std::pair{1, 2}, std::pair{2, 2}}) {
        const MatDiffOp &L = ring().L(k, j);
        EXPECT_EQ(L.order(), 2);
        const MultiIndex kj = MultiIndex::unit(k) + MultiIndex::unit(j);
        for (const auto &x : xs) {
            Evaluator ev(cfg().params.omega, x);
            EXPECT_LT(std::abs(ev(L(1, 1).coeff(kj)) + 1.0), 1e-15);
            EXPECT_LT(std::abs(ev(L(2, 2).coeff(kj)) + 1.0), 1e-15);
        }
        EXPECT_LE(L(1, 2).order(), 0);
    }
}

TEST(SecondOrder, EigenRelations)
{
    EXPECT_LT(spectral_residual(ring().L11, "11", 5), 1e-9);
    EXPECT_LT(spectral_residual(ring().L12, "12", 6), 1e-9);
    EXPECT_LT(spectral_residual(ring().L22, "22", 7), 1e-9);
}

TEST(SecondOrder, PairwiseCommute)
{
    const auto xs = sample_xs(8);
    const RiemannMatrix &om = cfg().params.omega;
    EXPECT_LT(detail::relative_commutator(ring().L11, ring().L12, om, xs), 1e-9);
    EXPECT_LT(detail::relative_commutator(ring().L11, ring().L22, om, xs), 1e-9);
    EXPECT_LT(detail::relative_commutator(ring().L12, ring().L22, om, xs), 1e-9);
}

TEST(Derivation, ActsAsZDerivative)
{
    EXPECT_LT(derivation_residual(ring().Z1, 1, 9), 1e-9);
    EXPECT_LT(derivation_residual(ring().Z2, 2, 10), 1e-9);
}

TEST(Derivation, IsPurePartialAtTheOrigin)
{
    Evaluator ev(cfg().params.omega, Vec2::Zero());
    for (int j = 1; j <= 2; ++j) {
        const DiffOp &z11 = ring().Z(j)(1, 1);
        for (const auto &[beta, c] : z11.terms()) {
            const cplx expected = beta == MultiIndex::unit(j) ? cplx(1.0) : cplx(0.0);
            EXPECT_LT(std::abs(ev(c) - expected), 1e-14) << beta.str();
        }
        for (const auto &[beta, c] : ring().Z(j)(1, 2).terms()) {
            EXPECT_LT(std::abs(ev(c)), 1e-14);
        }
    }
}

TEST(Derivation, WrongSignInDiagonalConstantIsDetected)
{
    // flipping the sign of the theta(c + c' + x) log-derivative term must break the relation
    const SpectralConfig &c = cfg();
    MatDiffOp Z = ring().Z1;
    const Vec2 w = c.params.c + c.params.c_prime;
    Z(2, 2).add_term({}, constant(2.0) * theta_node(w, MultiIndex::unit(1)) / theta_node(w));
    EXPECT_GT(derivation_residual(Z, 1, 11, 5), 1e-3);
}

TEST(Derivation, DerivationsCommute)
{
    EXPECT_LT(detail::relative_commutator(ring().Z1, ring().Z2, cfg().params.omega, sample_xs(12)), 1e-9);
}

TEST(ThirdOrder, LeadingSymbolIsTwiceMinusThirdPartial)
{
    const auto xs = sample_xs(13, 3);
    for (const auto &[idx, T] : ring().third) {
        EXPECT_EQ(T.order(), 3) << idx;
        MultiIndex beta;
        for (char ch : idx) {
            beta = beta + MultiIndex::unit(ch - '0');
        }
        for (const auto &x : xs) {
            Evaluator ev(cfg().params.omega, x);
            EXPECT_LT(std::abs(ev(T(1, 1).coeff(beta)) + 2.0), 1e-9) << idx;
        }
    }
}

TEST(ThirdOrder, EigenRelationForThirdDerivative)
{
    EXPECT_LT(spectral_residual(ring().third.at("111"), "111", 14, 5), 1e-8);
    EXPECT_LT(spectral_residual(ring().third.at("122"), "122", 15, 5), 1e-8);
}

TEST(ThirdOrder, IndependentOfCommutatorPath)
{
    const RiemannMatrix &om = cfg().params.omega;
    const auto trunc = truncation_samples(cfg().seed, 0.1);
    const MatDiffOp alt = third_order(ring().L12, ring().Z1, om, trunc, 1e-7);
    EXPECT_LT(detail::relative_difference(alt, ring().third.at("112"), om, sample_xs(16)), 1e-9);
}

TEST(Generators, NineFunctionsAreIndependent)
{
    const RiemannMatrix &om = cfg().params.omega;
    std::mt19937_64 rng(17);
    MatXc m(24, 9);
    for (int r = 0; r < 24; ++r) {
        const auto f = generator_functions(random_generic_z(om, rng), om);
        for (int c = 0; c < 9; ++c) {
            m(r, c) = f[static_cast<std::size_t>(c)];
        }
    }
    EXPECT_EQ(numerical_rank(m).rank, 9);
}

TEST(Generators, SpectralValuesAreLogDerivatives)
{
    const RiemannMatrix &om = cfg().params.omega;
    std::mt19937_64 rng(18);
    const Vec2 z = random_generic_z(om, rng);
    EXPECT_EQ(spectral_value("12", z, om), log_theta_deriv(z, om, MultiIndex(1, 1)));
    EXPECT_EQ(spectral_value("122", z, om), log_theta_deriv(z, om, MultiIndex(1, 2)));
    EXPECT_THROW(spectral_value("13", z, om), InvalidArgument);
}

TEST(BasisChange, SameShiftGivesIdentity)
{
    const BasisChange bc = change_of_basis(cfg(), cfg());
    // a and b are built from theta(p_i - c'), which is zero only to root precision
    EXPECT_LT(detail::relative_difference(bc.A, MatDiffOp::identity(), cfg().params.omega, sample_xs(19)), 1e-8);
}

TEST(BasisChange, ConjugatesOneRingIntoTheOther)
{
    const Built &b = default_build();
    const BasisChange bc = change_of_basis(b.cfg, b.cfg2);
    const MatDiffOp L2 = build_second_order(b.cfg2, 1, 1);
    const auto xs = sample_xs(20);
    const RiemannMatrix &om = cfg().params.omega;
    EXPECT_LT(detail::relative_difference(compose(compose(bc.A, ring().L11), bc.A_inv), L2, om, xs), 1e-9);
}

TEST(BasisChange, RejectsDifferentC)
{
    const Built &b = default_build();
    const BAParams other(b.cfg.params.omega, b.cfg.params.c + Vec2(cplx(0.1, 0), cplx(0, 0)), b.cfg2.params.c_prime);
    SpectralConfig c2 = b.cfg2;
    c2.params = other;
    EXPECT_THROW(change_of_basis(b.cfg, c2), InvalidArgument);
}
