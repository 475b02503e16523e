#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace nakring;
using namespace nakring::testing;

namespace
{

const RiemannMatrix &omega()
{
    static const RiemannMatrix om(default_period_matrix());
    return om;
}

// A random expression mixing every node kind.
CoeffExpr random_expr(std::mt19937_64 &rng, int depth)
{
    const auto rc = [&] { return cplx(uniform(rng, -1, 1), uniform(rng, -1, 1)); };
    if (depth == 0) {
        switch (rng() % 4) {
        case 0:
            return constant(rc());
        case 1:
            return var(1 + static_cast<int>(rng() % 2));
        case 2:
            return theta_node(random_cell_point(omega(), rng), MultiIndex(static_cast<int>(rng() % 2), 0));
        default:
            return exp_lin(Vec2(0.5 * rc(), 0.5 * rc()), rc());
        }
    }
    const CoeffExpr a = random_expr(rng, depth - 1);
    const CoeffExpr b = random_expr(rng, depth - 1);
    switch (rng() % 4) {
    case 0:
        return a + b;
    case 1:
        return a * b;
    case 2:
        return a / (b * b + constant(3.0));
    default:
        return -a * b + a;
    }
}

cplx eval_at(const CoeffExpr &e, const Vec2 &x)
{
    return evaluate(e, omega(), x);
}

// Q f as an expression.
CoeffExpr apply_expr(const DiffOp &Q, const CoeffExpr &f)
{
    std::vector<CoeffExpr> terms;
    for (const auto &[beta, q] : Q.terms()) {
        terms.push_back(q * derivative(f, beta));
    }
    return sum(terms);
}

DiffOp random_op(std::mt19937_64 &rng, int order)
{
    DiffOp op;
    for (const auto &beta : multi_indices_up_to(order)) {
        op.add_term(beta, random_expr(rng, 1));
    }
    return op;
}

} // namespace

TEST(Expr, ThetaNodeDerivativeShiftsTheIndex)
{
    std::mt19937_64 rng(1);
    const Vec2 z0 = random_cell_point(omega(), rng);
    const CoeffExpr t = theta_node(z0);
    const Vec2 x(cplx(0.03, -0.02), cplx(0.01, 0.05));
    const cplx d12 = eval_at(derivative(t, MultiIndex(1, 2)), x);
    EXPECT_LT(rel_diff(d12, theta_eval(z0 + x, omega(), {}, MultiIndex(1, 2))), 1e-13);
}

TEST(Expr, DerivativeOfProductFollowsLeibniz)
{
    // d1 (x1^2 exp(2 x2)) = 2 x1 exp(2 x2)
    const CoeffExpr e = var(1) * var(1) * exp_lin(Vec2(0.0, 2.0));
    const Vec2 x(cplx(0.3, 0.1), cplx(-0.2, 0.4));
    EXPECT_LT(rel_diff(eval_at(differentiate(e, 1), x), 2.0 * x(0) * std::exp(2.0 * x(1))), 1e-14);
    EXPECT_TRUE(differentiate(constant(4.0), 2)->is_zero());
}

TEST(Expr, DerivativesMatchFiniteDifferencesOnRandomTrees)
{
    std::mt19937_64 rng(2);
    const double h = 1e-5;
    for (int s = 0; s < 25; ++s) {
        const CoeffExpr e = random_expr(rng, 3);
        const Vec2 x(cplx(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1)),
                     cplx(uniform(rng, -0.1, 0.1), uniform(rng, -0.1, 0.1)));
        for (int j = 1; j <= 2; ++j) {
            Vec2 dx = Vec2::Zero();
            dx(j - 1) = h;
            const cplx fd = (eval_at(e, x + dx) - eval_at(e, x - dx)) / (2 * h);
            const cplx an = eval_at(differentiate(e, j), x);
            EXPECT_LT(std::abs(fd - an), 1e-6 * std::max(1.0, std::abs(an)));
        }
    }
}

TEST(Expr, MixedPartialsCommute)
{
    std::mt19937_64 rng(3);
    for (int s = 0; s < 10; ++s) {
        const CoeffExpr e = random_expr(rng, 3);
        const Vec2 x(cplx(0.02, 0.01), cplx(-0.03, 0.04));
        EXPECT_LT(rel_diff(eval_at(differentiate(differentiate(e, 1), 2), x),
                           eval_at(differentiate(differentiate(e, 2), 1), x)),
                  1e-12);
    }
}

TEST(DiffOp, CompositionWithMultiplication)
{
    // d1 . f = f d1 + (d1 f)
    const CoeffExpr f = var(1) * var(2);
    const DiffOp P = compose(DiffOp::partial(MultiIndex::unit(1)), DiffOp::multiplication(f));
    ASSERT_EQ(P.terms().size(), 2u);
    const Vec2 x(cplx(0.2, 0), cplx(0.5, 0));
    EXPECT_LT(std::abs(eval_at(P.coeff(MultiIndex::unit(1)), x) - x(0) * x(1)), 1e-15);
    EXPECT_LT(std::abs(eval_at(P.coeff({}), x) - x(1)), 1e-15);
}

TEST(DiffOp, PartialsCommute)
{
    const DiffOp d1 = DiffOp::partial(MultiIndex::unit(1));
    const DiffOp d2 = DiffOp::partial(MultiIndex::unit(2));
    EXPECT_TRUE(commutator(d1, d2).is_zero());
    EXPECT_EQ(compose(d1, d2).order(), 2);
}

TEST(DiffOp, WeylRelation)
{
    // [d1, x1] = 1
    const DiffOp c = commutator(DiffOp::partial(MultiIndex::unit(1)), DiffOp::multiplication(var(1)));
    ASSERT_EQ(c.terms().size(), 1u);
    EXPECT_EQ(c.order(), 0);
    EXPECT_LT(std::abs(eval_at(c.coeff({}), Vec2::Zero()) - 1.0), 1e-15);
}

TEST(DiffOp, ApplyOfCompositionIsIteratedApply)
{
    std::mt19937_64 rng(4);
    for (int s = 0; s < 5; ++s) {
        const DiffOp P = random_op(rng, 2);
        const DiffOp Q = random_op(rng, 1);
        const CoeffExpr f = random_expr(rng, 2);
        const Vec2 x(cplx(0.05, -0.02), cplx(0.01, 0.03));
        Evaluator ev(omega(), x);
        const cplx composed = apply(compose(P, Q), f, ev);
        const cplx iterated = apply(P, apply_expr(Q, f), ev);
        EXPECT_LT(rel_diff(composed, iterated), 1e-11);
    }
}

TEST(DiffOp, CompositionIsAssociative)
{
    std::mt19937_64 rng(5);
    const DiffOp A = random_op(rng, 1), B = random_op(rng, 1), C = random_op(rng, 1);
    const DiffOp left = compose(compose(A, B), C);
    const DiffOp right = compose(A, compose(B, C));
    std::vector<Vec2> xs{Vec2(cplx(0.01, 0.02), cplx(-0.03, 0.0)), Vec2(cplx(0.0, -0.05), cplx(0.02, 0.02))};
    const double scale = op_norm_sampled(left, omega(), xs);
    EXPECT_LT(op_norm_sampled(left - right, omega(), xs), 1e-12 * scale);
}

TEST(DiffOp, OrderCapIsEnforced)
{
    const DiffOp d = DiffOp::partial(MultiIndex(2, 2));
    EXPECT_THROW(compose(d, d, 6), OrderCap);
    EXPECT_NO_THROW(compose(d, d, 8));
}

TEST(DiffOp, MatrixIdentityIsNeutral)
{
    std::mt19937_64 rng(6);
    MatDiffOp M(random_op(rng, 1), random_op(rng, 0), random_op(rng, 2), random_op(rng, 1));
    std::vector<Vec2> xs{Vec2(cplx(0.01, 0.0), cplx(0.0, 0.02))};
    EXPECT_EQ(op_norm_sampled(compose(MatDiffOp::identity(), M) - M, omega(), xs), 0.0);
    EXPECT_EQ(op_norm_sampled(compose(M, MatDiffOp::identity()) - M, omega(), xs), 0.0);
}

TEST(DiffOp, TabulatedApplyNeedsEveryDerivative)
{
    const DiffOp P = DiffOp::partial(MultiIndex(0, 2));
    Evaluator ev(omega(), Vec2::Zero());
    const auto only_low = [](const MultiIndex &b) -> std::optional<cplx> {
        if (b.order() < 2) {
            return cplx(1.0, 0.0);
        }
        return std::nullopt;
    };
    EXPECT_THROW(apply_tabulated(P, only_low, ev), MissingDerivative);
}
