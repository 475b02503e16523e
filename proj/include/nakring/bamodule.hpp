#ifndef NAKRING_BAMODULE_HPP
#define NAKRING_BAMODULE_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "avgeom.hpp"
#include "expr.hpp"
#include "linalg.hpp"

namespace nakring
{

/// Parameters (Omega, c, c') of the basis psi, psi_{c'} of the Baker-Akhiezer module.
struct BAParams {
    RiemannMatrix omega;
    Vec2 c;
    Vec2 c_prime;

    BAParams(RiemannMatrix om, Vec2 c_, Vec2 cp, double floor = default_divisor_floor)
        : omega(std::move(om)), c(std::move(c_)), c_prime(std::move(cp))
    {
        if (lattice_distance(c, Vec2::Zero(), omega) <= 1e-8) {
            throw Degenerate("c is a lattice point");
        }
        if (lattice_distance(c_prime, Vec2::Zero(), omega) <= 1e-8) {
            throw Degenerate("c' is a lattice point");
        }
        if (normalized_theta_modulus(c_prime, omega) <= floor) {
            throw DivisorHit("theta(c') vanishes");
        }
        if (normalized_theta_modulus(c + c_prime, omega) <= floor) {
            throw DivisorHit("theta(c + c') vanishes");
        }
    }
};

/// (d_1 log theta(z), d_2 log theta(z))
inline Vec2 grad_log_theta(const Vec2 &z, const RiemannMatrix &omega, double eps = 1e-14)
{
    const auto jet = theta_jet(z, omega, {}, 1, eps);
    if (std::abs(jet[0]) < default_divisor_floor * omega.theta_scale(z)) {
        throw OnDivisor("|theta(z)| below divisor-proximity floor");
    }
    return Vec2(jet[1] / jet[0], jet[2] / jet[0]);
}

/// exp(-x_1 d_1 log theta(z) - x_2 d_2 log theta(z)) as a function of x.
inline CoeffExpr exp_factor_expr(const RiemannMatrix &omega, const Vec2 &z)
{
    return exp_lin(-grad_log_theta(z, omega));
}

/// psi(z, .) = theta(z + c + x) / theta(z) * exp(...), as an expression in x.
inline CoeffExpr psi_expr(const BAParams &p, const Vec2 &z)
{
    const cplx th = theta_eval(z, p.omega);
    return constant(1.0 / th) * (theta_node(z + p.c) * exp_factor_expr(p.omega, z));
}

/// psi_{c'}(z, .) = theta(z + c + c' + x) theta(z - c') / theta(z)^2 * exp(...).
inline CoeffExpr psi_cprime_expr(const BAParams &p, const Vec2 &z)
{
    const cplx th = theta_eval(z, p.omega);
    const cplx tm = theta_eval(z - p.c_prime, p.omega);
    return constant(tm / (th * th)) * (theta_node(z + p.c + p.c_prime) * exp_factor_expr(p.omega, z));
}

inline cplx psi(const BAParams &p, const Vec2 &z, const Vec2 &x, double eps = 1e-14)
{
    const Vec2 g = grad_log_theta(z, p.omega, eps);
    return theta_eval(z + p.c + x, p.omega, {}, {}, eps) / theta_eval(z, p.omega, {}, {}, eps) *
           std::exp(-(x(0) * g(0) + x(1) * g(1)));
}

inline cplx psi_cprime(const BAParams &p, const Vec2 &z, const Vec2 &x, double eps = 1e-14)
{
    const Vec2 g = grad_log_theta(z, p.omega, eps);
    const cplx th = theta_eval(z, p.omega, {}, {}, eps);
    return theta_eval(z + p.c + p.c_prime + x, p.omega, {}, {}, eps) * theta_eval(z - p.c_prime, p.omega, {}, {}, eps) /
           (th * th) * std::exp(-(x(0) * g(0) + x(1) * g(1)));
}

/// d psi / d z_j, with the z-dependence of the exponential included.
inline cplx psi_dz(const BAParams &p, int j, const Vec2 &z, const Vec2 &x, double eps = 1e-14)
{
    const auto t = theta_jet(z, p.omega, {}, 2, eps);
    const auto a = theta_jet(z + p.c + x, p.omega, {}, 1, eps);
    const std::size_t ej = static_cast<std::size_t>(j);
    const cplx u = a[0] / t[0];
    const cplx du = a[ej] / t[0] - a[0] * t[ej] / (t[0] * t[0]);
    // x . d_j grad log theta
    cplx xl{0, 0};
    for (int k = 1; k <= 2; ++k) {
        const MultiIndex kj = MultiIndex::unit(k) + MultiIndex::unit(j);
        const cplx l = t[jet_index(kj)] / t[0] - t[static_cast<std::size_t>(k)] * t[ej] / (t[0] * t[0]);
        xl += x(k - 1) * l;
    }
    const cplx e = std::exp(-(x(0) * t[1] + x(1) * t[2]) / t[0]);
    return (du - u * xl) * e;
}

inline cplx psi_cprime_dz(const BAParams &p, int j, const Vec2 &z, const Vec2 &x, double eps = 1e-14)
{
    const auto t = theta_jet(z, p.omega, {}, 2, eps);
    const auto a = theta_jet(z + p.c + p.c_prime + x, p.omega, {}, 1, eps);
    const auto b = theta_jet(z - p.c_prime, p.omega, {}, 1, eps);
    const std::size_t ej = static_cast<std::size_t>(j);
    const cplx t2 = t[0] * t[0];
    const cplx v = a[0] * b[0] / t2;
    const cplx dv = (a[ej] * b[0] + a[0] * b[ej]) / t2 - 2.0 * v * t[ej] / t[0];
    cplx xl{0, 0};
    for (int k = 1; k <= 2; ++k) {
        const MultiIndex kj = MultiIndex::unit(k) + MultiIndex::unit(j);
        const cplx l = t[jet_index(kj)] / t[0] - t[static_cast<std::size_t>(k)] * t[ej] / t2;
        xl += x(k - 1) * l;
    }
    const cplx e = std::exp(-(x(0) * t[1] + x(1) * t[2]) / t[0]);
    return (dv - v * xl) * e;
}

/// Index vectors a in (Z/kZ)^2 in the fixed order (0,0), (0,1), ..., (k-1,k-1).
inline std::vector<std::array<int, 2>> level_characteristics(int k)
{
    std::vector<std::array<int, 2>> out;
    for (int a1 = 0; a1 < k; ++a1) {
        for (int a2 = 0; a2 < k; ++a2) {
            out.push_back({a1, a2});
        }
    }
    return out;
}

inline Characteristic level_characteristic(int k, const std::array<int, 2> &a)
{
    Characteristic ch;
    ch.a = {Rational(a[0], k), Rational(a[1], k)};
    return ch;
}

/// Spanning functions theta[a/k,0](kz + c + x, k Omega) / theta(z)^k * exp(...) as
/// expressions in x, in the order of level_characteristics(k).
inline std::vector<CoeffExpr> mc_basis_exprs(const BAParams &p, int k, const Vec2 &z)
{
    if (k < 1 || k > 6) {
        throw InvalidArgument("level must be in 1..6");
    }
    const cplx th = theta_eval(z, p.omega);
    const CoeffExpr pre = constant(1.0 / std::pow(th, k));
    const CoeffExpr e = exp_factor_expr(p.omega, z);
    std::vector<CoeffExpr> out;
    for (const auto &a : level_characteristics(k)) {
        out.push_back(pre * (theta_node(static_cast<double>(k) * z + p.c, {}, level_characteristic(k, a), k) * e));
    }
    return out;
}

inline std::vector<cplx> mc_basis_values(const BAParams &p, int k, const Vec2 &z, const Vec2 &x, double eps = 1e-14)
{
    if (k < 1 || k > 6) {
        throw InvalidArgument("level must be in 1..6");
    }
    const Vec2 g = grad_log_theta(z, p.omega, eps);
    const cplx e = std::exp(-(x(0) * g(0) + x(1) * g(1)));
    const cplx thk = std::pow(theta_eval(z, p.omega, {}, {}, eps), k);
    const RiemannMatrix om_k = p.omega.scaled(k);
    std::vector<cplx> out;
    for (const auto &a : level_characteristics(k)) {
        out.push_back(theta_eval(static_cast<double>(k) * z + p.c + x, om_k, level_characteristic(k, a), {}, eps) /
                      thk * e);
    }
    return out;
}

struct IdentityResidual {
    double abs = 0;   // |lhs - rhs|
    double scale = 0; // max(|lhs|, |rhs|)
};

/// Both sides of d/dx_j (Q E) = (1/n) d/dz_j (Q) E with Q = theta[a/n,0](nz+c+x, n Omega) / theta(z)^n.
inline IdentityResidual level_derivative_residual(const BAParams &p, int n, const std::array<int, 2> &a, int j, const Vec2 &z,
                                        const Vec2 &x, double eps = 1e-14)
{
    if (n < 1 || n > 6 || (j != 1 && j != 2)) {
        throw InvalidArgument("level_derivative_residual: bad level or index");
    }
    const Characteristic ch = level_characteristic(n, a);
    // left side through exact x-differentiation of the expression form
    const cplx th = theta_eval(z, p.omega, {}, {}, eps);
    const CoeffExpr q = constant(1.0 / std::pow(th, n)) *
                        (theta_node(static_cast<double>(n) * z + p.c, {}, ch, n) * exp_factor_expr(p.omega, z));
    EvalOptions eo;
    eo.theta_eps = eps;
    const cplx lhs = evaluate(differentiate(q, j), p.omega, x, eo);
    // right side: quotient rule in z over theta derivatives
    const RiemannMatrix om_n = p.omega.scaled(n);
    const auto big = theta_jet(static_cast<double>(n) * z + p.c + x, om_n, ch, 1, eps);
    const auto t = theta_jet(z, p.omega, {}, 1, eps);
    const std::size_t ej = static_cast<std::size_t>(j);
    const cplx thn = std::pow(t[0], n);
    const cplx dq = static_cast<double>(n) * big[ej] / thn - static_cast<double>(n) * big[0] * t[ej] / (thn * t[0]);
    const cplx e = std::exp(-(x(0) * t[1] + x(1) * t[2]) / t[0]);
    const cplx rhs = dq / static_cast<double>(n) * e;
    return {std::abs(lhs - rhs), std::max(std::abs(lhs), std::abs(rhs))};
}

/// Both sides of d_xk d_xj psi = [d_zk d_zj u + (d_zk d_zj log theta) u] E, u = theta(z+c+x)/theta(z).
inline IdentityResidual second_derivative_residual(const BAParams &p, int k, int j, const Vec2 &z, const Vec2 &x,
                                        double eps = 1e-14)
{
    EvalOptions eo;
    eo.theta_eps = eps;
    const MultiIndex kj = MultiIndex::unit(k) + MultiIndex::unit(j);
    const cplx lhs = evaluate(derivative(psi_expr(p, z), kj), p.omega, x, eo);

    const auto t = theta_jet(z, p.omega, {}, 2, eps);
    const auto a = theta_jet(z + p.c + x, p.omega, {}, 2, eps);
    const auto ik = static_cast<std::size_t>(k);
    const auto ij = static_cast<std::size_t>(j);
    const auto ikj = jet_index(kj);
    const cplx B = t[0];
    const cplx u = a[0] / B;
    const cplx ukj = a[ikj] / B - (a[ik] * t[ij] + a[ij] * t[ik]) / (B * B) - a[0] * t[ikj] / (B * B) +
                     2.0 * a[0] * t[ik] * t[ij] / (B * B * B);
    const cplx lkj = t[ikj] / B - t[ik] * t[ij] / (B * B);
    const cplx e = std::exp(-(x(0) * t[1] + x(1) * t[2]) / B);
    const cplx rhs = (ukj + lkj * u) * e;
    return {std::abs(lhs - rhs), std::max(std::abs(lhs), std::abs(rhs))};
}

/// Options shared by the sampled rank computations.
struct RankOptions {
    double x_radius = 0.1;
    double min_modulus = 0.05;
    double rel_cut = 1e-8;
};

/// Numerical rank of the matrix of level-k spanning values at random (z, x).
inline RankInfo mc_rank(const BAParams &p, int k, int sample_count, std::uint64_t seed, const RankOptions &opts = {})
{
    if (sample_count < 2 * k * k) {
        throw InvalidArgument("mc_dimension needs at least 2k^2 samples");
    }
    std::mt19937_64 rng(seed);
    MatXc m(sample_count, k * k);
    for (int r = 0; r < sample_count; ++r) {
        const Vec2 z = random_generic_z(p.omega, rng, opts.min_modulus);
        const Vec2 x = random_polydisc(rng, opts.x_radius);
        const auto v = mc_basis_values(p, k, z, x);
        for (int c = 0; c < k * k; ++c) {
            m(r, c) = v[static_cast<std::size_t>(c)];
        }
    }
    return numerical_rank(m, opts.rel_cut);
}

inline int mc_dimension(const BAParams &p, int k, int sample_count, std::uint64_t seed, const RankOptions &opts = {})
{
    return mc_rank(p, k, sample_count, seed, opts).rank;
}

/// Multi-indices alpha of the derivatives d^alpha psi (|alpha| <= k-1) and
/// d^alpha psi_{c'} (|alpha| <= k-2) that should span M_c(k) over C at fixed x.
inline std::pair<std::vector<MultiIndex>, std::vector<MultiIndex>> freeness_indices(int k)
{
    return {multi_indices_up_to(k - 1), k >= 2 ? multi_indices_up_to(k - 2) : std::vector<MultiIndex>{}};
}

/// Row of derivative values for the freeness family at one (z, x).
inline std::vector<cplx> freeness_row(const BAParams &p, int k, const Vec2 &z, const Vec2 &x)
{
    const auto [ia, ib] = freeness_indices(k);
    const CoeffExpr f = psi_expr(p, z);
    const CoeffExpr g = psi_cprime_expr(p, z);
    Evaluator ev(p.omega, x);
    std::vector<cplx> row;
    for (const auto &a : ia) {
        row.push_back(ev(derivative(f, a)));
    }
    for (const auto &a : ib) {
        row.push_back(ev(derivative(g, a)));
    }
    return row;
}

/// Rank of {d^alpha psi, d^alpha psi_{c'}} sampled at random (z, x).
inline RankInfo freeness_rank(const BAParams &p, int k, int sample_count, std::uint64_t seed,
                              const RankOptions &opts = {})
{
    if (sample_count < 2 * k * k) {
        throw InvalidArgument("freeness_rank needs at least 2k^2 samples");
    }
    std::mt19937_64 rng(seed);
    MatXc m(sample_count, k * k);
    for (int r = 0; r < sample_count; ++r) {
        const Vec2 z = random_generic_z(p.omega, rng, opts.min_modulus);
        const Vec2 x = random_polydisc(rng, opts.x_radius);
        const auto row = freeness_row(p, k, z, x);
        for (int c = 0; c < k * k; ++c) {
            m(r, c) = row[static_cast<std::size_t>(c)];
        }
    }
    return numerical_rank(m, opts.rel_cut);
}

/// At one fixed x, stacks the level-k spanning functions next to the freeness
/// family, both sampled at random z. Both families lie in the same
/// k^2-dimensional space, so the stacked matrix has rank k^2 with a clear gap.
/// Rows are multiplied by theta(z)^k / E to remove the common poles. The
/// spectrum decays smoothly above the gap, so the rank is read off the largest drop.
inline RankInfo mc_span_rank(const BAParams &p, int k, int sample_count, std::uint64_t seed,
                             const RankOptions &opts = {})
{
    std::mt19937_64 rng(seed);
    const Vec2 x = random_polydisc(rng, opts.x_radius);
    const int n = k * k;
    MatXc m(sample_count, 2 * n);
    for (int r = 0; r < sample_count; ++r) {
        const Vec2 z = random_generic_z(p.omega, rng, opts.min_modulus);
        const Vec2 g = grad_log_theta(z, p.omega);
        const cplx row_scale = std::pow(theta_eval(z, p.omega), k) * std::exp(x(0) * g(0) + x(1) * g(1));
        const auto basis = mc_basis_values(p, k, z, x);
        const auto fam = freeness_row(p, k, z, x);
        for (int c = 0; c < n; ++c) {
            m(r, c) = basis[static_cast<std::size_t>(c)] * row_scale;
            m(r, n + c) = fam[static_cast<std::size_t>(c)] * row_scale;
        }
    }
    RankInfo info = numerical_rank(m, opts.rel_cut);
    info.rank = info.gap_rank();
    return info;
}

} // namespace nakring

#endif
