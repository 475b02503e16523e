#ifndef NAKRING_NAKAYASHIKI_HPP
#define NAKRING_NAKAYASHIKI_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avgeom.hpp"
#include "bamodule.hpp"
#include "diffop.hpp"
#include "linalg.hpp"

namespace nakring
{

struct NakOptions {
    RootOptions roots;
    double x_radius = 0.1;
    // normalized |theta| required of every x-dependent denominator on the polydisc
    double denominator_floor = 1e-3;
    double min_modulus = 0.05;
    int alpha_fit_points = 16;
    int alpha_holdout_points = 20;
    double alpha_tol = 1e-8;
    double alpha_max_condition = 1e10;
    double max_gradient_condition = 1e8;
    // relative size below which order > 3 terms of a commutator count as zero
    double truncation_tol = 1e-7;
    int delta_attempts = 16;
    // allowed max|m| / min|m| of the basis-change multiplier on the polydisc
    double max_basis_spread = 1e3;
};

/// Coefficients of theta(z-c')theta(z+c')/theta(z)^2 = a11 l11 + a12 l12 + a22 l22 + a.
struct Alphas {
    cplx a11{0, 0};
    cplx a12{0, 0};
    cplx a22{0, 0};
    cplx a{0, 0};
    double holdout_residual = 0;
    double condition = 0;
};

struct SpectralConfig {
    BAParams params;
    DivisorPoint delta;
    DivisorPoint p1;
    DivisorPoint p2;
    DivisorPoint q1;
    DivisorPoint q2;
    Alphas alphas;
    std::uint64_t seed = 0;
    NakOptions opts;
};

namespace detail
{

inline std::array<cplx, 6> jet2(const Vec2 &z, const RiemannMatrix &omega)
{
    const auto j = theta_jet(z, omega, {}, 2);
    return {j[0], j[1], j[2], j[3], j[4], j[5]};
}

// theta jet entry for a multi-index of order <= 2
inline cplx at(const std::array<cplx, 6> &j, const MultiIndex &b)
{
    return j[jet_index(b)];
}

/// d^beta l(z) for the second logarithmic derivative l_kj = d_k d_j log theta.
inline cplx second_log(const std::array<cplx, 6> &t, int k, int j)
{
    const MultiIndex kj = MultiIndex::unit(k) + MultiIndex::unit(j);
    return at(t, kj) / t[0] - t[static_cast<std::size_t>(k)] * t[static_cast<std::size_t>(j)] / (t[0] * t[0]);
}

/// Derivatives in z, at z = w, of u(z) = theta(z + s + x) / theta(z) as expressions in x.
struct UJet {
    CoeffExpr u;
    std::array<CoeffExpr, 2> du;
    std::map<std::pair<int, int>, CoeffExpr> ddu;
};

inline UJet u_jet(const RiemannMatrix &omega, const Vec2 &w, const Vec2 &s)
{
    const auto B = jet2(w, omega);
    const Vec2 ws = w + s;
    const CoeffExpr A = theta_node(ws);
    const std::array<CoeffExpr, 2> Ai = {theta_node(ws, MultiIndex::unit(1)), theta_node(ws, MultiIndex::unit(2))};
    const cplx b = B[0];
    UJet out;
    out.u = constant(1.0 / b) * A;
    for (int i = 1; i <= 2; ++i) {
        const cplx bi = B[static_cast<std::size_t>(i)];
        out.du[static_cast<std::size_t>(i - 1)] =
            constant(1.0 / b) * Ai[static_cast<std::size_t>(i - 1)] - constant(bi / (b * b)) * A;
    }
    for (int k = 1; k <= 2; ++k) {
        for (int j = k; j <= 2; ++j) {
            const MultiIndex kj = MultiIndex::unit(k) + MultiIndex::unit(j);
            const cplx bk = B[static_cast<std::size_t>(k)];
            const cplx bj = B[static_cast<std::size_t>(j)];
            const cplx bkj = at(B, kj);
            const CoeffExpr v = constant(1.0 / b) * theta_node(ws, kj) -
                                constant(bj / (b * b)) * Ai[static_cast<std::size_t>(k - 1)] -
                                constant(bk / (b * b)) * Ai[static_cast<std::size_t>(j - 1)] +
                                constant(-bkj / (b * b) + 2.0 * bk * bj / (b * b * b)) * A;
            out.ddu[{k, j}] = v;
            out.ddu[{j, k}] = v;
        }
    }
    return out;
}

/// Cramer solution of y1 theta_1(p_i) + y2 theta_2(p_i) = rhs_i, i = 1, 2.
inline std::pair<CoeffExpr, CoeffExpr> cramer(const Mat2 &grad, const CoeffExpr &r1, const CoeffExpr &r2)
{
    const cplx det = grad(0, 0) * grad(1, 1) - grad(0, 1) * grad(1, 0);
    const CoeffExpr y1 = constant(grad(1, 1) / det) * r1 - constant(grad(0, 1) / det) * r2;
    const CoeffExpr y2 = constant(grad(0, 0) / det) * r2 - constant(grad(1, 0) / det) * r1;
    return {y1, y2};
}

/// Throws DivisorHit if theta(w + x) comes close to zero on a grid of the polydisc |x_i| <= radius.
// 17 x 17 product grid on the polydisc |x_j| <= radius
inline std::vector<Vec2> polydisc_grid(double radius)
{
    std::vector<cplx> pts{cplx(0, 0)};
    for (double r : {0.5 * radius, radius}) {
        for (int a = 0; a < 8; ++a) {
            pts.push_back(std::polar(r, 2 * pi * a / 8.0));
        }
    }
    std::vector<Vec2> out;
    for (const auto &x1 : pts) {
        for (const auto &x2 : pts) {
            out.emplace_back(x1, x2);
        }
    }
    return out;
}

inline void require_nonvanishing(const RiemannMatrix &omega, const Vec2 &w, double radius, double floor,
                                 const std::string &what)
{
    for (const auto &x : polydisc_grid(radius)) {
        {
            const Vec2 z = w + x;
            if (normalized_theta_modulus(z, omega) < floor) {
                throw DivisorHit(what + " nearly vanishes on the x-polydisc");
            }
        }
    }
}

} // namespace detail

/// (c, c', p1, p2) seen by the first-row formulas. The second row uses the
/// swapped parameters (c + c', -c') whose intersection points are p_i - c'.
struct ParamView {
    Vec2 c;
    Vec2 cp;
    Vec2 p1;
    Vec2 p2;
    Vec2 delta;
};

inline ParamView normal_view(const SpectralConfig &cfg)
{
    return {cfg.params.c, cfg.params.c_prime, cfg.p1.z(), cfg.p2.z(), cfg.delta.z()};
}

inline ParamView swapped_view(const SpectralConfig &cfg)
{
    return {cfg.params.c + cfg.params.c_prime, -cfg.params.c_prime, cfg.q1.z(), cfg.q2.z(), cfg.delta.z()};
}

/// Least-squares fit of the alpha coefficients with a holdout check.
inline Alphas solve_alphas(const RiemannMatrix &omega, const Vec2 &c_prime, std::uint64_t seed,
                           const NakOptions &opts = {})
{
    if (opts.alpha_fit_points < 8) {
        throw InvalidArgument("alpha fit needs at least 8 points");
    }
    std::mt19937_64 rng(seed);
    const auto row = [&](const Vec2 &z, Eigen::RowVector4cd &r, cplx &rhs) {
        const auto t = detail::jet2(z, omega);
        r << detail::second_log(t, 1, 1), detail::second_log(t, 1, 2), detail::second_log(t, 2, 2), 1.0;
        rhs = theta_eval(z - c_prime, omega) * theta_eval(z + c_prime, omega) / (t[0] * t[0]);
    };
    const int n = opts.alpha_fit_points;
    MatXc M(n, 4);
    VecXc b(n);
    for (int i = 0; i < n; ++i) {
        Eigen::RowVector4cd r;
        cplx rhs;
        row(random_generic_z(omega, rng, opts.min_modulus), r, rhs);
        M.row(i) = r;
        b(i) = rhs;
    }
    Alphas out;
    out.condition = condition_number(M);
    if (!(out.condition < opts.alpha_max_condition)) {
        throw IllConditioned("alpha system condition " + std::to_string(out.condition));
    }
    const VecXc sol = M.colPivHouseholderQr().solve(b);
    out.a11 = sol(0);
    out.a12 = sol(1);
    out.a22 = sol(2);
    out.a = sol(3);
    double num = 0, scale = 0;
    for (int i = 0; i < opts.alpha_holdout_points; ++i) {
        Eigen::RowVector4cd r;
        cplx rhs;
        row(random_generic_z(omega, rng, opts.min_modulus), r, rhs);
        const cplx fit = (r * sol)(0);
        num = std::max(num, std::abs(fit - rhs));
        scale = std::max({scale, std::abs(fit), std::abs(rhs)});
    }
    out.holdout_residual = num / scale;
    if (!(out.holdout_residual < opts.alpha_tol)) {
        throw BadFit("alpha holdout residual " + std::to_string(out.holdout_residual));
    }
    return out;
}

/// Locates Delta, p1, p2 and the swapped points, checks every denominator the
/// formulas use, and fits the alphas.
inline SpectralConfig make_spectral_config(const BAParams &params, std::uint64_t seed, const NakOptions &opts = {})
{
    const RiemannMatrix &om = params.omega;
    const Vec2 &c = params.c;
    const Vec2 &cp = params.c_prime;
    const double r = opts.x_radius;
    const double fl = opts.denominator_floor;
    // cheap checks first: these only involve c and c'
    detail::require_nonvanishing(om, c, r, fl, "theta(c+x)");
    detail::require_nonvanishing(om, c + cp, r, fl, "theta(c+c'+x)");
    if (normalized_theta_modulus(cp, om) < fl) {
        throw DivisorHit("theta(c') nearly vanishes");
    }

    SpectralConfig cfg{params, {}, {}, {}, {}, {}, {}, seed, opts};
    auto [p1, p2] = intersect_divisors(om, cp, seed, opts.roots);
    cfg.p1 = p1;
    cfg.p2 = p2;
    for (const auto *p : {&cfg.p1, &cfg.p2}) {
        detail::require_nonvanishing(om, p->z() + c, r, fl, "theta(p_i+c+x)");
    }
    if (!(detail::condition_number(gradient_matrix(cfg.p1.z(), cfg.p2.z(), om)) < opts.max_gradient_condition)) {
        throw IllConditioned("theta gradients at p1, p2");
    }

    // q_i = p_i - c' must be the intersection points for the parameter -c'
    const auto make_q = [&](const DivisorPoint &p, DivisorTag tag) {
        DivisorPoint q;
        q.point = reduce_mod_lattice(p.z() - cp, om);
        q.residual = std::max(normalized_theta_modulus(q.z(), om), normalized_theta_modulus(q.z() + cp, om));
        q.which = tag;
        if (!(q.residual < opts.roots.root_tol)) {
            throw WrongCount("p_i - c' is not an intersection point for -c'");
        }
        return q;
    };
    cfg.q1 = make_q(cfg.p1, DivisorTag::Q1);
    cfg.q2 = make_q(cfg.p2, DivisorTag::Q2);
    if (!(detail::condition_number(gradient_matrix(cfg.q1.z(), cfg.q2.z(), om)) < opts.max_gradient_condition)) {
        throw IllConditioned("theta gradients at q1, q2");
    }

    // Any nonsingular theta zero serves as Delta; redraw it if a denominator fails.
    std::optional<DivisorPoint> delta;
    std::string last_error;
    for (int attempt = 0; attempt < opts.delta_attempts && !delta; ++attempt) {
        try {
            DivisorPoint d = find_theta_zero(om, seed + 7919u * static_cast<std::uint64_t>(attempt + 1), opts.roots);
            const Vec2 w = d.z();
            for (const auto &[pt, name] : std::vector<std::pair<Vec2, const char *>>{
                     {w + cp, "theta(Delta+c')"}, {w - cp, "theta(Delta-c')"}}) {
                if (normalized_theta_modulus(pt, om) < fl) {
                    throw DivisorHit(std::string(name) + " nearly vanishes");
                }
            }
            detail::require_nonvanishing(om, w + c + cp, r, fl, "theta(Delta+c+c'+x)");
            detail::require_nonvanishing(om, w + c, r, fl, "theta(Delta+c+x)");
            delta = d;
        } catch (const DivisorHit &e) {
            last_error = e.what();
        }
    }
    if (!delta) {
        throw DivisorHit("no usable theta zero: " + last_error);
    }
    cfg.delta = *delta;
    cfg.alphas = solve_alphas(om, cp, seed ^ 0x5eedULL, opts);
    return cfg;
}

/// First-row data of the second-order operator for one parameter view.
struct FirstRow {
    CoeffExpr f;
    CoeffExpr g;
    CoeffExpr h;
    DiffOp H; // -d_k d_j + f d_1 + g d_2 + h
    CoeffExpr F;
};

inline FirstRow build_first_row(const RiemannMatrix &om, const ParamView &v, int k, int j)
{
    const Mat2 grad = gradient_matrix(v.p1, v.p2, om);
    const MultiIndex kj = MultiIndex::unit(k) + MultiIndex::unit(j);
    const auto rhs = [&](const Vec2 &p) {
        const auto t = detail::jet2(p, om);
        const Vec2 w = p + v.c;
        return (constant(t[static_cast<std::size_t>(j)]) * theta_node(w, MultiIndex::unit(k)) +
                constant(t[static_cast<std::size_t>(k)]) * theta_node(w, MultiIndex::unit(j))) /
                   theta_node(w) -
               constant(detail::at(t, kj));
    };
    FirstRow out;
    std::tie(out.f, out.g) = detail::cramer(grad, rhs(v.p1), rhs(v.p2));

    // h: evaluate the z-operator on u at z = Delta + c'
    {
        const Vec2 w = v.delta + v.cp;
        const auto t = detail::jet2(w, om);
        const auto U = detail::u_jet(om, w, v.c);
        const CoeffExpr body = U.ddu.at({k, j}) - out.f * U.du[0] - out.g * U.du[1] +
                               constant(2.0 * detail::second_log(t, k, j)) * U.u;
        out.h = constant(t[0]) * body / theta_node(w + v.c);
    }
    // F: same operator minus h, at z = 0
    {
        const Vec2 w = Vec2::Zero();
        const auto t = detail::jet2(w, om);
        const auto U = detail::u_jet(om, w, v.c);
        const CoeffExpr body = U.ddu.at({k, j}) - out.f * U.du[0] - out.g * U.du[1] - out.h * U.u +
                               constant(2.0 * detail::second_log(t, k, j)) * U.u;
        const cplx th_cp = theta_eval(v.cp, om);
        out.F = constant(t[0] * t[0] / th_cp) * body / theta_node(v.c + v.cp);
    }
    out.H = DiffOp::partial(kj, constant(-1.0));
    out.H.add_term(MultiIndex::unit(1), out.f);
    out.H.add_term(MultiIndex::unit(2), out.g);
    out.H.add_term({}, out.h);
    return out;
}

/// Symmetric index pair (k, j) -> slot 0 (11), 1 (12), 2 (22).
inline int pair_slot(int k, int j)
{
    if (k < 1 || k > 2 || j < 1 || j > 2) {
        throw InvalidArgument("index must be 1 or 2");
    }
    return k + j - 2;
}

/// The three first rows for both parameter views.
struct FirstRows {
    std::array<FirstRow, 3> normal;
    std::array<FirstRow, 3> swapped;
};

inline FirstRows build_first_rows(const SpectralConfig &cfg)
{
    FirstRows fr;
    const std::array<std::pair<int, int>, 3> pairs{{{1, 1}, {1, 2}, {2, 2}}};
    for (std::size_t s = 0; s < 3; ++s) {
        fr.normal[s] = build_first_row(cfg.params.omega, normal_view(cfg), pairs[s].first, pairs[s].second);
        fr.swapped[s] = build_first_row(cfg.params.omega, swapped_view(cfg), pairs[s].first, pairs[s].second);
    }
    return fr;
}

/// Second-order operator L(d_k d_j log theta) in the basis (psi, psi_{c'}).
inline MatDiffOp build_second_order(const SpectralConfig &cfg, const FirstRows &fr, int k, int j)
{
    const auto s = static_cast<std::size_t>(pair_slot(k, j));
    const Alphas &al = cfg.alphas;
    const FirstRow &n11 = fr.normal[0], &n12 = fr.normal[1], &n22 = fr.normal[2];
    const CoeffExpr Ft = fr.swapped[s].F;
    const DiffOp comb = al.a11 * n11.H + al.a12 * n12.H + al.a22 * n22.H + DiffOp::multiplication(constant(al.a));
    const CoeffExpr combF = constant(al.a11) * n11.F + constant(al.a12) * n12.F + constant(al.a22) * n22.F;
    return {fr.normal[s].H, DiffOp::multiplication(fr.normal[s].F), Ft * comb,
            DiffOp::multiplication(Ft * combF) + fr.swapped[s].H};
}

inline MatDiffOp build_second_order(const SpectralConfig &cfg, int k, int j)
{
    return build_second_order(cfg, build_first_rows(cfg), k, j);
}

/// Pieces of Z_j that are not inherited from the second-order operators.
struct ZExtras {
    CoeffExpr k1;
    CoeffExpr k2;
    CoeffExpr hj;
    CoeffExpr gj;
};

inline ZExtras build_z_extras(const SpectralConfig &cfg, int j)
{
    const RiemannMatrix &om = cfg.params.omega;
    const Vec2 &c = cfg.params.c;
    const Vec2 &cp = cfg.params.c_prime;
    const Vec2 p1 = cfg.p1.z(), p2 = cfg.p2.z(), dl = cfg.delta.z();
    const Mat2 grad = gradient_matrix(p1, p2, om);
    const auto ej = MultiIndex::unit(j);
    const auto rhs = [&](const Vec2 &p) {
        const cplx tj = theta_eval(p - cp, om, {}, ej);
        return constant(-tj) * theta_node(p + c + cp) / theta_node(p + c);
    };
    ZExtras z;
    std::tie(z.k1, z.k2) = detail::cramer(grad, rhs(p1), rhs(p2));

    const auto td = detail::jet2(dl, om);
    const auto tdc = detail::jet2(dl + cp, om);
    const Vec2 w = dl + c + cp;
    const CoeffExpr tw = theta_node(w);
    z.hj = constant(td[static_cast<std::size_t>(j)] / tdc[0]) * theta_node(dl + c + 2.0 * cp) / tw -
           z.k1 * (theta_node(w, MultiIndex::unit(1)) / tw - constant(tdc[1] / tdc[0])) -
           z.k2 * (theta_node(w, MultiIndex::unit(2)) / tw - constant(tdc[2] / tdc[0]));

    const auto t0 = detail::jet2(Vec2::Zero(), om);
    const auto tcp = theta_jet(cp, om, {}, 1);
    const auto U = detail::u_jet(om, Vec2::Zero(), c);
    const CoeffExpr tccp = theta_node(c + cp);
    const CoeffExpr body = z.k1 * U.du[0] + z.k2 * U.du[1] + z.hj * U.u;
    z.gj = constant(-tcp[static_cast<std::size_t>(j)] / tcp[0]) - theta_node(c + cp, ej) / tccp -
           constant(t0[0] * t0[0] / tcp[0]) * body / tccp;
    return z;
}

/// The operator Z_j realizing d/dz_j on (psi, psi_{c'}).
inline MatDiffOp build_Z(const SpectralConfig &cfg, const FirstRows &fr, const std::array<MatDiffOp, 3> &L, int j)
{
    const ZExtras ex = build_z_extras(cfg, j);
    const CoeffExpr x1 = var(1), x2 = var(2);
    const auto s1 = static_cast<std::size_t>(pair_slot(1, j));
    const auto s2 = static_cast<std::size_t>(pair_slot(2, j));
    MatDiffOp Z;
    Z(1, 1) = DiffOp::partial(MultiIndex::unit(j)) - x1 * fr.normal[s1].H - x2 * fr.normal[s2].H;
    Z(1, 2) = DiffOp::multiplication(-(x1 * fr.normal[s1].F) - x2 * fr.normal[s2].F);
    Z(2, 1) = -(x1 * L[s1](2, 1)) - x2 * L[s2](2, 1);
    Z(2, 1).add_term(MultiIndex::unit(1), ex.k1);
    Z(2, 1).add_term(MultiIndex::unit(2), ex.k2);
    Z(2, 1).add_term({}, ex.hj);
    Z(2, 2) = -(x1 * L[s1](2, 2)) - x2 * L[s2](2, 2);
    Z(2, 2).add_term({}, ex.gj);
    Z(2, 2).add_term(MultiIndex::unit(j), constant(2.0));
    return Z;
}

/// Third-order operator L(d_k d_j d_s log theta) as the commutator [L(d_k d_j log theta), Z_s],
/// with identically vanishing terms of order > 3 removed.
inline MatDiffOp third_order(const MatDiffOp &Lkj, const MatDiffOp &Zs, const RiemannMatrix &omega,
                             const std::vector<Vec2> &xs, double rel_tol)
{
    return truncate_vanishing(commutator(Lkj, Zs), 3, omega, xs, rel_tol);
}

/// Change of basis (psi, psi_{c'}) -> (psi, psi_{c''}):
/// psi_{c''} = (a d_1 + b d_2 + e) psi + m psi_{c'}.
struct BasisChangeCoeffs {
    CoeffExpr a;
    CoeffExpr b;
    CoeffExpr e;
    CoeffExpr m;
};

inline BasisChangeCoeffs basis_change_coeffs(const RiemannMatrix &om, const Vec2 &c, const Vec2 &from_cp,
                                             const Vec2 &p1, const Vec2 &p2, const Vec2 &to_cp, const Vec2 &delta)
{
    const Mat2 grad = gradient_matrix(p1, p2, om);
    const auto rhs = [&](const Vec2 &p) {
        return constant(-theta_eval(p - to_cp, om)) * theta_node(p + c + to_cp) / theta_node(p + c);
    };
    BasisChangeCoeffs out;
    std::tie(out.a, out.b) = detail::cramer(grad, rhs(p1), rhs(p2));

    const auto td = theta_jet(delta, om, {}, 1);
    out.m = (constant(theta_eval(delta - to_cp, om)) * theta_node(delta + c + to_cp) +
             theta_node(delta + c) * (constant(td[1]) * out.a + constant(td[2]) * out.b)) /
            (constant(theta_eval(delta - from_cp, om)) * theta_node(delta + c + from_cp));

    const auto t0 = theta_jet(Vec2::Zero(), om, {}, 1);
    const CoeffExpr tc = theta_node(c);
    const auto dterm = [&](int i) {
        return constant(t0[0]) * theta_node(c, MultiIndex::unit(i)) -
               constant(t0[static_cast<std::size_t>(i)]) * tc;
    };
    out.e = (constant(theta_eval(to_cp, om)) * theta_node(c + to_cp) -
             constant(theta_eval(from_cp, om)) * out.m * theta_node(c + from_cp) - out.a * dterm(1) -
             out.b * dterm(2)) /
            (constant(t0[0]) * tc);
    return out;
}

inline MatDiffOp basis_change_operator(const BasisChangeCoeffs &k)
{
    DiffOp row2;
    row2.add_term(MultiIndex::unit(1), k.a);
    row2.add_term(MultiIndex::unit(2), k.b);
    row2.add_term({}, k.e);
    return {DiffOp::identity(), {}, row2, DiffOp::multiplication(k.m)};
}

struct BasisChange {
    MatDiffOp A;
    MatDiffOp A_inv;
    BasisChangeCoeffs forward;
    BasisChangeCoeffs backward;
};

/// A with A (psi, psi_{c'}) = (psi, psi_{c''}) and its inverse. cfg2 must share Omega and c.
inline BasisChange change_of_basis(const SpectralConfig &cfg, const SpectralConfig &cfg2)
{
    const RiemannMatrix &om = cfg.params.omega;
    if (!(om.omega() - cfg2.params.omega.omega()).isZero(0.0) || cfg.params.c != cfg2.params.c) {
        throw InvalidArgument("change_of_basis needs configurations with the same Omega and c");
    }
    BasisChange out;
    out.forward = basis_change_coeffs(om, cfg.params.c, cfg.params.c_prime, cfg.p1.z(), cfg.p2.z(),
                                      cfg2.params.c_prime, cfg.delta.z());
    out.backward = basis_change_coeffs(om, cfg.params.c, cfg2.params.c_prime, cfg2.p1.z(), cfg2.p2.z(),
                                       cfg.params.c_prime, cfg.delta.z());
    out.A = basis_change_operator(out.forward);
    out.A_inv = basis_change_operator(out.backward);
    return out;
}

/// max |m| / min |m| over the x-polydisc grid; large when m has a zero close by.
inline double basis_change_spread(const BasisChange &bc, const RiemannMatrix &om, double radius)
{
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (const auto &x : detail::polydisc_grid(radius)) {
        Evaluator ev(om, x);
        const double v = std::abs(ev(bc.forward.m));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
}

/// Independent check of the basis change at one x: expresses psi, d_1 psi,
/// d_2 psi, psi_{c'} and psi_{c''} in the level-2 spanning functions (fitted
/// from sampled z), solves for (e, a, b, m) and returns the largest relative
/// deviation from the closed-form coefficients.
inline double basis_change_dual_check(const SpectralConfig &cfg, const SpectralConfig &cfg2,
                                      const BasisChangeCoeffs &k, const Vec2 &x, std::uint64_t seed,
                                      int z_samples = 16)
{
    const BAParams &p = cfg.params;
    std::mt19937_64 rng(seed);
    MatXc basis(z_samples, 4);
    MatXc funcs(z_samples, 5);
    for (int r = 0; r < z_samples; ++r) {
        const Vec2 z = random_generic_z(p.omega, rng, cfg.opts.min_modulus);
        const auto b = mc_basis_values(p, 2, z, x);
        for (int c = 0; c < 4; ++c) {
            basis(r, c) = b[static_cast<std::size_t>(c)];
        }
        Evaluator ev(p.omega, x);
        const CoeffExpr f = psi_expr(p, z);
        funcs(r, 0) = ev(f);
        funcs(r, 1) = ev(differentiate(f, 1));
        funcs(r, 2) = ev(differentiate(f, 2));
        funcs(r, 3) = ev(psi_cprime_expr(p, z));
        funcs(r, 4) = ev(psi_cprime_expr(cfg2.params, z));
    }
    const auto qr = basis.colPivHouseholderQr();
    const MatXc coords = qr.solve(funcs);
    if (!(condition_number(coords.leftCols(4)) < 1e10)) {
        throw IllConditioned("level-2 coordinates of the basis are degenerate");
    }
    const VecXc sol = coords.leftCols(4).colPivHouseholderQr().solve(coords.col(4));
    Evaluator ev(p.omega, x);
    const std::array<cplx, 4> closed{ev(k.e), ev(k.a), ev(k.b), ev(k.m)};
    double dev = 0, scale = 0;
    for (int i = 0; i < 4; ++i) {
        dev = std::max(dev, std::abs(sol(i) - closed[static_cast<std::size_t>(i)]));
        scale = std::max(scale, std::abs(closed[static_cast<std::size_t>(i)]));
    }
    return dev / scale;
}

/// The operators attached to one spectral configuration.
struct OperatorRing {
    MatDiffOp L1;
    MatDiffOp L11;
    MatDiffOp L12;
    MatDiffOp L22;
    MatDiffOp Z1;
    MatDiffOp Z2;
    // keyed by the sorted index triple, e.g. "112"
    std::map<std::string, MatDiffOp> third;

    const MatDiffOp &L(int k, int j) const
    {
        switch (pair_slot(k, j)) {
        case 0:
            return L11;
        case 1:
            return L12;
        default:
            return L22;
        }
    }
    const MatDiffOp &Z(int j) const
    {
        return j == 1 ? Z1 : Z2;
    }

    /// Named operators in a fixed order.
    std::vector<std::pair<std::string, const MatDiffOp *>> named() const
    {
        std::vector<std::pair<std::string, const MatDiffOp *>> out{{"L1", &L1},   {"L11", &L11}, {"L12", &L12},
                                                                   {"L22", &L22}, {"Z1", &Z1},   {"Z2", &Z2}};
        for (const auto &[k, op] : third) {
            out.emplace_back("L" + k, &op);
        }
        return out;
    }
};

/// Fixed x samples used to decide which high-order commutator terms vanish.
inline std::vector<Vec2> truncation_samples(std::uint64_t seed, double radius, int n = 6)
{
    std::mt19937_64 rng(seed ^ 0x7a11ULL);
    std::vector<Vec2> xs;
    for (int i = 0; i < n; ++i) {
        xs.push_back(random_polydisc(rng, radius));
    }
    return xs;
}

/// Builds L1, L11, L12, L22, Z1, Z2 and, when requested, the four third-order
/// generators L111 = [L11, Z1], L112 = [L11, Z2], L122 = [L12, Z2], L222 = [L22, Z2].
inline OperatorRing build_ring(const SpectralConfig &cfg, bool with_third = true)
{
    const FirstRows fr = build_first_rows(cfg);
    OperatorRing ring;
    ring.L1 = MatDiffOp::identity();
    ring.L11 = build_second_order(cfg, fr, 1, 1);
    ring.L12 = build_second_order(cfg, fr, 1, 2);
    ring.L22 = build_second_order(cfg, fr, 2, 2);
    const std::array<MatDiffOp, 3> L{ring.L11, ring.L12, ring.L22};
    ring.Z1 = build_Z(cfg, fr, L, 1);
    ring.Z2 = build_Z(cfg, fr, L, 2);
    if (with_third) {
        const auto xs = truncation_samples(cfg.seed, cfg.opts.x_radius);
        const double tol = cfg.opts.truncation_tol;
        const RiemannMatrix &om = cfg.params.omega;
        ring.third["111"] = third_order(ring.L11, ring.Z1, om, xs, tol);
        ring.third["112"] = third_order(ring.L11, ring.Z2, om, xs, tol);
        ring.third["122"] = third_order(ring.L12, ring.Z2, om, xs, tol);
        ring.third["222"] = third_order(ring.L22, ring.Z2, om, xs, tol);
    }
    return ring;
}

/// d_k d_j log theta or d_k d_j d_s log theta at z, from an index string such as "12" or "112".
inline cplx spectral_value(const std::string &idx, const Vec2 &z, const RiemannMatrix &omega)
{
    MultiIndex d;
    for (char ch : idx) {
        if (ch != '1' && ch != '2') {
            throw InvalidArgument("bad spectral index " + idx);
        }
        d = d + MultiIndex::unit(ch - '0');
    }
    return log_theta_deriv(z, omega, d);
}

/// The nine functions 1, l_kjs, l_111 + l_js, l_12^2 - l_11 l_22 at z.
inline std::array<cplx, 9> generator_functions(const Vec2 &z, const RiemannMatrix &omega)
{
    const cplx l11 = log_theta_deriv(z, omega, MultiIndex(2, 0));
    const cplx l12 = log_theta_deriv(z, omega, MultiIndex(1, 1));
    const cplx l22 = log_theta_deriv(z, omega, MultiIndex(0, 2));
    const cplx l111 = log_theta_deriv(z, omega, MultiIndex(3, 0));
    const cplx l112 = log_theta_deriv(z, omega, MultiIndex(2, 1));
    const cplx l122 = log_theta_deriv(z, omega, MultiIndex(1, 2));
    const cplx l222 = log_theta_deriv(z, omega, MultiIndex(0, 3));
    return {1.0, l111, l112, l122, l222, l111 + l11, l111 + l12, l111 + l22, l12 * l12 - l11 * l22};
}

} // namespace nakring

#endif
