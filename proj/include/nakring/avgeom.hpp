#ifndef NAKRING_AVGEOM_HPP
#define NAKRING_AVGEOM_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "theta.hpp"

namespace nakring
{

/// Uniform double in [0, 1) from a 64-bit engine; identical on every platform.
inline double uniform01(std::mt19937_64 &rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64 &rng, double lo, double hi)
{
    return lo + (hi - lo) * uniform01(rng);
}

/// Lattice coordinates (s, t) of z = s + Omega t with s, t real.
inline std::pair<RVec2, RVec2> lattice_coordinates(const Vec2 &z, const RiemannMatrix &omega)
{
    const RVec2 t = omega.imag_inv() * z.imag();
    const RVec2 s = z.real() - omega.omega().real() * t;
    return {s, t};
}

inline Vec2 from_lattice_coordinates(const RVec2 &s, const RVec2 &t, const RiemannMatrix &omega)
{
    return s.cast<cplx>() + omega.omega() * t.cast<cplx>();
}

/// A point of C^2 together with its canonical representative modulo Z^2 + Omega Z^2.
struct AbelianPoint {
    Vec2 z = Vec2::Zero();
    Vec2 rep = Vec2::Zero();
    // (m1, m2, n1, n2) with z = rep + Omega m + n.
    std::array<long, 4> shift{};

    std::array<long, 2> m() const
    {
        return {shift[0], shift[1]};
    }
    std::array<long, 2> n() const
    {
        return {shift[2], shift[3]};
    }
};

/// Decompose z = rep + Omega m + n with rep in the half-open fundamental cell.
inline AbelianPoint reduce_mod_lattice(const Vec2 &z, const RiemannMatrix &omega)
{
    AbelianPoint out;
    out.z = z;
    Vec2 rep = z;
    // A second pass absorbs rounding that lands a coordinate exactly on 1 or just below 0.
    for (int pass = 0; pass < 4; ++pass) {
        auto [s, t] = lattice_coordinates(rep, omega);
        const long m1 = static_cast<long>(std::floor(t(0)));
        const long m2 = static_cast<long>(std::floor(t(1)));
        const long n1 = static_cast<long>(std::floor(s(0)));
        const long n2 = static_cast<long>(std::floor(s(1)));
        if (m1 == 0 && m2 == 0 && n1 == 0 && n2 == 0) {
            break;
        }
        rep -= omega.omega() * Vec2(static_cast<double>(m1), static_cast<double>(m2));
        rep -= Vec2(static_cast<double>(n1), static_cast<double>(n2));
        out.shift[0] += m1;
        out.shift[1] += m2;
        out.shift[2] += n1;
        out.shift[3] += n2;
    }
    out.rep = rep;
    return out;
}

/// Sup-distance between the classes of z1 and z2 in lattice coordinates.
inline double lattice_distance(const Vec2 &z1, const Vec2 &z2, const RiemannMatrix &omega)
{
    auto [s, t] = lattice_coordinates(z1 - z2, omega);
    const auto wrap = [](double v) { return std::abs(v - std::round(v)); };
    return std::max({wrap(s(0)), wrap(s(1)), wrap(t(0)), wrap(t(1))});
}

/// |theta(z)| divided by its natural size at z; invariant under lattice shifts.
inline double normalized_theta_modulus(const Vec2 &z, const RiemannMatrix &omega, double eps = 1e-14)
{
    return std::abs(theta_eval(z, omega, {}, {}, eps)) / omega.theta_scale(z);
}

enum class DivisorTag { Delta, P1, P2, Q1, Q2 };

inline const char *to_string(DivisorTag tag)
{
    switch (tag) {
    case DivisorTag::Delta:
        return "Delta";
    case DivisorTag::P1:
        return "P1";
    case DivisorTag::P2:
        return "P2";
    case DivisorTag::Q1:
        return "Q1";
    case DivisorTag::Q2:
        return "Q2";
    }
    return "?";
}

/// A located zero of theta (and, for intersection points, of a translate).
struct DivisorPoint {
    AbelianPoint point;
    double residual = 0;
    DivisorTag which = DivisorTag::Delta;

    const Vec2 &z() const
    {
        return point.rep;
    }
};

struct RootOptions {
    double root_tol = 1e-11;
    double eps = 1e-14;
    int max_multistarts = 64;
    int max_iterations = 60;
    // starts per real lattice coordinate; the cell grid has grid^4 points
    int grid = 8;
    int max_starts = 4096;
    double dedup_tol = 1e-7;
    double max_condition = 1e8;
};

/// Random point z = s + Omega t with s in [0,1)^2 and t in [t_lo, t_hi)^2.
inline Vec2 random_cell_point(const RiemannMatrix &omega, std::mt19937_64 &rng, double t_lo = 0.0, double t_hi = 1.0)
{
    const RVec2 s(uniform01(rng), uniform01(rng));
    const RVec2 t(uniform(rng, t_lo, t_hi), uniform(rng, t_lo, t_hi));
    return from_lattice_coordinates(s, t, omega);
}

/// A nonsingular zero of theta, found by Newton's method along random complex lines.
inline DivisorPoint find_theta_zero(const RiemannMatrix &omega, std::uint64_t seed, const RootOptions &opts = {})
{
    std::mt19937_64 rng(seed);
    for (int start = 0; start < opts.max_multistarts; ++start) {
        const Vec2 z0 = random_cell_point(omega, rng);
        Vec2 v(cplx(uniform(rng, -1, 1), uniform(rng, -1, 1)), cplx(uniform(rng, -1, 1), uniform(rng, -1, 1)));
        v.normalize();
        cplx t{0, 0};
        for (int it = 0; it < opts.max_iterations; ++it) {
            const Vec2 z = z0 + t * v;
            const auto jet = theta_jet(z, omega, {}, 1, opts.eps);
            const cplx g = jet[0];
            const cplx dg = jet[1] * v(0) + jet[2] * v(1);
            if (std::abs(dg) == 0.0) {
                break;
            }
            cplx step = -g / dg;
            if (std::abs(step) > 0.25) {
                step *= 0.25 / std::abs(step);
            }
            t += step;
            if (std::abs(t) > 4.0) {
                break;
            }
            if (std::abs(step) < 1e-14 * (1 + std::abs(t))) {
                break;
            }
        }
        const Vec2 z = z0 + t * v;
        const double res = normalized_theta_modulus(z, omega, opts.eps);
        if (!(res < opts.root_tol)) {
            continue;
        }
        const auto jet = theta_jet(z, omega, {}, 1, opts.eps);
        const double grad = std::hypot(std::abs(jet[1]), std::abs(jet[2])) / omega.theta_scale(z);
        if (grad <= 1e-6) {
            continue;
        }
        DivisorPoint out;
        out.point = reduce_mod_lattice(z, omega);
        out.residual = normalized_theta_modulus(out.point.rep, omega, opts.eps);
        out.which = DivisorTag::Delta;
        return out;
    }
    throw NoConvergence("no theta zero found after " + std::to_string(opts.max_multistarts) + " line searches");
}

namespace detail
{

struct IntersectionStep {
    Vec2 f;
    Mat2 jac;
};

inline IntersectionStep intersection_system(const Vec2 &z, const Vec2 &shift, const RiemannMatrix &omega, double eps)
{
    const auto a = theta_jet(z, omega, {}, 1, eps);
    const auto b = theta_jet(z - shift, omega, {}, 1, eps);
    IntersectionStep s;
    s.f << a[0], b[0];
    s.jac << a[1], a[2], b[1], b[2];
    return s;
}

inline double condition_number(const Mat2 &m)
{
    Eigen::JacobiSVD<Mat2> svd(m);
    const auto &sv = svd.singularValues();
    return sv(1) == 0.0 ? std::numeric_limits<double>::infinity() : sv(0) / sv(1);
}

// Newton for theta(z) = theta(z - shift) = 0 from z0; returns the root on success.
inline std::optional<Vec2> newton_intersection(Vec2 z, const Vec2 &shift, const RiemannMatrix &omega,
                                               const RootOptions &opts)
{
    int polish = 0;
    for (int it = 0; it < opts.max_iterations; ++it) {
        const auto sys = intersection_system(z, shift, omega, opts.eps);
        const Eigen::PartialPivLU<Mat2> lu(sys.jac);
        if (std::abs(sys.jac.determinant()) == 0.0) {
            return std::nullopt;
        }
        Vec2 step = -lu.solve(sys.f);
        if (!step.allFinite()) {
            return std::nullopt;
        }
        const double len = step.norm();
        if (len > 0.3) {
            step *= 0.3 / len;
        }
        z = reduce_mod_lattice(z + step, omega).rep;
        if (len < 1e-13) {
            if (++polish >= 2) {
                break;
            }
        }
    }
    const double r1 = normalized_theta_modulus(z, omega, opts.eps);
    const double r2 = normalized_theta_modulus(z - shift, omega, opts.eps);
    if (r1 < opts.root_tol && r2 < opts.root_tol) {
        return z;
    }
    return std::nullopt;
}

} // namespace detail

/// Jacobian of (theta(z), theta(z - shift)) at z.
inline Mat2 intersection_jacobian(const Vec2 &z, const Vec2 &shift, const RiemannMatrix &omega, double eps = 1e-14)
{
    return detail::intersection_system(z, shift, omega, eps).jac;
}

/// The two points of Theta meeting the translate {theta(z - c') = 0}, modulo the lattice.
inline std::pair<DivisorPoint, DivisorPoint> intersect_divisors(const RiemannMatrix &omega, const Vec2 &c_prime,
                                                                std::uint64_t seed, const RootOptions &opts = {})
{
    const AbelianPoint cr = reduce_mod_lattice(c_prime, omega);
    if (lattice_distance(cr.rep, Vec2::Zero(), omega) < 1e-8) {
        throw Degenerate("c' lies on the period lattice");
    }
    // The grid is deterministic; the seed only jitters it inside each grid cell.
    std::mt19937_64 rng(seed);
    const int g = opts.grid;
    std::vector<Vec2> roots;
    int starts = 0;
    for (int i = 0; i < g * g * g * g && starts < opts.max_starts; ++i, ++starts) {
        const int i1 = i % g, i2 = (i / g) % g, i3 = (i / (g * g)) % g, i4 = i / (g * g * g);
        const double jitter = 0.25 / g;
        const RVec2 s((i1 + 0.5) / g + uniform(rng, -jitter, jitter), (i2 + 0.5) / g + uniform(rng, -jitter, jitter));
        const RVec2 t((i3 + 0.5) / g + uniform(rng, -jitter, jitter), (i4 + 0.5) / g + uniform(rng, -jitter, jitter));
        const auto root = detail::newton_intersection(from_lattice_coordinates(s, t, omega), cr.rep, omega, opts);
        if (!root) {
            continue;
        }
        bool fresh = true;
        for (const auto &r : roots) {
            if (lattice_distance(r, *root, omega) < opts.dedup_tol) {
                fresh = false;
                break;
            }
        }
        if (fresh) {
            roots.push_back(*root);
        }
    }
    if (roots.size() != 2) {
        throw WrongCount("found " + std::to_string(roots.size()) + " intersection classes, expected 2");
    }
    // Order the pair deterministically by lattice coordinates.
    const auto key = [&](const Vec2 &z) {
        auto [s, t] = lattice_coordinates(z, omega);
        return std::array<double, 4>{t(0), t(1), s(0), s(1)};
    };
    if (key(roots[1]) < key(roots[0])) {
        std::swap(roots[0], roots[1]);
    }
    std::array<DivisorPoint, 2> out;
    for (std::size_t k = 0; k < 2; ++k) {
        const auto cond = detail::condition_number(intersection_jacobian(roots[k], cr.rep, omega, opts.eps));
        if (!(cond < opts.max_condition)) {
            throw IllConditioned("intersection Jacobian condition " + std::to_string(cond));
        }
        out[k].point = reduce_mod_lattice(roots[k], omega);
        out[k].residual = std::max(normalized_theta_modulus(roots[k], omega, opts.eps),
                                   normalized_theta_modulus(roots[k] - cr.rep, omega, opts.eps));
        out[k].which = k == 0 ? DivisorTag::P1 : DivisorTag::P2;
    }
    if (lattice_distance(out[0].z(), out[1].z(), omega) < opts.dedup_tol) {
        throw Degenerate("p1 and p2 coincide modulo the lattice");
    }
    return {out[0], out[1]};
}

/// Matrix [[theta_1(p1), theta_2(p1)], [theta_1(p2), theta_2(p2)]].
inline Mat2 gradient_matrix(const Vec2 &p1, const Vec2 &p2, const RiemannMatrix &omega, double eps = 1e-14)
{
    const auto a = theta_jet(p1, omega, {}, 1, eps);
    const auto b = theta_jet(p2, omega, {}, 1, eps);
    Mat2 m;
    m << a[1], a[2], b[1], b[2];
    return m;
}

} // namespace nakring

#endif
