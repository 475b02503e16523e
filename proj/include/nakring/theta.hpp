#ifndef NAKRING_THETA_HPP
#define NAKRING_THETA_HPP

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "multi_index.hpp"

namespace nakring
{

using cplx = std::complex<double>;
using Vec2 = Eigen::Vector2cd;
using Mat2 = Eigen::Matrix2cd;
using RVec2 = Eigen::Vector2d;
using RMat2 = Eigen::Matrix2d;

inline constexpr double pi = std::numbers::pi;
inline constexpr cplx I{0.0, 1.0};

/// Exact rational number num/den with den > 0 in lowest terms.
struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Rational() = default;
    Rational(std::int64_t n, std::int64_t d = 1)
    {
        if (d == 0) {
            throw InvalidArgument("rational with zero denominator");
        }
        if (d < 0) {
            n = -n;
            d = -d;
        }
        const auto g = std::gcd(n, d);
        num = g == 0 ? 0 : n / g;
        den = g == 0 ? 1 : d / g;
    }

    double value() const noexcept
    {
        return static_cast<double>(num) / static_cast<double>(den);
    }
    bool operator==(const Rational &) const = default;
};

/// Theta characteristic [a, b] with rational entries.
struct Characteristic {
    std::array<Rational, 2> a{};
    std::array<Rational, 2> b{};

    static Characteristic zero()
    {
        return {};
    }
    RVec2 a_vec() const
    {
        return {a[0].value(), a[1].value()};
    }
    RVec2 b_vec() const
    {
        return {b[0].value(), b[1].value()};
    }
    bool is_zero() const
    {
        return a[0].num == 0 && a[1].num == 0 && b[0].num == 0 && b[1].num == 0;
    }
    bool operator==(const Characteristic &) const = default;
};

/// Symmetric 2x2 period matrix with positive definite imaginary part.
class RiemannMatrix
{
public:
    static constexpr double default_imag_floor = 0.25;

    explicit RiemannMatrix(const Mat2 &omega, double imag_floor = default_imag_floor)
    {
        if (!omega.allFinite()) {
            throw InvalidOmega("non-finite entries");
        }
        const double scale = std::max(1.0, omega.norm());
        if (std::abs(omega(0, 1) - omega(1, 0)) > 1e-14 * scale) {
            throw InvalidOmega("matrix is not symmetric");
        }
        omega_ = omega;
        omega_(0, 1) = omega_(1, 0) = 0.5 * (omega(0, 1) + omega(1, 0));
        imag_ = omega_.imag();
        Eigen::SelfAdjointEigenSolver<RMat2> es(imag_);
        if (es.eigenvalues().minCoeff() < imag_floor) {
            throw InvalidOmega("smallest eigenvalue of Im(Omega) is " + std::to_string(es.eigenvalues().minCoeff()) +
                               ", below floor " + std::to_string(imag_floor));
        }
        min_eig_ = es.eigenvalues().minCoeff();
        imag_inv_ = imag_.inverse();
        chol_ = imag_.llt().matrixU();
        imag_floor_ = imag_floor;
    }

    const Mat2 &omega() const noexcept
    {
        return omega_;
    }
    const RMat2 &imag() const noexcept
    {
        return imag_;
    }
    const RMat2 &imag_inv() const noexcept
    {
        return imag_inv_;
    }
    // Upper Cholesky factor U with Im(Omega) = U^T U.
    const RMat2 &chol() const noexcept
    {
        return chol_;
    }
    double min_imag_eigenvalue() const noexcept
    {
        return min_eig_;
    }

    RiemannMatrix scaled(int s) const
    {
        return RiemannMatrix(omega_ * static_cast<double>(s), imag_floor_);
    }

    /// pi * y^T (Im Omega)^{-1} y for y = Im z; log of the natural size of theta near z.
    double growth_exponent(const Vec2 &z) const
    {
        const RVec2 y = z.imag();
        return pi * y.dot(imag_inv_ * y);
    }

    /// Magnitude that |theta(z)| has generically near z; lattice-covariant.
    double theta_scale(const Vec2 &z) const
    {
        return std::exp(growth_exponent(z));
    }

private:
    Mat2 omega_;
    RMat2 imag_;
    RMat2 imag_inv_;
    RMat2 chol_;
    double min_eig_ = 0;
    double imag_floor_ = default_imag_floor;
};

struct ThetaOptions {
    double eps = 1e-14;
    double radius_cap = 12.0;
};

namespace detail
{

inline void check_eps(double eps)
{
    if (!(eps >= 1e-14)) {
        throw InvalidArgument("theta accuracy must be >= 1e-14");
    }
}

// Upper bound on the sum of |term| over lattice points with ||u||_Y >= r.
inline double theta_tail_bound(const RiemannMatrix &omega, const RVec2 &center_shift, int order, double r)
{
    const RMat2 &U = omega.chol();
    const double det_u = std::abs(U.determinant());
    const double diam = std::max((U * RVec2(1, 1)).norm(), (U * RVec2(1, -1)).norm());
    const double inv_sqrt_lambda = 1.0 / std::sqrt(omega.min_imag_eigenvalue());
    const double shift = center_shift.norm();
    double tail = 0;
    for (int k = 0; k < 200; ++k) {
        const double rho = r + k;
        const double count = pi * (rho + 1 + diam) * (rho + 1 + diam) / det_u;
        const double poly = std::pow(2 * pi * ((rho + 1) * inv_sqrt_lambda + shift), order);
        const double term = count * poly * std::exp(-pi * rho * rho);
        tail += term;
        if (term < 1e-30 * tail) {
            break;
        }
    }
    return tail;
}

} // namespace detail

/// Radius R of the summation ellipsoid ||n + a + Y^{-1} Im z||_Y <= R that
/// keeps the absolute tail of the derivative-d series below eps.
inline double truncation_radius(const RiemannMatrix &omega, const RVec2 &im_z, const MultiIndex &d, double eps,
                                const ThetaOptions &opts = {})
{
    detail::check_eps(eps);
    const RVec2 shift = omega.imag_inv() * im_z;
    const double prefactor_log = pi * im_z.dot(shift);
    // The tail is monotone in r; walk outwards on a fine grid, then bisect.
    const auto excess = [&](double r) {
        return std::log(detail::theta_tail_bound(omega, shift, d.order(), r)) + prefactor_log - std::log(eps);
    };
    double lo = 0.0;
    double hi = 0.5;
    while (excess(hi) > 0) {
        lo = hi;
        hi += 0.5;
        if (hi > opts.radius_cap) {
            throw NonConvergent("summation radius exceeds cap " + std::to_string(opts.radius_cap));
        }
    }
    for (int i = 0; i < 12; ++i) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) > 0 ? lo : hi) = mid;
    }
    return hi;
}

namespace detail
{

// Calls fn(v, term) for every lattice vector v = n + a inside the summation
// ellipsoid, where term = exp(pi i <Omega v, v> + 2 pi i <v, z + b>).
template <typename Fn>
void for_each_theta_term(const Vec2 &z, const RiemannMatrix &omega, const Characteristic &ch, int order, double eps,
                         const ThetaOptions &opts, Fn &&fn)
{
    check_eps(eps);
    const RVec2 a = ch.a_vec();
    const Vec2 zb = z + ch.b_vec().cast<cplx>();
    const RVec2 y = zb.imag();
    const RVec2 center = a + omega.imag_inv() * y;
    const double R = truncation_radius(omega, y, MultiIndex(order, 0), eps, opts);
    const RMat2 &Y = omega.imag();
    const Mat2 &W = omega.omega();

    const double r1 = R * std::sqrt(omega.imag_inv()(0, 0));
    const auto n1_lo = static_cast<long>(std::ceil(-r1 - center(0)));
    const auto n1_hi = static_cast<long>(std::floor(r1 - center(0)));
    for (long n1 = n1_lo; n1 <= n1_hi; ++n1) {
        const double u1 = static_cast<double>(n1) + center(0);
        const double disc = Y(0, 1) * Y(0, 1) * u1 * u1 - Y(1, 1) * (Y(0, 0) * u1 * u1 - R * R);
        if (disc < 0) {
            continue;
        }
        const double sq = std::sqrt(disc);
        const auto n2_lo = static_cast<long>(std::ceil((-Y(0, 1) * u1 - sq) / Y(1, 1) - center(1)));
        const auto n2_hi = static_cast<long>(std::floor((-Y(0, 1) * u1 + sq) / Y(1, 1) - center(1)));
        const double v1 = static_cast<double>(n1) + a(0);
        for (long n2 = n2_lo; n2 <= n2_hi; ++n2) {
            const double v2 = static_cast<double>(n2) + a(1);
            const cplx quad = W(0, 0) * v1 * v1 + 2.0 * W(0, 1) * v1 * v2 + W(1, 1) * v2 * v2;
            fn(v1, v2, std::exp(I * pi * quad + 2.0 * I * pi * (v1 * zb(0) + v2 * zb(1))));
        }
    }
}

} // namespace detail

/// Values of d^beta theta[ch](z, Omega) for every beta of total order <= max_order,
/// in the order of multi_indices_up_to(max_order).
inline std::vector<cplx> theta_jet(const Vec2 &z, const RiemannMatrix &omega, const Characteristic &ch, int max_order,
                                   double eps = 1e-14, const ThetaOptions &opts = {})
{
    if (max_order < 0 || max_order > MultiIndex::max_order) {
        throw OrderCap("theta derivative order " + std::to_string(max_order));
    }
    const auto indices = multi_indices_up_to(max_order);
    std::vector<cplx> out(indices.size(), cplx{0, 0});
    std::vector<cplx> pw1(static_cast<std::size_t>(max_order) + 1);
    std::vector<cplx> pw2(static_cast<std::size_t>(max_order) + 1);
    detail::for_each_theta_term(z, omega, ch, max_order, eps, opts, [&](double v1, double v2, cplx term) {
        const cplx f1 = 2.0 * I * pi * v1;
        const cplx f2 = 2.0 * I * pi * v2;
        pw1[0] = pw2[0] = 1.0;
        for (std::size_t k = 1; k < pw1.size(); ++k) {
            pw1[k] = pw1[k - 1] * f1;
            pw2[k] = pw2[k - 1] * f2;
        }
        for (std::size_t i = 0; i < indices.size(); ++i) {
            out[i] += term * pw1[static_cast<std::size_t>(indices[i].d1())] *
                      pw2[static_cast<std::size_t>(indices[i].d2())];
        }
    });
    return out;
}

/// Position of beta inside a theta_jet result.
inline std::size_t jet_index(const MultiIndex &beta)
{
    const int k = beta.order();
    return static_cast<std::size_t>(k * (k + 1) / 2 + beta.d2());
}

/// d^beta theta[ch](z, Omega), with absolute truncation error below eps.
inline cplx theta_eval(const Vec2 &z, const RiemannMatrix &omega, const Characteristic &ch = {},
                       const MultiIndex &d = {}, double eps = 1e-14, const ThetaOptions &opts = {})
{
    cplx sum{0, 0};
    detail::for_each_theta_term(z, omega, ch, d.order(), eps, opts, [&](double v1, double v2, cplx term) {
        for (int k = 0; k < d.d1(); ++k) {
            term *= 2.0 * I * pi * v1;
        }
        for (int k = 0; k < d.d2(); ++k) {
            term *= 2.0 * I * pi * v2;
        }
        sum += term;
    });
    return sum;
}

/// Default relative floor on |theta(z)| / theta_scale(z) below which z counts as on the divisor.
inline constexpr double default_divisor_floor = 1e-10;

/// Logarithmic derivative d^beta log theta(z), 1 <= |beta| <= 3, expanded by the
/// quotient rule over exact theta derivatives.
inline cplx log_theta_deriv(const Vec2 &z, const RiemannMatrix &omega, const MultiIndex &d, double eps = 1e-14,
                            double divisor_floor = default_divisor_floor)
{
    if (d.order() < 1 || d.order() > 3) {
        throw InvalidArgument("log_theta_deriv supports total order 1..3, got " + d.str());
    }
    const auto jet = theta_jet(z, omega, {}, d.order(), eps);
    const auto t = [&](int d1, int d2) { return jet[jet_index(MultiIndex(d1, d2))]; };
    const cplx th = t(0, 0);
    if (std::abs(th) < divisor_floor * omega.theta_scale(z)) {
        throw OnDivisor("|theta(z)| below divisor-proximity floor");
    }
    // theta derivative along a list of variables
    const auto td = [&](std::initializer_list<int> vars) {
        int d1 = 0, d2 = 0;
        for (int v : vars) {
            (v == 1 ? d1 : d2)++;
        }
        return t(d1, d2);
    };
    const auto v = d.variables();
    if (v.size() == 1) {
        return td({v[0]}) / th;
    }
    if (v.size() == 2) {
        return td({v[0], v[1]}) / th - td({v[0]}) * td({v[1]}) / (th * th);
    }
    const int j = v[0], k = v[1], s = v[2];
    return td({j, k, s}) / th -
           (td({j, k}) * td({s}) + td({j, s}) * td({k}) + td({k, s}) * td({j})) / (th * th) +
           2.0 * td({j}) * td({k}) * td({s}) / (th * th * th);
}

} // namespace nakring

#endif
