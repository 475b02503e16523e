#ifndef NAKRING_TEST_SUPPORT_HPP
#define NAKRING_TEST_SUPPORT_HPP

#include <complex>
#include <random>

#include <nakring/nakring.hpp>

namespace nakring::testing
{

inline Mat2 default_period_matrix()
{
    return RunConfig::default_omega();
}

inline Mat2 diagonal_period_matrix(double t1, double t2)
{
    Mat2 m;
    m << cplx(0, t1), cplx(0, 0), cplx(0, 0), cplx(0, t2);
    return m;
}

// One-variable theta_3(z | tau), summed directly.
inline cplx jacobi_theta3(cplx z, cplx tau)
{
    cplx s{0, 0};
    for (int n = -40; n <= 40; ++n) {
        s += std::exp(pi * I * static_cast<double>(n * n) * tau + 2.0 * pi * I * static_cast<double>(n) * z);
    }
    return s;
}

// Built once per process; shared by the tests of one binary.
inline const Built &default_build()
{
    static const Built b = build_all(RunConfig{});
    return b;
}

inline double rel_diff(cplx a, cplx b)
{
    const double s = std::max(std::abs(a), std::abs(b));
    return s > 0 ? std::abs(a - b) / s : 0.0;
}

} // namespace nakring::testing

#endif
