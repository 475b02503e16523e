#ifndef NAKRING_LINALG_HPP
#define NAKRING_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "avgeom.hpp"

namespace nakring
{

using MatXc = Eigen::MatrixXcd;
using VecXc = Eigen::VectorXcd;

struct RankInfo {
    int rank = 0;
    std::vector<double> singular_values;

    // sigma_{r+1} / sigma_r, 0 when sigma_{r+1} does not exist
    double tail_ratio(int r) const
    {
        if (r <= 0 || r > static_cast<int>(singular_values.size())) {
            return std::numeric_limits<double>::infinity();
        }
        if (r == static_cast<int>(singular_values.size())) {
            return 0.0;
        }
        return singular_values[static_cast<std::size_t>(r)] / singular_values[static_cast<std::size_t>(r - 1)];
    }

    // position of the largest drop sigma_{r+1} / sigma_r, ignoring values below
    // floor * sigma_max (treated as exact zeros)
    int gap_rank(double floor = 1e-300) const
    {
        if (singular_values.empty() || singular_values.front() == 0.0) {
            return 0;
        }
        const double smax = singular_values.front();
        int best = static_cast<int>(singular_values.size());
        double best_ratio = 1.0;
        for (std::size_t i = 0; i + 1 < singular_values.size(); ++i) {
            if (singular_values[i] <= floor * smax) {
                break;
            }
            const double ratio = singular_values[i + 1] / singular_values[i];
            if (ratio < best_ratio) {
                best_ratio = ratio;
                best = static_cast<int>(i + 1);
            }
        }
        return best;
    }
};

/// Numerical rank: singular values above rel_cut * sigma_max. Columns are
/// scaled to unit norm first when normalize is set.
inline RankInfo numerical_rank(MatXc m, double rel_cut = 1e-8, bool normalize = true)
{
    if (normalize) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double n = m.col(j).norm();
            if (n > 0) {
                m.col(j) /= n;
            }
        }
    }
    RankInfo info;
    if (m.size() == 0) {
        return info;
    }
    Eigen::JacobiSVD<MatXc> svd(m);
    const auto &sv = svd.singularValues();
    info.singular_values.assign(sv.data(), sv.data() + sv.size());
    const double smax = info.singular_values.empty() ? 0.0 : info.singular_values.front();
    for (double s : info.singular_values) {
        if (s > rel_cut * smax) {
            ++info.rank;
        }
    }
    return info;
}

/// Condition number sigma_max / sigma_min of a matrix with full column rank.
inline double condition_number(const MatXc &m)
{
    Eigen::JacobiSVD<MatXc> svd(m);
    const auto &sv = svd.singularValues();
    if (sv.size() == 0 || sv(sv.size() - 1) == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return sv(0) / sv(sv.size() - 1);
}

/// Point of the fundamental cell with |theta(z)| at least min_modulus of its natural size.
inline Vec2 random_generic_z(const RiemannMatrix &omega, std::mt19937_64 &rng, double min_modulus = 0.05)
{
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const Vec2 z = random_cell_point(omega, rng);
        if (normalized_theta_modulus(z, omega) > min_modulus) {
            return z;
        }
    }
    throw NoConvergence("could not sample a point away from the theta divisor");
}

/// Uniform sample of the polydisc |x_1|, |x_2| <= radius.
inline Vec2 random_polydisc(std::mt19937_64 &rng, double radius)
{
    Vec2 x;
    for (int j = 0; j < 2; ++j) {
        const double r = radius * std::sqrt(uniform01(rng));
        const double phi = 2 * pi * uniform01(rng);
        x(j) = std::polar(r, phi);
    }
    return x;
}

} // namespace nakring

#endif
