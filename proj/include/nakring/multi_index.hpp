#ifndef NAKRING_MULTI_INDEX_HPP
#define NAKRING_MULTI_INDEX_HPP

#include <compare>
#include <string>
#include <vector>

#include "errors.hpp"

namespace nakring
{

/// Pair of derivative orders (d1, d2) in two variables.
///
/// Used both for theta-function derivatives in z and for the monomials
/// d^beta of differential operators in x. The total order is bounded so that
/// products of the generated operators (up to three nested compositions of
/// second-order operators) stay representable.
class MultiIndex
{
public:
    static constexpr int max_order = 10;

    constexpr MultiIndex() = default;
    MultiIndex(int d1, int d2) : d1_(d1), d2_(d2)
    {
        if (d1 < 0 || d2 < 0) {
            throw InvalidArgument("negative multi-index component");
        }
        if (d1 + d2 > max_order) {
            throw OrderCap("multi-index order " + std::to_string(d1 + d2) + " exceeds " +
                           std::to_string(max_order));
        }
    }

    static MultiIndex unit(int j)
    {
        return j == 1 ? MultiIndex(1, 0) : MultiIndex(0, 1);
    }

    constexpr int d1() const noexcept
    {
        return d1_;
    }
    constexpr int d2() const noexcept
    {
        return d2_;
    }
    constexpr int operator[](int j) const noexcept
    {
        return j == 1 ? d1_ : d2_;
    }
    constexpr int order() const noexcept
    {
        return d1_ + d2_;
    }
    constexpr bool is_zero() const noexcept
    {
        return d1_ == 0 && d2_ == 0;
    }

    MultiIndex operator+(const MultiIndex &o) const
    {
        return MultiIndex(d1_ + o.d1_, d2_ + o.d2_);
    }
    MultiIndex operator-(const MultiIndex &o) const
    {
        return MultiIndex(d1_ - o.d1_, d2_ - o.d2_);
    }
    constexpr bool dominates(const MultiIndex &o) const noexcept
    {
        return d1_ >= o.d1_ && d2_ >= o.d2_;
    }

    constexpr auto operator<=>(const MultiIndex &) const = default;

    // Expanded variable list, e.g. (2,1) -> {1,1,2}.
    std::vector<int> variables() const
    {
        std::vector<int> v(static_cast<std::size_t>(d1_), 1);
        v.insert(v.end(), static_cast<std::size_t>(d2_), 2);
        return v;
    }

    std::string str() const
    {
        return "(" + std::to_string(d1_) + "," + std::to_string(d2_) + ")";
    }

private:
    int d1_ = 0;
    int d2_ = 0;
};

// All multi-indices of total order <= n, graded then lexicographic.
inline std::vector<MultiIndex> multi_indices_up_to(int n)
{
    std::vector<MultiIndex> out;
    for (int k = 0; k <= n; ++k) {
        for (int d2 = 0; d2 <= k; ++d2) {
            out.emplace_back(k - d2, d2);
        }
    }
    return out;
}

inline double binomial(int n, int k)
{
    double r = 1;
    for (int i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
    }
    return r;
}

} // namespace nakring

#endif
