#ifndef NAKRING_DIFFOP_HPP
#define NAKRING_DIFFOP_HPP

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "expr.hpp"

namespace nakring
{

/// Default bound on the total order of stored operators.
inline constexpr int default_order_cap = 6;

/// Scalar differential operator sum_beta coeff_beta(x) d^beta / dx^beta.
class DiffOp
{
public:
    using Terms = std::map<MultiIndex, CoeffExpr>;

    DiffOp() = default;

    static DiffOp identity()
    {
        return multiplication(one_expr());
    }
    static DiffOp multiplication(const CoeffExpr &f)
    {
        DiffOp op;
        op.add_term({}, f);
        return op;
    }
    static DiffOp partial(const MultiIndex &beta, const CoeffExpr &coeff = one_expr())
    {
        DiffOp op;
        op.add_term(beta, coeff);
        return op;
    }

    // Accumulates coeff into the beta term; exact zeros are not stored.
    void add_term(const MultiIndex &beta, const CoeffExpr &coeff)
    {
        if (coeff->is_zero()) {
            return;
        }
        auto it = terms_.find(beta);
        if (it == terms_.end()) {
            terms_.emplace(beta, coeff);
            return;
        }
        it->second = it->second + coeff;
        if (it->second->is_zero()) {
            terms_.erase(it);
        }
    }

    const Terms &terms() const noexcept
    {
        return terms_;
    }
    bool is_zero() const noexcept
    {
        return terms_.empty();
    }
    int order() const noexcept
    {
        int o = 0;
        for (const auto &[beta, c] : terms_) {
            o = std::max(o, beta.order());
        }
        return terms_.empty() ? -1 : o;
    }
    CoeffExpr coeff(const MultiIndex &beta) const
    {
        auto it = terms_.find(beta);
        return it == terms_.end() ? zero_expr() : it->second;
    }

    DiffOp operator+(const DiffOp &o) const
    {
        DiffOp r;
        merge(r, *this, o, false);
        return r;
    }
    DiffOp operator-(const DiffOp &o) const
    {
        DiffOp r;
        merge(r, *this, o, true);
        return r;
    }
    DiffOp operator-() const
    {
        DiffOp r;
        for (const auto &[beta, c] : terms_) {
            r.add_term(beta, -c);
        }
        return r;
    }

    /// Left multiplication by a function: (f P) u = f (P u).
    friend DiffOp operator*(const CoeffExpr &f, const DiffOp &P)
    {
        DiffOp r;
        for (const auto &[beta, c] : P.terms_) {
            r.add_term(beta, f * c);
        }
        return r;
    }
    friend DiffOp operator*(cplx s, const DiffOp &P)
    {
        return constant(s) * P;
    }

    /// Drops the terms in `beta_set`.
    DiffOp without(const std::vector<MultiIndex> &beta_set) const
    {
        DiffOp r = *this;
        for (const auto &b : beta_set) {
            r.terms_.erase(b);
        }
        return r;
    }

private:
    static void merge(DiffOp &r, const DiffOp &a, const DiffOp &b, bool subtract)
    {
        // Sum term by term so that each coefficient is built once.
        auto ia = a.terms_.begin();
        auto ib = b.terms_.begin();
        while (ia != a.terms_.end() || ib != b.terms_.end()) {
            if (ib == b.terms_.end() || (ia != a.terms_.end() && ia->first < ib->first)) {
                r.add_term(ia->first, ia->second);
                ++ia;
            } else if (ia == a.terms_.end() || ib->first < ia->first) {
                r.add_term(ib->first, subtract ? -ib->second : ib->second);
                ++ib;
            } else {
                r.add_term(ia->first, subtract ? ia->second - ib->second : ia->second + ib->second);
                ++ia;
                ++ib;
            }
        }
    }

    Terms terms_;
};

/// Leibniz composition: (P Q) u = P (Q u).
inline DiffOp compose(const DiffOp &P, const DiffOp &Q, int order_cap = default_order_cap)
{
    if (P.is_zero() || Q.is_zero()) {
        return {};
    }
    if (P.order() + Q.order() > order_cap) {
        throw OrderCap("composition of orders " + std::to_string(P.order()) + " and " + std::to_string(Q.order()) +
                       " exceeds cap " + std::to_string(order_cap));
    }
    // p_beta d^beta (q_gamma d^gamma) = sum_{delta <= beta} C(beta, delta) p_beta (d^delta q_gamma) d^{beta-delta+gamma}
    std::map<MultiIndex, std::vector<CoeffExpr>> acc;
    for (const auto &[beta, p] : P.terms()) {
        for (const auto &[gamma, q] : Q.terms()) {
            for (int d1 = 0; d1 <= beta.d1(); ++d1) {
                for (int d2 = 0; d2 <= beta.d2(); ++d2) {
                    const MultiIndex delta(d1, d2);
                    const double mult = binomial(beta.d1(), d1) * binomial(beta.d2(), d2);
                    const CoeffExpr dq = derivative(q, delta);
                    if (dq->is_zero()) {
                        continue;
                    }
                    CoeffExpr term = p * dq;
                    if (mult != 1.0) {
                        term = constant(mult) * term;
                    }
                    acc[beta - delta + gamma].push_back(term);
                }
            }
        }
    }
    DiffOp out;
    for (auto &[beta, terms] : acc) {
        out.add_term(beta, sum(std::move(terms)));
    }
    return out;
}

inline DiffOp commutator(const DiffOp &P, const DiffOp &Q, int order_cap = default_order_cap)
{
    return compose(P, Q, order_cap) - compose(Q, P, order_cap);
}

/// 2x2 matrix of scalar differential operators.
class MatDiffOp
{
public:
    MatDiffOp() = default;
    MatDiffOp(DiffOp e11, DiffOp e12, DiffOp e21, DiffOp e22)
        : e_{{{std::move(e11), std::move(e12)}, {std::move(e21), std::move(e22)}}}
    {
    }

    static MatDiffOp identity()
    {
        return {DiffOp::identity(), {}, {}, DiffOp::identity()};
    }

    // 1-based entry access, matching the usual matrix notation.
    const DiffOp &operator()(int r, int c) const
    {
        return e_[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(c - 1)];
    }
    DiffOp &operator()(int r, int c)
    {
        return e_[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(c - 1)];
    }

    int order() const
    {
        int o = -1;
        for (const auto &row : e_) {
            for (const auto &d : row) {
                o = std::max(o, d.order());
            }
        }
        return o;
    }

    MatDiffOp operator+(const MatDiffOp &o) const
    {
        MatDiffOp r;
        for (int i = 1; i <= 2; ++i) {
            for (int j = 1; j <= 2; ++j) {
                r(i, j) = (*this)(i, j) + o(i, j);
            }
        }
        return r;
    }
    MatDiffOp operator-(const MatDiffOp &o) const
    {
        MatDiffOp r;
        for (int i = 1; i <= 2; ++i) {
            for (int j = 1; j <= 2; ++j) {
                r(i, j) = (*this)(i, j) - o(i, j);
            }
        }
        return r;
    }

    /// All coefficient expressions, entry by entry.
    std::vector<CoeffExpr> coefficients() const
    {
        std::vector<CoeffExpr> out;
        for (const auto &row : e_) {
            for (const auto &d : row) {
                for (const auto &[beta, c] : d.terms()) {
                    out.push_back(c);
                }
            }
        }
        return out;
    }

private:
    std::array<std::array<DiffOp, 2>, 2> e_;
};

inline MatDiffOp compose(const MatDiffOp &A, const MatDiffOp &B, int order_cap = default_order_cap)
{
    MatDiffOp r;
    for (int i = 1; i <= 2; ++i) {
        for (int j = 1; j <= 2; ++j) {
            r(i, j) = compose(A(i, 1), B(1, j), order_cap) + compose(A(i, 2), B(2, j), order_cap);
        }
    }
    return r;
}

inline MatDiffOp commutator(const MatDiffOp &A, const MatDiffOp &B, int order_cap = default_order_cap)
{
    return compose(A, B, order_cap) - compose(B, A, order_cap);
}

/// Sum_beta coeff_beta(x) (d^beta f)(x) with f given as an expression in x.
inline cplx apply(const DiffOp &P, const CoeffExpr &f, Evaluator &ev)
{
    cplx out{0, 0};
    for (const auto &[beta, c] : P.terms()) {
        out += ev(c) * ev(derivative(f, beta));
    }
    return out;
}

/// Componentwise action on a pair (f1, f2).
inline std::array<cplx, 2> apply(const MatDiffOp &P, const std::array<CoeffExpr, 2> &f, Evaluator &ev)
{
    return {apply(P(1, 1), f[0], ev) + apply(P(1, 2), f[1], ev), apply(P(2, 1), f[0], ev) + apply(P(2, 2), f[1], ev)};
}

/// Action on a family given by tabulated derivatives, e.g. values d^beta f(x)
/// computed elsewhere.
template <typename DerivativeLookup>
cplx apply_tabulated(const DiffOp &P, DerivativeLookup &&lookup, Evaluator &ev)
{
    cplx out{0, 0};
    for (const auto &[beta, c] : P.terms()) {
        const std::optional<cplx> v = lookup(beta);
        if (!v) {
            throw MissingDerivative("no derivative " + beta.str() + " supplied");
        }
        out += ev(c) * *v;
    }
    return out;
}

/// max over samples, entries and beta of |coeff_beta(x)|.
inline double op_norm_sampled(const DiffOp &P, const RiemannMatrix &omega, const std::vector<Vec2> &xs,
                              EvalOptions opts = {})
{
    double m = 0;
    for (const auto &x : xs) {
        Evaluator ev(omega, x, opts);
        for (const auto &[beta, c] : P.terms()) {
            m = std::max(m, std::abs(ev(c)));
        }
    }
    return m;
}

inline double op_norm_sampled(const MatDiffOp &P, const RiemannMatrix &omega, const std::vector<Vec2> &xs,
                              EvalOptions opts = {})
{
    double m = 0;
    for (const auto &x : xs) {
        Evaluator ev(omega, x, opts);
        for (const auto &c : P.coefficients()) {
            m = std::max(m, std::abs(ev(c)));
        }
    }
    return m;
}

struct SampledComparison {
    double norm_a = 0;
    double norm_b = 0;
    double norm_diff = 0;

    // |A - B| / max(|A|, |B|)
    double relative() const
    {
        const double scale = std::max(norm_a, norm_b);
        return scale > 0 ? norm_diff / scale : norm_diff;
    }
};

/// Sampled norms of A, B and A - B, evaluating both operators once per sample.
inline SampledComparison compare_sampled(const MatDiffOp &A, const MatDiffOp &B, const RiemannMatrix &omega,
                                         const std::vector<Vec2> &xs, EvalOptions opts = {})
{
    SampledComparison out;
    for (const auto &x : xs) {
        Evaluator ev(omega, x, opts);
        for (int r = 1; r <= 2; ++r) {
            for (int c = 1; c <= 2; ++c) {
                std::map<MultiIndex, std::pair<cplx, cplx>> vals;
                for (const auto &[beta, e] : A(r, c).terms()) {
                    vals[beta].first = ev(e);
                }
                for (const auto &[beta, e] : B(r, c).terms()) {
                    vals[beta].second = ev(e);
                }
                for (const auto &[beta, v] : vals) {
                    out.norm_a = std::max(out.norm_a, std::abs(v.first));
                    out.norm_b = std::max(out.norm_b, std::abs(v.second));
                    out.norm_diff = std::max(out.norm_diff, std::abs(v.first - v.second));
                }
            }
        }
    }
    return out;
}

/// Removes terms of order > max_order whose sampled coefficients all stay below
/// rel_tol times the operator's sampled norm. Throws OrderCap if a higher-order
/// term survives.
inline MatDiffOp truncate_vanishing(const MatDiffOp &P, int max_order, const RiemannMatrix &omega,
                                    const std::vector<Vec2> &xs, double rel_tol, EvalOptions opts = {})
{
    const double scale = std::max(op_norm_sampled(P, omega, xs, opts), 1e-300);
    MatDiffOp out = P;
    for (int i = 1; i <= 2; ++i) {
        for (int j = 1; j <= 2; ++j) {
            std::vector<MultiIndex> drop;
            for (const auto &[beta, c] : P(i, j).terms()) {
                if (beta.order() <= max_order) {
                    continue;
                }
                double m = 0;
                for (const auto &x : xs) {
                    m = std::max(m, std::abs(evaluate(c, omega, x, opts)));
                }
                if (m >= rel_tol * scale) {
                    throw OrderCap("term " + beta.str() + " of entry " + std::to_string(i) + std::to_string(j) +
                                   " does not vanish (relative size " + std::to_string(m / scale) + ")");
                }
                drop.push_back(beta);
            }
            out(i, j) = P(i, j).without(drop);
        }
    }
    return out;
}

} // namespace nakring

#endif
