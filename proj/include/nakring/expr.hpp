#ifndef NAKRING_EXPR_HPP
#define NAKRING_EXPR_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "theta.hpp"

namespace nakring
{

/*
 * Coefficient expressions: immutable DAGs of functions of x = (x1, x2).
 *
 * Leaves are constants, the coordinates x_j, exponentials of affine forms and
 * theta nodes (d^deriv theta[ch])(z0 + A x, s Omega). Interior nodes are
 * +, *, / and negation. Every node's x-derivative is again a node of the
 * same grammar, so differential operators with these coefficients can be
 * composed exactly.
 */

enum class NodeKind { Const, Var, Theta, ExpLin, Add, Mul, Div, Neg };

struct ThetaArgs {
    Characteristic ch;
    int scale = 1;
    Vec2 z0 = Vec2::Zero();
    // nullopt means the identity matrix
    std::optional<Mat2> A;
    MultiIndex deriv;
};

class Node;
using CoeffExpr = std::shared_ptr<const Node>;

class Node
{
public:
    NodeKind kind() const noexcept
    {
        return kind_;
    }
    std::uint64_t id() const noexcept
    {
        return id_;
    }
    const cplx &value() const noexcept
    {
        return value_;
    }
    int var() const noexcept
    {
        return var_;
    }
    const ThetaArgs &theta() const noexcept
    {
        return *theta_;
    }
    // ExpLin: exp(<lin, x> + value)
    const Vec2 &lin() const noexcept
    {
        return lin_;
    }
    const CoeffExpr &lhs() const noexcept
    {
        return lhs_;
    }
    const CoeffExpr &rhs() const noexcept
    {
        return rhs_;
    }
    bool is_const() const noexcept
    {
        return kind_ == NodeKind::Const;
    }
    bool is_zero() const noexcept
    {
        return kind_ == NodeKind::Const && value_ == cplx(0, 0);
    }
    bool is_one() const noexcept
    {
        return kind_ == NodeKind::Const && value_ == cplx(1, 0);
    }

private:
    friend struct NodeFactory;
    friend CoeffExpr derivative(const CoeffExpr &, const MultiIndex &);

    NodeKind kind_ = NodeKind::Const;
    std::uint64_t id_ = 0;
    cplx value_{0, 0};
    int var_ = 0;
    std::shared_ptr<const ThetaArgs> theta_;
    Vec2 lin_ = Vec2::Zero();
    CoeffExpr lhs_;
    CoeffExpr rhs_;

    // Derivative bookkeeping, guarded by expr_mutex(). A node produced by
    // differentiating `origin_` remembers it, so that mixed partials are always
    // taken in the canonical order (all d/dx1 first) and shared.
    mutable std::map<MultiIndex, CoeffExpr> derivs_;
    mutable std::weak_ptr<const Node> origin_;
    mutable MultiIndex origin_order_;
};

inline std::recursive_mutex &expr_mutex()
{
    static std::recursive_mutex m;
    return m;
}

inline std::atomic<std::uint64_t> &node_counter()
{
    static std::atomic<std::uint64_t> c{0};
    return c;
}

struct NodeFactory {
    static std::shared_ptr<Node> make(NodeKind k)
    {
        auto n = std::make_shared<Node>();
        n->kind_ = k;
        n->id_ = ++node_counter();
        return n;
    }
    static CoeffExpr constant(cplx v)
    {
        auto n = make(NodeKind::Const);
        n->value_ = v;
        return n;
    }
    static CoeffExpr var(int j)
    {
        auto n = make(NodeKind::Var);
        n->var_ = j;
        return n;
    }
    static CoeffExpr theta(ThetaArgs args)
    {
        auto n = make(NodeKind::Theta);
        n->theta_ = std::make_shared<const ThetaArgs>(std::move(args));
        return n;
    }
    static CoeffExpr exp_lin(const Vec2 &v, cplx w)
    {
        auto n = make(NodeKind::ExpLin);
        n->lin_ = v;
        n->value_ = w;
        return n;
    }
    static CoeffExpr binary(NodeKind k, CoeffExpr a, CoeffExpr b)
    {
        auto n = make(k);
        n->lhs_ = std::move(a);
        n->rhs_ = std::move(b);
        return n;
    }
    static CoeffExpr unary(NodeKind k, CoeffExpr a)
    {
        auto n = make(k);
        n->lhs_ = std::move(a);
        return n;
    }
};

inline const CoeffExpr &zero_expr()
{
    static const CoeffExpr z = NodeFactory::constant({0, 0});
    return z;
}

inline const CoeffExpr &one_expr()
{
    static const CoeffExpr o = NodeFactory::constant({1, 0});
    return o;
}

inline CoeffExpr constant(cplx v)
{
    if (v == cplx(0, 0)) {
        return zero_expr();
    }
    if (v == cplx(1, 0)) {
        return one_expr();
    }
    return NodeFactory::constant(v);
}

inline CoeffExpr var(int j)
{
    if (j != 1 && j != 2) {
        throw InvalidArgument("variable index must be 1 or 2");
    }
    static const CoeffExpr x1 = NodeFactory::var(1);
    static const CoeffExpr x2 = NodeFactory::var(2);
    return j == 1 ? x1 : x2;
}

/// (d^deriv theta[ch])(z0 + A x, scale * Omega); A = identity when omitted.
inline CoeffExpr theta_node(const Vec2 &z0, const MultiIndex &deriv = {}, const Characteristic &ch = {},
                            int scale = 1, std::optional<Mat2> A = std::nullopt)
{
    if (scale < 1) {
        throw InvalidArgument("theta node scale must be a positive integer");
    }
    if (A && A->isIdentity(0.0)) {
        A.reset();
    }
    return NodeFactory::theta(ThetaArgs{ch, scale, z0, std::move(A), deriv});
}

/// exp(<v, x> + w)
inline CoeffExpr exp_lin(const Vec2 &v, cplx w = {0, 0})
{
    if (v.isZero(0.0)) {
        return constant(std::exp(w));
    }
    return NodeFactory::exp_lin(v, w);
}

// Arithmetic with conservative simplification: constant folding and removal of
// additive zeros / multiplicative ones only.

inline CoeffExpr operator-(const CoeffExpr &a)
{
    if (a->is_const()) {
        return constant(-a->value());
    }
    if (a->kind() == NodeKind::Neg) {
        return a->lhs();
    }
    return NodeFactory::unary(NodeKind::Neg, a);
}

inline CoeffExpr operator+(const CoeffExpr &a, const CoeffExpr &b)
{
    if (a->is_zero()) {
        return b;
    }
    if (b->is_zero()) {
        return a;
    }
    if (a->is_const() && b->is_const()) {
        return constant(a->value() + b->value());
    }
    return NodeFactory::binary(NodeKind::Add, a, b);
}

inline CoeffExpr operator-(const CoeffExpr &a, const CoeffExpr &b)
{
    if (a == b) {
        return zero_expr();
    }
    return a + (-b);
}

inline CoeffExpr operator*(const CoeffExpr &a, const CoeffExpr &b)
{
    if (a->is_zero() || b->is_zero()) {
        return zero_expr();
    }
    if (a->is_one()) {
        return b;
    }
    if (b->is_one()) {
        return a;
    }
    if (a->is_const() && b->is_const()) {
        return constant(a->value() * b->value());
    }
    if (a->is_const() && a->value() == cplx(-1, 0)) {
        return -b;
    }
    if (b->is_const() && b->value() == cplx(-1, 0)) {
        return -a;
    }
    // keep constants on the left
    if (b->is_const()) {
        return NodeFactory::binary(NodeKind::Mul, b, a);
    }
    return NodeFactory::binary(NodeKind::Mul, a, b);
}

inline CoeffExpr operator/(const CoeffExpr &a, const CoeffExpr &b)
{
    if (b->is_zero()) {
        throw OnDivisor("division by the constant zero");
    }
    if (a->is_zero()) {
        return zero_expr();
    }
    if (b->is_one()) {
        return a;
    }
    if (a->is_const() && b->is_const()) {
        return constant(a->value() / b->value());
    }
    if (b->is_const()) {
        return constant(1.0 / b->value()) * a;
    }
    return NodeFactory::binary(NodeKind::Div, a, b);
}

inline CoeffExpr operator*(cplx s, const CoeffExpr &a)
{
    return constant(s) * a;
}

inline CoeffExpr operator+(const CoeffExpr &a, cplx s)
{
    return a + constant(s);
}

/// Balanced sum of the terms (keeps DAG depth logarithmic in the term count).
inline CoeffExpr sum(std::vector<CoeffExpr> terms)
{
    std::erase_if(terms, [](const CoeffExpr &t) { return t->is_zero(); });
    if (terms.empty()) {
        return zero_expr();
    }
    while (terms.size() > 1) {
        std::vector<CoeffExpr> next;
        next.reserve((terms.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < terms.size(); i += 2) {
            next.push_back(terms[i] + terms[i + 1]);
        }
        if (terms.size() % 2 == 1) {
            next.push_back(terms.back());
        }
        terms = std::move(next);
    }
    return terms.front();
}

CoeffExpr derivative(const CoeffExpr &e, const MultiIndex &beta);

namespace detail
{

// One differentiation step on the node itself; children go through derivative().
inline CoeffExpr raw_differentiate(const CoeffExpr &e, int j)
{
    const MultiIndex ej = MultiIndex::unit(j);
    switch (e->kind()) {
    case NodeKind::Const:
        return zero_expr();
    case NodeKind::Var:
        return e->var() == j ? one_expr() : zero_expr();
    case NodeKind::Theta: {
        const ThetaArgs &t = e->theta();
        if (!t.A) {
            return theta_node(t.z0, t.deriv + ej, t.ch, t.scale);
        }
        CoeffExpr out = zero_expr();
        for (int i = 1; i <= 2; ++i) {
            const cplx a = (*t.A)(i - 1, j - 1);
            if (a != cplx(0, 0)) {
                out = out + a * theta_node(t.z0, t.deriv + MultiIndex::unit(i), t.ch, t.scale, t.A);
            }
        }
        return out;
    }
    case NodeKind::ExpLin:
        return e->lin()(j - 1) * e;
    case NodeKind::Add:
        return derivative(e->lhs(), ej) + derivative(e->rhs(), ej);
    case NodeKind::Neg:
        return -derivative(e->lhs(), ej);
    case NodeKind::Mul:
        return derivative(e->lhs(), ej) * e->rhs() + e->lhs() * derivative(e->rhs(), ej);
    case NodeKind::Div:
        // (a/b)' = (a' - (a/b) b') / b
        return (derivative(e->lhs(), ej) - e * derivative(e->rhs(), ej)) / e->rhs();
    }
    return zero_expr();
}

} // namespace detail

/// Exact partial derivative d^beta e / dx^beta, memoized on the node.
inline CoeffExpr derivative(const CoeffExpr &e, const MultiIndex &beta)
{
    if (beta.is_zero()) {
        return e;
    }
    if (e->is_const()) {
        return zero_expr();
    }
    std::lock_guard lock(expr_mutex());
    if (auto origin = e->origin_.lock()) {
        return derivative(origin, e->origin_order_ + beta);
    }
    if (auto it = e->derivs_.find(beta); it != e->derivs_.end()) {
        return it->second;
    }
    const int j = beta.d2() > 0 ? 2 : 1;
    const MultiIndex ej = MultiIndex::unit(j);
    const CoeffExpr prev = derivative(e, beta - ej);
    const auto mark = node_counter().load();
    CoeffExpr result = detail::raw_differentiate(prev, j);
    // Only freshly created nodes get a provenance link.
    if (result->id() > mark && !result->is_const() && result->origin_.expired()) {
        result->origin_ = e;
        result->origin_order_ = beta;
    }
    e->derivs_.emplace(beta, result);
    return result;
}

inline CoeffExpr differentiate(const CoeffExpr &e, int j)
{
    return derivative(e, MultiIndex::unit(j));
}

/// Number of distinct nodes reachable from the roots.
inline std::size_t dag_size(const std::vector<CoeffExpr> &roots)
{
    std::unordered_map<const Node *, bool> seen;
    std::vector<const Node *> stack;
    for (const auto &r : roots) {
        stack.push_back(r.get());
    }
    while (!stack.empty()) {
        const Node *n = stack.back();
        stack.pop_back();
        if (!n || seen.count(n)) {
            continue;
        }
        seen.emplace(n, true);
        stack.push_back(n->lhs().get());
        stack.push_back(n->rhs().get());
    }
    return seen.size();
}

struct EvalOptions {
    double theta_eps = 1e-14;
    // |denominator| below this fraction of max(1, |numerator|) raises OnDivisor
    double division_guard = 1e-13;
};

/// Evaluates expressions at one point x, sharing work across calls.
class Evaluator
{
public:
    Evaluator(const RiemannMatrix &omega, const Vec2 &x, EvalOptions opts = {}) : omega_(omega), x_(x), opts_(opts)
    {
    }

    const Vec2 &x() const noexcept
    {
        return x_;
    }
    const RiemannMatrix &omega() const noexcept
    {
        return omega_;
    }

    cplx operator()(const CoeffExpr &e)
    {
        // The memo is keyed by address, so evaluated roots are kept alive.
        if (!e->is_const()) {
            roots_.push_back(e);
        }
        return eval(e.get());
    }

private:
    // Theta values are cached as jets per (point, scale, characteristic).
    struct ThetaKey {
        std::uint64_t words[9];
        bool operator==(const ThetaKey &o) const
        {
            return std::memcmp(words, o.words, sizeof(words)) == 0;
        }
    };
    struct ThetaKeyHash {
        std::size_t operator()(const ThetaKey &k) const
        {
            std::size_t h = 1469598103934665603ull;
            for (auto w : k.words) {
                h = (h ^ w) * 1099511628211ull;
            }
            return h;
        }
    };
    struct Jet {
        int order = -1;
        std::vector<cplx> values;
    };

    const RiemannMatrix &scaled(int s)
    {
        if (s == 1) {
            return omega_;
        }
        auto it = scaled_.find(s);
        if (it == scaled_.end()) {
            it = scaled_.emplace(s, omega_.scaled(s)).first;
        }
        return it->second;
    }

    static std::uint64_t pack(const Rational &r)
    {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(r.num)) << 32) |
               static_cast<std::uint32_t>(r.den);
    }

    cplx eval_theta(const ThetaArgs &t)
    {
        Vec2 w = t.z0;
        if (t.A) {
            w += *t.A * x_;
        } else {
            w += x_;
        }
        ThetaKey key{};
        const double parts[4] = {w(0).real(), w(0).imag(), w(1).real(), w(1).imag()};
        std::memcpy(key.words, parts, sizeof(parts));
        key.words[4] = static_cast<std::uint64_t>(t.scale);
        key.words[5] = pack(t.ch.a[0]);
        key.words[6] = pack(t.ch.a[1]);
        key.words[7] = pack(t.ch.b[0]);
        key.words[8] = pack(t.ch.b[1]);
        Jet &jet = theta_cache_[key];
        const int need = t.deriv.order();
        if (need > jet.order) {
            jet.order = std::min(std::max(need, 4), MultiIndex::max_order);
            jet.values = theta_jet(w, scaled(t.scale), t.ch, jet.order, opts_.theta_eps);
        }
        return jet.values[jet_index(t.deriv)];
    }

    cplx eval(const Node *n)
    {
        if (n->kind() == NodeKind::Const) {
            return n->value();
        }
        if (auto it = memo_.find(n); it != memo_.end()) {
            return it->second;
        }
        cplx v{0, 0};
        switch (n->kind()) {
        case NodeKind::Const:
            v = n->value();
            break;
        case NodeKind::Var:
            v = x_(n->var() - 1);
            break;
        case NodeKind::Theta:
            v = eval_theta(n->theta());
            break;
        case NodeKind::ExpLin:
            v = std::exp(n->lin()(0) * x_(0) + n->lin()(1) * x_(1) + n->value());
            break;
        case NodeKind::Add:
            v = eval(n->lhs().get()) + eval(n->rhs().get());
            break;
        case NodeKind::Neg:
            v = -eval(n->lhs().get());
            break;
        case NodeKind::Mul:
            v = eval(n->lhs().get()) * eval(n->rhs().get());
            break;
        case NodeKind::Div: {
            const cplx num = eval(n->lhs().get());
            const cplx den = eval(n->rhs().get());
            if (std::abs(den) < opts_.division_guard * std::max(1.0, std::abs(num))) {
                throw OnDivisor("denominator vanishes at x = (" + std::to_string(x_(0).real()) + "," +
                                std::to_string(x_(1).real()) + ")");
            }
            v = num / den;
            break;
        }
        }
        memo_.emplace(n, v);
        return v;
    }

    RiemannMatrix omega_;
    Vec2 x_;
    EvalOptions opts_;
    std::vector<CoeffExpr> roots_;
    std::unordered_map<const Node *, cplx> memo_;
    std::unordered_map<ThetaKey, Jet, ThetaKeyHash> theta_cache_;
    std::map<int, RiemannMatrix> scaled_;
};

/// One-shot evaluation of e at x.
inline cplx evaluate(const CoeffExpr &e, const RiemannMatrix &omega, const Vec2 &x, EvalOptions opts = {})
{
    Evaluator ev(omega, x, opts);
    return ev(e);
}

} // namespace nakring

#endif
