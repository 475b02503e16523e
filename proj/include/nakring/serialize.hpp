#ifndef NAKRING_SERIALIZE_HPP
#define NAKRING_SERIALIZE_HPP

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nakayashiki.hpp"

namespace nakring
{

using json = nlohmann::json;

// Complex numbers are [re, im] pairs; vectors and matrices are nested lists of them.

inline json to_json_value(cplx v)
{
    return json::array({v.real(), v.imag()});
}

inline cplx cplx_from_json(const json &j)
{
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw InvalidArgument("expected a complex number [re, im], got " + j.dump());
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

inline json to_json_value(const Vec2 &v)
{
    return json::array({to_json_value(v(0)), to_json_value(v(1))});
}

inline Vec2 vec2_from_json(const json &j)
{
    if (!j.is_array() || j.size() != 2) {
        throw InvalidArgument("expected a complex 2-vector, got " + j.dump());
    }
    return {cplx_from_json(j[0]), cplx_from_json(j[1])};
}

inline json to_json_value(const Mat2 &m)
{
    return json::array({json::array({to_json_value(m(0, 0)), to_json_value(m(0, 1))}),
                        json::array({to_json_value(m(1, 0)), to_json_value(m(1, 1))})});
}

inline Mat2 mat2_from_json(const json &j)
{
    if (!j.is_array() || j.size() != 2 || !j[0].is_array() || j[0].size() != 2 || !j[1].is_array() ||
        j[1].size() != 2) {
        throw InvalidArgument("expected a complex 2x2 matrix, got " + j.dump());
    }
    Mat2 m;
    m << cplx_from_json(j[0][0]), cplx_from_json(j[0][1]), cplx_from_json(j[1][0]), cplx_from_json(j[1][1]);
    return m;
}

inline json to_json_value(const Characteristic &ch)
{
    json out = json::array();
    for (const auto *r : {&ch.a[0], &ch.a[1], &ch.b[0], &ch.b[1]}) {
        out.push_back(json::array({r->num, r->den}));
    }
    return out;
}

inline Characteristic characteristic_from_json(const json &j)
{
    if (!j.is_array() || j.size() != 4) {
        throw InvalidArgument("expected four rationals [num, den], got " + j.dump());
    }
    Characteristic ch;
    Rational *slots[4] = {&ch.a[0], &ch.a[1], &ch.b[0], &ch.b[1]};
    for (std::size_t i = 0; i < 4; ++i) {
        *slots[i] = Rational(j[i].at(0).get<std::int64_t>(), j[i].at(1).get<std::int64_t>());
    }
    return ch;
}

/// Writes expression DAGs into a shared node table. Node ids follow a
/// depth-first post-order from the roots, so equal structures give equal text.
class NodeTable
{
public:
    int add(const CoeffExpr &root)
    {
        std::vector<std::pair<const Node *, bool>> stack{{root.get(), false}};
        while (!stack.empty()) {
            auto [n, expanded] = stack.back();
            stack.pop_back();
            if (ids_.count(n)) {
                continue;
            }
            const bool binary = n->kind() == NodeKind::Add || n->kind() == NodeKind::Mul || n->kind() == NodeKind::Div;
            const bool unary = n->kind() == NodeKind::Neg;
            if (!expanded && (binary || unary)) {
                stack.push_back({n, true});
                if (binary) {
                    stack.push_back({n->rhs().get(), false});
                }
                stack.push_back({n->lhs().get(), false});
                continue;
            }
            ids_[n] = static_cast<int>(nodes_.size());
            nodes_.push_back(encode(n));
        }
        return ids_.at(root.get());
    }

    const json &nodes() const
    {
        return nodes_;
    }

private:
    json encode(const Node *n) const
    {
        switch (n->kind()) {
        case NodeKind::Const:
            return {{"op", "const"}, {"v", to_json_value(n->value())}};
        case NodeKind::Var:
            return {{"op", "var"}, {"j", n->var()}};
        case NodeKind::Theta: {
            const ThetaArgs &t = n->theta();
            json out = {{"op", "theta"},
                        {"ch", to_json_value(t.ch)},
                        {"scale", t.scale},
                        {"z0", to_json_value(t.z0)},
                        {"deriv", json::array({t.deriv.d1(), t.deriv.d2()})}};
            out["A"] = t.A ? to_json_value(*t.A) : json(nullptr);
            return out;
        }
        case NodeKind::ExpLin:
            return {{"op", "explin"}, {"v", to_json_value(n->lin())}, {"w", to_json_value(n->value())}};
        case NodeKind::Add:
            return {{"op", "add"}, {"args", json::array({ids_.at(n->lhs().get()), ids_.at(n->rhs().get())})}};
        case NodeKind::Mul:
            return {{"op", "mul"}, {"args", json::array({ids_.at(n->lhs().get()), ids_.at(n->rhs().get())})}};
        case NodeKind::Div:
            return {{"op", "div"}, {"args", json::array({ids_.at(n->lhs().get()), ids_.at(n->rhs().get())})}};
        case NodeKind::Neg:
            return {{"op", "neg"}, {"args", json::array({ids_.at(n->lhs().get())})}};
        }
        return {};
    }

    std::unordered_map<const Node *, int> ids_;
    json nodes_ = json::array();
};

/// Rebuilds the expressions of a node table, preserving its structure exactly.
inline std::vector<CoeffExpr> nodes_from_json(const json &nodes)
{
    if (!nodes.is_array()) {
        throw InvalidArgument("node table must be a list");
    }
    std::vector<CoeffExpr> out;
    out.reserve(nodes.size());
    const auto child = [&](const json &j, std::size_t k) {
        const auto id = j.at("args").at(k).get<std::size_t>();
        if (id >= out.size()) {
            throw InvalidArgument("node refers to a later node");
        }
        return out[id];
    };
    for (const auto &j : nodes) {
        const std::string op = j.at("op").get<std::string>();
        if (op == "const") {
            const cplx v = cplx_from_json(j.at("v"));
            out.push_back(v == cplx(0, 0) ? zero_expr() : v == cplx(1, 0) ? one_expr() : NodeFactory::constant(v));
        } else if (op == "var") {
            out.push_back(var(j.at("j").get<int>()));
        } else if (op == "theta") {
            std::optional<Mat2> A;
            if (!j.at("A").is_null()) {
                A = mat2_from_json(j.at("A"));
            }
            const MultiIndex d(j.at("deriv").at(0).get<int>(), j.at("deriv").at(1).get<int>());
            out.push_back(theta_node(vec2_from_json(j.at("z0")), d, characteristic_from_json(j.at("ch")),
                                     j.at("scale").get<int>(), A));
        } else if (op == "explin") {
            out.push_back(NodeFactory::exp_lin(vec2_from_json(j.at("v")), cplx_from_json(j.at("w"))));
        } else if (op == "add") {
            out.push_back(NodeFactory::binary(NodeKind::Add, child(j, 0), child(j, 1)));
        } else if (op == "mul") {
            out.push_back(NodeFactory::binary(NodeKind::Mul, child(j, 0), child(j, 1)));
        } else if (op == "div") {
            out.push_back(NodeFactory::binary(NodeKind::Div, child(j, 0), child(j, 1)));
        } else if (op == "neg") {
            out.push_back(NodeFactory::unary(NodeKind::Neg, child(j, 0)));
        } else {
            throw InvalidArgument("unknown node op '" + op + "'");
        }
    }
    return out;
}

/// Entry as a list of {beta, coeff} ordered lexicographically in beta.
inline json to_json_value(const DiffOp &op, NodeTable &table)
{
    json out = json::array();
    for (const auto &[beta, c] : op.terms()) {
        out.push_back({{"beta", json::array({beta.d1(), beta.d2()})}, {"coeff", table.add(c)}});
    }
    return out;
}

inline json to_json_value(const MatDiffOp &op, NodeTable &table)
{
    return json::array({json::array({to_json_value(op(1, 1), table), to_json_value(op(1, 2), table)}),
                        json::array({to_json_value(op(2, 1), table), to_json_value(op(2, 2), table)})});
}

inline DiffOp diffop_from_json(const json &j, const std::vector<CoeffExpr> &nodes)
{
    DiffOp op;
    for (const auto &t : j) {
        const MultiIndex beta(t.at("beta").at(0).get<int>(), t.at("beta").at(1).get<int>());
        const auto id = t.at("coeff").get<std::size_t>();
        if (id >= nodes.size()) {
            throw InvalidArgument("coefficient id out of range");
        }
        op.add_term(beta, nodes[id]);
    }
    return op;
}

inline MatDiffOp matdiffop_from_json(const json &j, const std::vector<CoeffExpr> &nodes)
{
    return {diffop_from_json(j.at(0).at(0), nodes), diffop_from_json(j.at(0).at(1), nodes),
            diffop_from_json(j.at(1).at(0), nodes), diffop_from_json(j.at(1).at(1), nodes)};
}

/// {"omega", "operators": {name: 2x2 entries}, "nodes"}; operator names in ring order.
inline json ring_to_json(const OperatorRing &ring, const RiemannMatrix &omega)
{
    NodeTable table;
    json ops = json::array();
    for (const auto &[name, op] : ring.named()) {
        ops.push_back({{"name", name}, {"entries", to_json_value(*op, table)}});
    }
    return {{"omega", to_json_value(omega.omega())}, {"operators", ops}, {"nodes", table.nodes()}};
}

/// Named operators read back from ring_to_json output.
struct LoadedRing {
    RiemannMatrix omega;
    std::vector<std::pair<std::string, MatDiffOp>> operators;
};

inline LoadedRing ring_from_json(const json &j)
{
    const auto nodes = nodes_from_json(j.at("nodes"));
    LoadedRing out{RiemannMatrix(mat2_from_json(j.at("omega"))), {}};
    for (const auto &op : j.at("operators")) {
        out.operators.emplace_back(op.at("name").get<std::string>(), matdiffop_from_json(op.at("entries"), nodes));
    }
    return out;
}

inline json to_json_value(const DivisorPoint &p)
{
    return {{"which", to_string(p.which)},
            {"z", to_json_value(p.point.z)},
            {"rep", to_json_value(p.point.rep)},
            {"shift", p.point.shift},
            {"residual", p.residual}};
}

inline DivisorPoint divisor_point_from_json(const json &j, const RiemannMatrix &omega)
{
    DivisorPoint p;
    p.point = reduce_mod_lattice(vec2_from_json(j.at("rep")), omega);
    p.point.z = vec2_from_json(j.at("z"));
    p.point.rep = vec2_from_json(j.at("rep"));
    p.point.shift = j.at("shift").get<std::array<long, 4>>();
    p.residual = j.at("residual").get<double>();
    const std::string w = j.at("which").get<std::string>();
    const std::array<DivisorTag, 5> tags{DivisorTag::Delta, DivisorTag::P1, DivisorTag::P2, DivisorTag::Q1,
                                         DivisorTag::Q2};
    bool found = false;
    for (auto t : tags) {
        if (w == to_string(t)) {
            p.which = t;
            found = true;
        }
    }
    if (!found) {
        throw InvalidArgument("unknown divisor tag " + w);
    }
    return p;
}

inline json to_json_value(const NakOptions &o)
{
    return {{"root_tol", o.roots.root_tol},
            {"theta_eps", o.roots.eps},
            {"multistart_grid", o.roots.grid},
            {"max_starts", o.roots.max_starts},
            {"dedup_tol", o.roots.dedup_tol},
            {"max_condition", o.roots.max_condition},
            {"x_radius", o.x_radius},
            {"denominator_floor", o.denominator_floor},
            {"min_modulus", o.min_modulus},
            {"alpha_fit_points", o.alpha_fit_points},
            {"alpha_holdout_points", o.alpha_holdout_points},
            {"alpha_tol", o.alpha_tol},
            {"alpha_max_condition", o.alpha_max_condition},
            {"max_gradient_condition", o.max_gradient_condition},
            {"truncation_tol", o.truncation_tol},
            {"delta_attempts", o.delta_attempts},
            {"max_basis_spread", o.max_basis_spread}};
}

inline json to_json_value(const SpectralConfig &cfg)
{
    const Alphas &a = cfg.alphas;
    return {{"omega", to_json_value(cfg.params.omega.omega())},
            {"c", to_json_value(cfg.params.c)},
            {"c_prime", to_json_value(cfg.params.c_prime)},
            {"delta", to_json_value(cfg.delta)},
            {"p1", to_json_value(cfg.p1)},
            {"p2", to_json_value(cfg.p2)},
            {"q1", to_json_value(cfg.q1)},
            {"q2", to_json_value(cfg.q2)},
            {"alphas",
             {{"a11", to_json_value(a.a11)},
              {"a12", to_json_value(a.a12)},
              {"a22", to_json_value(a.a22)},
              {"a", to_json_value(a.a)},
              {"holdout_residual", a.holdout_residual},
              {"condition", a.condition}}},
            {"seed", cfg.seed},
            {"options", to_json_value(cfg.opts)}};
}

} // namespace nakring

#endif
