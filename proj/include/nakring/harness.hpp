#ifndef NAKRING_HARNESS_HPP
#define NAKRING_HARNESS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "bamodule.hpp"
#include "nakayashiki.hpp"
#include "serialize.hpp"

namespace nakring
{

inline constexpr const char *library_version = "1.0.0";

/// Names and default tolerances of the verified identities, in report order.
struct IdentityDefault {
    const char *name;
    double tolerance;
};

inline const std::vector<IdentityDefault> &identity_defaults()
{
    static const std::vector<IdentityDefault> defaults{
        {"theta_quasi_periodicity", 1e-10},
        {"level_derivative_identity", 1e-8},
        {"divisor_intersection_count", 1e-11},
        {"mc_dimension", 1e-3},
        {"freeness_rank", 0.5},
        {"second_derivative_identity", 1e-8},
        {"eigen_relations", 1e-7},
        {"ring_commutativity", 1e-7},
        {"commutator_derivation", 1e-6},
        {"alpha_identity", 1e-8},
        {"generator_independence", 0.5},
        {"basis_change_conjugation", 1e-6},
        {"determinism", 0.5}};
    return defaults;
}

inline bool is_identity_name(const std::string &name)
{
    return std::any_of(identity_defaults().begin(), identity_defaults().end(),
                       [&](const IdentityDefault &s) { return name == s.name; });
}

struct RunConfig {
    Mat2 omega = default_omega();
    std::uint64_t seed = 20240601;
    std::optional<Vec2> c;
    std::optional<Vec2> c_prime;
    std::optional<Vec2> c_second;
    int samples = 50;
    int holdout = 20;
    double x_radius = 0.1;
    // replaces every default tolerance when set
    std::optional<double> tolerance;
    std::map<std::string, double> tolerance_overrides;
    int max_retries = 16;
    std::string ring_out;
    std::string report_out;

    static Mat2 default_omega()
    {
        Mat2 m;
        m << cplx(0, 1.0), cplx(0, 0.3), cplx(0, 0.3), cplx(0, 1.2);
        return m;
    }

    double tolerance_for(const std::string &name) const
    {
        if (auto it = tolerance_overrides.find(name); it != tolerance_overrides.end()) {
            return it->second;
        }
        if (tolerance) {
            return *tolerance;
        }
        for (const auto &s : identity_defaults()) {
            if (name == s.name) {
                return s.tolerance;
            }
        }
        throw InvalidArgument("unknown identity " + name);
    }
};

inline RunConfig run_config_from_json(const json &j)
{
    if (!j.is_object()) {
        throw InvalidArgument("configuration must be a JSON object");
    }
    static const std::set<std::string> known{"omega",     "seed",         "c",
                                             "c_prime",   "c_second",     "samples",
                                             "holdout",   "x_radius",     "tolerance",
                                             "tolerances", "max_retries", "ring_out",
                                             "report_out"};
    for (const auto &[k, v] : j.items()) {
        if (!known.count(k)) {
            throw InvalidArgument("unknown configuration key '" + k + "'");
        }
    }
    RunConfig cfg;
    try {
        if (j.contains("omega")) {
            cfg.omega = mat2_from_json(j.at("omega"));
        }
        if (j.contains("seed")) {
            cfg.seed = j.at("seed").get<std::uint64_t>();
        }
        if (j.contains("c")) {
            cfg.c = vec2_from_json(j.at("c"));
        }
        if (j.contains("c_prime")) {
            cfg.c_prime = vec2_from_json(j.at("c_prime"));
        }
        if (j.contains("c_second")) {
            cfg.c_second = vec2_from_json(j.at("c_second"));
        }
        if (j.contains("samples")) {
            cfg.samples = j.at("samples").get<int>();
        }
        if (j.contains("holdout")) {
            cfg.holdout = j.at("holdout").get<int>();
        }
        if (j.contains("x_radius")) {
            cfg.x_radius = j.at("x_radius").get<double>();
        }
        if (j.contains("tolerance")) {
            cfg.tolerance = j.at("tolerance").get<double>();
        }
        if (j.contains("tolerances")) {
            for (const auto &[k, v] : j.at("tolerances").items()) {
                if (!is_identity_name(k)) {
                    throw InvalidArgument("unknown identity '" + k + "' in tolerances");
                }
                cfg.tolerance_overrides[k] = v.get<double>();
            }
        }
        if (j.contains("max_retries")) {
            cfg.max_retries = j.at("max_retries").get<int>();
        }
        if (j.contains("ring_out")) {
            cfg.ring_out = j.at("ring_out").get<std::string>();
        }
        if (j.contains("report_out")) {
            cfg.report_out = j.at("report_out").get<std::string>();
        }
    } catch (const json::exception &e) {
        throw InvalidArgument(std::string("malformed configuration: ") + e.what());
    }
    if (cfg.samples < 1 || cfg.holdout < 1 || cfg.max_retries < 0 || !(cfg.x_radius > 0) || cfg.x_radius > 0.5) {
        throw InvalidArgument("samples, holdout and max_retries must be positive and 0 < x_radius <= 0.5");
    }
    if (cfg.tolerance && !(*cfg.tolerance >= 0)) {
        throw InvalidArgument("tolerance must be nonnegative");
    }
    for (const auto &[k, v] : cfg.tolerance_overrides) {
        if (!(v >= 0)) {
            throw InvalidArgument("tolerance for " + k + " must be nonnegative");
        }
    }
    RiemannMatrix check(cfg.omega); // validates Omega
    (void)check;
    return cfg;
}

inline json to_json_value(const RunConfig &cfg)
{
    json j = {{"omega", to_json_value(cfg.omega)},
              {"seed", cfg.seed},
              {"samples", cfg.samples},
              {"holdout", cfg.holdout},
              {"x_radius", cfg.x_radius},
              {"max_retries", cfg.max_retries}};
    if (cfg.c) {
        j["c"] = to_json_value(*cfg.c);
    }
    if (cfg.c_prime) {
        j["c_prime"] = to_json_value(*cfg.c_prime);
    }
    if (cfg.c_second) {
        j["c_second"] = to_json_value(*cfg.c_second);
    }
    if (cfg.tolerance) {
        j["tolerance"] = *cfg.tolerance;
    }
    if (!cfg.tolerance_overrides.empty()) {
        j["tolerances"] = cfg.tolerance_overrides;
    }
    return j;
}

/// Independent stream seed for a named stage.
inline std::uint64_t derive_seed(std::uint64_t seed, const std::string &tag)
{
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : tag) {
        h = (h ^ ch) * 1099511628211ull;
    }
    // splitmix64 finalizer
    std::uint64_t z = seed + h + 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct ResidualEntry {
    double residual = 0;
    int samples = 0;
    double tolerance = 0;
    bool pass = false;
    json detail = json::object();
};

struct ResidualReport {
    std::vector<std::pair<std::string, ResidualEntry>> entries;
    json environment;
    json config;
    json resampling = json::array();

    bool all_pass() const
    {
        return std::all_of(entries.begin(), entries.end(), [](const auto &e) { return e.second.pass; });
    }
    const ResidualEntry *find(const std::string &name) const
    {
        for (const auto &[n, e] : entries) {
            if (n == name) {
                return &e;
            }
        }
        return nullptr;
    }
};

/// JSON doubles cannot hold inf or nan; those become strings.
inline json number_or_string(double v)
{
    if (std::isfinite(v)) {
        return v;
    }
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline json to_json_value(const ResidualReport &r)
{
    json ids = json::object();
    json order = json::array();
    for (const auto &[name, e] : r.entries) {
        ids[name] = {{"residual", number_or_string(e.residual)},
                     {"samples", e.samples},
                     {"tolerance", number_or_string(e.tolerance)},
                     {"pass", e.pass},
                     {"detail", e.detail}};
        order.push_back(name);
    }
    return {{"all_pass", r.all_pass()}, {"order", order},      {"identities", ids},
            {"config", r.config},       {"resampling", r.resampling}, {"environment", r.environment}};
}

inline json environment_fingerprint()
{
    return {{"library", std::string("nakring ") + library_version},
            {"compiler", __VERSION__},
            {"cplusplus", static_cast<long>(__cplusplus)},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"double_epsilon", std::numeric_limits<double>::epsilon()},
            {"pointer_bits", static_cast<int>(8 * sizeof(void *))}};
}

/// Everything the pipeline builds before verification.
struct Built {
    SpectralConfig cfg;
    SpectralConfig cfg2; // same Omega and c, second shift c''
    OperatorRing ring;
    json resampling = json::array();
};

/// Draws (c, c', c'') and builds both spectral configurations and the ring,
/// redrawing on genericity failures up to max_retries times.
inline Built build_all(const RunConfig &rc, const std::function<void(const std::string &)> &log = {})
{
    const RiemannMatrix omega(rc.omega);
    NakOptions opts;
    opts.x_radius = rc.x_radius;
    opts.alpha_holdout_points = rc.holdout;
    std::mt19937_64 rng(derive_seed(rc.seed, "parameters"));
    json resampling = json::array();
    const bool explicit_all = rc.c && rc.c_prime && rc.c_second;
    for (int attempt = 0; attempt <= rc.max_retries; ++attempt) {
        // draw all three every attempt so each attempt is reproducible on its own
        const Vec2 c_draw = random_cell_point(omega, rng);
        const Vec2 cp_draw = random_cell_point(omega, rng);
        const Vec2 cpp_draw = random_cell_point(omega, rng);
        const Vec2 c = rc.c.value_or(c_draw);
        const Vec2 cp = rc.c_prime.value_or(cp_draw);
        const Vec2 cpp = rc.c_second.value_or(cpp_draw);
        const std::uint64_t s = derive_seed(rc.seed, "attempt" + std::to_string(attempt));
        try {
            if (lattice_distance(cp, cpp, omega) < 1e-6) {
                throw Degenerate("c' and c'' coincide modulo the lattice");
            }
            const BAParams p1(omega, c, cp);
            const BAParams p2(omega, c, cpp);
            SpectralConfig cfg = make_spectral_config(p1, s, opts);
            SpectralConfig cfg2 = make_spectral_config(p2, derive_seed(s, "second"), opts);
            const double spread = basis_change_spread(change_of_basis(cfg, cfg2), omega, opts.x_radius);
            if (spread > opts.max_basis_spread) {
                throw IllConditioned("basis change multiplier varies by " + std::to_string(spread) +
                                     " over the x-polydisc");
            }
            OperatorRing ring = build_ring(cfg, true);
            return {std::move(cfg), std::move(cfg2), std::move(ring), resampling};
        } catch (const Error &e) {
            if (e.error_class() != ErrorClass::genericity || explicit_all) {
                throw;
            }
            resampling.push_back({{"attempt", attempt}, {"reason", e.what()}});
            if (log) {
                log("resampling parameters (attempt " + std::to_string(attempt) + "): " + e.what());
            }
        }
    }
    throw DivisorHit("no generic parameters after " + std::to_string(rc.max_retries) + " retries");
}

namespace detail
{

// Running maximum of per-sample relative residuals.
struct RelMax {
    double value = 0;
    int count = 0;
    void add(cplx lhs, cplx rhs, double floor = 0)
    {
        const double scale = std::max({std::abs(lhs), std::abs(rhs), floor});
        value = std::max(value, scale > 0 ? std::abs(lhs - rhs) / scale : 0.0);
        ++count;
    }
    void add(double rel)
    {
        value = std::max(value, rel);
        ++count;
    }
};

inline double relative_commutator(const MatDiffOp &A, const MatDiffOp &B, const RiemannMatrix &om,
                                  const std::vector<Vec2> &xs)
{
    return compare_sampled(compose(A, B), compose(B, A), om, xs).relative();
}

inline double relative_difference(const MatDiffOp &A, const MatDiffOp &B, const RiemannMatrix &om,
                                   const std::vector<Vec2> &xs)
{
    return compare_sampled(A, B, om, xs).relative();
}

inline std::vector<Vec2> x_samples(std::mt19937_64 &rng, int n, double radius)
{
    std::vector<Vec2> xs;
    for (int i = 0; i < n; ++i) {
        xs.push_back(random_polydisc(rng, radius));
    }
    return xs;
}

inline Rational random_rational(std::mt19937_64 &rng)
{
    const auto den = static_cast<std::int64_t>(1 + rng() % 4);
    const auto num = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(2 * den + 1)) - den;
    return Rational(num, den);
}

// Largest relative eigen-relation residual of op on (psi, psi_{c'}), with
// rhs(z, x) returning the expected pair.
template <typename Rhs>
double eigen_residual(const MatDiffOp &op, const BAParams &p, std::mt19937_64 &rng, int samples, double radius,
                      double min_modulus, Rhs &&rhs)
{
    RelMax acc;
    for (int s = 0; s < samples; ++s) {
        const Vec2 z = random_generic_z(p.omega, rng, min_modulus);
        const Vec2 x = random_polydisc(rng, radius);
        const std::array<CoeffExpr, 2> f{psi_expr(p, z), psi_cprime_expr(p, z)};
        Evaluator ev(p.omega, x);
        const auto lhs = apply(op, f, ev);
        const std::array<cplx, 2> r = rhs(z, x, ev, f);
        const double scale = std::max({std::abs(lhs[0]), std::abs(lhs[1]), std::abs(r[0]), std::abs(r[1])});
        acc.add(std::max(std::abs(lhs[0] - r[0]), std::abs(lhs[1] - r[1])) / scale);
    }
    return acc.value;
}

} // namespace detail

/// Computes the selected identities (all when `only` is empty), except determinism.
inline ResidualReport verify_identities(const RunConfig &rc, const Built &b, const std::set<std::string> &only = {})
{
    const auto want = [&](const std::string &n) { return only.empty() || only.count(n); };
    const SpectralConfig &cfg = b.cfg;
    const BAParams &p = cfg.params;
    const RiemannMatrix &om = p.omega;
    const int N = rc.samples;
    const double R = rc.x_radius;
    const double mm = cfg.opts.min_modulus;
    ResidualReport report;
    report.config = to_json_value(rc);
    report.environment = environment_fingerprint();
    report.resampling = b.resampling;
    const auto record = [&](const std::string &name, double residual, int samples, json detail) {
        ResidualEntry e;
        e.residual = residual;
        e.samples = samples;
        e.tolerance = rc.tolerance_for(name);
        e.pass = residual < e.tolerance;
        e.detail = std::move(detail);
        report.entries.emplace_back(name, std::move(e));
    };
    const auto rng_for = [&](const std::string &name) { return std::mt19937_64(derive_seed(rc.seed, name)); };

    if (want("theta_quasi_periodicity")) {
        auto rng = rng_for("theta_quasi_periodicity");
        detail::RelMax integer_law, period_law;
        const int n = std::max(100, N);
        for (int s = 0; s < n; ++s) {
            const Vec2 z = random_cell_point(om, rng, -0.5, 0.5);
            Characteristic ch;
            ch.a = {detail::random_rational(rng), detail::random_rational(rng)};
            ch.b = {detail::random_rational(rng), detail::random_rational(rng)};
            const RVec2 m(static_cast<double>(static_cast<int>(rng() % 5) - 2),
                          static_cast<double>(static_cast<int>(rng() % 5) - 2));
            const Vec2 mc = m.cast<cplx>();
            const cplx th = theta_eval(z, om, ch);
            const cplx lhs1 = theta_eval(z + mc, om, ch);
            const cplx rhs1 = std::exp(2.0 * pi * I * ch.a_vec().dot(m)) * th;
            integer_law.add(lhs1, rhs1, om.theta_scale(z));
            const Vec2 om_m = om.omega() * mc;
            const cplx lhs2 = theta_eval(z + om_m, om, ch);
            const cplx expo = -2.0 * pi * I * ch.b_vec().dot(m) - pi * I * mc.dot(om_m) - 2.0 * pi * I * mc.dot(z);
            // Eigen's dot conjugates its first argument; m is real so mc.dot is the plain sum
            const cplx rhs2 = std::exp(expo) * th;
            period_law.add(lhs2, rhs2, om.theta_scale(z + om_m));
        }
        record("theta_quasi_periodicity", std::max(integer_law.value, period_law.value), n,
               {{"integer_shift", integer_law.value}, {"period_shift", period_law.value}});
    }

    if (want("level_derivative_identity")) {
        auto rng = rng_for("level_derivative_identity");
        detail::RelMax acc;
        for (int s = 0; s < N; ++s) {
            const Vec2 z = random_generic_z(om, rng, mm);
            const Vec2 x = random_polydisc(rng, R);
            for (int n = 1; n <= 2; ++n) {
                for (const auto &a : level_characteristics(n)) {
                    for (int j = 1; j <= 2; ++j) {
                        const auto r = level_derivative_residual(p, n, a, j, z, x);
                        acc.add(r.scale > 0 ? r.abs / r.scale : r.abs);
                    }
                }
            }
        }
        record("level_derivative_identity", acc.value, N, {{"levels", json::array({1, 2})}});
    }

    if (want("divisor_intersection_count")) {
        auto rng = rng_for("divisor_intersection_count");
        double worst = 0;
        json draws = json::array();
        int done = 0;
        for (int attempt = 0; done < 5 && attempt < 5 + rc.max_retries; ++attempt) {
            const Vec2 cp = random_cell_point(om, rng);
            try {
                const auto [q1, q2] = intersect_divisors(om, cp, rng(), cfg.opts.roots);
                worst = std::max({worst, q1.residual, q2.residual});
                draws.push_back({{"c_prime", to_json_value(cp)},
                                 {"classes", 2},
                                 {"residuals", json::array({q1.residual, q2.residual})}});
                ++done;
            } catch (const WrongCount &e) {
                worst = std::numeric_limits<double>::infinity();
                draws.push_back({{"c_prime", to_json_value(cp)}, {"error", e.what()}});
                ++done;
            } catch (const Error &e) {
                if (e.error_class() != ErrorClass::genericity) {
                    throw;
                }
                draws.push_back({{"c_prime", to_json_value(cp)}, {"resampled", e.what()}});
            }
        }
        if (done < 5) {
            worst = std::numeric_limits<double>::infinity();
        }
        record("divisor_intersection_count", worst, done, {{"draws", draws}});
    }

    if (want("mc_dimension")) {
        double worst = 0;
        json per_level = json::array();
        for (int k = 1; k <= 4; ++k) {
            const int n = k * k;
            const int dim = mc_dimension(p, k, 4 * n, derive_seed(rc.seed, "mc_dimension" + std::to_string(k)));
            const RankInfo span = mc_span_rank(p, k, 3 * n + 4, derive_seed(rc.seed, "mc_span" + std::to_string(k)));
            const double gap_ratio = span.tail_ratio(n);
            const bool ok = dim == n && span.rank == n;
            worst = std::max(worst, ok ? gap_ratio : std::numeric_limits<double>::infinity());
            per_level.push_back({{"k", k},
                                 {"rank_random_zx", dim},
                                 {"rank_with_derivative_family", span.rank},
                                 {"sigma_ratio", number_or_string(gap_ratio)}});
        }
        record("mc_dimension", worst, 4, {{"levels", per_level}});
    }

    if (want("freeness_rank")) {
        double deficiency = 0;
        json per_level = json::array();
        for (int k = 1; k <= 4; ++k) {
            const RankInfo r = freeness_rank(p, k, 4 * k * k, derive_seed(rc.seed, "freeness" + std::to_string(k)));
            deficiency += std::abs(r.rank - k * k);
            per_level.push_back({{"k", k}, {"rank", r.rank}, {"expected", k * k}});
        }
        record("freeness_rank", deficiency, 4, {{"levels", per_level}});
    }

    if (want("second_derivative_identity")) {
        auto rng = rng_for("second_derivative_identity");
        detail::RelMax acc;
        for (int s = 0; s < N; ++s) {
            const Vec2 z = random_generic_z(om, rng, mm);
            const Vec2 x = random_polydisc(rng, R);
            for (const auto &[k, j] : std::vector<std::pair<int, int>>{{1, 1}, {1, 2}, {2, 2}}) {
                const auto r = second_derivative_residual(p, k, j, z, x);
                acc.add(r.abs / r.scale);
            }
        }
        record("second_derivative_identity", acc.value, N, json::object());
    }

    if (want("eigen_relations")) {
        auto rng = rng_for("eigen_relations");
        json per_op = json::object();
        double worst = 0;
        for (const std::string idx : {"11", "12", "22"}) {
            const int k = idx[0] - '0', j = idx[1] - '0';
            const double r = detail::eigen_residual(
                b.ring.L(k, j), p, rng, N, R, mm,
                [&](const Vec2 &z, const Vec2 &, Evaluator &ev, const std::array<CoeffExpr, 2> &f) {
                    const cplx lam = spectral_value(idx, z, om);
                    return std::array<cplx, 2>{lam * ev(f[0]), lam * ev(f[1])};
                });
            per_op["L" + idx] = r;
            worst = std::max(worst, r);
        }
        for (int j = 1; j <= 2; ++j) {
            const double r = detail::eigen_residual(
                b.ring.Z(j), p, rng, N, R, mm,
                [&](const Vec2 &z, const Vec2 &x, Evaluator &, const std::array<CoeffExpr, 2> &) {
                    return std::array<cplx, 2>{psi_dz(p, j, z, x), psi_cprime_dz(p, j, z, x)};
                });
            per_op["Z" + std::to_string(j)] = r;
            worst = std::max(worst, r);
        }
        record("eigen_relations", worst, N, per_op);
    }

    if (want("ring_commutativity")) {
        auto rng = rng_for("ring_commutativity");
        const auto xs = detail::x_samples(rng, N, R);
        const std::vector<std::pair<std::string, const MatDiffOp *>> second{
            {"L1", &b.ring.L1}, {"L11", &b.ring.L11}, {"L12", &b.ring.L12}, {"L22", &b.ring.L22}};
        json pairs = json::object();
        double worst2 = 0, worst3 = 0;
        const auto check = [&](const std::string &a, const MatDiffOp &A, const std::string &bn, const MatDiffOp &B,
                               double &worst) {
            const double r = detail::relative_commutator(A, B, om, xs);
            pairs["[" + a + "," + bn + "]"] = r;
            worst = std::max(worst, r);
        };
        for (std::size_t i = 0; i < second.size(); ++i) {
            for (std::size_t j = i + 1; j < second.size(); ++j) {
                check(second[i].first, *second[i].second, second[j].first, *second[j].second, worst2);
            }
        }
        check("Z1", b.ring.Z1, "Z2", b.ring.Z2, worst2);
        check("L1", b.ring.L1, "Z1", b.ring.Z1, worst2);
        check("L1", b.ring.L1, "Z2", b.ring.Z2, worst2);
        std::vector<std::pair<std::string, const MatDiffOp *>> third;
        for (const auto &[k, op] : b.ring.third) {
            third.emplace_back("L" + k, &op);
        }
        for (std::size_t i = 0; i < third.size(); ++i) {
            for (const auto &[n, op] : second) {
                check(third[i].first, *third[i].second, n, *op, worst3);
            }
            for (std::size_t j = i + 1; j < third.size(); ++j) {
                check(third[i].first, *third[i].second, third[j].first, *third[j].second, worst3);
            }
        }
        // third-order commutators get one decade more room
        const double tol = rc.tolerance_for("ring_commutativity");
        const double combined = std::max(worst2, worst3 / 10.0);
        record("ring_commutativity", combined, N,
               {{"second_order_max", worst2},
                {"third_order_max", worst3},
                {"third_order_tolerance", number_or_string(10.0 * tol)},
                {"pairs", pairs}});
    }

    if (want("commutator_derivation")) {
        auto rng = rng_for("commutator_derivation");
        json per_op = json::object();
        double worst = 0;
        for (const auto &[idx, T] : b.ring.third) {
            const double r = detail::eigen_residual(
                T, p, rng, N, R, mm, [&](const Vec2 &z, const Vec2 &, Evaluator &ev, const std::array<CoeffExpr, 2> &f) {
                    const cplx lam = spectral_value(idx, z, om);
                    return std::array<cplx, 2>{lam * ev(f[0]), lam * ev(f[1])};
                });
            per_op["[L" + idx.substr(0, 2) + ",Z" + idx.substr(2) + "]"] = r;
            worst = std::max(worst, r);
        }
        // the same third derivative reached along a different commutator
        const auto xs = truncation_samples(cfg.seed, R);
        auto rng_x = rng_for("commutator_paths");
        const auto check_xs = detail::x_samples(rng_x, N, R);
        const MatDiffOp alt112 = third_order(b.ring.L12, b.ring.Z1, om, xs, cfg.opts.truncation_tol);
        const MatDiffOp alt122 = third_order(b.ring.L22, b.ring.Z1, om, xs, cfg.opts.truncation_tol);
        const double m1 = detail::relative_difference(alt112, b.ring.third.at("112"), om, check_xs);
        const double m2 = detail::relative_difference(alt122, b.ring.third.at("122"), om, check_xs);
        per_op["[L12,Z1]-[L11,Z2]"] = m1;
        per_op["[L22,Z1]-[L12,Z2]"] = m2;
        worst = std::max({worst, m1, m2});
        record("commutator_derivation", worst, N, per_op);
    }

    if (want("alpha_identity")) {
        const Alphas &al = cfg.alphas;
        // theta is even, so -c' must give the same alphas from the same samples
        const Alphas neg = solve_alphas(om, -p.c_prime, cfg.seed ^ 0x5eedULL, cfg.opts);
        const double scale = std::max({std::abs(al.a11), std::abs(al.a12), std::abs(al.a22), std::abs(al.a)});
        const double sym = std::max({std::abs(neg.a11 - al.a11), std::abs(neg.a12 - al.a12),
                                     std::abs(neg.a22 - al.a22), std::abs(neg.a - al.a)}) /
                           scale;
        record("alpha_identity", std::max(al.holdout_residual, sym), cfg.opts.alpha_holdout_points,
               {{"holdout_residual", al.holdout_residual},
                {"condition", al.condition},
                {"sign_symmetry", sym},
                {"alphas", {to_json_value(al.a11), to_json_value(al.a12), to_json_value(al.a22), to_json_value(al.a)}}});
    }

    if (want("generator_independence")) {
        auto rng = rng_for("generator_independence");
        const int n = std::max(36, N);
        MatXc m(n, 9);
        for (int r = 0; r < n; ++r) {
            const auto f = generator_functions(random_generic_z(om, rng, mm), om);
            for (int c = 0; c < 9; ++c) {
                m(r, c) = f[static_cast<std::size_t>(c)];
            }
        }
        const RankInfo info = numerical_rank(m);
        record("generator_independence", std::abs(info.rank - 9), n,
               {{"rank", info.rank}, {"sigma_min_over_max", info.singular_values.back() / info.singular_values.front()}});
    }

    if (want("basis_change_conjugation")) {
        auto rng = rng_for("basis_change_conjugation");
        const auto xs = detail::x_samples(rng, N, R);
        const BasisChange bc = change_of_basis(cfg, b.cfg2);
        const OperatorRing ring2 = build_ring(b.cfg2, false);
        json d = json::object();
        double worst = 0;
        const auto note = [&](const std::string &k, double v) {
            d[k] = v;
            worst = std::max(worst, v);
        };
        // m is far from 1 when psi_{c'} and psi_{c''} differ in size, so the
        // inverse is judged against |A| |A^-1|
        const double norm_product = op_norm_sampled(bc.A, om, xs) * op_norm_sampled(bc.A_inv, om, xs);
        note("A*Ainv-I", op_norm_sampled(compose(bc.A, bc.A_inv) - MatDiffOp::identity(), om, xs) / norm_product);
        note("Ainv*A-I", op_norm_sampled(compose(bc.A_inv, bc.A) - MatDiffOp::identity(), om, xs) / norm_product);
        for (const auto &[name, mine, theirs] :
             std::vector<std::tuple<std::string, const MatDiffOp *, const MatDiffOp *>>{
                 {"L11", &b.ring.L11, &ring2.L11},
                 {"L12", &b.ring.L12, &ring2.L12},
                 {"L22", &b.ring.L22, &ring2.L22},
                 {"Z1", &b.ring.Z1, &ring2.Z1},
                 {"Z2", &b.ring.Z2, &ring2.Z2}}) {
            note("conjugate_" + name, detail::relative_difference(compose(compose(bc.A, *mine), bc.A_inv), *theirs, om, xs));
        }
        // A (psi, psi_{c'}) = (psi, psi_{c''})
        detail::RelMax act, round_trip;
        for (int s = 0; s < N; ++s) {
            const Vec2 z = random_generic_z(om, rng, mm);
            const Vec2 x = random_polydisc(rng, R);
            Evaluator ev(om, x);
            const std::array<CoeffExpr, 2> f{psi_expr(p, z), psi_cprime_expr(p, z)};
            const auto lhs = apply(bc.A, f, ev);
            act.add(lhs[0], ev(f[0]));
            act.add(lhs[1], ev(psi_cprime_expr(b.cfg2.params, z)));
            const auto back = apply(compose(bc.A_inv, bc.A), f, ev);
            round_trip.add(back[0], ev(f[0]));
            round_trip.add(back[1], ev(f[1]));
        }
        note("A_on_basis", act.value);
        note("Ainv_A_on_basis", round_trip.value);
        double dual = 0;
        for (int s = 0; s < 3; ++s) {
            dual = std::max(dual, basis_change_dual_check(cfg, b.cfg2, bc.forward, xs[static_cast<std::size_t>(s)],
                                                          derive_seed(rc.seed, "dual" + std::to_string(s))));
        }
        note("level2_coordinates", dual);
        d["c_second"] = to_json_value(b.cfg2.params.c_prime);
        record("basis_change_conjugation", worst, N, d);
    }
    return report;
}

/// Canonical text of a built ring together with its configuration.
inline std::string build_text(const Built &b)
{
    json j = {{"config", to_json_value(b.cfg)},
              {"second_config", to_json_value(b.cfg2)},
              {"ring", ring_to_json(b.ring, b.cfg.params.omega)}};
    return j.dump();
}

struct PipelineResult {
    Built built;
    ResidualReport report;
};

/// Build, verify and, when selected, repeat everything to check bitwise determinism.
inline PipelineResult run_pipeline(const RunConfig &rc, const std::set<std::string> &only = {},
                                   const std::function<void(const std::string &)> &log = {})
{
    for (const auto &n : only) {
        if (!is_identity_name(n)) {
            throw InvalidArgument("unknown identity '" + n + "'");
        }
    }
    PipelineResult out{build_all(rc, log), {}};
    out.report = verify_identities(rc, out.built, only);
    if (only.empty() || only.count("determinism")) {
        const Built again = build_all(rc);
        const ResidualReport report_again = verify_identities(rc, again, only);
        const bool same_ring = build_text(again) == build_text(out.built);
        const bool same_report = to_json_value(report_again).dump() == to_json_value(out.report).dump();
        ResidualEntry e;
        e.residual = (same_ring ? 0 : 1) + (same_report ? 0 : 1);
        e.samples = 2;
        e.tolerance = rc.tolerance_for("determinism");
        e.pass = e.residual < e.tolerance;
        e.detail = {{"ring_identical", same_ring}, {"report_identical", same_report}};
        out.report.entries.emplace_back("determinism", std::move(e));
    }
    return out;
}

} // namespace nakring

#endif
