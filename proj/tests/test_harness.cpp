#include <set>
#include <string>

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace nakring;
using namespace nakring::testing;

TEST(RunConfig, EmptyObjectGivesDefaults)
{
    const RunConfig rc = run_config_from_json(json::object());
    EXPECT_EQ(rc.omega, RunConfig::default_omega());
    EXPECT_EQ(rc.samples, 50);
    EXPECT_EQ(rc.max_retries, 16);
    EXPECT_DOUBLE_EQ(rc.tolerance_for("eigen_relations"), 1e-7);
}

TEST(RunConfig, ParsesExplicitValues)
{
    const json j = json::parse(R"({
        "omega": [[[0, 1.1], [0, 0.2]], [[0, 0.2], [0, 0.9]]],
        "seed": 5, "samples": 12, "x_radius": 0.05,
        "c": [[0.1, 0.2], [0.3, 0.4]],
        "tolerance": 1e-3, "tolerances": {"determinism": 0.25}
    })");
    const RunConfig rc = run_config_from_json(j);
    EXPECT_EQ(rc.seed, 5u);
    EXPECT_EQ(rc.samples, 12);
    ASSERT_TRUE(rc.c.has_value());
    EXPECT_EQ((*rc.c)(1), cplx(0.3, 0.4));
    EXPECT_DOUBLE_EQ(rc.tolerance_for("second_derivative_identity"), 1e-3);
    EXPECT_DOUBLE_EQ(rc.tolerance_for("determinism"), 0.25);
    // round trip through the echo
    EXPECT_EQ(to_json_value(run_config_from_json(to_json_value(rc))).dump(), to_json_value(rc).dump());
}

TEST(RunConfig, RejectsBadInput)
{
    EXPECT_THROW(run_config_from_json(json::parse(R"({"sedd": 1})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(json::parse(R"({"samples": 0})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(json::parse(R"({"tolerance": -1})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(json::parse(R"({"tolerances": {"nonsense": 1}})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(json::parse(R"({"seed": "abc"})")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(json::parse(R"([1, 2])")), InvalidArgument);
    EXPECT_THROW(run_config_from_json(json::parse(R"({"omega": [[[0, -1], [0, 0]], [[0, 0], [0, 1]]]})")),
                 InvalidOmega);
}

TEST(RunConfig, IdentityListHasThirteenDistinctNames)
{
    std::set<std::string> names;
    for (const auto &s : identity_defaults()) {
        names.insert(s.name);
    }
    EXPECT_EQ(names.size(), 13u);
    EXPECT_TRUE(is_identity_name("ring_commutativity"));
    EXPECT_FALSE(is_identity_name("ring"));
}

TEST(Seeds, StreamsDependOnTagAndSeed)
{
    EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
    EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
    EXPECT_EQ(derive_seed(7, "x"), derive_seed(7, "x"));
}

TEST(Serialization, ComplexValuesRoundTripExactly)
{
    const cplx v(0.1 + 1e-17, -3.0000000000000004);
    EXPECT_EQ(cplx_from_json(json::parse(to_json_value(v).dump())), v);
    EXPECT_THROW(cplx_from_json(json::parse("[1]")), InvalidArgument);
}

TEST(Serialization, RingRoundTripIsByteStable)
{
    const Built &b = default_build();
    const std::string text = ring_to_json(b.ring, b.cfg.params.omega).dump();
    const LoadedRing loaded = ring_from_json(json::parse(text));
    ASSERT_EQ(loaded.operators.size(), b.ring.named().size());
    OperatorRing rebuilt;
    for (const auto &[name, op] : loaded.operators) {
        if (name == "L1") {
            rebuilt.L1 = op;
        } else if (name == "L11") {
            rebuilt.L11 = op;
        } else if (name == "L12") {
            rebuilt.L12 = op;
        } else if (name == "L22") {
            rebuilt.L22 = op;
        } else if (name == "Z1") {
            rebuilt.Z1 = op;
        } else if (name == "Z2") {
            rebuilt.Z2 = op;
        } else {
            rebuilt.third[name.substr(1)] = op;
        }
    }
    EXPECT_EQ(ring_to_json(rebuilt, loaded.omega).dump(), text);
}

TEST(Serialization, LoadedOperatorsEvaluateIdentically)
{
    const Built &b = default_build();
    const LoadedRing loaded = ring_from_json(json::parse(ring_to_json(b.ring, b.cfg.params.omega).dump()));
    const Vec2 x(cplx(0.03, -0.01), cplx(0.02, 0.04));
    Evaluator ev1(b.cfg.params.omega, x), ev2(loaded.omega, x);
    for (const auto &[name, op] : loaded.operators) {
        if (name != "Z1") {
            continue;
        }
        const auto a = b.ring.Z1.coefficients();
        const auto c = op.coefficients();
        ASSERT_EQ(a.size(), c.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(ev1(a[i]), ev2(c[i]));
        }
    }
}

TEST(Serialization, DivisorPointRoundTrip)
{
    const Built &b = default_build();
    const DivisorPoint p = divisor_point_from_json(json::parse(to_json_value(b.cfg.p1).dump()), b.cfg.params.omega);
    EXPECT_EQ(p.z(), b.cfg.p1.z());
    EXPECT_EQ(p.which, DivisorTag::P1);
    EXPECT_EQ(p.residual, b.cfg.p1.residual);
}

TEST(Pipeline, ZeroToleranceFailsEveryCheck)
{
    RunConfig rc;
    rc.tolerance = 0.0;
    const ResidualReport r = verify_identities(rc, default_build());
    EXPECT_EQ(r.entries.size(), 12u);
    for (const auto &[name, e] : r.entries) {
        EXPECT_FALSE(e.pass) << name;
    }
    EXPECT_FALSE(r.all_pass());
}

TEST(Pipeline, SelectionAndDeterminism)
{
    RunConfig rc;
    const PipelineResult res = run_pipeline(rc, {"alpha_identity", "determinism"});
    ASSERT_EQ(res.report.entries.size(), 2u);
    EXPECT_TRUE(res.report.all_pass());
    EXPECT_EQ(res.report.entries.back().first, "determinism");
    EXPECT_THROW(run_pipeline(rc, {"no_such_identity"}), InvalidArgument);
}

TEST(Pipeline, ReportJsonHasEveryField)
{
    RunConfig rc;
    const ResidualReport r = verify_identities(rc, default_build(), {"generator_independence"});
    const json j = to_json_value(r);
    const json &e = j.at("identities").at("generator_independence");
    for (const char *k : {"residual", "samples", "tolerance", "pass", "detail"}) {
        EXPECT_TRUE(e.contains(k)) << k;
    }
    EXPECT_TRUE(j.at("environment").contains("compiler"));
    EXPECT_EQ(j.at("config").at("seed"), rc.seed);
    EXPECT_EQ(number_or_string(std::numeric_limits<double>::infinity()), "inf");
}

TEST(Pipeline, ExplicitParametersAreUsedVerbatim)
{
    const Built &b = default_build();
    RunConfig rc;
    rc.c = b.cfg.params.c;
    rc.c_prime = b.cfg.params.c_prime;
    rc.c_second = b.cfg2.params.c_prime;
    const Built again = build_all(rc);
    EXPECT_EQ(again.cfg.params.c, b.cfg.params.c);
    EXPECT_EQ(again.cfg2.params.c_prime, b.cfg2.params.c_prime);
}

TEST(Pipeline, ExplicitDegenerateParametersAreNotResampled)
{
    RunConfig rc;
    rc.c = Vec2(cplx(0.2, 0.1), cplx(0.3, 0.2));
    rc.c_prime = Vec2(1.0, 0.0);
    rc.c_second = Vec2(cplx(0.4, 0.3), cplx(0.1, 0.5));
    EXPECT_THROW(build_all(rc), Degenerate);
}
