// Command-line front end: theta values, divisor points, ring construction,
// verification and coefficient tables.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <nakring/nakring.hpp>

namespace
{

using namespace nakring;

constexpr int exit_pass = 0;
constexpr int exit_identity_failure = 1;
constexpr int exit_input = 2;
constexpr int exit_numerical = 3;

std::vector<std::string> split(const std::string &s, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) {
        out.push_back(item);
    }
    return out;
}

double parse_double(const std::string &s)
{
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception &) {
        throw InvalidArgument("not a number: '" + s + "'");
    }
    if (used != s.size()) {
        throw InvalidArgument("not a number: '" + s + "'");
    }
    return v;
}

// "re1,im1,re2,im2"
Vec2 parse_vec2(const std::string &s)
{
    const auto parts = split(s, ',');
    if (parts.size() != 4) {
        throw InvalidArgument("expected four comma-separated reals re1,im1,re2,im2, got '" + s + "'");
    }
    return {cplx(parse_double(parts[0]), parse_double(parts[1])), cplx(parse_double(parts[2]), parse_double(parts[3]))};
}

Rational parse_rational(const std::string &s)
{
    const auto parts = split(s, '/');
    try {
        if (parts.size() == 1) {
            return Rational(std::stoll(parts[0]), 1);
        }
        if (parts.size() == 2) {
            return Rational(std::stoll(parts[0]), std::stoll(parts[1]));
        }
    } catch (const std::logic_error &) {
    }
    throw InvalidArgument("not a rational: '" + s + "'");
}

json read_json_file(const std::string &path)
{
    std::ifstream in(path);
    if (!in) {
        throw InvalidArgument("cannot open " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw InvalidArgument(path + ": " + e.what());
    }
}

void write_output(const std::string &path, const json &j)
{
    const std::string text = j.dump(2) + "\n";
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) {
        throw InvalidArgument("cannot write " + path);
    }
    out << text;
}

// Omega file: either the 2x2 matrix itself or an object with an "omega" key.
RiemannMatrix read_omega(const std::string &path)
{
    const json j = read_json_file(path);
    return RiemannMatrix(mat2_from_json(j.is_object() ? j.at("omega") : j));
}

RunConfig read_run_config(const std::string &path)
{
    return run_config_from_json(read_json_file(path));
}

void log_line(const std::string &s)
{
    std::cerr << s << "\n";
}

int cmd_theta_eval(const std::string &z_arg, const std::string &omega_file, const std::string &char_arg,
                   const std::string &deriv_arg)
{
    const RiemannMatrix omega = read_omega(omega_file);
    const Vec2 z = parse_vec2(z_arg);
    Characteristic ch;
    if (!char_arg.empty()) {
        const auto parts = split(char_arg, ',');
        if (parts.size() != 4) {
            throw InvalidArgument("--char expects a1,a2,b1,b2");
        }
        ch.a = {parse_rational(parts[0]), parse_rational(parts[1])};
        ch.b = {parse_rational(parts[2]), parse_rational(parts[3])};
    }
    MultiIndex d;
    if (!deriv_arg.empty()) {
        const auto parts = split(deriv_arg, ',');
        if (parts.size() != 2) {
            throw InvalidArgument("--deriv expects d1,d2");
        }
        int d1 = 0, d2 = 0;
        try {
            d1 = std::stoi(parts[0]);
            d2 = std::stoi(parts[1]);
        } catch (const std::logic_error &) {
            throw InvalidArgument("--deriv expects two integers");
        }
        d = MultiIndex(d1, d2);
    }
    const cplx v = theta_eval(z, omega, ch, d);
    std::cout << json{{"value", to_json_value(v)}}.dump() << "\n";
    return exit_pass;
}

int cmd_points(const std::string &omega_file, const std::string &cp_arg, std::uint64_t seed)
{
    const RiemannMatrix omega = read_omega(omega_file);
    const Vec2 cp = parse_vec2(cp_arg);
    DivisorPoint delta = find_theta_zero(omega, seed);
    delta.which = DivisorTag::Delta;
    const auto [p1, p2] = intersect_divisors(omega, cp, derive_seed(seed, "points"));
    json out = {{"c_prime", to_json_value(cp)},
                {"delta", to_json_value(delta)},
                {"p1", to_json_value(p1)},
                {"p2", to_json_value(p2)}};
    std::cout << out.dump(2) << "\n";
    return exit_pass;
}

int cmd_build(const std::string &config_file, std::string out_path)
{
    const RunConfig rc = read_run_config(config_file);
    const Built b = build_all(rc, log_line);
    if (out_path.empty()) {
        out_path = rc.ring_out;
    }
    write_output(out_path, {{"config", to_json_value(b.cfg)},
                            {"second_config", to_json_value(b.cfg2)},
                            {"resampling", b.resampling},
                            {"ring", ring_to_json(b.ring, b.cfg.params.omega)}});
    return exit_pass;
}

int cmd_verify(const std::string &config_file, const std::vector<std::string> &only, std::string out_path)
{
    const RunConfig rc = read_run_config(config_file);
    const std::set<std::string> selected(only.begin(), only.end());
    const PipelineResult res = run_pipeline(rc, selected, log_line);
    if (out_path.empty()) {
        out_path = rc.report_out;
    }
    write_output(out_path, to_json_value(res.report));
    if (!rc.ring_out.empty()) {
        write_output(rc.ring_out, {{"config", to_json_value(res.built.cfg)},
                                   {"second_config", to_json_value(res.built.cfg2)},
                                   {"resampling", res.built.resampling},
                                   {"ring", ring_to_json(res.built.ring, res.built.cfg.params.omega)}});
    }
    for (const auto &[name, e] : res.report.entries) {
        std::cerr << (e.pass ? "PASS " : "FAIL ") << name << " residual=" << e.residual << " tol=" << e.tolerance
                  << "\n";
    }
    return res.report.all_pass() ? exit_pass : exit_identity_failure;
}

int cmd_emit(const std::string &ring_file, int grid, double radius)
{
    if (grid < 1) {
        throw InvalidArgument("--grid must be at least 1");
    }
    const json j = read_json_file(ring_file);
    const LoadedRing ring = ring_from_json(j.contains("ring") ? j.at("ring") : j);
    std::vector<double> axis;
    for (int i = 0; i < grid; ++i) {
        axis.push_back(grid == 1 ? 0.0 : -radius + 2.0 * radius * i / (grid - 1));
    }
    std::vector<Vec2> xs;
    json points = json::array();
    for (double a : axis) {
        for (double b : axis) {
            xs.emplace_back(cplx(a, 0), cplx(b, 0));
            points.push_back(to_json_value(xs.back()));
        }
    }
    std::vector<Evaluator> evs;
    for (const auto &x : xs) {
        evs.emplace_back(ring.omega, x);
    }
    json ops = json::array();
    for (const auto &[name, op] : ring.operators) {
        json entries = json::array();
        for (int r = 1; r <= 2; ++r) {
            for (int c = 1; c <= 2; ++c) {
                json terms = json::array();
                for (const auto &[beta, e] : op(r, c).terms()) {
                    json values = json::array();
                    for (auto &ev : evs) {
                        values.push_back(to_json_value(ev(e)));
                    }
                    terms.push_back({{"beta", {beta.d1(), beta.d2()}}, {"values", values}});
                }
                entries.push_back({{"row", r}, {"col", c}, {"terms", terms}});
            }
        }
        ops.push_back({{"name", name}, {"entries", entries}});
    }
    std::cout << json{{"grid", grid}, {"radius", radius}, {"points", points}, {"operators", ops}}.dump(2) << "\n";
    return exit_pass;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Commuting matrix differential operators from genus-2 theta functions"};
    app.require_subcommand(1);

    std::string z_arg, omega_file, char_arg, deriv_arg;
    auto *theta_cmd = app.add_subcommand("theta-eval", "Evaluate a theta function or one of its derivatives");
    theta_cmd->add_option("--z", z_arg, "point as re1,im1,re2,im2")->required();
    theta_cmd->add_option("--omega-file", omega_file, "JSON period matrix")->required();
    theta_cmd->add_option("--char", char_arg, "characteristic a1,a2,b1,b2 (rationals such as 1/2)");
    theta_cmd->add_option("--deriv", deriv_arg, "derivative orders d1,d2");

    std::string cp_arg;
    std::uint64_t seed = 1;
    auto *points_cmd = app.add_subcommand("points", "Find a theta zero and the two points of the divisor intersection");
    points_cmd->add_option("--omega-file", omega_file, "JSON period matrix")->required();
    points_cmd->add_option("--c-prime", cp_arg, "shift c' as re1,im1,re2,im2")->required();
    points_cmd->add_option("--seed", seed, "root-finder seed");

    std::string config_file, out_path;
    auto *build_cmd = app.add_subcommand("build", "Construct the spectral configuration and operator ring");
    build_cmd->add_option("--config", config_file, "JSON run configuration")->required();
    build_cmd->add_option("--out", out_path, "output file (default: ring_out or stdout)");

    std::vector<std::string> only;
    auto *verify_cmd = app.add_subcommand("verify", "Build and check every identity, writing a residual report");
    verify_cmd->add_option("--config", config_file, "JSON run configuration")->required();
    verify_cmd->add_option("--only", only, "restrict to the named identities");
    verify_cmd->add_option("--out", out_path, "report file (default: report_out or stdout)");

    std::string ring_file;
    int grid = 1;
    double radius = 0.1;
    auto *emit_cmd = app.add_subcommand("emit", "Tabulate operator coefficients on a grid of real x");
    emit_cmd->add_option("--ring", ring_file, "output of the build command")->required();
    emit_cmd->add_option("--grid", grid, "points per axis; 1 means x = 0");
    emit_cmd->add_option("--radius", radius, "half-width of the grid");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? exit_pass : exit_input;
    }

    try {
        if (*theta_cmd) {
            return cmd_theta_eval(z_arg, omega_file, char_arg, deriv_arg);
        }
        if (*points_cmd) {
            return cmd_points(omega_file, cp_arg, seed);
        }
        if (*build_cmd) {
            return cmd_build(config_file, out_path);
        }
        if (*verify_cmd) {
            return cmd_verify(config_file, only, out_path);
        }
        if (*emit_cmd) {
            return cmd_emit(ring_file, grid, radius);
        }
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.error_class() == ErrorClass::input ? exit_input : exit_numerical;
    } catch (const json::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_input;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_numerical;
    }
    return exit_input;
}
