/* Configuration parsing, canonical serialization and digests, atomic
 * persistence, the randomized identity suite, CLI exit codes, sweep
 * checkpoint/resume, and thread-count determinism of the output bytes. */

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "cocycle_lab/harness.hpp"

#include "helpers.hpp"

using namespace cocycle_lab;
using test_util::throws_code;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

const double kE0 = -0.048898729225385; // frozen working-frame reference edge

fs::path make_temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("cocycle_lab_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

int run_cli_args(std::vector<std::string> args) {
    args.insert(args.begin(), "cocycle-lab");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

} // namespace

TEST_CASE("expression evaluator") {
    CHECK(eval_expression("(sqrt(5)-1)/4") ==
          doctest::Approx((std::sqrt(5.0) - 1.0) / 4.0).epsilon(1e-15));
    CHECK(eval_expression("2*(3+4)") == 14.0);
    CHECK(eval_expression("1e-4") == 1e-4);
    CHECK(eval_expression("-2.5e3/5") == -500.0);
    CHECK(eval_expression("pi") == doctest::Approx(3.14159265358979323846).epsilon(1e-16));
    CHECK(eval_expression("sqrt(sqrt(16))") == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(eval_expression("1 - 2 - 3") == -4.0); // left associative
    CHECK(eval_expression("6/2/3") == 1.0);
    CHECK_THROWS_AS(eval_expression("2+*3"), LabError);
    CHECK_THROWS_AS(eval_expression("sqrt("), LabError);
    CHECK_THROWS_AS(eval_expression("foo"), LabError);
    CHECK_THROWS_AS(eval_expression(""), LabError);
    CHECK_THROWS_AS(eval_expression("1/0"), LabError);
}

TEST_CASE("INI and JSON configs load to the same canonical form") {
    fs::path dir = make_temp_dir("config");

    fs::path ini = dir / "run.ini";
    {
        std::ofstream out(ini);
        out << "# full-line comment\n"
            << "[potential]\n"
            << "kind = cosine\n"
            << "lambda_sq = 2*15   ; expressions allowed\n"
            << "omega = (sqrt(5)-1)/4\n"
            << "[energy]\n"
            << "mode = single\n"
            << "value = -2.0\n"
            << "[grid]\n"
            << "base_points = 1024\n"
            << "refine_depth = 2\n"
            << "[output]\n"
            << "dir = out_test\n"
            << "formats = csv,json\n";
    }
    RunConfig a = load_config(ini.string());
    CHECK(a.potential_kind == "cosine");
    CHECK(a.lambda_sq == 30.0);
    CHECK(a.omega == doctest::Approx((std::sqrt(5.0) - 1.0) / 4.0).epsilon(1e-15));
    CHECK(a.omega_expr == "(sqrt(5)-1)/4");
    CHECK(a.energy_mode == "single");
    CHECK(a.energy_value == -2.0);
    CHECK(a.base_points == 1024);
    CHECK(a.refine_depth == 2);
    CHECK(a.output_dir == "out_test");
    CHECK_NOTHROW(a.validate());

    fs::path json = dir / "run.json";
    {
        std::ofstream out(json);
        out << "{\"potential\": {\"kind\": \"cosine\","; // truncated on purpose
    }
    /* malformed JSON is a config error, not a crash */
    CHECK_THROWS_AS(load_config(json.string()), LabError);
    {
        std::ofstream out(json);
        out << "{\n"
            << "  /* same run as the INI file */\n"
            << "  \"potential\": {\"kind\": \"cosine\", \"lambda_sq\": \"2*15\",\n"
            << "                 \"omega\": \"(sqrt(5)-1)/4\"},\n"
            << "  \"energy\": {\"mode\": \"single\", \"value\": -2.0},\n"
            << "  \"grid\": {\"base_points\": 1024, \"refine_depth\": 2},\n"
            << "  \"output\": {\"dir\": \"out_test\", \"formats\": \"csv,json\"}\n"
            << "}\n";
    }
    RunConfig b = load_config(json.string());
    CHECK(canonical_config(a) == canonical_config(b));
    CHECK(fnv1a(canonical_config(a)) == fnv1a(canonical_config(b)));
}

TEST_CASE("overrides, unknown keys, and validation") {
    RunConfig cfg;
    apply_override(cfg, "energy.g=2e-3");
    CHECK(cfg.sweep_g == 2e-3);
    apply_override(cfg, "threads=auto");
    CHECK(cfg.threads == 0);
    apply_override(cfg, "omega=(sqrt(5)-1)/2");
    CHECK(cfg.omega == doctest::Approx((std::sqrt(5.0) - 1.0) / 2.0).epsilon(1e-15));
    apply_override(cfg, "precision=dd");
    CHECK(cfg.precision == "dd");
    CHECK_NOTHROW(cfg.validate());

    CHECK(throws_code([&] { apply_override(cfg, "bogus.key=1"); },
                      ErrorCode::MissingSystemConstants));
    CHECK(throws_code([&] { apply_override(cfg, "no_equals_sign"); },
                      ErrorCode::MissingSystemConstants));

    auto invalid = [](const char* assignment) {
        RunConfig c;
        apply_override(c, assignment);
        c.validate();
    };
    CHECK(throws_code([&] { invalid("potential.lambda_sq=-1"); },
                      ErrorCode::MissingSystemConstants));
    CHECK(throws_code([&] { invalid("omega=0.5"); }, ErrorCode::MissingSystemConstants));
    CHECK(throws_code([&] { invalid("grid.base_points=1000"); },
                      ErrorCode::MissingSystemConstants));
    CHECK(throws_code([&] { invalid("energy.rho=1.5"); }, ErrorCode::MissingSystemConstants));
    CHECK(throws_code([&] { invalid("precision=f32"); }, ErrorCode::MissingSystemConstants));
    CHECK(throws_code([&] { invalid("energy.points=0"); }, ErrorCode::MissingSystemConstants));
    CHECK(throws_code([&] { invalid("output.formats=xml"); },
                      ErrorCode::MissingSystemConstants));
}

TEST_CASE("canonical config and digests are deterministic and sensitive") {
    RunConfig a, b;
    CHECK(canonical_config(a) == canonical_config(b));
    CHECK(fnv1a(canonical_config(a)) == fnv1a(canonical_config(b)));
    apply_override(b, "energy.g=1e-3");
    CHECK(canonical_config(a) != canonical_config(b));
    CHECK(fnv1a(canonical_config(a)) != fnv1a(canonical_config(b)));

    /* FNV-1a 64 reference vectors */
    CHECK(fnv1a("") == 14695981039346656037ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("format_g17 round-trips doubles exactly") {
    for (double x : {3.14159265358979323846, 0.1, 1e-300, -2.5, 6.02214076e23,
                     -0.048898729225385}) {
        std::string s = format_g17(x);
        CHECK(std::strtod(s.c_str(), nullptr) == x);
    }
}

TEST_CASE("atomic writes and CSV round trip") {
    fs::path dir = make_temp_dir("persist");
    fs::path file = dir / "nested" / "deep" / "data.csv";
    write_csv(file.string(), {"a", "b"}, {{1.5, 0.1}, {-2.0, 1e-17}});
    CHECK(fs::exists(file));
    CHECK(!fs::exists(file.string() + ".tmp"));
    std::string text = slurp(file);
    CHECK(text.rfind("a,b\n", 0) == 0);
    CHECK(text.find("1.5") != std::string::npos);
    /* cells round-trip through strtod */
    std::istringstream lines(text);
    std::string line;
    std::getline(lines, line); // header
    std::getline(lines, line);
    CHECK(std::strtod(line.substr(line.find(',') + 1).c_str(), nullptr) == 0.1);
    std::getline(lines, line);
    CHECK(std::strtod(line.substr(line.find(',') + 1).c_str(), nullptr) == 1e-17);

    write_file_atomic((dir / "plain.txt").string(), "payload");
    CHECK(slurp(dir / "plain.txt") == "payload");
    write_file_atomic((dir / "plain.txt").string(), "replaced");
    CHECK(slurp(dir / "plain.txt") == "replaced");
}

TEST_CASE("identity suite passes and the fault hook is caught") {
    IdentitySuiteOptions opts;
    opts.orbits = 5;
    std::vector<IdentityCheckResult> results = run_identity_suite(opts);
    REQUIRE(results.size() == 7);
    CHECK(results[0].name == "distance_next_step");
    CHECK(results[1].name == "distance_products_relation");
    CHECK(results[2].name == "correlation_monotone");
    CHECK(results[3].name == "distortion_factor_inequality");
    CHECK(results[4].name == "derivative_difference_formula");
    CHECK(results[5].name == "derivative_remainder_bound");
    CHECK(results[6].name == "band_confinement");
    for (const IdentityCheckResult& r : results) {
        INFO(r.name << " worst " << r.worst);
        CHECK(r.pass);
    }

    IdentitySuiteOptions fault = opts;
    fault.fault_orbit = 0;
    fault.fault_step = 10;
    std::vector<IdentityCheckResult> broken = run_identity_suite(fault);
    REQUIRE(broken.size() == 7);
    CHECK(!broken[0].pass); // the distance recursion must notice
    CHECK(broken[0].note.find("fault") != std::string::npos);
    bool any_fail = false;
    for (const IdentityCheckResult& r : broken) any_fail = any_fail || !r.pass;
    CHECK(any_fail);
}

TEST_CASE("curve command output is byte-identical across thread counts") {
    fs::path dir1 = make_temp_dir("threads1");
    fs::path dir5 = make_temp_dir("threads5");

    RunConfig cfg;
    cfg.curve_points = 128;
    cfg.energy_value = -2.0;
    cfg.output_dir = dir1.string();

    setenv("COCYCLE_LAB_THREADS", "1", 1);
    REQUIRE(cmd_curve(cfg) == 0);
    setenv("COCYCLE_LAB_THREADS", "5", 1);
    cfg.output_dir = dir5.string();
    REQUIRE(cmd_curve(cfg) == 0);
    unsetenv("COCYCLE_LAB_THREADS");

    CHECK(slurp(dir1 / "curve.csv") == slurp(dir5 / "curve.csv"));
    CHECK(slurp(dir1 / "curve.json") == slurp(dir5 / "curve.json"));

    /* manifest: digest echo matches a recomputation from public pieces */
    ojson manifest = ojson::parse(slurp(dir5 / "manifest.json"));
    CHECK(manifest.at("tool") == "cocycle-lab");
    CHECK(manifest.at("command") == "curve");
    CHECK(manifest.at("config_digest").get<std::string>() ==
          hex64(fnv1a(canonical_config(cfg))));
    for (const ojson& rec : manifest.at("outputs")) {
        std::string path = rec.at("path").get<std::string>();
        CHECK(rec.at("fnv1a").get<std::string>() == hex64(fnv1a(slurp(path))));
    }

    /* the sampled curve is the advertised size: header + curve_points rows */
    std::string csv = slurp(dir5 / "curve.csv");
    long long newlines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(newlines == 128 + 1);
}

TEST_CASE("sweep checkpoints resume without recomputing finished rows") {
    fs::path dir = make_temp_dir("resume");
    RunConfig cfg;
    cfg.energy_mode = "sweep";
    cfg.sweep_g = 0.5;
    cfg.sweep_rho = 0.5;
    cfg.sweep_points = 2;
    cfg.sweep_E0 = kE0;
    cfg.base_points = 1024;
    cfg.refine_depth = 1;
    cfg.output_dir = dir.string();

    /* fabricate a finished first row with an unmistakably synthetic delta;
     * a resumed run must trust it verbatim and only compute row 1 */
    ojson row;
    row["E"] = kE0 - 0.5;
    row["dE"] = 0.5;
    row["delta"] = 123.0;
    row["theta_c"] = 0.25;
    row["quad_coeff"] = 1.0;
    row["c1_norm_u"] = 2.0;
    row["c1_norm_s"] = 2.0;
    row["c2_norm_u"] = 3.0;
    row["sigma_plus_max"] = 0;
    row["sigma_minus_max"] = 0;
    row["level_k"] = -1;
    row["eta"] = 0.0;
    row["lyapunov"] = 0.0;
    row["residual_max"] = 0.0;
    row["ok"] = true;
    row["note"] = "synthetic checkpoint row";
    ojson ck;
    ck["config_digest"] = hex64(fnv1a(canonical_config(cfg)));
    ck["E0"] = kE0;
    ck["rows"] = ojson::array({row});
    {
        std::ofstream out(dir / "sweep.checkpoint.json");
        out << ck.dump(2) << "\n";
    }

    REQUIRE(cmd_sweep(cfg) == 0);
    CHECK(!fs::exists(dir / "sweep.checkpoint.json")); // consumed on success

    std::string csv = slurp(dir / "sweep.csv");
    std::istringstream lines(csv);
    std::string header, row0, row1;
    std::getline(lines, header);
    std::getline(lines, row0);
    std::getline(lines, row1);
    CHECK(row0.find(",123,") != std::string::npos); // resumed, not recomputed
    CHECK(row1.find(",123,") == std::string::npos);

    ojson fit = ojson::parse(slurp(dir / "fit.json"));
    CHECK(fit.at("resumed").get<bool>());
    CHECK(fit.at("schedule").at("points").get<int>() == 2);

    /* mismatched digest: the checkpoint is ignored and the row recomputed */
    fs::path dir2 = make_temp_dir("resume2");
    RunConfig cfg2 = cfg;
    cfg2.output_dir = dir2.string();
    cfg2.sweep_points = 1;
    ck["config_digest"] = std::string(16, '0');
    {
        std::ofstream out(dir2 / "sweep.checkpoint.json");
        out << ck.dump(2) << "\n";
    }
    REQUIRE(cmd_sweep(cfg2) == 0);
    std::string csv2 = slurp(dir2 / "sweep.csv");
    CHECK(csv2.find(",123,") == std::string::npos);
    ojson fit2 = ojson::parse(slurp(dir2 / "fit.json"));
    CHECK(!fit2.at("resumed").get<bool>());
}

TEST_CASE("check command writes a report matching its schema") {
    fs::path dir = make_temp_dir("check");
    RunConfig cfg;
    cfg.check_orbits = 25;
    cfg.output_dir = dir.string();
    REQUIRE(cmd_check(cfg) == 0);

    ojson report = ojson::parse(slurp(dir / "check_report.json"));
    fs::path schema_path =
        fs::path(__FILE__).parent_path().parent_path() / "share" / "check_report.schema.json";
    ojson schema = ojson::parse(slurp(schema_path));

    for (const ojson& key : schema.at("required"))
        CHECK(report.contains(key.get<std::string>()));
    CHECK(report.at("command") == "check");
    CHECK(report.at("all_pass").get<bool>());
    std::string digest = report.at("config_digest").get<std::string>();
    CHECK(digest.size() == 16);
    CHECK(digest.find_first_not_of("0123456789abcdef") == std::string::npos);
    const ojson& checks = report.at("checks");
    REQUIRE(checks.is_array());
    CHECK(checks.size() >= 1);
    for (const ojson& c : checks) {
        for (const ojson& key : schema.at("properties").at("checks").at("items").at("required"))
            CHECK(c.contains(key.get<std::string>()));
        CHECK(c.at("pass").get<bool>());
    }

    /* fault injection is observable end to end and still exits 0:
     * a red check is data, not a tool failure */
    fs::path dir_fault = make_temp_dir("check_fault");
    RunConfig bad = cfg;
    bad.inject_fault = true;
    bad.output_dir = dir_fault.string();
    REQUIRE(cmd_check(bad) == 0);
    ojson rf = ojson::parse(slurp(dir_fault / "check_report.json"));
    CHECK(!rf.at("all_pass").get<bool>());
}

TEST_CASE("CLI exit codes") {
    fs::path dir = make_temp_dir("cli");

    CHECK(run_cli_args({"--version"}) == 0);
    CHECK(run_cli_args({}) == 2);                       // missing subcommand
    CHECK(run_cli_args({"no_such_command"}) == 2);      // unknown subcommand
    CHECK(run_cli_args({"curve", "--set", "potential.lambda_sq=-1"}) == 2);
    CHECK(run_cli_args({"curve", "--set", "bogus.key=1"}) == 2);
    CHECK(run_cli_args({"curve", "--config", (dir / "missing.ini").string()}) == 2);
    CHECK(run_cli_args({"fit", "--set", "fit.input=" + (dir / "missing.csv").string(),
                        "--set", "output.dir=" + (dir / "fit_out").string()}) == 2);

    /* numeric failure: no invariant splitting above the edge */
    CHECK(run_cli_args({"curve", "--set", "energy.value=1.0",
                        "--set", "curve.points=16",
                        "--set", "output.dir=" + (dir / "nuh").string()}) == 3);

    /* bracket error: both ends below the edge */
    CHECK(run_cli_args({"edge", "--set", "energy.bracket_lo=-2",
                        "--set", "energy.bracket_hi=-1",
                        "--set", "grid.base_points=512",
                        "--set", "output.dir=" + (dir / "edge_bad").string()}) == 4);
}

TEST_CASE("tabulated potentials run end to end and are validated") {
    fs::path dir = make_temp_dir("table");

    /* 64 uniform knots of the raw cosine */
    fs::path knots = dir / "cosine.csv";
    {
        std::ofstream out(knots);
        out << "theta,value\n";
        for (int i = 0; i < 64; ++i) {
            double t = i / 64.0;
            out << format_g17(t) << "," << format_g17(std::cos(2.0 * 3.14159265358979323846 * t))
                << "\n";
        }
    }
    CHECK(run_cli_args({"curve", "--set", "potential.kind=table",
                        "--set", "potential.table=" + knots.string(),
                        "--set", "energy.value=-2.0",
                        "--set", "curve.points=32",
                        "--set", "output.dir=" + (dir / "out").string()}) == 0);
    CHECK(fs::exists(dir / "out" / "curve.csv"));
    CHECK(fs::exists(dir / "out" / "manifest.json"));

    /* too few knots is a config error */
    fs::path bad = dir / "bad.csv";
    {
        std::ofstream out(bad);
        out << "theta,value\n0,1\n0.25,0\n0.5,-1\n0.75,0\n";
    }
    CHECK(run_cli_args({"curve", "--set", "potential.kind=table",
                        "--set", "potential.table=" + bad.string(),
                        "--set", "output.dir=" + (dir / "out_bad").string()}) == 2);
}

TEST_CASE("gap floor aborts a curve run that dips below it") {
    fs::path dir = make_temp_dir("floor");
    CHECK(run_cli_args({"curve", "--set", "energy.value=-2.0",
                        "--set", "tolerances.gap_floor=10",
                        "--set", "curve.points=64",
                        "--set", "output.dir=" + dir.string()}) == 3);
}
