#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cocycle_lab/asymptotics.hpp"

namespace cocycle_lab {

/* ---- run configuration -------------------------------------------------- */

/* Parsed, validated configuration.  Sources: an INI-style file
 * ([section] / key = value), a JSON file with the same dotted keys, and
 * --set key=value overrides.  omega accepts a literal or an arithmetic
 * expression such as (sqrt(5)-1)/4. */
struct RunConfig {
    /* potential */
    std::string potential_kind = "cosine"; // cosine | cosine_normalized | table
    std::string potential_table;           // CSV path for kind = table
    double lambda_sq = 30.0;
    std::string omega_expr = "(sqrt(5)-1)/4";
    /* kept in sync with omega_expr by the loaders; the initializer matches
     * what eval_expression produces for the default expression */
    double omega = (std::sqrt(5.0) - 1.0) / 4.0;

    /* energy (all values in the working frame: potential min 0, osc 1) */
    std::string energy_mode = "single"; // single | sweep | edge
    double energy_value = -2.0;         // working energy for single mode
    double sweep_g = 1e-2;
    double sweep_rho = 0.5;
    int sweep_points = 12;
    double bracket_lo = -2.0, bracket_hi = 0.0; // working energies
    double sweep_E0 = std::numeric_limits<double>::quiet_NaN(); // pin, optional

    /* grid */
    int base_points = 4096; // power of two
    int refine_depth = 4;

    /* tolerances */
    double tol_psi = -1.0; // negative: module default
    double tol_deriv = 1e-6;
    double gap_floor = -1.0; // negative: 1e3 * working epsilon
    double edge_tol = 1e-13;

    /* horizon */
    long long T_max = 1'000'000;

    /* output */
    std::string output_dir = "out";
    std::vector<std::string> output_formats = {"csv", "json"};

    /* execution */
    int threads = 0; // 0: auto
    std::string precision = "f64"; // f64 | dd

    /* curve command */
    int curve_points = 2048;

    /* ladder command */
    int ladder_max_level = 1;
    long long ladder_c1_samples = 0;
    double ladder_energy = -5.0; // working energy for condition/box checks
    int ladder_bisect_level = -1; // >= 0: bracket that level's energies

    /* check command */
    bool inject_fault = false; // corrupt the distance recursion on purpose
    long long check_orbits = 100;

    /* fit command */
    std::string fit_input; // sweep CSV to refit; empty: <output_dir>/sweep.csv

    void validate() const; // throws LabError(MissingSystemConstants) on bad fields
};

/* Parse an INI or JSON config file. */
RunConfig load_config(const std::string& path);
/* Apply one --set key=value override (dotted keys, e.g. energy.mode=sweep). */
void apply_override(RunConfig& config, const std::string& assignment);
/* Canonical serialization: the digest input and the manifest config echo. */
std::string canonical_config(const RunConfig& config);

/* Tiny arithmetic evaluator: numbers, + - * / ( ), sqrt(...), pi. */
double eval_expression(const std::string& text);

/* ---- persistence --------------------------------------------------------- */

/* FNV-1a 64-bit digest. */
std::uint64_t fnv1a(const std::string& bytes);

/* Format a double with 17 significant digits (round-trip exact). */
std::string format_g17(double x);

/* Write bytes via temp file + rename so readers never see partial files. */
void write_file_atomic(const std::string& path, const std::string& bytes);

/* CSV with a header row; every cell rendered by format_g17. */
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/* ---- identity diagnostics -------------------------------------------------- */

/* Randomized verification of the distance / distortion calculus on coupled
 * orbit triples s <= z <= r over a shared rotation orbit.  The upper orbit
 * runs forward from B^u; the lower two are built backward from their end
 * values in B^s, so they ride the contracting direction and every stored
 * value carries ~1 ulp relative accuracy.  At the default parameters
 * (normalized cosine, lambda_sq = 1e8, E = -5) the denominator
 * q = lambda_sq * v - E stays >= 5, which confines every such triple to
 * the invariant band B. */
struct IdentitySuiteOptions {
    double lambda_sq = 1e8;
    double energy = -5.0;
    double omega = 0.0; // 0: use (sqrt(5)-1)/4
    long long orbits = 100;
    int steps = 20;
    double tol = 1e-8; // relative tolerance on equalities and bound margins
    unsigned rng_seed = 20260825u;
    /* Fault hook: multiply r at index fault_step of orbit fault_orbit by
     * (1 + fault_size).  The distance recursion check must then fail with
     * the failing step pinpointed in its note. */
    long long fault_orbit = -1;
    long long fault_step = -1;
    double fault_size = 1e-6;
};

struct IdentityCheckResult {
    std::string name;
    bool pass = false;
    /* Equalities: largest relative error seen.  Inequalities: smallest
     * normalized margin (negative means violated). */
    double worst = 0.0;
    long long worst_orbit = -1;
    long long worst_step = -1;
    std::string note;
};

/* Runs, in order: distance_next_step, distance_products_relation,
 * correlation_monotone, distortion_factor_inequality,
 * derivative_difference_formula, derivative_remainder_bound,
 * band_confinement. */
std::vector<IdentityCheckResult> run_identity_suite(const IdentitySuiteOptions& opts);

/* ---- commands -------------------------------------------------------------- */

/* Each returns a process exit code: 0 ok, 2 validation, 3 numeric failure,
 * 4 bracket errors. */
int cmd_curve(const RunConfig& config);
int cmd_edge(const RunConfig& config);
int cmd_sweep(const RunConfig& config);
int cmd_ladder(const RunConfig& config);
int cmd_check(const RunConfig& config);
int cmd_fit(const RunConfig& config);

/* Full CLI: cocycle-lab <command> --config <path> [--set key=value]... */
int run_cli(int argc, char** argv);

} // namespace cocycle_lab
