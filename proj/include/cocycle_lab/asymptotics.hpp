#pragma once

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "cocycle_lab/cocycle.hpp"
#include "cocycle_lab/curves.hpp"
#include "cocycle_lab/ladder.hpp"

namespace cocycle_lab {

/* ---- edge location ------------------------------------------------------- */

struct EdgeOptions {
    double tol = 5e-14;            // bracket width target for the local stage
    int coarse_grid = 2048;        // global convergence scan
    double coarse_horizon = 4000;  // fixed horizon for the global stage
    int coarse_rounds = 22;
    int window_points = 257;       // local scan around the gap minimizer
    double window_halfwidth = 2e-4;
    double horizon_cap = 8e5;
    int extrapolation_points = 8;  // cross-check samples below the edge
    double extrapolation_step = 2e-7;
};

struct EdgeResult {
    double E0 = 0.0;            // bisected edge (working energy)
    double bracket_lo = 0.0, bracket_hi = 0.0;
    double theta_c = 0.0;       // gap minimizer just below the edge
    double E0_extrapolated = 0.0; // root of the linear gap law
    double extrapolation_diff = 0.0;
    std::vector<std::array<double, 2>> bracket_history; // after every round
};

/* Bisect the largest E with convergent section curves and positive minimum
 * gap, then cross-check by extrapolating delta(E) to zero from below.
 * Throws BracketInvalid when an end of [E_lo, E_hi] is on the wrong side,
 * NonMonotonePredicate when the local stage sees the predicate flip back. */
EdgeResult find_edge(const CocycleParams& params, double omega, double E_lo, double E_hi,
                     const EdgeOptions& opts = {});

/* ---- gap profile ---------------------------------------------------------- */

struct GapOptions {
    int coarse_grid = 4096;
    int window_points = 601;
    double window_halfwidth = 3e-4;
    int fit_points = 81;
    double fit_halfwidth_factor = 8.0; // fit window = factor * sqrt(delta/c)
    double theta_hint = -1.0;          // >= 0: skip the coarse scan
    double quad_coeff_hint = 0.0;      // 0: derive from the potential
    CurveOptions curve;
};

struct GapProfile {
    double E = 0.0;
    double delta = 0.0;        // minimum of psi_u - psi_s
    double theta_c = 0.0;      // minimizer
    double quad_coeff = 0.0;   // c in  gap ~ delta + c (theta - theta_c)^2
    double residual_max = 0.0; // max |gap - model| over the fit window
    double fit_halfwidth = 0.0;
};

/* Locate the minimum gap and fit the quadratic profile around it.  Throws
 * NonUniqueMinimum when two separated minima compete at the same depth. */
GapProfile gap_profile(const CocycleParams& params, double omega,
                       const GapOptions& opts = {});

/* ---- fits ------------------------------------------------------------------ */

struct LinearGapFit {
    double slope = 0.0;        // through-origin delta ~ slope * (E0 - E)
    double stderr_slope = 0.0;
    double r2 = 0.0;
    double slope_affine = 0.0; // unconstrained line, for comparison
    double intercept_affine = 0.0;
    int n = 0;
    double decades = 0.0; // log10 span of E0 - E
};

/* Throws SpanTooNarrow below 1.5 decades of E0 - E. */
LinearGapFit fit_linear_gap(const std::vector<double>& dE, const std::vector<double>& delta);

struct NormExponentFit {
    double exponent = 0.0; // log-log slope of norm vs delta
    double stderr_exponent = 0.0;
    double eps_hat = 0.0;  // max(0, 2 (exponent + 1/2)): defect vs delta^{-1/2}
    int n = 0;
    double decades = 0.0;  // log10 span of delta
};

/* Throws SpanTooNarrow below 1.5 decades of delta. */
NormExponentFit fit_norm_exponent(const std::vector<double>& delta,
                                  const std::vector<double>& norm);

/* ---- stopping-time epsilon trace --------------------------------------------- */

/* epsilon(E) = 2 lambda^4 eta sigma+ / log_lambda(1/delta): the exponent
 * defect predicted from the stopping-time anatomy at energy E. */
double epsilon_trace(double lambda, double eta, long long sigma_plus, double delta);

/* Trace and fitted defect agree within a factor of 10, or both are below
 * 0.1 (the regime where neither resolves the defect). */
bool epsilon_consistent(double eps_trace, double eps_hat);

/* ---- energy sweep -------------------------------------------------------------- */

struct SweepConfig {
    double g = 1e-2;   // first offset below the edge
    double rho = 0.5;  // geometric ratio
    int points = 12;
    double E0 = std::numeric_limits<double>::quiet_NaN(); // NaN: locate first
    double bracket_lo = -2.0, bracket_hi = 0.0;           // edge bracket
    long long lyapunov_samples = 200'000;
    long long lyapunov_burn = 1'000;
    int sigma_probes = 5; // stopping-time probes across the collision window
    int max_level = 2;
    GapOptions gap;
    GridOptions grid;
    CurveOptions curve;
};

struct SweepPoint {
    double E = 0.0, dE = 0.0;
    double delta = 0.0, theta_c = 0.0, quad_coeff = 0.0;
    double c1_norm_u = 0.0, c1_norm_s = 0.0, c2_norm_u = 0.0;
    long long sigma_plus_max = 0, sigma_minus_max = 0;
    int level_k = -1; // -1: no ladder level matched at this energy
    double eta = 0.0;
    double lyapunov = 0.0;
    double residual_max = 0.0;
    bool ok = false;
    std::string note; // failure reason when !ok, or partial-field notes
};

struct SweepResult {
    double E0 = 0.0;
    double lambda_w = 0.0;
    std::vector<SweepPoint> rows;
};

/* Evaluate the full observable set on the geometric energy schedule
 * E_j = E0 - g rho^j.  Per-energy failures are recorded in the row and the
 * sweep continues.  `params` must already be in the working normalization
 * (potential minimum 0, oscillation 1). */
SweepResult run_sweep(const CocycleParams& params, double omega, const SweepConfig& config);

} // namespace cocycle_lab
