#pragma once

#include <vector>

#include "cocycle_lab/cocycle.hpp"

namespace cocycle_lab {

/* ---- invariant curve evaluation ----------------------------------------- */

/* One sampled point of an invariant section r = psi(theta). */
struct CurvePoint {
    double theta = 0.0;
    double psi = 0.0;
    double dpsi_dtheta = 0.0;
    double d2psi_dtheta2 = 0.0;
    double dpsi_dE = 0.0;
    double d2psi_dE2 = 0.0;
    double residual = 0.0; // |fibre_step(theta, psi(theta)) - psi(theta + omega)|
};

struct CurveOptions {
    /* Absolute settle tolerance on psi between doubled horizons;
     * negative means the default 1e-9 * lambda_sq. */
    double tol_psi = -1.0;
    /* Relative settle tolerance on the derivatives. */
    double tol_deriv = 1e-6;
    /* Fixed pullback horizon; 0 chooses automatically by doubling from
     * `horizon_start` until both tolerances hold. */
    long long horizon = 0;
    long long horizon_start = 1024;
    long long horizon_cap = 1'000'000;
    /* Carry the fibre value in double-double.  The potential is still
     * sampled in double, so the useful floor is ~1e-14 relative. */
    bool use_dd = false;
    /* Also evaluate at theta + omega to fill the residual column. */
    bool with_residual = true;
};

/* Evaluate the attracting (unstable) section by pulling a dominating seed
 * forward from theta - T*omega.  The seed provably lies above the curve, so
 * the iteration decreases monotonically onto it; crossing r <= 0 certifies
 * the absence of an invariant splitting (NotUniformlyHyperbolic).  Auto
 * horizon doubles T until successive horizons agree (NoConvergence at the
 * cap). */
std::vector<CurvePoint> evaluate_unstable_many(const std::vector<double>& thetas,
                                               const CocycleParams& params, double omega,
                                               const CurveOptions& opts = {});

/* Mirror image: the repelling (stable) section, reached backward from a
 * seed provably below it. */
std::vector<CurvePoint> evaluate_stable_many(const std::vector<double>& thetas,
                                             const CocycleParams& params, double omega,
                                             const CurveOptions& opts = {});

CurvePoint evaluate_unstable(double theta, const CocycleParams& params, double omega,
                             const CurveOptions& opts = {});
CurvePoint evaluate_stable(double theta, const CocycleParams& params, double omega,
                           const CurveOptions& opts = {});

/* ---- sampled curve pair --------------------------------------------------- */

struct CurvePair {
    std::vector<CurvePoint> unstable; // shared, sorted theta grid
    std::vector<CurvePoint> stable;
    double min_gap = 0.0;     // min(unstable.psi - stable.psi) over the grid
    double argmin_theta = 0.0;
};

struct GridOptions {
    int base_log2 = 12;       // uniform base grid 2^base_log2
    int max_points = 1 << 16; // refinement budget
    /* Derivative spikes ride the forward orbit of the gap minimiser; zoom
     * windows are seeded at argmin + j*omega for |j| <= orbit_windows. */
    int orbit_windows = 8;
    int zoom_rounds = 4;
    int zoom_points = 257;
    /* Refine cells whose gap is below gap_factor * min_gap or whose |dpsi|
     * exceeds slope_fraction * current max. */
    double gap_factor = 4.0;
    double slope_fraction = 0.5;
    int min_points_across_feature = 64;
};

/* Adaptive sampling of both sections on one grid. */
CurvePair build_curve_pair(const CocycleParams& params, double omega,
                           const GridOptions& grid = {}, const CurveOptions& opts = {});

/* ---- observables ------------------------------------------------------------ */

struct CurveNorms {
    double c1 = 0.0; // sup |dpsi/dtheta| over the samples
    double c2 = 0.0; // sup |d2psi/dtheta2|
};

CurveNorms curve_norms(const std::vector<CurvePoint>& curve);

/* Compare the chain-rule derivative recursions against central finite
 * differences of the curve itself at one angle.  Throws StencilError for
 * unusable h. */
struct DerivativeCheck {
    double rel_err_dtheta = 0.0;
    double rel_err_d2theta = 0.0;
    double rel_err_dE = 0.0;
    double rel_err_d2E = 0.0;
};

DerivativeCheck derivative_recursion_check(double theta, const CocycleParams& params,
                                           double omega, double h,
                                           const CurveOptions& opts = {});

/* Lyapunov exponent via the expanding section: average of log psi_u along
 * the orbit after burn_in.  Throws InvalidSection if the curve seed is
 * unusable. */
double lyapunov_via_section(const CurvePair& curve, const CocycleParams& params,
                            double omega, long long n_samples, long long burn_in);

} // namespace cocycle_lab
