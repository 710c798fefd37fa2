#pragma once

#include <optional>
#include <vector>

#include "cocycle_lab/cocycle.hpp"
#include "cocycle_lab/curves.hpp"
#include "cocycle_lab/rotation.hpp"

namespace cocycle_lab {

/* ---- scale ladder ---------------------------------------------------------- */

/* One level of the inductive scale hierarchy: critical arc I_n around the
 * potential minimum, recovery scale M_n, and the Diophantine first-return
 * lower bound N_n for arcs of length |I_n|. */
struct LadderLevel {
    int n = 0;
    Arc I;
    double M = 0.0;            // integer-valued; double because M_2 explodes
    double N = 0.0;
    bool M_degenerate = false; // M_n == 1: scales no longer separate
    /* Energy bracket endpoints filled in by bracket_level_energies. */
    std::optional<double> E_minus, E_plus;
};

struct ScaleLadder {
    SystemConstants constants;
    double omega = 0.0;
    std::vector<LadderLevel> levels;
    /* True when levels stop before the requested max_level because M or
     * 1/|I| left the representable range. */
    bool truncated = false;
};

/* Build levels 0..max_level (hard-capped at 2):
 *   |I_0| = c0 / sqrt(lambda),      M_0 = floor(lambda^{1/(4 tau)}),
 *   |I_j| = c0 / lambda^{M_{j-1}/2}, M_j = floor(lambda^{M_{j-1}/(4 tau)}),
 *   N_j  = first-return bound for |I_j|.
 * Throws CouplingTooSmall when M_0 < 1; levels that overflow are dropped
 * with `truncated` set. */
ScaleLadder build_ladder(const SystemConstants& constants, double omega, int max_level);

/* The smallest c0 such that the sublevel set {v <= 10/lambda} fits in an arc
 * of length c0/sqrt(lambda) centered at the minimum of v. */
double potential_c0(const Potential& p, double lambda);

/* ---- exception regions ------------------------------------------------------ */

/* Forward exceptional system at level n: union of I_i + m*omega over
 * i <= n, 1 <= m <= M_i.  Materializes the arcs; throws LadderExhausted
 * when some M_i is too large to enumerate. */
IntervalSystem xi_u(const ScaleLadder& ladder, int n);
/* Backward counterpart: I_i - m*omega, 0 <= m <= M_i. */
IntervalSystem xi_s(const ScaleLadder& ladder, int n);

/* Sorted, merged, pairwise-disjoint representation of an arc union (the
 * canonical form; set algebra on it is order-independent). */
IntervalSystem normalize_arcs(const IntervalSystem& sys);
double system_measure(const IntervalSystem& sys);

/* Membership in Theta_n = circle minus (Xi_u union Xi_s); n = -1 is the
 * whole circle. */
bool in_theta(const ScaleLadder& ladder, int n, double theta);

/* ---- conditions ------------------------------------------------------------- */

/* (C2)_n: the arcs I_n +- (M_n + i) omega, i = 0,1, avoid the level-(n-1)
 * exception systems.  Pure arc algebra. */
struct C2Report {
    bool pass = false;
    double clearance = 0.0; // smallest signed gap to the exception arcs
};
C2Report check_condition_C2(const ScaleLadder& ladder, int n);

/* (C1)_n sampled: (theta0, r0) in Theta_{n-1} x B^u iterated forward to the
 * first entry of I_n must keep r in B, and may leave B^u only over
 * Xi^u_{n-1}; mirrored backward for B^s with target I_n + omega.  Band
 * membership uses the finite-coupling slack. */
struct C1Report {
    bool pass = false;
    bool inconclusive = false; // no samples requested: vacuous
    long long seeds = 0;
    long long violations = 0;
    double worst_clearance = 0.0; // most negative relative band clearance
    long long max_first_entry = 0;
    /* First counterexample, if any. */
    std::optional<double> bad_theta0, bad_r0;
    std::optional<long long> bad_step;
};
C1Report check_condition_C1(const ScaleLadder& ladder, int n, const CocycleParams& params,
                            long long samples, unsigned rng_seed = 1234);

/* ---- box images -------------------------------------------------------------- */

/* Boundary sections of the forward/backward box images over I_n + omega:
 * side u: r = lambda, lambda^2 over I_n - M_n*omega advanced M_n + 1 steps;
 * side s: r = lambda^-2, lambda^-1 over I_n + M_n*omega pulled back
 * M_n - 1 steps. */
struct BoxImage {
    int n = 0;
    char side = 'u';
    std::vector<double> theta; // grid over I_n + omega
    std::vector<double> lower, upper;
};

struct BoxImagePair {
    BoxImage u, s;
    double min_separation = 0.0; // min over grid of (u.lower - s.upper)
    double argmin_theta = 0.0;
    bool disjoint = false;
    /* Smallest separation outside the middle third of I_n + omega; the
     * construction requires it to stay positive throughout the bracket. */
    double min_separation_outer = 0.0;
};

BoxImagePair box_images(const ScaleLadder& ladder, int n, const CocycleParams& params,
                        int grid_points = 257);

/* Bisect the level-n energy bracket from the box geometry:
 * E_minus = sup{E : images disjoint} (tangency, unique touching point in
 * the middle third); E_plus = sup{E : outer separation stays positive}
 * (first structural failure past tangency).  Fills ladder.levels[n]. */
void bracket_level_energies(ScaleLadder& ladder, int n, const CocycleParams& params,
                            double E_lo, double E_hi, double tol, int grid_points = 257);

/* ---- stopping times ---------------------------------------------------------- */

struct StoppingTimes {
    double theta = 0.0;
    long long sigma_plus = 0, sigma_minus = 0;
    long long sigma_hat_plus = 0, sigma_hat_minus = 0;
    double eta = 0.0; // max relative gap (sigma - sigma_hat)/sigma, this theta
};

/* Walk the rotation orbit of theta both ways, evaluating the gap
 * psi_u - psi_s directly, until it exceeds lambda^-3; sigma_hat excludes
 * tail indices falling in the inflated systems I_j + m*omega,
 * -M_j <= m <= 20*2^j M_j.  Requires d(theta) < lambda^-3
 * (NotInCollisionWindow otherwise). */
StoppingTimes stopping_times(const ScaleLadder& ladder, double theta,
                             const CocycleParams& params, const CurveOptions& opts = {});

/* ---- interval selection ------------------------------------------------------- */

/* I(E) = I_k + omega for the unique k with
 * N_{k-1}/30 <= max(sigma+, sigma-) < N_k/30; I_0 + omega when the maxima
 * sit below N_0/30; LadderExhausted when no materialized level satisfies
 * the sandwich. */
Arc select_critical_interval(const ScaleLadder& ladder, long long sigma_plus_max,
                             long long sigma_minus_max);

/* ---- interval-system counting bounds ------------------------------------------ */

/* Analytic (min-return, max-confinement) pair for the union
 * of I + m*omega, |m| <= spread, from the Diophantine first-return bound:
 * r = N(|I|) - 2*spread - 1, l = 2*spread + 1. */
struct SystemBounds {
    double min_return = 0.0;
    double max_confinement = 0.0;
    /* Frequency bound l/t + l/(r + l) of the visit-counting lemma. */
    double frequency_bound(double t) const;
};
SystemBounds interval_system_bounds(const SystemConstants& constants, double arc_length,
                                    long long spread);

} // namespace cocycle_lab
