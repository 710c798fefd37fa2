#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "cocycle_lab/errors.hpp"
#include "cocycle_lab/rotation.hpp"

namespace cocycle_lab {

/* ---- sampling function ------------------------------------------------ */

/* Potential sampled along the rotation orbit, with two derivatives. */
struct Potential {
    std::function<double(double)> v;
    std::function<double(double)> dv;
    std::function<double(double)> d2v;

    static Potential cosine(); // v(theta) = cos(2 pi theta)

    /* (1 - cos 2 pi theta)/2: oscillation 1, minimum 0 at theta = 0. */
    static Potential cosine_normalized();
};

/* Numerically locate min/max/argmin of a potential on the circle. */
struct PotentialRange {
    double min_value = 0.0;
    double max_value = 0.0;
    double argmin = 0.0;
};
PotentialRange scan_potential(const Potential& p, int grid = 1 << 16);

/* ---- cocycle parameters ------------------------------------------------ */

/* The projective fibre map is r' = lambda_sq * v(theta) - E - 1/r, the
 * projectivization of A_E(theta) = [[0, 1], [-1, lambda_sq*v(theta) - E]].
 * Fields are used literally by the fibre operations. */
struct CocycleParams {
    double lambda_sq = 0.0;
    double E = 0.0;
    Potential potential;

    double q(double theta) const { return lambda_sq * potential.v(theta) - E; }
};

/* Bookkeeping for the working normalization: shift the potential so its
 * minimum sits at 0 over theta = 0 and rescale so the oscillation is 1.
 * The energy absorbs lambda_sq * min(v); the coupling becomes
 * lambda_w^2 = lambda_sq * osc(v).  All structural constants (bands,
 * thresholds, ladder scales) are stated in terms of lambda_w. */
struct NormalizationInfo {
    double theta_shift = 0.0;  // working theta = raw theta - theta_shift
    double e_shift = 0.0;      // working E = raw E - e_shift
    double lambda_w_sq = 0.0;
};

struct NormalizedSystem {
    CocycleParams params; // normalized potential, working coupling/energy
    NormalizationInfo info;
};

NormalizedSystem normalize_system(const CocycleParams& raw);

/* ---- bands ------------------------------------------------------------- */

/* Invariant bands for the working coupling lambda = sqrt(lambda_w^2):
 * B = [lambda^-2, lambda^2], B^u = [lambda, lambda^2],
 * B^s = [lambda^-2, lambda^-1]. */
struct Bands {
    double lambda = 0.0;
    double b_lo() const { return 1.0 / (lambda * lambda); }
    double b_hi() const { return lambda * lambda; }
    double bu_lo() const { return lambda; }
    double bu_hi() const { return lambda * lambda; }
    double bs_lo() const { return 1.0 / (lambda * lambda); }
    double bs_hi() const { return 1.0 / lambda; }

    /* Finite-coupling slack: the exact invariant curves overshoot the
     * clean bands additively by ~|E| + 1, which is the relative margin
     * (16 + |E|) / lambda^2 used by every membership check. */
    static double slack(double lambda, double E) {
        return (16.0 + std::abs(E)) / (lambda * lambda);
    }
    bool in_b(double r, double eta) const {
        return r >= b_lo() * (1.0 - eta) && r <= b_hi() * (1.0 + eta);
    }
    bool in_bu(double r, double eta) const {
        return r >= bu_lo() * (1.0 - eta) && r <= bu_hi() * (1.0 + eta);
    }
    bool in_bs(double r, double eta) const {
        return r >= bs_lo() * (1.0 - eta) && r <= bs_hi() * (1.0 + eta);
    }
};

/* ---- fibre maps --------------------------------------------------------- */

/* One forward step r -> lambda_sq*v(theta) - E - 1/r.
 * Throws PoleHit at r = 0 and ScaleOverflow on non-finite results. */
double fibre_step(double theta, double r, const CocycleParams& params);

/* One backward step: the r at theta such that fibre_step(theta, r) = r_next,
 * i.e. r = 1/(lambda_sq*v(theta) - E - r_next).  Throws PoleHit when the
 * denominator vanishes. */
double fibre_unstep(double theta, double r_next, const CocycleParams& params);

/* Fibre value with first/second derivatives in theta and first/second in E,
 * advanced by the chain-rule recursions alongside the orbit. */
struct FibreState {
    double r = 0.0;
    double dr_dtheta = 0.0;
    double d2r_dtheta2 = 0.0;
    double dr_dE = 0.0;
    double d2r_dE2 = 0.0;
};

FibreState fibre_step_with_derivatives(double theta, const FibreState& state,
                                       const CocycleParams& params);

/* Backward variant; `theta` is the angle of the *returned* state. */
FibreState fibre_unstep_with_derivatives(double theta, const FibreState& state,
                                         const CocycleParams& params);

/* ---- matrix form --------------------------------------------------------- */

Eigen::Matrix2d cocycle_matrix(double theta, const CocycleParams& params);

/* 2-norm of A(theta_{n-1}) ... A(theta_0); ScaleOverflow when it exceeds
 * double range. */
double matrix_cocycle_norm(double theta0, double omega, int n, const CocycleParams& params);

/* log of the same norm, safe for large n. */
double matrix_cocycle_log_norm(double theta0, double omega, long long n,
                               const CocycleParams& params);

/* Cross-check that the Eigen matrix action and the scalar fibre recursion
 * tell the same story; throws FibreMismatch beyond rel_tol. */
void check_fibre_consistency(double theta, double r, const CocycleParams& params,
                             double rel_tol = 1e-12);

/* ---- coupled orbit pairs -------------------------------------------------- */

/* Two fibre orbits r_k >= s_k over one rotation orbit, the raw material of
 * the distance/distortion calculus. */
struct OrbitPair {
    double theta0 = 0.0;
    double omega = 0.0;
    std::vector<double> theta; // theta_0 ... theta_n
    std::vector<double> r;     // upper orbit
    std::vector<double> s;     // lower orbit
};

OrbitPair run_orbit_pair(const CocycleParams& params, double omega, double theta0,
                         double r0, double s0, long long n);

/* log D_{j,k} = -sum_{i=j..k} log(r_i s_i); D is the accumulated expansion
 * of the distance recursion d_{i+1} = d_i / (r_i s_i). */
double distance_product(const OrbitPair& orbits, long long j, long long k);

/* log Pi_{j,k}(s, r) = sum_{i=j..k} log(s_i / r_i) in [-inf, 0]. */
double distortion_product(const OrbitPair& orbits, long long j, long long k);

} // namespace cocycle_lab
