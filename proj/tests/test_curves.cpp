/* Invariant-section evaluation: frozen-point values, derivative recursions
 * vs finite differences, residuals, adaptive curve pairs, norms, and the
 * Lyapunov exponent through the expanding section.
 *
 * Frozen constants were produced by an independent high-precision oracle
 * for the working reference system (normalized cosine, coupling 60,
 * omega = (sqrt(5)-1)/4).  The lowest spectral edge of that system sits at
 * E0 = -0.048898729225385 in the working frame. */

#include <cmath>
#include <vector>

#include "doctest.h"

#include "cocycle_lab/curves.hpp"

#include "helpers.hpp"

using namespace cocycle_lab;
using test_util::rel_diff;
using test_util::throws_code;

namespace {
const double kOmega = (std::sqrt(5.0) - 1.0) / 4.0;
const double kE0 = -0.048898729225385; // frozen working-frame edge

CocycleParams working(double E) {
    return CocycleParams{60.0, E, Potential::cosine_normalized()};
}
} // namespace

TEST_CASE("frozen-point section values and derivatives") {
    const double theta = 0.37;
    CocycleParams p = working(kE0 - 0.1); // E = -0.148898729225385

    CurvePoint u = evaluate_unstable(theta, p, kOmega);
    CHECK(rel_diff(u.psi, 2.290745479682472) < 1e-9);
    CHECK(rel_diff(u.dpsi_dtheta, 70.258205891581) < 1e-4);
    CHECK(rel_diff(u.dpsi_dE, -1.001129356431920) < 1e-4);

    CurvePoint s = evaluate_stable(theta, p, kOmega);
    CHECK(rel_diff(s.psi, 0.019739755501405) < 1e-9);
    CHECK(rel_diff(s.dpsi_dtheta, -0.053410293456) < 1e-4);
    CHECK(rel_diff(s.dpsi_dE, 0.000396078679393) < 1e-4);

    /* residual column: the sampled section satisfies the fibre relation */
    CHECK(std::abs(u.residual) < 1e-6);
    CHECK(std::abs(s.residual) < 1e-6);

    /* double-double carry agrees with plain double well past the settle tol */
    CurveOptions dd_opts;
    dd_opts.use_dd = true;
    CurvePoint udd = evaluate_unstable(theta, p, kOmega, dd_opts);
    CurvePoint sdd = evaluate_stable(theta, p, kOmega, dd_opts);
    CHECK(std::abs(udd.psi - u.psi) < 1e-7);
    CHECK(std::abs(sdd.psi - s.psi) < 1e-7);
}

TEST_CASE("batch evaluation matches single-point evaluation") {
    CocycleParams p = working(kE0 - 0.1);
    std::vector<double> thetas = {0.11, 0.37, 0.62, 0.88};
    CurveOptions opts;
    opts.horizon = 8192; // fixed horizon: identical truncation on both paths
    std::vector<CurvePoint> batch = evaluate_unstable_many(thetas, p, kOmega, opts);
    REQUIRE(batch.size() == thetas.size());
    for (std::size_t i = 0; i < thetas.size(); ++i) {
        CurvePoint single = evaluate_unstable(thetas[i], p, kOmega, opts);
        CHECK(batch[i].psi == single.psi);
        CHECK(batch[i].dpsi_dtheta == single.dpsi_dtheta);
        CHECK(batch[i].dpsi_dE == single.dpsi_dE);
    }
}

TEST_CASE("derivative recursions agree with central differences of the section") {
    CocycleParams p = working(kE0 - 0.1);
    DerivativeCheck chk = derivative_recursion_check(0.37, p, kOmega, 1e-4);
    CHECK(chk.rel_err_dtheta < 1e-4);
    CHECK(chk.rel_err_d2theta < 1e-4);
    CHECK(chk.rel_err_dE < 1e-4);
    CHECK(chk.rel_err_d2E < 1e-4);

    CHECK(throws_code([&] { derivative_recursion_check(0.37, p, kOmega, 0.5); },
                      ErrorCode::StencilError));
    CHECK(throws_code([&] { derivative_recursion_check(0.37, p, kOmega, 0.0); },
                      ErrorCode::StencilError));
    CHECK(throws_code([&] { derivative_recursion_check(0.37, p, kOmega, 1e-15); },
                      ErrorCode::StencilError));
}

TEST_CASE("absence of a splitting is certified above the edge") {
    CHECK(throws_code([&] { evaluate_unstable(0.2, working(1.0), kOmega); },
                      ErrorCode::NotUniformlyHyperbolic));
}

TEST_CASE("auto horizon reports NoConvergence at an exhausted cap") {
    CocycleParams p = working(kE0 - 0.1);
    CurveOptions opts;
    opts.horizon_start = 1024;
    opts.horizon_cap = 1024; // the first doubling already exceeds the cap
    CHECK(throws_code([&] { evaluate_unstable(0.37, p, kOmega, opts); },
                      ErrorCode::NoConvergence));
}

TEST_CASE("sections are positive and ordered across the circle") {
    CocycleParams p = working(kE0 - 0.1);
    std::vector<double> thetas;
    for (int i = 0; i < 64; ++i) thetas.push_back(i / 64.0);
    std::vector<CurvePoint> u = evaluate_unstable_many(thetas, p, kOmega);
    std::vector<CurvePoint> s = evaluate_stable_many(thetas, p, kOmega);
    double band_hi = 60.0 * (1.0 + Bands::slack(std::sqrt(60.0), p.E));
    for (std::size_t i = 0; i < thetas.size(); ++i) {
        CHECK(s[i].psi > 0.0);
        CHECK(u[i].psi > s[i].psi);
        CHECK(u[i].psi < band_hi);
    }
}

TEST_CASE("adaptive curve pair resolves the collision gap") {
    const double dE = 1e-3;
    CocycleParams p = working(kE0 - dE);
    GridOptions grid;
    grid.base_log2 = 10;
    grid.max_points = 1 << 14;
    grid.orbit_windows = 4;
    grid.zoom_rounds = 2;
    grid.zoom_points = 129;
    CurvePair pair = build_curve_pair(p, kOmega, grid);

    REQUIRE(pair.unstable.size() == pair.stable.size());
    CHECK(pair.unstable.size() >= (1u << 10));
    for (std::size_t i = 1; i < pair.unstable.size(); ++i) {
        CHECK(pair.unstable[i].theta > pair.unstable[i - 1].theta);
        CHECK(pair.unstable[i].theta == pair.stable[i].theta);
    }

    /* the gap depth obeys the linear law delta ~ 1.0012 (E0 - E) and the
     * minimizer rides at theta_c ~ omega for the reference system */
    CHECK(pair.min_gap == doctest::Approx(1.001196 * dE).epsilon(5e-3));
    CHECK(circle_dist(pair.argmin_theta, kOmega) < 2e-3);

    /* norms recompute from the samples */
    CurveNorms nu = curve_norms(pair.unstable);
    double c1 = 0.0, c2 = 0.0;
    for (const CurvePoint& pt : pair.unstable) {
        c1 = std::max(c1, std::abs(pt.dpsi_dtheta));
        c2 = std::max(c2, std::abs(pt.d2psi_dtheta2));
    }
    CHECK(nu.c1 == c1);
    CHECK(nu.c2 == c2);
    CHECK(c1 > 0.0);
    CHECK(c2 > c1);
}

TEST_CASE("Lyapunov exponent through the expanding section") {
    CocycleParams p = working(kE0 - 0.1);
    GridOptions grid;
    grid.base_log2 = 9;
    grid.zoom_rounds = 0;
    CurvePair pair = build_curve_pair(p, kOmega, grid);
    double lyap = lyapunov_via_section(pair, p, kOmega, 200'000, 1'000);
    CHECK(lyap == doctest::Approx(2.789805).epsilon(1e-3));
}
