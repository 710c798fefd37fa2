/* Fibre maps, derivative recursions, the working normalization, matrix
 * cross-checks, and the coupled-orbit distance/distortion calculus.
 *
 * The distance/distortion identities are exact in real arithmetic, so they
 * are asserted directly at short range where no catastrophic cancellation
 * can occur; the harness identity suite stresses them at depth with a
 * backward-constructed lower orbit. */

#include <cmath>
#include <vector>

#include "doctest.h"

#include "cocycle_lab/cocycle.hpp"

#include "helpers.hpp"

using namespace cocycle_lab;
using test_util::rel_diff;
using test_util::throws_code;

namespace {
const double kOmega = (std::sqrt(5.0) - 1.0) / 4.0;
const double kPi = 3.14159265358979323846;

CocycleParams raw_reference(double E_raw) {
    return CocycleParams{30.0, E_raw, Potential::cosine()};
}

CocycleParams working_reference(double E_working) {
    return CocycleParams{60.0, E_working, Potential::cosine_normalized()};
}
} // namespace

TEST_CASE("built-in potentials and their derivatives") {
    Potential c = Potential::cosine();
    CHECK(c.v(0.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(c.v(0.5) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(std::abs(c.v(0.25)) < 1e-15);
    CHECK(std::abs(c.dv(0.0)) < 1e-12);
    CHECK(c.d2v(0.0) == doctest::Approx(-4.0 * kPi * kPi).epsilon(1e-12));

    Potential n = Potential::cosine_normalized();
    CHECK(std::abs(n.v(0.0)) < 1e-15);
    CHECK(n.v(0.5) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(n.d2v(0.0) == doctest::Approx(2.0 * kPi * kPi).epsilon(1e-12));
    /* centered finite differences agree with the stored derivatives */
    double h = 1e-5;
    for (double theta : {0.1, 0.37, 0.62, 0.93}) {
        CHECK(rel_diff((n.v(theta + h) - n.v(theta - h)) / (2 * h), n.dv(theta)) < 1e-8);
        CHECK(rel_diff((n.v(theta + h) - 2 * n.v(theta) + n.v(theta - h)) / (h * h),
                       n.d2v(theta)) < 1e-4);
    }
}

TEST_CASE("scan_potential finds range and minimizer") {
    PotentialRange rc = scan_potential(Potential::cosine());
    CHECK(rc.min_value == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(rc.max_value == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(circle_dist(rc.argmin, 0.5) < 1e-6);

    PotentialRange rn = scan_potential(Potential::cosine_normalized());
    CHECK(std::abs(rn.min_value) < 1e-10);
    CHECK(rn.max_value == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(circle_dist(rn.argmin, 0.0) < 1e-6);
}

TEST_CASE("normalize_system moves the reference into the working frame") {
    NormalizedSystem sys = normalize_system(raw_reference(-32.0));
    CHECK(sys.info.lambda_w_sq == doctest::Approx(60.0).epsilon(1e-12));
    CHECK(sys.info.e_shift == doctest::Approx(-30.0).epsilon(1e-12));
    CHECK(circle_dist(sys.info.theta_shift, 0.5) < 1e-6);
    CHECK(sys.params.lambda_sq == doctest::Approx(60.0).epsilon(1e-12));
    CHECK(sys.params.E == doctest::Approx(-2.0).epsilon(1e-12));

    PotentialRange r = scan_potential(sys.params.potential);
    CHECK(std::abs(r.min_value) < 1e-9);
    CHECK(r.max_value == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(circle_dist(r.argmin, 0.0) < 1e-5);

    /* q is frame-invariant: the fibre maps agree pointwise */
    for (double theta_raw : {0.0, 0.17, 0.5, 0.81}) {
        double theta_w = mod1(theta_raw - sys.info.theta_shift);
        CHECK(rel_diff(raw_reference(-32.0).q(theta_raw), sys.params.q(theta_w)) < 1e-11);
    }

    /* normalizing an already-normalized system is the identity */
    NormalizedSystem again = normalize_system(working_reference(-2.0));
    CHECK(std::abs(again.info.theta_shift) < 1e-6);
    CHECK(std::abs(again.info.e_shift) < 1e-9);
    CHECK(again.info.lambda_w_sq == doctest::Approx(60.0).epsilon(1e-9));
    CHECK(again.params.E == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("band geometry and slack") {
    Bands bands{std::sqrt(60.0)};
    CHECK(bands.b_lo() == doctest::Approx(1.0 / 60.0).epsilon(1e-14));
    CHECK(bands.b_hi() == doctest::Approx(60.0).epsilon(1e-14));
    CHECK(bands.bu_lo() == doctest::Approx(std::sqrt(60.0)).epsilon(1e-14));
    CHECK(bands.bs_hi() == doctest::Approx(1.0 / std::sqrt(60.0)).epsilon(1e-14));

    double eta = Bands::slack(std::sqrt(60.0), -2.0);
    CHECK(eta == doctest::Approx(18.0 / 60.0).epsilon(1e-14));
    CHECK(bands.in_b(60.0 * (1.0 + 0.9 * eta), eta));
    CHECK(!bands.in_b(60.0 * (1.0 + 1.1 * eta), eta));
    CHECK(bands.in_bs(1.0 / 60.0 * (1.0 - 0.9 * eta), eta));
    CHECK(!bands.in_b(1.0 / 60.0 * (1.0 - 1.1 * eta), eta));
    CHECK(bands.in_bu(std::sqrt(60.0), 0.0));
    CHECK(!bands.in_bu(1.0, eta));
}

TEST_CASE("fibre_step matches the formula and inverts") {
    CocycleParams p = working_reference(-2.0);
    for (double theta : {0.02, 0.3, 0.55, 0.9}) {
        for (double r : {0.05, 0.7, 3.0, 55.0, -1.2}) {
            double expect = p.q(theta) - 1.0 / r;
            CHECK(rel_diff(fibre_step(theta, r, p), expect) < 1e-15);
            CHECK(rel_diff(fibre_unstep(theta, fibre_step(theta, r, p), p), r) < 1e-12);
        }
    }
    CHECK(throws_code([&] { fibre_step(0.3, 0.0, p); }, ErrorCode::PoleHit));
    CHECK(throws_code([&] { fibre_unstep(0.3, p.q(0.3), p); }, ErrorCode::PoleHit));
}

TEST_CASE("fibre derivative recursions agree with finite differences") {
    /* analytic family r(theta, E) = 2 + sin(2 pi theta) + 0.3 E pushed through
     * one fibre step; compare the recursion output against central stencils
     * applied to scalar fibre_step evaluations of the same family */
    const double theta0 = 0.13, E0 = -2.0;
    auto family = [](double theta, double E) {
        return 2.0 + std::sin(2.0 * kPi * theta) + 0.3 * E;
    };
    CocycleParams p = working_reference(E0);

    FibreState state;
    state.r = family(theta0, E0);
    state.dr_dtheta = 2.0 * kPi * std::cos(2.0 * kPi * theta0);
    state.d2r_dtheta2 = -4.0 * kPi * kPi * std::sin(2.0 * kPi * theta0);
    state.dr_dE = 0.3;
    state.d2r_dE2 = 0.0;

    FibreState next = fibre_step_with_derivatives(theta0, state, p);
    CHECK(rel_diff(next.r, fibre_step(theta0, state.r, p)) < 1e-15);

    auto g_theta = [&](double theta) { return fibre_step(theta, family(theta, E0), p); };
    double h = 1e-5;
    CHECK(rel_diff((g_theta(theta0 + h) - g_theta(theta0 - h)) / (2 * h), next.dr_dtheta) < 1e-8);
    double h2 = 1e-4;
    CHECK(rel_diff((g_theta(theta0 + h2) - 2 * g_theta(theta0) + g_theta(theta0 - h2)) / (h2 * h2),
                   next.d2r_dtheta2) < 1e-5);

    auto g_E = [&](double E) {
        CocycleParams pe = p;
        pe.E = E;
        return fibre_step(theta0, family(theta0, E), pe);
    };
    CHECK(rel_diff((g_E(E0 + h) - g_E(E0 - h)) / (2 * h), next.dr_dE) < 1e-8);
    CHECK(rel_diff((g_E(E0 + h2) - 2 * g_E(E0) + g_E(E0 - h2)) / (h2 * h2), next.d2r_dE2) < 1e-4);

    /* backward recursion inverts the forward one, derivatives included */
    FibreState back = fibre_unstep_with_derivatives(theta0, next, p);
    CHECK(rel_diff(back.r, state.r) < 1e-12);
    CHECK(rel_diff(back.dr_dtheta, state.dr_dtheta) < 1e-10);
    CHECK(rel_diff(back.d2r_dtheta2, state.d2r_dtheta2) < 1e-9);
    CHECK(rel_diff(back.dr_dE, state.dr_dE) < 1e-10);
    CHECK(std::abs(back.d2r_dE2 - state.d2r_dE2) < 1e-9);
}

TEST_CASE("matrix form matches the scalar recursion") {
    CocycleParams p = raw_reference(0.0);
    Eigen::Matrix2d a = cocycle_matrix(0.0, p);
    CHECK(a(0, 0) == 0.0);
    CHECK(a(0, 1) == 1.0);
    CHECK(a(1, 0) == -1.0);
    CHECK(a(1, 1) == doctest::Approx(30.0).epsilon(1e-15));

    /* ||A|| for A = [[0,1],[-1,q]] in closed form: the Gram matrix has
     * trace q^2 + 2 and determinant 1 */
    double q = 30.0;
    double tr = q * q + 2.0;
    double expect = std::sqrt((tr + std::sqrt(tr * tr - 4.0)) / 2.0);
    CHECK(rel_diff(matrix_cocycle_norm(0.0, kOmega, 1, p), expect) < 1e-12);

    double n7 = matrix_cocycle_norm(0.0, kOmega, 7, p);
    CHECK(rel_diff(std::log(n7), matrix_cocycle_log_norm(0.0, kOmega, 7, p)) < 1e-9);

    /* super-critical growth overflows the plain norm but not the log */
    CHECK(throws_code([&] { matrix_cocycle_norm(0.0, kOmega, 400, p); },
                      ErrorCode::ScaleOverflow));
    double logn = matrix_cocycle_log_norm(0.0, kOmega, 400, p);
    CHECK(logn > 900.0);
    CHECK(logn < 1300.0);

    CHECK_NOTHROW(check_fibre_consistency(0.3, 2.0, p));
    CHECK_NOTHROW(check_fibre_consistency(0.77, -0.4, p));
}

TEST_CASE("coupled orbit pairs satisfy the distance calculus") {
    CocycleParams p = working_reference(-2.0);
    const double theta0 = 0.02;
    const long long n = 4;
    OrbitPair pair = run_orbit_pair(p, kOmega, theta0, 50.0, 0.6, n);
    REQUIRE(pair.r.size() == n + 1);
    REQUIRE(pair.s.size() == n + 1);
    REQUIRE(pair.theta.size() == n + 1);

    /* orbits follow the scalar map and stay ordered */
    for (long long k = 0; k < n; ++k) {
        CHECK(rel_diff(pair.r[k + 1], fibre_step(pair.theta[k], pair.r[k], p)) < 1e-14);
        CHECK(rel_diff(pair.s[k + 1], fibre_step(pair.theta[k], pair.s[k], p)) < 1e-14);
        CHECK(pair.s[k] < pair.r[k]);
    }

    /* distance recursion d_{k+1} = d_k / (r_k s_k), exact in real arithmetic;
     * the last step sits near the cancellation floor of r - s, hence 1e-5 */
    for (long long k = 0; k < n; ++k) {
        double lhs = pair.r[k + 1] - pair.s[k + 1];
        double rhs = (pair.r[k] - pair.s[k]) / (pair.r[k] * pair.s[k]);
        CHECK(rel_diff(lhs, rhs) < 1e-5);
    }

    /* accumulated products against direct sums of logs */
    double sum_log = 0.0;
    for (long long i = 0; i <= 3; ++i) sum_log -= std::log(pair.r[i] * pair.s[i]);
    CHECK(rel_diff(distance_product(pair, 0, 3), sum_log) < 1e-12);

    double d0 = pair.r[0] - pair.s[0];
    double d4 = pair.r[4] - pair.s[4];
    CHECK(rel_diff(d4 / d0, std::exp(distance_product(pair, 0, 3))) < 1e-5);

    double sum_pi = 0.0;
    for (long long i = 0; i <= 3; ++i) sum_pi += std::log(pair.s[i] / pair.r[i]);
    double log_pi = distortion_product(pair, 0, 3);
    CHECK(rel_diff(log_pi, sum_pi) < 1e-12);
    CHECK(log_pi <= 0.0);
    CHECK(distortion_product(pair, 1, 2) <= 0.0);

    /* reversed-quotient identity at a single index:
     * (r_j/s_j) / (s_j/r_j) = 1 + (r_j + s_j) d_{j+1} (r_j/s_j) */
    for (long long j = 0; j < n; ++j) {
        double rj = pair.r[j], sj = pair.s[j];
        double lhs = (rj * rj) / (sj * sj);
        double rhs = 1.0 + (rj + sj) * (pair.r[j + 1] - pair.s[j + 1]) * (rj / sj);
        CHECK(rel_diff(lhs, rhs) < 1e-8);
    }

    /* monotonicity: a middle seed stays between the outer orbits */
    OrbitPair mid = run_orbit_pair(p, kOmega, theta0, 50.0, 0.8, n);
    for (long long k = 0; k <= n; ++k) {
        CHECK(pair.s[k] <= mid.s[k]);
        CHECK(mid.s[k] <= pair.r[k]);
    }

    /* distortion comparison: the closer pair has the milder product */
    OrbitPair close = run_orbit_pair(p, kOmega, theta0, 50.0, 0.8, n);
    CHECK(distortion_product(close, 0, 3) >= distortion_product(pair, 0, 3));
}
