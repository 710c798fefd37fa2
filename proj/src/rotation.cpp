#include "cocycle_lab/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cocycle_lab {

namespace {

/* ||x|| = distance to the nearest integer. */
double dist_to_integer(double x) {
    double f = x - std::round(x);
    return std::abs(f);
}

/* ||q * omega|| in double-double, exact q. */
double norm_q_omega(double omega, long long q) {
    dd p = mul(dd{omega}, static_cast<double>(q));
    dd f = frac(p);
    return std::min(f.hi, 1.0 - f.hi + (-f.lo)); // distance to 0 or 1
}

} // namespace

DiophantineEstimate estimate_diophantine(double omega, int n_max) {
    omega = mod1(omega);
    DiophantineEstimate est;

    /* Continued fraction of omega by the Gauss map; stop when the remainder
     * is consistent with a rational (below double resolution) or when the
     * denominator outgrows what a double orbit can distinguish. */
    double x = omega;
    long long q_prev = 0, q_cur = 1; // q_{-1} = 0, q_0 = 1
    const double eps = 1e-12;
    for (int i = 0; i < n_max; ++i) {
        if (x < eps) break;
        double inv = 1.0 / x;
        double a_d = std::floor(inv);
        if (a_d > 1e15) break;
        long long a = static_cast<long long>(a_d);
        x = inv - a_d;
        long long q_next = a * q_cur + q_prev;
        if (q_next > (1LL << 48)) break; // beyond double's angular resolution
        /* The continued fraction of the stored double tracks the intended
         * real number only while the convergent remainder ~1/(q_k q_{k+1})
         * clears the rounding floor; past that the quotients describe the
         * double's own rationality and would corrupt kappa. */
        if (static_cast<double>(q_cur) * static_cast<double>(q_next) >
            1e-2 / std::numeric_limits<double>::epsilon())
            break;
        q_prev = q_cur;
        q_cur = q_next;
        est.partial_quotients.push_back(a);
        est.denominators.push_back(q_cur);
    }

    if (est.denominators.size() < 3)
        throw LabError(ErrorCode::DegenerateRotation,
                       "fewer than 3 convergents; rotation number is (numerically) rational");

    /* tau from the least-squares slope of -log||q_n omega|| vs log q_n,
     * clamped below by the Diophantine-optimal value 1. */
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (long long q : est.denominators) {
        if (q < 2) continue;
        double lx = std::log(static_cast<double>(q));
        double ly = -std::log(norm_q_omega(omega, q));
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly;
        ++n;
    }
    double fit_denom = n * sxx - sx * sx;
    double slope = (n * sxy - sx * sy) / fit_denom;

    /* Bounded-type rotations fit slope = 1 + O(1e-3) of small-sample noise;
     * certify an exponent above the Diophantine-optimal 1 only when the
     * slope clears its own standard error decisively. */
    double intercept = (sy - slope * sx) / n;
    double ss = 0.0;
    for (long long q : est.denominators) {
        if (q < 2) continue;
        double lx = std::log(static_cast<double>(q));
        double ly = -std::log(norm_q_omega(omega, q));
        double r = ly - slope * lx - intercept;
        ss += r * r;
    }
    double stderr_slope = (n > 2) ? std::sqrt(ss / (n - 2) * n / fit_denom) : 0.0;
    est.tau = (slope > 1.0 + 2.0 * stderr_slope) ? slope : 1.0;

    /* kappa = min over convergents of q^tau * ||q omega||.  For q between
     * consecutive denominators ||q omega|| >= ||q_k omega|| >= kappa/q_k^tau,
     * so the minimum over this list (seeded with q = 1, the 0th convergent)
     * certifies every q >= 1. */
    double kappa = std::min(1.0, norm_q_omega(omega, 1));
    for (long long q : est.denominators)
        kappa = std::min(kappa, std::pow(static_cast<double>(q), est.tau) * norm_q_omega(omega, q));
    est.kappa = kappa;
    return est;
}

double first_return_lower_bound(const SystemConstants& constants, double interval_length) {
    constants.validate();
    if (!(interval_length > 0.0))
        throw LabError(ErrorCode::MissingSystemConstants, "interval_length must be positive");
    if (interval_length >= 1.0) return 0.0;
    return std::floor(std::pow(constants.kappa / interval_length, 1.0 / constants.tau));
}

VisitStats empirical_visit_frequency(const IntervalSystem& system, double theta0,
                                     double omega, long long t, Direction direction) {
    if (t <= 0)
        throw LabError(ErrorCode::HorizonExceeded, "orbit length must be positive");

    VisitStats stats;
    RotationOrbit orbit(theta0, omega);
    long long run = 0, gap = 0;
    bool was_inside = false, seen_inside = false;
    for (long long k = 0; k < t; ++k) {
        bool inside = system_contains(system, orbit.theta());
        if (inside) {
            ++stats.visits;
            if (stats.first_entry < 0) stats.first_entry = k;
            if (seen_inside && !was_inside && gap > 0)
                stats.min_gap = (stats.min_gap == 0) ? gap : std::min(stats.min_gap, gap);
            run = was_inside ? run + 1 : 1;
            stats.max_run = std::max(stats.max_run, run);
            seen_inside = true;
            gap = 0;
        } else {
            run = 0;
            if (seen_inside) ++gap;
        }
        was_inside = inside;
        if (direction == Direction::Forward)
            orbit.advance();
        else
            orbit.retreat();
    }
    stats.frequency = static_cast<double>(stats.visits) / static_cast<double>(t);
    return stats;
}

} // namespace cocycle_lab
