#pragma once

#include <cstdint>
#include <vector>

#include "cocycle_lab/dd.hpp"
#include "cocycle_lab/errors.hpp"

namespace cocycle_lab {

/* ---- circle geometry ------------------------------------------------- */

/* Reduce to the fundamental domain [0, 1). */
inline double mod1(double x) {
    double f = x - std::floor(x);
    return (f >= 1.0) ? f - 1.0 : f; // floor rounding can leave f == 1.0
}

/* Distance on the circle R/Z, in [0, 1/2]. */
inline double circle_dist(double a, double b) {
    double d = mod1(a - b);
    return (d > 0.5) ? 1.0 - d : d;
}

/* Closed arc {theta : circle_dist(theta, center) <= halflength}. */
struct Arc {
    double center = 0.0;
    double halflength = 0.0;

    bool contains(double theta) const {
        return circle_dist(theta, center) <= halflength;
    }
};

inline Arc translate(Arc a, double shift) { return {mod1(a.center + shift), a.halflength}; }

inline bool arcs_intersect(const Arc& a, const Arc& b) {
    return circle_dist(a.center, b.center) <= a.halflength + b.halflength;
}

/* a entirely inside b. */
inline bool arc_subset(const Arc& a, const Arc& b) {
    if (a.halflength > b.halflength) return false;
    return circle_dist(a.center, b.center) <= b.halflength - a.halflength;
}

/* A finite union of arcs, visited by the rotation orbit. */
using IntervalSystem = std::vector<Arc>;

inline bool system_contains(const IntervalSystem& sys, double theta) {
    for (const Arc& a : sys)
        if (a.contains(theta)) return true;
    return false;
}

/* ---- rotation orbits -------------------------------------------------- */

/* Orbit theta_k = theta_0 + k*omega (mod 1) with compensated accumulation,
 * so the angle stays accurate to ~1 ulp over millions of steps. */
class RotationOrbit {
  public:
    RotationOrbit(double theta0, double omega)
        : theta_(frac(dd{theta0})), omega_(omega) {}

    double theta() const { return theta_.hi; }

    void advance() { theta_ = frac(add(theta_, omega_)); }
    void retreat() { theta_ = frac(add(theta_, -omega_)); }

    /* Jump straight to theta_0 + k*omega without walking. */
    static double at(double theta0, double omega, long long k) {
        dd t = add(dd{theta0}, mul(dd{omega}, static_cast<double>(k)));
        return frac(t).hi;
    }

  private:
    dd theta_;
    double omega_;
};

/* ---- Diophantine constants -------------------------------------------- */

/* ||q omega|| >= kappa / q^tau for all integers q >= 1, estimated from the
 * continued-fraction convergents of omega. */
struct DiophantineEstimate {
    double kappa = 0.0;
    double tau = 0.0;
    std::vector<long long> partial_quotients; // a_1, a_2, ...
    std::vector<long long> denominators;      // q_1 < q_2 < ...
};

/* Throws DegenerateRotation when omega is (numerically) rational. */
DiophantineEstimate estimate_diophantine(double omega, int n_max);

/* Constants a ladder/return-time computation depends on.  lambda is the
 * working coupling (sqrt of coupling * potential oscillation); c0 scales
 * the base interval.  Invalid/unset fields raise MissingSystemConstants. */
struct SystemConstants {
    double lambda = 0.0;
    double kappa = 0.0;
    double tau = 0.0;
    double c0 = 0.0;

    void validate() const {
        if (!(lambda > 1.0) || !(kappa > 0.0) || !(tau >= 1.0) || !(c0 > 0.0))
            throw LabError(ErrorCode::MissingSystemConstants,
                           "need lambda > 1, kappa > 0, tau >= 1, c0 > 0");
    }
};

/* Lower bound floor((kappa / len)^(1/tau)) on the first-return time of the
 * rotation to an interval of length len. */
double first_return_lower_bound(const SystemConstants& constants, double interval_length);

/* Observed visit statistics of an orbit against an interval system. */
struct VisitStats {
    double frequency = 0.0;   // fraction of the t samples inside the system
    long long visits = 0;     // number of samples inside
    long long first_entry = -1; // accumulation time a (-1: never entered)
    long long max_run = 0;    // longest block of consecutive inside-samples
    long long min_gap = 0;    // shortest outside-block between visits (0: none seen)
};

enum class Direction { Forward, Backward };

/* Walk theta_0, theta_±1, ..., theta_±(t-1) and tally membership. */
VisitStats empirical_visit_frequency(const IntervalSystem& system, double theta0,
                                     double omega, long long t, Direction direction);

} // namespace cocycle_lab
