#include "cocycle_lab/ladder.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>

namespace cocycle_lab {

namespace {

/* Largest M we are willing to enumerate arc-by-arc.  Levels beyond this are
 * outside the computable range (M_1 ~ lambda^{M_0/4} at real couplings). */
constexpr double kMaterializeCap = 2.0e6;

double level_length(const LadderLevel& lv) { return std::min(1.0, 2.0 * lv.I.halflength); }

const LadderLevel& level_at(const ScaleLadder& ladder, int n, const char* who) {
    if (n < 0 || n >= static_cast<int>(ladder.levels.size()))
        throw LabError(ErrorCode::LadderExhausted,
                       std::string(who) + ": level " + std::to_string(n) +
                           " was not built (ladder has " +
                           std::to_string(ladder.levels.size()) + " levels)");
    return ladder.levels[static_cast<size_t>(n)];
}

void append_translates(IntervalSystem& out, const Arc& base, double omega, long long m_lo,
                       long long m_hi) {
    for (long long m = m_lo; m <= m_hi; ++m)
        out.push_back(Arc{RotationOrbit::at(base.center, omega, m), base.halflength});
}

/* theta in union of I + m*omega for m in [m_lo, m_hi], by enumeration. */
bool hits_translates(double theta, const Arc& base, double omega, long long m_lo,
                     long long m_hi) {
    for (long long m = m_lo; m <= m_hi; ++m)
        if (circle_dist(theta, RotationOrbit::at(base.center, omega, m)) <= base.halflength)
            return true;
    return false;
}

} // namespace

/* ---- construction ------------------------------------------------------ */

double potential_c0(const Potential& p, double lambda) {
    if (!(lambda > 1.0))
        throw LabError(ErrorCode::MissingSystemConstants, "potential_c0 needs lambda > 1");
    const int n = 1 << 16;
    PotentialRange range = scan_potential(p, n);
    const double threshold = range.min_value + 10.0 / lambda;
    double extent = 0.0;
    for (int i = 0; i < n; ++i) {
        double theta = static_cast<double>(i) / n;
        if (p.v(theta) <= threshold)
            extent = std::max(extent, circle_dist(theta, range.argmin));
    }
    extent = std::min(0.5, extent + 1.0 / n); // cover the sampling gap
    return 2.0 * extent * std::sqrt(lambda);
}

ScaleLadder build_ladder(const SystemConstants& constants, double omega, int max_level) {
    constants.validate();
    if (max_level < 0 || max_level > 2)
        throw LabError(ErrorCode::LadderExhausted, "max_level must be 0, 1 or 2");

    const double lambda = constants.lambda;
    const double log_lambda = std::log(lambda);
    double M0 = std::floor(std::exp(log_lambda / (4.0 * constants.tau)));
    if (!(M0 >= 1.0))
        throw LabError(ErrorCode::CouplingTooSmall,
                       "lambda^{1/(4 tau)} < 1: no base recovery scale");

    ScaleLadder ladder;
    ladder.constants = constants;
    ladder.omega = omega;

    double M_prev = 0.0;
    for (int n = 0; n <= max_level; ++n) {
        /* |I_n| = c0 / lambda^{M_{n-1}/2} with M_{-1} := 1/(2 tau) so the
         * base case reads |I_0| = c0 / sqrt(lambda). */
        double length_exponent = (n == 0) ? 0.5 : M_prev / 2.0;
        double log10_len = std::log10(constants.c0) - length_exponent * std::log10(lambda);
        if (log10_len < -290.0) { // length underflows: stop materializing
            ladder.truncated = true;
            break;
        }
        double len = std::min(1.0, constants.c0 * std::exp(-length_exponent * log_lambda));

        double M;
        if (n == 0) {
            M = M0;
        } else {
            double log10_M = (M_prev / (4.0 * constants.tau)) * std::log10(lambda);
            if (log10_M > 17.0) { // past exact integer range: stop
                ladder.truncated = true;
                break;
            }
            M = std::floor(std::exp((M_prev / (4.0 * constants.tau)) * log_lambda));
        }

        LadderLevel lv;
        lv.n = n;
        lv.I = Arc{0.0, len / 2.0};
        lv.M = M;
        lv.N = first_return_lower_bound(constants, len);
        lv.M_degenerate = (M <= 1.0);
        ladder.levels.push_back(lv);
        M_prev = M;
    }
    if (ladder.levels.empty())
        throw LabError(ErrorCode::CouplingTooSmall, "no representable ladder level");
    return ladder;
}

/* ---- exception regions --------------------------------------------------- */

IntervalSystem xi_u(const ScaleLadder& ladder, int n) {
    IntervalSystem out;
    for (int i = 0; i <= n; ++i) {
        const LadderLevel& lv = level_at(ladder, i, "xi_u");
        if (lv.M > kMaterializeCap)
            throw LabError(ErrorCode::LadderExhausted,
                           "xi_u: M_" + std::to_string(i) + " too large to enumerate");
        append_translates(out, lv.I, ladder.omega, 1, static_cast<long long>(lv.M));
    }
    return out;
}

IntervalSystem xi_s(const ScaleLadder& ladder, int n) {
    IntervalSystem out;
    for (int i = 0; i <= n; ++i) {
        const LadderLevel& lv = level_at(ladder, i, "xi_s");
        if (lv.M > kMaterializeCap)
            throw LabError(ErrorCode::LadderExhausted,
                           "xi_s: M_" + std::to_string(i) + " too large to enumerate");
        append_translates(out, lv.I, ladder.omega, -static_cast<long long>(lv.M), 0);
    }
    return out;
}

IntervalSystem normalize_arcs(const IntervalSystem& sys) {
    /* Unroll to segments starting in [0, 1), sweep-merge on the line, then
     * fold the component that spills past 1 back onto the leading ones. */
    struct Seg {
        double s, e;
    };
    std::vector<Seg> segs;
    for (const Arc& a : sys) {
        double len = std::min(1.0, 2.0 * a.halflength);
        if (len >= 1.0) return {Arc{0.5, 0.5}}; // a full-circle arc dominates
        if (len <= 0.0) continue;
        double s = mod1(a.center - a.halflength);
        segs.push_back({s, s + len});
    }
    if (segs.empty()) return {};
    std::sort(segs.begin(), segs.end(), [](const Seg& a, const Seg& b) { return a.s < b.s; });

    std::vector<Seg> merged;
    for (const Seg& g : segs) {
        if (!merged.empty() && g.s <= merged.back().e)
            merged.back().e = std::max(merged.back().e, g.e);
        else
            merged.push_back(g);
    }

    /* The last component may wrap past 1 and swallow leading components
     * (closed arcs: touching endpoints merge). */
    while (merged.size() > 1 && merged.back().e - 1.0 >= merged.front().s) {
        merged.back().e = std::max(merged.back().e, merged.front().e + 1.0);
        merged.erase(merged.begin());
    }

    double covered = 0.0;
    for (const Seg& g : merged) covered += g.e - g.s;
    if (covered >= 1.0) return {Arc{0.5, 0.5}};

    IntervalSystem out;
    for (const Seg& g : merged) out.push_back(Arc{mod1((g.s + g.e) / 2.0), (g.e - g.s) / 2.0});
    std::sort(out.begin(), out.end(), [](const Arc& a, const Arc& b) {
        return mod1(a.center - a.halflength) < mod1(b.center - b.halflength);
    });
    return out;
}

double system_measure(const IntervalSystem& sys) {
    double total = 0.0;
    for (const Arc& a : normalize_arcs(sys)) total += std::min(1.0, 2.0 * a.halflength);
    return std::min(1.0, total);
}

bool in_theta(const ScaleLadder& ladder, int n, double theta) {
    if (n < 0) return true;
    return !system_contains(xi_u(ladder, n), theta) &&
           !system_contains(xi_s(ladder, n), theta);
}

/* ---- conditions ------------------------------------------------------------ */

C2Report check_condition_C2(const ScaleLadder& ladder, int n) {
    const LadderLevel& lv = level_at(ladder, n, "check_condition_C2");
    if (lv.M > static_cast<double>(std::numeric_limits<long long>::max()))
        throw LabError(ErrorCode::LadderExhausted, "check_condition_C2: M_n not an exact integer");
    const long long M = static_cast<long long>(lv.M);

    IntervalSystem exceptions;
    if (n >= 1) {
        exceptions = xi_u(ladder, n - 1);
        IntervalSystem s = xi_s(ladder, n - 1);
        exceptions.insert(exceptions.end(), s.begin(), s.end());
    }

    C2Report report;
    report.clearance = 0.5; // largest possible circular clearance
    for (int i = 0; i <= 1; ++i) {
        for (int sign : {+1, -1}) {
            Arc probe{RotationOrbit::at(lv.I.center, ladder.omega, sign * (M + i)),
                      lv.I.halflength};
            for (const Arc& ex : exceptions) {
                double gap = circle_dist(probe.center, ex.center) -
                             (probe.halflength + ex.halflength);
                report.clearance = std::min(report.clearance, gap);
            }
        }
    }
    report.pass = report.clearance > 0.0;
    return report;
}

C1Report check_condition_C1(const ScaleLadder& ladder, int n, const CocycleParams& params,
                            long long samples, unsigned rng_seed) {
    const LadderLevel& lv = level_at(ladder, n, "check_condition_C1");
    const double lambda = ladder.constants.lambda;
    const Bands bands{lambda};
    const double eta = Bands::slack(lambda, params.E);

    C1Report report;
    if (samples <= 0) {
        report.pass = true;
        report.inconclusive = true; // vacuous: nothing was exercised
        return report;
    }

    IntervalSystem exc_u, exc_s;
    if (n >= 1) {
        exc_u = xi_u(ladder, n - 1);
        exc_s = xi_s(ladder, n - 1);
    }
    IntervalSystem theta_forbidden = exc_u;
    theta_forbidden.insert(theta_forbidden.end(), exc_s.begin(), exc_s.end());

    const Arc target_fwd = lv.I;
    const Arc target_bwd = translate(lv.I, ladder.omega);
    const long long step_cap = std::max<long long>(
        1'000'000, static_cast<long long>(100.0 / std::max(1e-12, level_length(lv))));

    std::mt19937_64 gen(rng_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    report.pass = true;
    report.worst_clearance = std::numeric_limits<double>::infinity();

    auto record_violation = [&](double theta0, double r0, long long step) {
        ++report.violations;
        report.pass = false;
        if (!report.bad_theta0) {
            report.bad_theta0 = theta0;
            report.bad_r0 = r0;
            report.bad_step = step;
        }
    };

    /* Signed relative clearance of r to a band [lo, hi], slack folded in:
     * negative means outside even with the slack. */
    auto clearance = [&](double r, double lo, double hi) {
        return std::min(r / (lo * (1.0 - eta)) - 1.0, 1.0 - r / (hi * (1.0 + eta)));
    };

    for (long long s = 0; s < samples; ++s) {
        /* Rejection-sample theta0 in Theta_{n-1}. */
        double theta0 = 0.0;
        bool placed = false;
        for (int tries = 0; tries < 10'000; ++tries) {
            theta0 = unif(gen);
            if (!system_contains(theta_forbidden, theta0)) {
                placed = true;
                break;
            }
        }
        if (!placed)
            throw LabError(ErrorCode::LadderExhausted,
                           "check_condition_C1: Theta_{n-1} has negligible measure");

        const bool forward = (s % 2 == 0);
        const double log_lo = forward ? std::log(bands.bu_lo()) : std::log(bands.bs_lo());
        const double log_hi = forward ? std::log(bands.bu_hi()) : std::log(bands.bs_hi());
        const double r0 = std::exp(log_lo + (log_hi - log_lo) * unif(gen));
        const Arc& target = forward ? target_fwd : target_bwd;
        const IntervalSystem& exempt = forward ? exc_u : exc_s;

        RotationOrbit orbit(theta0, ladder.omega);
        double r = r0;
        long long k = 0;
        ++report.seeds;
        while (true) {
            const double theta_k = orbit.theta();
            double c_b = clearance(r, bands.b_lo(), bands.b_hi());
            report.worst_clearance = std::min(report.worst_clearance, c_b);
            if (c_b < 0.0) {
                record_violation(theta0, r0, forward ? k : -k);
            } else {
                double c_band = forward ? clearance(r, bands.bu_lo(), bands.bu_hi())
                                        : clearance(r, bands.bs_lo(), bands.bs_hi());
                if (c_band < 0.0 && !system_contains(exempt, theta_k))
                    record_violation(theta0, r0, forward ? k : -k);
            }
            /* First entry into the target arc ends the requirement, time
             * zero included: at level 0 the admissible seeds cover the whole
             * circle, and a seed already over the target would otherwise be
             * marched across the potential minimum, where no finite coupling
             * keeps r in the side band. */
            if (target.contains(theta_k)) break;
            if (k >= step_cap)
                throw LabError(ErrorCode::HorizonExceeded,
                               "check_condition_C1: no entry into the target arc within " +
                                   std::to_string(step_cap) + " steps");
            if (forward) {
                r = fibre_step(theta_k, r, params);
                orbit.advance();
            } else {
                orbit.retreat();
                r = fibre_unstep(orbit.theta(), r, params);
            }
            ++k;
        }
        report.max_first_entry = std::max(report.max_first_entry, k);
    }
    return report;
}

/* ---- box images --------------------------------------------------------------- */

BoxImagePair box_images(const ScaleLadder& ladder, int n, const CocycleParams& params,
                        int grid_points) {
    const LadderLevel& lv = level_at(ladder, n, "box_images");
    if (lv.M > 1.0e7)
        throw LabError(ErrorCode::LadderExhausted,
                       "box_images: M_n too large to iterate point-wise");
    const long long M = static_cast<long long>(lv.M);
    const double lambda = ladder.constants.lambda;
    assert(grid_points >= 3);

    BoxImagePair out;
    out.u.n = out.s.n = n;
    out.u.side = 'u';
    out.s.side = 's';

    const double center = RotationOrbit::at(lv.I.center, ladder.omega, 1);
    const double h = lv.I.halflength;
    out.min_separation = std::numeric_limits<double>::infinity();
    out.min_separation_outer = std::numeric_limits<double>::infinity();

    for (int i = 0; i < grid_points; ++i) {
        const double offset = h * (2.0 * i / (grid_points - 1) - 1.0);
        const double theta = mod1(center + offset);

        /* u side: the arc I_n - M_n*omega with r = lambda (lower) and
         * r = lambda^2 (upper), pushed forward M_n + 1 steps onto theta. */
        double lo_u = lambda, hi_u = lambda * lambda;
        {
            RotationOrbit orbit(RotationOrbit::at(theta, ladder.omega, -(M + 1)),
                                ladder.omega);
            for (long long k = 0; k <= M; ++k) {
                const double t = orbit.theta();
                lo_u = fibre_step(t, lo_u, params);
                hi_u = fibre_step(t, hi_u, params);
                orbit.advance();
            }
        }

        /* s side: the arc I_n + M_n*omega with r = lambda^-2 (lower) and
         * r = lambda^-1 (upper), pulled back M_n - 1 steps onto theta. */
        double lo_s = 1.0 / (lambda * lambda), hi_s = 1.0 / lambda;
        {
            RotationOrbit orbit(RotationOrbit::at(theta, ladder.omega, M - 1), ladder.omega);
            for (long long k = 0; k < M - 1; ++k) {
                orbit.retreat();
                const double t = orbit.theta();
                lo_s = fibre_unstep(t, lo_s, params);
                hi_s = fibre_unstep(t, hi_s, params);
            }
        }

        out.u.theta.push_back(theta);
        out.u.lower.push_back(lo_u);
        out.u.upper.push_back(hi_u);
        out.s.theta.push_back(theta);
        out.s.lower.push_back(lo_s);
        out.s.upper.push_back(hi_s);

        const double sep = lo_u - hi_s;
        if (sep < out.min_separation) {
            out.min_separation = sep;
            out.argmin_theta = theta;
        }
        if (std::abs(offset) > h / 3.0)
            out.min_separation_outer = std::min(out.min_separation_outer, sep);
    }
    out.disjoint = out.min_separation > 0.0;
    return out;
}

void bracket_level_energies(ScaleLadder& ladder, int n, const CocycleParams& params,
                            double E_lo, double E_hi, double tol, int grid_points) {
    level_at(ladder, n, "bracket_level_energies");
    if (!(tol > 0.0) || !(E_lo < E_hi))
        throw LabError(ErrorCode::BracketInvalid, "need E_lo < E_hi and tol > 0");

    auto at_energy = [&](double E) {
        CocycleParams p = params;
        p.E = E;
        return box_images(ladder, n, p, grid_points);
    };

    if (!at_energy(E_lo).disjoint)
        throw LabError(ErrorCode::BracketInvalid,
                       "lower bracket end: box images already overlap at E_lo");
    if (at_energy(E_hi).disjoint)
        throw LabError(ErrorCode::BracketInvalid,
                       "upper bracket end: box images still disjoint at E_hi");

    /* E_minus: last energy with disjoint images (tangency threshold). */
    double lo = E_lo, hi = E_hi;
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        (at_energy(mid).disjoint ? lo : hi) = mid;
    }
    LadderLevel& lv = ladder.levels[static_cast<size_t>(n)];
    lv.E_minus = lo;

    /* E_plus: last energy where the separation away from the middle third
     * of the critical arc stays positive (structural failure threshold).
     * May coincide with the bracket top if the outer separation never
     * fails below E_hi. */
    if (at_energy(E_hi).min_separation_outer > 0.0) {
        lv.E_plus = E_hi;
        return;
    }
    double plo = lo, phi = E_hi;
    while (phi - plo > tol) {
        double mid = 0.5 * (plo + phi);
        (at_energy(mid).min_separation_outer > 0.0 ? plo : phi) = mid;
    }
    lv.E_plus = plo;
}

/* ---- stopping times -------------------------------------------------------------- */

namespace {

/* theta in the inflated exception system: union over materializable levels
 * of I_j + m*omega with m in [-M_j, 20*2^j M_j] (forward) or the mirrored
 * range (backward).  Levels whose inflated count exceeds the enumeration
 * cap contribute arcs of length < 1e-10 and are skipped. */
bool in_inflated(const ScaleLadder& ladder, double theta, bool forward) {
    for (const LadderLevel& lv : ladder.levels) {
        double inflated = 20.0 * std::pow(2.0, lv.n) * lv.M;
        if (inflated > kMaterializeCap) continue;
        long long M = static_cast<long long>(lv.M);
        long long Mhat = static_cast<long long>(inflated);
        long long m_lo = forward ? -M : -Mhat;
        long long m_hi = forward ? Mhat : M;
        if (hits_translates(theta, lv.I, ladder.omega, m_lo, m_hi)) return true;
    }
    return false;
}

} // namespace

StoppingTimes stopping_times(const ScaleLadder& ladder, double theta,
                             const CocycleParams& params, const CurveOptions& opts) {
    const double lambda = ladder.constants.lambda;
    const double threshold = 1.0 / (lambda * lambda * lambda);

    auto gap_at = [&](double t) {
        double u = evaluate_unstable(t, params, ladder.omega, opts).psi;
        double s = evaluate_stable(t, params, ladder.omega, opts).psi;
        return u - s;
    };

    const double d0 = gap_at(theta);
    if (!(d0 < threshold))
        throw LabError(ErrorCode::NotInCollisionWindow,
                       "stopping_times: gap at theta is not below lambda^-3");

    /* The construction bounds sigma by 3 + 2 log_lambda(1/d); the walk cap
     * leaves generous room beyond it. */
    const double analytic = 3.0 + 2.0 * std::log(1.0 / std::max(d0, 1e-300)) / std::log(lambda);
    const long long cap = 200 + static_cast<long long>(20.0 * analytic);

    StoppingTimes st;
    st.theta = theta;

    for (int dir : {+1, -1}) {
        long long sigma = -1;
        for (long long j = 1; j <= cap; ++j) {
            double t = RotationOrbit::at(theta, ladder.omega, dir * (j + 1));
            if (gap_at(t) >= threshold) {
                sigma = j;
                break;
            }
        }
        if (sigma < 0)
            throw LabError(ErrorCode::HorizonExceeded,
                           "stopping_times: gap never recovered within the walk cap");
        long long sigma_hat = 0;
        for (long long j = sigma; j >= 0; --j) {
            double t = RotationOrbit::at(theta, ladder.omega, dir * j);
            if (!in_inflated(ladder, t, dir > 0)) {
                sigma_hat = j;
                break;
            }
        }
        if (dir > 0) {
            st.sigma_plus = sigma;
            st.sigma_hat_plus = sigma_hat;
        } else {
            st.sigma_minus = sigma;
            st.sigma_hat_minus = sigma_hat;
        }
    }

    const double eta_p = static_cast<double>(st.sigma_plus - st.sigma_hat_plus) /
                         static_cast<double>(std::max<long long>(1, st.sigma_plus));
    const double eta_m = static_cast<double>(st.sigma_minus - st.sigma_hat_minus) /
                         static_cast<double>(std::max<long long>(1, st.sigma_minus));
    st.eta = std::max(eta_p, eta_m);
    return st;
}

/* ---- interval selection ------------------------------------------------------------ */

Arc select_critical_interval(const ScaleLadder& ladder, long long sigma_plus_max,
                             long long sigma_minus_max) {
    if (ladder.levels.empty())
        throw LabError(ErrorCode::LadderExhausted, "select_critical_interval: empty ladder");
    const double max_sigma =
        static_cast<double>(std::max(sigma_plus_max, sigma_minus_max));

    if (30.0 * max_sigma < ladder.levels.front().N)
        return translate(ladder.levels.front().I, ladder.omega);

    for (size_t k = 1; k < ladder.levels.size(); ++k) {
        if (ladder.levels[k - 1].N <= 30.0 * max_sigma &&
            30.0 * max_sigma < ladder.levels[k].N)
            return translate(ladder.levels[k].I, ladder.omega);
    }
    throw LabError(ErrorCode::LadderExhausted,
                   "select_critical_interval: stopping times exceed the deepest scale");
}

/* ---- interval-system counting bounds ------------------------------------------------- */

double SystemBounds::frequency_bound(double t) const {
    if (min_return <= 0.0 || t <= 0.0) return 1.0;
    double l = max_confinement;
    return std::min(1.0, l / t + l / (min_return + l));
}

SystemBounds interval_system_bounds(const SystemConstants& constants, double arc_length,
                                    long long spread) {
    SystemBounds b;
    double N = first_return_lower_bound(constants, arc_length);
    b.min_return = N - 2.0 * static_cast<double>(spread) - 1.0;
    b.max_confinement = 2.0 * static_cast<double>(spread) + 1.0;
    return b;
}

} // namespace cocycle_lab
