#include "cocycle_lab/asymptotics.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace cocycle_lab {

namespace {

/* Horizon needed to resolve the collision channel at distance dE below the
 * edge: transit time ~ pi / sqrt(c dE) with a ~20x safety factor. */
double horizon_for(double dE, double quad_coeff, double cap) {
    double t = 60.0 / std::sqrt(std::max(1e-300, quad_coeff * dE));
    return std::min(cap, std::max(4000.0, t));
}

/* Curvature scale of the gap profile, 0.5 * lambda^2 * v''(argmin). */
double quad_coeff_bootstrap(const CocycleParams& params) {
    PotentialRange range = scan_potential(params.potential);
    double c = 0.5 * params.lambda_sq * params.potential.d2v(range.argmin);
    if (!(c > 0.0) || !std::isfinite(c))
        c = params.lambda_sq * M_PI * M_PI; // cosine-scale fallback
    return c;
}

std::vector<double> window_grid(double center, double halfwidth, int n) {
    assert(n >= 3);
    std::vector<double> thetas(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        thetas[static_cast<size_t>(i)] =
            mod1(center + halfwidth * (2.0 * i / (n - 1) - 1.0));
    return thetas;
}

struct WindowGap {
    std::vector<double> gap;
    double delta = 0.0;   // refined minimum
    double theta_c = 0.0; // refined minimizer
    int argmin = 0;
};

/* Minimum of psi_u - psi_s over a theta window, with 3-point parabolic
 * refinement of the discrete argmin. */
WindowGap min_gap_in_window(const std::vector<double>& thetas, const CocycleParams& params,
                            double omega, const CurveOptions& opts) {
    CurveOptions o = opts;
    o.with_residual = false;
    std::vector<CurvePoint> u = evaluate_unstable_many(thetas, params, omega, o);
    std::vector<CurvePoint> s = evaluate_stable_many(thetas, params, omega, o);

    WindowGap out;
    out.gap.resize(thetas.size());
    int i0 = 0;
    for (size_t i = 0; i < thetas.size(); ++i) {
        out.gap[i] = u[i].psi - s[i].psi;
        if (out.gap[i] < out.gap[static_cast<size_t>(i0)]) i0 = static_cast<int>(i);
    }
    out.argmin = i0;
    out.delta = out.gap[static_cast<size_t>(i0)];
    out.theta_c = thetas[static_cast<size_t>(i0)];

    if (i0 > 0 && i0 + 1 < static_cast<int>(thetas.size())) {
        double gm = out.gap[static_cast<size_t>(i0 - 1)];
        double g0 = out.gap[static_cast<size_t>(i0)];
        double gp = out.gap[static_cast<size_t>(i0 + 1)];
        double curv = gm - 2.0 * g0 + gp;
        if (curv > 0.0) {
            /* Window grids are uniform in the offset; recover the step from
             * neighbours (centers were reduced mod 1). */
            double h = circle_dist(thetas[static_cast<size_t>(i0)],
                                   thetas[static_cast<size_t>(i0 - 1)]);
            double shift = 0.5 * (gm - gp) / curv; // in units of h, |shift| <= 1
            out.theta_c = mod1(out.theta_c + shift * h);
            double refined = g0 - 0.125 * (gp - gm) * (gp - gm) / curv;
            if (refined > 0.0 && refined <= g0) out.delta = refined;
        }
    }
    return out;
}

/* Does the window evaluate to finite curves in the right order at this
 * (possibly fixed) horizon?  Loss of hyperbolicity reads as false. */
bool converges_positive(const std::vector<double>& thetas, const CocycleParams& params,
                        double omega, const CurveOptions& opts) {
    try {
        CurveOptions o = opts;
        o.with_residual = false;
        std::vector<CurvePoint> u = evaluate_unstable_many(thetas, params, omega, o);
        std::vector<CurvePoint> s = evaluate_stable_many(thetas, params, omega, o);
        for (size_t i = 0; i < thetas.size(); ++i) {
            if (!std::isfinite(u[i].psi) || !std::isfinite(s[i].psi)) return false;
            if (!(u[i].psi - s[i].psi > 0.0)) return false;
        }
        return true;
    } catch (const LabError& e) {
        if (e.code() == ErrorCode::NotUniformlyHyperbolic ||
            e.code() == ErrorCode::PoleHit || e.code() == ErrorCode::ScaleOverflow ||
            e.code() == ErrorCode::NoConvergence)
            return false;
        throw;
    }
}

} // namespace

/* ---- edge location ------------------------------------------------------------ */

EdgeResult find_edge(const CocycleParams& params, double omega, double E_lo, double E_hi,
                     const EdgeOptions& opts) {
    if (!(E_lo < E_hi))
        throw LabError(ErrorCode::BracketInvalid, "find_edge: need E_lo < E_hi");
    const double c2 = quad_coeff_bootstrap(params);

    /* Stage 1: global scan at fixed horizon. */
    std::vector<double> grid(static_cast<size_t>(opts.coarse_grid));
    for (int i = 0; i < opts.coarse_grid; ++i)
        grid[static_cast<size_t>(i)] = static_cast<double>(i) / opts.coarse_grid;
    CurveOptions coarse;
    coarse.horizon = static_cast<long long>(opts.coarse_horizon);

    auto coarse_ok = [&](double E) {
        CocycleParams p = params;
        p.E = E;
        return converges_positive(grid, p, omega, coarse);
    };
    if (!coarse_ok(E_lo))
        throw LabError(ErrorCode::BracketInvalid,
                       "find_edge: curves do not converge at the lower bracket end");
    if (coarse_ok(E_hi))
        throw LabError(ErrorCode::BracketInvalid,
                       "find_edge: curves still converge at the upper bracket end");

    EdgeResult result;
    double lo = E_lo, hi = E_hi;
    for (int round = 0; round < opts.coarse_rounds; ++round) {
        double mid = 0.5 * (lo + hi);
        (coarse_ok(mid) ? lo : hi) = mid;
        result.bracket_history.push_back({lo, hi});
    }

    /* Gap minimizer just below the coarse edge locates the window. */
    double theta_c;
    {
        CocycleParams p = params;
        p.E = lo;
        WindowGap wg = min_gap_in_window(grid, p, omega, coarse);
        theta_c = wg.theta_c;
    }

    /* Stage 2: bisection on a window around theta_c with a channel-aware
     * horizon. */
    auto local_ok = [&](double E, double resolution) {
        CocycleParams p = params;
        p.E = E;
        CurveOptions o;
        o.horizon = static_cast<long long>(horizon_for(resolution, c2, opts.horizon_cap));
        std::vector<double> w =
            window_grid(theta_c, opts.window_halfwidth, opts.window_points);
        return converges_positive(w, p, omega, o);
    };
    while (hi - lo > opts.tol) {
        double mid = 0.5 * (lo + hi);
        (local_ok(mid, std::max(opts.tol, hi - mid)) ? lo : hi) = mid;
        result.bracket_history.push_back({lo, hi});
    }
    /* The predicate must still hold at both ends at full resolution. */
    if (!local_ok(lo, opts.tol) || local_ok(hi, opts.tol))
        throw LabError(ErrorCode::NonMonotonePredicate,
                       "find_edge: convergence predicate flipped back at full horizon");

    result.E0 = lo;
    result.bracket_lo = lo;
    result.bracket_hi = hi;

    /* Refresh theta_c from a settled evaluation just below the edge. */
    {
        CocycleParams p = params;
        p.E = lo - opts.extrapolation_step;
        std::vector<double> w =
            window_grid(theta_c, opts.window_halfwidth, opts.window_points);
        CurveOptions o; // auto horizon
        WindowGap wg = min_gap_in_window(w, p, omega, o);
        result.theta_c = wg.theta_c;
    }

    /* Cross-check: extrapolate the linear gap law to zero from below. */
    const int m = opts.extrapolation_points;
    Eigen::MatrixXd X(m, 2);
    Eigen::VectorXd y(m);
    for (int j = 1; j <= m; ++j) {
        CocycleParams p = params;
        p.E = lo - static_cast<double>(j) * opts.extrapolation_step;
        std::vector<double> w =
            window_grid(result.theta_c, opts.window_halfwidth, opts.window_points);
        CurveOptions o; // auto horizon
        WindowGap wg = min_gap_in_window(w, p, omega, o);
        X(j - 1, 0) = 1.0;
        X(j - 1, 1) = p.E;
        y(j - 1) = wg.delta;
    }
    Eigen::Vector2d ab = X.colPivHouseholderQr().solve(y);
    if (!(ab(1) < 0.0))
        throw LabError(ErrorCode::NonMonotonePredicate,
                       "find_edge: gap does not shrink toward the edge");
    result.E0_extrapolated = -ab(0) / ab(1);
    result.extrapolation_diff = std::abs(result.E0_extrapolated - result.E0);
    return result;
}

/* ---- gap profile ----------------------------------------------------------------- */

GapProfile gap_profile(const CocycleParams& params, double omega, const GapOptions& opts) {
    const double c2 =
        (opts.quad_coeff_hint > 0.0) ? opts.quad_coeff_hint : quad_coeff_bootstrap(params);

    double center = opts.theta_hint;
    if (center < 0.0) {
        /* Coarse localization at fixed horizon; the collision channel has a
         * huge contrast, so the argmin cell finds it even unsettled. */
        std::vector<double> grid(static_cast<size_t>(opts.coarse_grid));
        for (int i = 0; i < opts.coarse_grid; ++i)
            grid[static_cast<size_t>(i)] = static_cast<double>(i) / opts.coarse_grid;
        CurveOptions coarse = opts.curve;
        coarse.horizon = 4000;
        WindowGap wg = min_gap_in_window(grid, params, omega, coarse);

        /* Competing minima far apart mean the profile has no single story. */
        double best = wg.gap[static_cast<size_t>(wg.argmin)];
        const int n = static_cast<int>(grid.size());
        for (int i = 0; i < n; ++i) {
            double gm = wg.gap[static_cast<size_t>((i + n - 1) % n)];
            double g0 = wg.gap[static_cast<size_t>(i)];
            double gp = wg.gap[static_cast<size_t>((i + 1) % n)];
            if (g0 <= gm && g0 <= gp && g0 <= 1.1 * best) {
                double sep = circle_dist(grid[static_cast<size_t>(i)], wg.theta_c);
                if (sep > std::max(0.01, 10.0 * opts.window_halfwidth))
                    throw LabError(ErrorCode::NonUniqueMinimum,
                                   "gap_profile: two competing gap minima at distance " +
                                       std::to_string(sep));
            }
        }
        center = wg.theta_c;
    }

    /* Settled measurement on the local window. */
    std::vector<double> w = window_grid(center, opts.window_halfwidth, opts.window_points);
    WindowGap local = min_gap_in_window(w, params, omega, opts.curve);
    if (!(local.delta > 0.0))
        throw LabError(ErrorCode::NotUniformlyHyperbolic,
                       "gap_profile: nonpositive minimum gap");

    GapProfile profile;
    profile.E = params.E;
    profile.delta = local.delta;
    profile.theta_c = local.theta_c;

    /* Quadratic profile fit gap ~ a + c x^2 over |x| <= factor*sqrt(delta/c). */
    double fit_hw = std::min(0.01, opts.fit_halfwidth_factor * std::sqrt(local.delta / c2));
    profile.fit_halfwidth = fit_hw;
    std::vector<double> fw = window_grid(local.theta_c, fit_hw, opts.fit_points);
    CurveOptions o = opts.curve;
    o.with_residual = false;
    std::vector<CurvePoint> u = evaluate_unstable_many(fw, params, omega, o);
    std::vector<CurvePoint> s = evaluate_stable_many(fw, params, omega, o);

    const int n = opts.fit_points;
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        double x = fit_hw * (2.0 * i / (n - 1) - 1.0);
        X(i, 0) = 1.0;
        X(i, 1) = x * x;
        y(i) = u[static_cast<size_t>(i)].psi - s[static_cast<size_t>(i)].psi;
    }
    Eigen::Vector2d ac = X.colPivHouseholderQr().solve(y);
    profile.quad_coeff = ac(1);
    Eigen::VectorXd r = y - X * ac;
    profile.residual_max = r.cwiseAbs().maxCoeff();
    return profile;
}

/* ---- fits --------------------------------------------------------------------------- */

namespace {

double decades_of(const std::vector<double>& xs) {
    double lo = *std::min_element(xs.begin(), xs.end());
    double hi = *std::max_element(xs.begin(), xs.end());
    if (!(lo > 0.0)) return 0.0;
    return std::log10(hi / lo);
}

} // namespace

LinearGapFit fit_linear_gap(const std::vector<double>& dE, const std::vector<double>& delta) {
    if (dE.size() != delta.size() || dE.size() < 3)
        throw LabError(ErrorCode::SpanTooNarrow, "fit_linear_gap: need >= 3 paired samples");
    LinearGapFit fit;
    fit.n = static_cast<int>(dE.size());
    fit.decades = decades_of(dE);
    if (fit.decades < 1.5)
        throw LabError(ErrorCode::SpanTooNarrow,
                       "fit_linear_gap: samples span " + std::to_string(fit.decades) +
                           " decades, need >= 1.5");

    double sxx = 0.0, sxy = 0.0, sy = 0.0;
    for (size_t i = 0; i < dE.size(); ++i) {
        sxx += dE[i] * dE[i];
        sxy += dE[i] * delta[i];
        sy += delta[i];
    }
    fit.slope = sxy / sxx;

    double ybar = sy / static_cast<double>(fit.n);
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < dE.size(); ++i) {
        double r = delta[i] - fit.slope * dE[i];
        ss_res += r * r;
        ss_tot += (delta[i] - ybar) * (delta[i] - ybar);
    }
    fit.r2 = (ss_tot > 0.0) ? 1.0 - ss_res / ss_tot : 1.0;
    fit.stderr_slope = std::sqrt(ss_res / static_cast<double>(fit.n - 1) / sxx);

    Eigen::MatrixXd X(fit.n, 2);
    Eigen::VectorXd y(fit.n);
    for (int i = 0; i < fit.n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = dE[static_cast<size_t>(i)];
        y(i) = delta[static_cast<size_t>(i)];
    }
    Eigen::Vector2d ab = X.colPivHouseholderQr().solve(y);
    fit.intercept_affine = ab(0);
    fit.slope_affine = ab(1);
    return fit;
}

NormExponentFit fit_norm_exponent(const std::vector<double>& delta,
                                  const std::vector<double>& norm) {
    if (delta.size() != norm.size() || delta.size() < 3)
        throw LabError(ErrorCode::SpanTooNarrow, "fit_norm_exponent: need >= 3 paired samples");
    NormExponentFit fit;
    fit.n = static_cast<int>(delta.size());
    fit.decades = decades_of(delta);
    if (fit.decades < 1.5)
        throw LabError(ErrorCode::SpanTooNarrow,
                       "fit_norm_exponent: samples span " + std::to_string(fit.decades) +
                           " decades, need >= 1.5");

    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const double n = static_cast<double>(fit.n);
    std::vector<double> lx(delta.size()), ly(delta.size());
    for (size_t i = 0; i < delta.size(); ++i) {
        if (!(delta[i] > 0.0) || !(norm[i] > 0.0))
            throw LabError(ErrorCode::SpanTooNarrow,
                           "fit_norm_exponent: nonpositive sample");
        lx[i] = std::log(delta[i]);
        ly[i] = std::log(norm[i]);
        sx += lx[i];
        sy += ly[i];
    }
    double xbar = sx / n, ybar = sy / n;
    for (size_t i = 0; i < delta.size(); ++i) {
        sxx += (lx[i] - xbar) * (lx[i] - xbar);
        sxy += (lx[i] - xbar) * (ly[i] - ybar);
    }
    fit.exponent = sxy / sxx;
    double ss_res = 0.0;
    for (size_t i = 0; i < delta.size(); ++i) {
        double r = (ly[i] - ybar) - fit.exponent * (lx[i] - xbar);
        ss_res += r * r;
    }
    fit.stderr_exponent = std::sqrt(ss_res / (n - 2.0) / sxx);
    fit.eps_hat = std::max(0.0, 2.0 * (fit.exponent + 0.5));
    return fit;
}

/* ---- stopping-time epsilon trace ----------------------------------------------------- */

double epsilon_trace(double lambda, double eta, long long sigma_plus, double delta) {
    if (!(lambda > 1.0) || !(delta > 0.0) || delta >= 1.0 || sigma_plus < 0) return 0.0;
    double log_lambda_inv_delta = std::log(1.0 / delta) / std::log(lambda);
    if (!(log_lambda_inv_delta > 0.0)) return 0.0;
    double l4 = lambda * lambda * lambda * lambda;
    return 2.0 * l4 * eta * static_cast<double>(sigma_plus) / log_lambda_inv_delta;
}

bool epsilon_consistent(double eps_trace, double eps_hat) {
    if (eps_trace < 0.1 && eps_hat < 0.1) return true;
    double lo = std::min(eps_trace, eps_hat), hi = std::max(eps_trace, eps_hat);
    return lo > 0.0 && hi <= 10.0 * lo;
}

/* ---- energy sweep --------------------------------------------------------------------- */

SweepResult run_sweep(const CocycleParams& params, double omega, const SweepConfig& config) {
    SweepResult result;
    result.lambda_w = std::sqrt(params.lambda_sq);

    if (std::isnan(config.E0)) {
        EdgeResult edge = find_edge(params, omega, config.bracket_lo, config.bracket_hi);
        result.E0 = edge.E0;
    } else {
        result.E0 = config.E0;
    }

    /* Ladder context for stopping times; desk-scale couplings may not
     * support one, and the sweep then reports curve data only. */
    bool have_ladder = false;
    ScaleLadder ladder;
    std::string ladder_note;
    try {
        DiophantineEstimate dioph = estimate_diophantine(omega, 40);
        SystemConstants constants{result.lambda_w, dioph.kappa, dioph.tau,
                                  potential_c0(params.potential, result.lambda_w)};
        ladder = build_ladder(constants, omega, config.max_level);
        have_ladder = true;
    } catch (const LabError& e) {
        ladder_note = std::string("no ladder: ") + e.what();
    }

    const double lambda = result.lambda_w;
    const double collision_threshold = 1.0 / (lambda * lambda * lambda);
    const double eps_working =
        std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(result.E0));
    const double gap_floor = 1e3 * eps_working;

    for (int j = 0; j < config.points; ++j) {
        SweepPoint row;
        row.dE = config.g * std::pow(config.rho, j);
        row.E = result.E0 - row.dE;
        try {
            if (row.dE < 10.0 * gap_floor)
                throw LabError(ErrorCode::ScaleOverflow,
                               "expected gap below the working floor of " +
                                   std::to_string(gap_floor));
            CocycleParams p = params;
            p.E = row.E;

            GapOptions gopt = config.gap;
            gopt.curve = config.curve;
            if (row.dE < 1e-10) gopt.curve.use_dd = true;
            GapProfile profile = gap_profile(p, omega, gopt);
            row.delta = profile.delta;
            row.theta_c = profile.theta_c;
            row.quad_coeff = profile.quad_coeff;
            row.residual_max = profile.residual_max;

            CurvePair pair = build_curve_pair(p, omega, config.grid, gopt.curve);
            CurveNorms nu = curve_norms(pair.unstable);
            CurveNorms ns = curve_norms(pair.stable);
            row.c1_norm_u = nu.c1;
            row.c1_norm_s = ns.c1;
            row.c2_norm_u = nu.c2;

            row.lyapunov = lyapunov_via_section(pair, p, omega, config.lyapunov_samples,
                                                config.lyapunov_burn);

            if (!have_ladder) {
                row.note = ladder_note;
            } else if (row.delta >= collision_threshold) {
                row.note = "gap above lambda^-3: outside the collision window";
            } else {
                /* Probe stopping times across the collision window. */
                double probe_hw =
                    0.9 * std::sqrt(std::max(0.0, (collision_threshold - row.delta)) /
                                    std::max(1e-300, row.quad_coeff));
                int measured = 0;
                for (int k = 0; k < config.sigma_probes; ++k) {
                    double frac = (config.sigma_probes == 1)
                                      ? 0.0
                                      : -1.0 + 2.0 * k / (config.sigma_probes - 1);
                    double theta = mod1(row.theta_c + frac * probe_hw);
                    try {
                        StoppingTimes st = stopping_times(ladder, theta, p, gopt.curve);
                        row.sigma_plus_max = std::max(row.sigma_plus_max, st.sigma_plus);
                        row.sigma_minus_max = std::max(row.sigma_minus_max, st.sigma_minus);
                        row.eta = std::max(row.eta, st.eta);
                        ++measured;
                    } catch (const LabError& e) {
                        if (e.code() != ErrorCode::NotInCollisionWindow) throw;
                    }
                }
                if (measured == 0) {
                    row.note = "no probe landed in the collision window";
                } else {
                    try {
                        Arc critical = select_critical_interval(ladder, row.sigma_plus_max,
                                                                row.sigma_minus_max);
                        for (size_t k = 0; k < ladder.levels.size(); ++k) {
                            Arc cand = translate(ladder.levels[k].I, omega);
                            if (circle_dist(cand.center, critical.center) <= 1e-12 &&
                                std::abs(cand.halflength - critical.halflength) <= 1e-12) {
                                row.level_k = static_cast<int>(k);
                                break;
                            }
                        }
                    } catch (const LabError& e) {
                        if (e.code() != ErrorCode::LadderExhausted) throw;
                        row.note = "no ladder level matches the stopping times";
                    }
                }
            }
            row.ok = true;
        } catch (const LabError& e) {
            row.ok = false;
            row.note = e.what();
        }
        result.rows.push_back(row);
    }
    return result;
}

} // namespace cocycle_lab
