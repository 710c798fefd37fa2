#include "cocycle_lab/cocycle.hpp"

#include <cmath>
#include <numbers>

namespace cocycle_lab {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

Potential Potential::cosine() {
    Potential p;
    p.v = [](double t) { return std::cos(kTwoPi * t); };
    p.dv = [](double t) { return -kTwoPi * std::sin(kTwoPi * t); };
    p.d2v = [](double t) { return -kTwoPi * kTwoPi * std::cos(kTwoPi * t); };
    return p;
}

Potential Potential::cosine_normalized() {
    Potential p;
    p.v = [](double t) { return 0.5 * (1.0 - std::cos(kTwoPi * t)); };
    p.dv = [](double t) { return std::numbers::pi * std::sin(kTwoPi * t); };
    p.d2v = [](double t) { return 2.0 * std::numbers::pi * std::numbers::pi * std::cos(kTwoPi * t); };
    return p;
}

PotentialRange scan_potential(const Potential& p, int grid) {
    PotentialRange range;
    double best_min = p.v(0.0), best_max = best_min, arg = 0.0;
    for (int i = 1; i < grid; ++i) {
        double t = static_cast<double>(i) / grid;
        double val = p.v(t);
        if (val < best_min) { best_min = val; arg = t; }
        if (val > best_max) best_max = val;
    }
    /* golden-section sharpening of the minimum */
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = arg - 1.0 / grid, b = arg + 1.0 / grid;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = p.v(mod1(c)), fd = p.v(mod1(d));
    for (int it = 0; it < 200 && (b - a) > 1e-15; ++it) {
        if (fc < fd) { b = d; d = c; fd = fc; c = b - phi * (b - a); fc = p.v(mod1(c)); }
        else { a = c; c = d; fc = fd; d = a + phi * (b - a); fd = p.v(mod1(d)); }
    }
    range.argmin = mod1(0.5 * (a + b));
    range.min_value = p.v(range.argmin);
    range.max_value = best_max;
    return range;
}

NormalizedSystem normalize_system(const CocycleParams& raw) {
    PotentialRange range = scan_potential(raw.potential);
    double osc = range.max_value - range.min_value;
    if (!(osc > 0.0))
        throw LabError(ErrorCode::MissingSystemConstants, "potential has zero oscillation");

    NormalizedSystem sys;
    sys.info.theta_shift = range.argmin;
    sys.info.e_shift = raw.lambda_sq * range.min_value;
    sys.info.lambda_w_sq = raw.lambda_sq * osc;

    Potential vin = raw.potential;
    double shift = range.argmin, vmin = range.min_value;
    sys.params.potential.v = [vin, shift, vmin, osc](double t) {
        return (vin.v(mod1(t + shift)) - vmin) / osc;
    };
    sys.params.potential.dv = [vin, shift, osc](double t) { return vin.dv(mod1(t + shift)) / osc; };
    sys.params.potential.d2v = [vin, shift, osc](double t) { return vin.d2v(mod1(t + shift)) / osc; };
    sys.params.lambda_sq = sys.info.lambda_w_sq;
    sys.params.E = raw.E - sys.info.e_shift;
    return sys;
}

double fibre_step(double theta, double r, const CocycleParams& params) {
    if (r == 0.0)
        throw LabError(ErrorCode::PoleHit, "fibre_step at r = 0");
    double out = params.q(theta) - 1.0 / r;
    if (!std::isfinite(out))
        throw LabError(ErrorCode::ScaleOverflow, "fibre_step left double range");
    return out;
}

double fibre_unstep(double theta, double r_next, const CocycleParams& params) {
    double denom = params.q(theta) - r_next;
    if (denom == 0.0)
        throw LabError(ErrorCode::PoleHit, "fibre_unstep denominator vanished");
    double out = 1.0 / denom;
    if (!std::isfinite(out))
        throw LabError(ErrorCode::ScaleOverflow, "fibre_unstep left double range");
    return out;
}

FibreState fibre_step_with_derivatives(double theta, const FibreState& st,
                                       const CocycleParams& params) {
    if (st.r == 0.0)
        throw LabError(ErrorCode::PoleHit, "fibre_step at r = 0");
    const double inv = 1.0 / st.r;
    const double inv2 = inv * inv;
    FibreState out;
    out.r = params.q(theta) - inv;
    out.dr_dtheta = params.lambda_sq * params.potential.dv(theta) + st.dr_dtheta * inv2;
    out.d2r_dtheta2 = params.lambda_sq * params.potential.d2v(theta) + st.d2r_dtheta2 * inv2 -
                      2.0 * st.dr_dtheta * st.dr_dtheta * inv2 * inv;
    out.dr_dE = -1.0 + st.dr_dE * inv2;
    out.d2r_dE2 = st.d2r_dE2 * inv2 - 2.0 * st.dr_dE * st.dr_dE * inv2 * inv;
    if (!std::isfinite(out.r))
        throw LabError(ErrorCode::ScaleOverflow, "fibre_step left double range");
    return out;
}

FibreState fibre_unstep_with_derivatives(double theta, const FibreState& st,
                                         const CocycleParams& params) {
    const double denom = params.q(theta) - st.r;
    if (denom == 0.0)
        throw LabError(ErrorCode::PoleHit, "fibre_unstep denominator vanished");
    FibreState out;
    out.r = 1.0 / denom;
    const double r2 = out.r * out.r;
    out.dr_dtheta = r2 * (st.dr_dtheta - params.lambda_sq * params.potential.dv(theta));
    out.d2r_dtheta2 = 2.0 * out.dr_dtheta * out.dr_dtheta / out.r +
                      r2 * (st.d2r_dtheta2 - params.lambda_sq * params.potential.d2v(theta));
    out.dr_dE = r2 * (st.dr_dE + 1.0);
    out.d2r_dE2 = 2.0 * out.dr_dE * out.dr_dE / out.r + r2 * st.d2r_dE2;
    if (!std::isfinite(out.r))
        throw LabError(ErrorCode::ScaleOverflow, "fibre_unstep left double range");
    return out;
}

Eigen::Matrix2d cocycle_matrix(double theta, const CocycleParams& params) {
    Eigen::Matrix2d m;
    m << 0.0, 1.0, -1.0, params.q(theta);
    return m;
}

double matrix_cocycle_log_norm(double theta0, double omega, long long n,
                               const CocycleParams& params) {
    Eigen::Matrix2d prod = Eigen::Matrix2d::Identity();
    double log_scale = 0.0;
    RotationOrbit orbit(theta0, omega);
    for (long long k = 0; k < n; ++k) {
        prod = cocycle_matrix(orbit.theta(), params) * prod;
        double f = prod.cwiseAbs().maxCoeff();
        if (f > 1e100 || f < 1e-100) {
            prod /= f;
            log_scale += std::log(f);
        }
        orbit.advance();
    }
    Eigen::JacobiSVD<Eigen::Matrix2d> svd(prod);
    return log_scale + std::log(svd.singularValues()(0));
}

double matrix_cocycle_norm(double theta0, double omega, int n, const CocycleParams& params) {
    double ln = matrix_cocycle_log_norm(theta0, omega, n, params);
    if (ln > 709.0)
        throw LabError(ErrorCode::ScaleOverflow, "cocycle norm exceeds double range; use the log form");
    return std::exp(ln);
}

void check_fibre_consistency(double theta, double r, const CocycleParams& params,
                             double rel_tol) {
    double direct = fibre_step(theta, r, params);
    Eigen::Vector2d image = cocycle_matrix(theta, params) * Eigen::Vector2d(1.0, r);
    if (image(0) == 0.0)
        throw LabError(ErrorCode::PoleHit, "matrix action hit the vertical direction");
    double via_matrix = image(1) / image(0);
    if (std::abs(via_matrix - direct) > rel_tol * std::max(1.0, std::abs(direct)))
        throw LabError(ErrorCode::FibreMismatch,
                       "matrix action and fibre recursion disagree at theta=" + std::to_string(theta));
}

OrbitPair run_orbit_pair(const CocycleParams& params, double omega, double theta0,
                         double r0, double s0, long long n) {
    OrbitPair pair;
    pair.theta0 = theta0;
    pair.omega = omega;
    pair.theta.reserve(n + 1);
    pair.r.reserve(n + 1);
    pair.s.reserve(n + 1);
    RotationOrbit orbit(theta0, omega);
    double r = r0, s = s0;
    for (long long k = 0; k <= n; ++k) {
        pair.theta.push_back(orbit.theta());
        pair.r.push_back(r);
        pair.s.push_back(s);
        if (k == n) break;
        r = fibre_step(orbit.theta(), r, params);
        s = fibre_step(orbit.theta(), s, params);
        orbit.advance();
    }
    return pair;
}

namespace {
void require_range(const OrbitPair& orbits, long long j, long long k) {
    if (j < 0 || k < j || k >= static_cast<long long>(orbits.r.size()))
        throw LabError(ErrorCode::HorizonExceeded, "product index range outside the stored orbit");
}
} // namespace

double distance_product(const OrbitPair& orbits, long long j, long long k) {
    require_range(orbits, j, k);
    dd acc{0.0};
    for (long long i = j; i <= k; ++i) {
        if (orbits.r[i] <= 0.0 || orbits.s[i] <= 0.0)
            throw LabError(ErrorCode::NotUniformlyHyperbolic,
                           "distance product needs orbits in the positive cone");
        acc = add(acc, -std::log(orbits.r[i]));
        acc = add(acc, -std::log(orbits.s[i]));
    }
    return static_cast<double>(acc);
}

double distortion_product(const OrbitPair& orbits, long long j, long long k) {
    require_range(orbits, j, k);
    dd acc{0.0};
    for (long long i = j; i <= k; ++i) {
        if (orbits.r[i] <= 0.0 || orbits.s[i] <= 0.0)
            throw LabError(ErrorCode::NotUniformlyHyperbolic,
                           "distortion product needs orbits in the positive cone");
        acc = add(acc, std::log(orbits.s[i] / orbits.r[i]));
    }
    return static_cast<double>(acc);
}

} // namespace cocycle_lab
