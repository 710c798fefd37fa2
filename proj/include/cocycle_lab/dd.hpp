#pragma once

#include <cmath>

namespace cocycle_lab {

/* Minimal double-double ("compensated") arithmetic.
 *
 * A dd value represents hi + lo with |lo| <= ulp(hi)/2, giving ~32 decimal
 * digits.  Used for two jobs where plain doubles measurably bias results:
 *   - accumulating long rotation orbits theta_k = theta_0 + k*omega (mod 1),
 *   - optionally carrying the fibre value through near-edge pullbacks.
 * Only the operations those jobs need are provided.  Error-free transforms
 * follow the standard Dekker/Knuth constructions; products use FMA.
 */
struct dd {
    double hi = 0.0;
    double lo = 0.0;

    dd() = default;
    dd(double h) : hi(h), lo(0.0) {}
    dd(double h, double l) : hi(h), lo(l) {}

    explicit operator double() const { return hi + lo; }
};

/* hi + lo = a + b exactly, assuming nothing about |a| vs |b| (Knuth). */
inline dd two_sum(double a, double b) {
    double s = a + b;
    double bb = s - a;
    double err = (a - (s - bb)) + (b - bb);
    return {s, err};
}

/* hi + lo = a + b exactly, assuming |a| >= |b| (Dekker). */
inline dd quick_two_sum(double a, double b) {
    double s = a + b;
    return {s, b - (s - a)};
}

/* hi + lo = a * b exactly, via FMA. */
inline dd two_prod(double a, double b) {
    double p = a * b;
    return {p, std::fma(a, b, -p)};
}

inline dd add(dd a, dd b) {
    dd s = two_sum(a.hi, b.hi);
    dd t = two_sum(a.lo, b.lo);
    s.lo += t.hi;
    s = quick_two_sum(s.hi, s.lo);
    s.lo += t.lo;
    return quick_two_sum(s.hi, s.lo);
}

inline dd add(dd a, double b) {
    dd s = two_sum(a.hi, b);
    s.lo += a.lo;
    return quick_two_sum(s.hi, s.lo);
}

inline dd sub(dd a, dd b) { return add(a, dd{-b.hi, -b.lo}); }

inline dd mul(dd a, dd b) {
    dd p = two_prod(a.hi, b.hi);
    p.lo += a.hi * b.lo + a.lo * b.hi;
    return quick_two_sum(p.hi, p.lo);
}

inline dd mul(dd a, double b) {
    dd p = two_prod(a.hi, b);
    p.lo += a.lo * b;
    return quick_two_sum(p.hi, p.lo);
}

inline dd div(dd a, dd b) {
    double q1 = a.hi / b.hi;
    dd r = sub(a, mul(b, q1));
    double q2 = r.hi / b.hi;
    r = sub(r, mul(b, q2));
    double q3 = r.hi / b.hi;
    dd q = quick_two_sum(q1, q2);
    return add(q, q3);
}

inline dd recip(dd b) { return div(dd{1.0}, b); }

/* Fractional part in [0, 1).  hi stays the principal part. */
inline dd frac(dd a) {
    double f = a.hi - std::floor(a.hi);
    dd r = quick_two_sum(f, a.lo);
    if (r.hi >= 1.0) r = add(r, -1.0);
    if (r.hi < 0.0) r = add(r, 1.0);
    return r;
}

} // namespace cocycle_lab
