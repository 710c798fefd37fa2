#pragma once

/* Shared helpers for the unit suites. */

#include <algorithm>
#include <cmath>
#include <utility>

#include "cocycle_lab/errors.hpp"

namespace test_util {

/* True iff fn() throws LabError with exactly the given code. */
template <typename Fn>
bool throws_code(Fn&& fn, cocycle_lab::ErrorCode code) {
    try {
        std::forward<Fn>(fn)();
    } catch (const cocycle_lab::LabError& e) {
        return e.code() == code;
    } catch (...) {
        return false;
    }
    return false;
}

inline double rel_diff(double a, double b) {
    return std::abs(a - b) / std::max({1e-300, std::abs(a), std::abs(b)});
}

} // namespace test_util
