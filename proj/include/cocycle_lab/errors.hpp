#pragma once

#include <stdexcept>
#include <string>

namespace cocycle_lab {

/* Failure taxonomy for the laboratory.  Every throwing routine documents
 * which of these it can raise; the CLI maps LabError -> exit code 3. */
enum class ErrorCode {
    DegenerateRotation,     // rotation number rational / convergents exhausted
    MissingSystemConstants, // SystemConstants with unset/invalid fields
    PoleHit,                // fibre map hit 1/0 (r = 0 forward, denominator 0 backward)
    FibreMismatch,          // matrix action and fibre recursion disagree
    ScaleOverflow,          // cocycle product overflowed double range
    InvalidSection,         // section/curve handed to an observable is unusable
    NotUniformlyHyperbolic, // curve iteration escaped the admissible cone
    NoConvergence,          // pullback failed to settle within the horizon cap
    StencilError,           // finite-difference stencil degenerate (h too small/large)
    CouplingTooSmall,       // ladder base scale M0 < 1
    HorizonExceeded,        // orbit/return search exceeded its step budget
    NotInCollisionWindow,   // stopping time requested where d(theta) is not small
    LadderExhausted,        // critical-interval selection ran past the last level
    BracketInvalid,         // bisection bracket does not straddle the predicate
    NonMonotonePredicate,   // bisection predicate flipped more than once
    NonUniqueMinimum,       // gap profile has competing minima
    SpanTooNarrow,          // fit samples span too little dynamic range
    Inconclusive,           // check produced neither a pass nor a counterexample
};

const char* to_string(ErrorCode code);

class LabError : public std::runtime_error {
  public:
    LabError(ErrorCode code, const std::string& what_arg)
        : std::runtime_error(std::string(to_string(code)) + ": " + what_arg),
          code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DegenerateRotation: return "DegenerateRotation";
        case ErrorCode::MissingSystemConstants: return "MissingSystemConstants";
        case ErrorCode::PoleHit: return "PoleHit";
        case ErrorCode::FibreMismatch: return "FibreMismatch";
        case ErrorCode::ScaleOverflow: return "ScaleOverflow";
        case ErrorCode::InvalidSection: return "InvalidSection";
        case ErrorCode::NotUniformlyHyperbolic: return "NotUniformlyHyperbolic";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::StencilError: return "StencilError";
        case ErrorCode::CouplingTooSmall: return "CouplingTooSmall";
        case ErrorCode::HorizonExceeded: return "HorizonExceeded";
        case ErrorCode::NotInCollisionWindow: return "NotInCollisionWindow";
        case ErrorCode::LadderExhausted: return "LadderExhausted";
        case ErrorCode::BracketInvalid: return "BracketInvalid";
        case ErrorCode::NonMonotonePredicate: return "NonMonotonePredicate";
        case ErrorCode::NonUniqueMinimum: return "NonUniqueMinimum";
        case ErrorCode::SpanTooNarrow: return "SpanTooNarrow";
        case ErrorCode::Inconclusive: return "Inconclusive";
    }
    return "UnknownError";
}

} // namespace cocycle_lab
