/* cocycle-lab: numerical laboratory for quasi-periodic projective cocycles
 * near the lowest spectral edge.
 *
 * Usage:
 *   cocycle-lab <command> [--config <path>] [--set key=value]...
 *
 * Commands:
 *   curve   sample both invariant sections at one energy
 *   edge    bisect the lowest spectral edge, cross-check by extrapolation
 *   sweep   geometric energy schedule with checkpoint/resume
 *   ladder  build the scale ladder and check its conditions
 *   check   randomized identity and counting diagnostics
 *   fit     refit the asymptotic laws from an existing sweep CSV
 *
 * Exit codes: 0 ok, 2 validation error, 3 numeric failure, 4 bracket error. */

#include "cocycle_lab/harness.hpp"

int main(int argc, char** argv) { return cocycle_lab::run_cli(argc, argv); }
