#ifndef SLCA_GRADCHECK_HPP
#define SLCA_GRADCHECK_HPP

#include <string>
#include <vector>

#include "slca/network.hpp"

namespace slca {

struct GradCheckReport {
    std::string component;
    double max_rel_err = 0.0;
    std::string worst_param;
};

// Runs the registered gradient checks: every block type, both loss
// functions, and two minimal end-to-end networks (2D with attention, 3D
// without). Each component compares reverse-mode gradients against central
// finite differences; errors below 1e-4 are considered passing (the caller
// applies the threshold). With corrupt set, one component's objective is
// deliberately made inconsistent between evaluations so its check must fail
// (a testing hook for the failure path).
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed, bool corrupt = false);

constexpr double kGradCheckThreshold = 1e-4;

}  // namespace slca

#endif
