#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "voltgrid/stability.hpp"

namespace voltgrid {

/// Positivity threshold of the approximate sensitivity diagonal on the
/// homogeneous line with per-line admittance 1 - j: with a uniform ratio
/// r = q_i / |V_i|^2 across buses, the i-th diagonal entry stays positive
/// exactly while r < 6 / ((i-1)(2i-1) + 6(n-i)i). The bound shrinks to 0
/// as the line grows, so deep feeders tolerate vanishing reactive load.
double line_threshold(int n, int i);

struct DepthReport {
    int depth = 0;
    std::vector<int> per_bus;
};

DepthReport depth_report(const RadialNetwork& net);

struct CriticalScan {
    double kappa_star = 0.0;
    /// (kappa, opt_lambda) pairs in evaluation order; opt_lambda is NaN
    /// where the operating point was unsolvable.
    std::vector<std::pair<double, double>> scan;
};

struct CriticalOptions {
    double tol_kappa = 1e-3;
    int prescan_points = 24;
    bool use_approx = false;   // exact sensitivity by default
    StabilityOptions stab;
    PowerFlowOptions pf;
};

/// Bisection for the demand multiplier at which diagonal stability is
/// lost: all nominal loads are scaled by kappa, the fixed-magnitude flow
/// is solved at reference, and the sensitivity there is tested. A coarse
/// pre-scan over (0, kappa_max] validates the stable-below/unstable-above
/// assumption before bisecting; an unsolvable operating point counts as
/// the unstable side. Throws NoFlipFound when the scan never flips or is
/// not monotone.
CriticalScan critical_load_scale(const RadialNetwork& net, double kappa_max,
                                 std::uint64_t seed, const CriticalOptions& opts = {});

}  // namespace voltgrid
