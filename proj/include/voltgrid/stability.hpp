#pragma once

#include <cstdint>
#include <Eigen/Dense>

#include "voltgrid/netmodel.hpp"
#include "voltgrid/sensitivity.hpp"

namespace voltgrid {

enum class StabilityVerdict { stable, unstable };

/// Result of the diagonal (Lyapunov) stability search. When the verdict is
/// stable, d holds gains in (0,1] with lambda_min(D M + M^T D) = opt_lambda
/// above the tolerance; when unstable, opt_lambda is the best value the
/// ascent could reach and d is empty.
struct StabilityCertificate {
    StabilityVerdict verdict = StabilityVerdict::unstable;
    Eigen::VectorXd d;
    double opt_lambda = 0.0;
    int iterations = 0;
};

struct StabilityOptions {
    double tol = 1e-8;
    int max_iter = 5000;
    int restarts = 5;        // random interior restarts after the all-ones start
    std::uint64_t seed = 0;
    double step0 = 0.5;      // initial ascent step, decays as step0/sqrt(t)
    bool early_feasible = false;  // stop at the first certificate instead of the max
};

/// Decide whether some diagonal D = diag(d), d in (0,1]^k, makes
/// D M + M^T D positive definite, by projected supergradient ascent on
/// f(d) = lambda_min(D M + M^T D).
///
/// f is concave and positively homogeneous in d, so its sign on the outer
/// shell {max_i d_i = 1} of the box decides feasibility; each iterate is
/// projected onto the box and rescaled to that shell (otherwise d = 0
/// would be a trivial maximizer). The supergradient at a simple minimal
/// eigenvalue with unit eigenvector u has components 2 u_i (M u)_i; ties
/// take the eigenvector of the numerically smallest eigenvalue, and the
/// randomized restarts mitigate stalls on a wrong facet.
///
/// Throws NoConvergence when the ascent is still improving at the
/// iteration cap, i.e. the reported optimum would be untrustworthy.
StabilityCertificate diagonal_stability(const Eigen::MatrixXd& m,
                                        const StabilityOptions& opts = {});

/// Necessary condition for a diagonal certificate: every M_ii > 0.
/// Cheap pre-filter before the ascent.
bool positive_diagonal_check(const Eigen::MatrixXd& m);

struct RegionReport {
    bool certified = false;       // stable at p_lower with the angle condition holding
    bool angle_condition = false;
    StabilityCertificate at_pmin;
    int samples_checked = 0;
    int counterexamples = 0;
    std::uint64_t seed = 0;
};

/// Certify an entire injection box from its minimum injection vector:
/// solve the fixed-magnitude flow at box.p_lower, require the per-line
/// angle condition (throws AngleConditionViolated otherwise - the
/// certificate does not apply), and run diagonal_stability on the exact
/// sensitivity there. When certified, additionally samples `samples`
/// uniform points from the box and re-checks each one, counting
/// counterexamples (expected zero).
RegionReport region_stability(const RadialNetwork& net, const InjectionBox& box,
                              int samples, std::uint64_t seed,
                              const StabilityOptions& stab_opts = {},
                              const PowerFlowOptions& pf_opts = {});

}  // namespace voltgrid
