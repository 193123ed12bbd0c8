#pragma once

#include <Eigen/Dense>

#include "voltgrid/netmodel.hpp"

namespace voltgrid {

enum class SolveMode { pq, fixed_magnitude };

/// One solved operating point. `v` holds all n complex voltages with
/// v[0] pinned to the feeder reference. `p`/`q` are the injections
/// realized by v (evaluated from the power flow equations), `p_set`/`q_set`
/// the specified injections at buses 1..n-1 that the solver targeted.
struct PowerFlowSolution {
    Eigen::VectorXcd v;
    Eigen::VectorXd p;
    Eigen::VectorXd q;
    Eigen::VectorXd p_set;
    Eigen::VectorXd q_set;
    double residual_inf = 0.0;
    int iterations = 0;
    SolveMode mode = SolveMode::pq;
    bool converged = true;

    Eigen::VectorXd v_mag() const { return v.cwiseAbs(); }
};

struct PowerFlowOptions {
    double tol = 1e-10;   // per-unit power mismatch
    int max_iter = 200;
};

/// Power flow failure carrying the last iterate, so callers can report
/// voltage collapse instead of aborting.
class PowerFlowNoConvergence : public NoConvergence {
public:
    PowerFlowNoConvergence(const std::string& msg, PowerFlowSolution last_)
        : NoConvergence(msg, last_.iterations, last_.residual_inf), last(std::move(last_)) {}
    PowerFlowSolution last;
};

/// Backward/forward sweep solve with injections specified at buses
/// 1..n-1 and the feeder held at v0. Starts flat unless a warm-start
/// voltage vector is supplied (the quasi-static simulator tracks the
/// network state across control steps that way). Throws
/// PowerFlowNoConvergence when the sweep fails to settle, which is how an
/// infeasible loading manifests.
PowerFlowSolution solve_pq(const RadialNetwork& net, const Eigen::VectorXd& p,
                           const Eigen::VectorXd& q, double v0,
                           const PowerFlowOptions& opts = {},
                           const Eigen::VectorXcd* v_warm = nullptr);

/// Newton solve of the same problem on the full (angle, magnitude) state.
/// Unlike the sweep, it converges to whichever solution branch the warm
/// start sits near, which is what the quasi-static simulator needs to
/// track a perturbed state between control updates.
PowerFlowSolution solve_pq_newton(const RadialNetwork& net, const Eigen::VectorXd& p,
                                  const Eigen::VectorXd& q, double v0,
                                  const PowerFlowOptions& opts = {},
                                  const Eigen::VectorXcd* v_warm = nullptr);

/// Newton solve with all n voltage magnitudes fixed and active powers
/// specified at buses 1..n-1; the unknowns are the n-1 angles. Reactive
/// injections are read off afterwards. The step is halved (up to 10 times
/// per iteration) whenever the residual norm increases.
PowerFlowSolution solve_fixed_magnitude(const RadialNetwork& net, const Eigen::VectorXd& p,
                                        const Eigen::VectorXd& v_mag,
                                        const PowerFlowOptions& opts = {});

/// Complex power mismatch at buses 1..n-1: injections realized by sol.v
/// minus sol.p_set/q_set.
Eigen::VectorXcd residual(const RadialNetwork& net, const PowerFlowSolution& sol);

struct AngleConditionReport {
    std::vector<bool> per_line;  // aligned with net.lines()
    bool all = true;
};

/// Per-line check |theta_i - theta_k| <= atan(b_ik / g_ik).
AngleConditionReport check_angle_condition(const RadialNetwork& net,
                                           const PowerFlowSolution& sol);

/// Injections realized by a voltage vector: v .* conj(Y v), split into
/// (p, q). Shared by the solvers and the residual evaluation.
void realized_injections(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v,
                         Eigen::VectorXd& p_out, Eigen::VectorXd& q_out);

/// Jacobian of (P, Q) w.r.t. (theta, |V|) at buses 1..n-1, evaluated at
/// the complex voltages v: 2(n-1) x 2(n-1), blocks [dP/dth dP/dw; dQ/dth
/// dQ/dw]. The feeder state is fixed and contributes no columns.
Eigen::MatrixXd power_flow_jacobian(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v);

}  // namespace voltgrid
