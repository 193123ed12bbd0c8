#pragma once

#include <Eigen/Dense>

#include "voltgrid/powerflow.hpp"

namespace voltgrid {

enum class SensitivityMethod { exact, approximate, finite_difference };

/// Jacobian of squared voltage magnitudes w.r.t. reactive injections at
/// buses 1..n-1, evaluated at a solved operating point.
/// Units: (p.u. voltage)^2 per p.u. reactive power.
struct SensitivityMatrix {
    Eigen::MatrixXd m;
    SensitivityMethod method = SensitivityMethod::exact;
    PowerFlowSolution operating_point;
};

/// Implicit differentiation of the full power-flow Jacobian at sol:
/// columns of d|v|^2/dq with active powers held fixed.
/// Throws SingularJacobian at a solvability boundary.
SensitivityMatrix exact_m(const RadialNetwork& net, const PowerFlowSolution& sol);

/// Closed-form approximation from the grounded inverse X:
///   M ~= 2 { Im[diag(conj v) X diag(1 ./ conj v)]
///           - Re[diag(conj v) X diag(q ./ conj(v)^2) X^H diag(1 ./ v)] }
/// with v, q taken at buses 1..n-1 and all divisions componentwise.
/// Exact up to O(1/v^3). Throws DivideByZero on a zero voltage.
SensitivityMatrix approx_m(const RadialNetwork& net, const PowerFlowSolution& sol);

/// Brute-force central differences: column k from PQ solves at q +- h e_k.
/// Kept independent of exact_m so the two can cross-check each other.
/// Power-flow failures propagate.
SensitivityMatrix fd_m(const RadialNetwork& net, const Eigen::VectorXd& p,
                       const Eigen::VectorXd& q, double h,
                       const PowerFlowOptions& opts = {1e-13, 500});

/// Operating point for sensitivity studies: fixed-magnitude solve at the
/// reference magnitudes with the given active injections.
PowerFlowSolution reference_operating_point(const RadialNetwork& net,
                                            const Eigen::VectorXd& p,
                                            const PowerFlowOptions& opts = {});

}  // namespace voltgrid
