#include "voltgrid/sensitivity.hpp"

#include <cmath>

namespace voltgrid {

PowerFlowSolution reference_operating_point(const RadialNetwork& net, const Eigen::VectorXd& p,
                                            const PowerFlowOptions& opts) {
    return solve_fixed_magnitude(net, p, net.v_ref(), opts);
}

SensitivityMatrix exact_m(const RadialNetwork& net, const PowerFlowSolution& sol) {
    const int n = net.size();
    if (sol.v.size() != n) throw LengthMismatch("solution does not match network size");
    const int m = n - 1;

    const Eigen::MatrixXcd y = admittance_matrix(net);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(power_flow_jacobian(y, sol.v));
    if (!lu.isInvertible())
        throw SingularJacobian("power-flow Jacobian is singular at this operating point");

    // Columns of d(theta,|V|)/dQ_k come from rhs [0; e_k]; keep the |V|
    // block. Active powers stay fixed by construction.
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(2 * m, m);
    rhs.bottomRows(m).setIdentity();
    const Eigen::MatrixXd dstate = lu.solve(rhs);
    const Eigen::MatrixXd dw_dq = dstate.bottomRows(m);

    SensitivityMatrix result;
    result.m = 2.0 * sol.v.cwiseAbs().tail(m).asDiagonal() * dw_dq;
    result.method = SensitivityMethod::exact;
    result.operating_point = sol;
    return result;
}

SensitivityMatrix approx_m(const RadialNetwork& net, const PowerFlowSolution& sol) {
    const int n = net.size();
    if (sol.v.size() != n) throw LengthMismatch("solution does not match network size");
    const int m = n - 1;

    const Eigen::VectorXcd v = sol.v.tail(m);
    if ((v.cwiseAbs().array() == 0.0).any())
        throw DivideByZero("zero voltage magnitude in operating point");
    const Eigen::VectorXd q = sol.q.tail(m);

    const Eigen::MatrixXcd x = x_matrix(net);
    const Eigen::VectorXcd vbar = v.conjugate();
    const Eigen::VectorXcd inv_vbar = vbar.cwiseInverse();
    const Eigen::VectorXcd inv_v = v.cwiseInverse();
    const Eigen::VectorXcd q_over_vbar_sq =
        q.cast<Complex>().array() / (vbar.array() * vbar.array());

    const Eigen::MatrixXcd first = vbar.asDiagonal() * x * inv_vbar.asDiagonal();
    const Eigen::MatrixXcd second =
        vbar.asDiagonal() * x * q_over_vbar_sq.asDiagonal() * x.adjoint() * inv_v.asDiagonal();

    SensitivityMatrix result;
    result.m = 2.0 * (first.imag() - second.real());
    result.method = SensitivityMethod::approximate;
    result.operating_point = sol;
    return result;
}

SensitivityMatrix fd_m(const RadialNetwork& net, const Eigen::VectorXd& p,
                       const Eigen::VectorXd& q, double h, const PowerFlowOptions& opts) {
    if (h <= 0.0) throw InvalidParameter("finite-difference step must be positive");
    const int m = net.size() - 1;
    if (p.size() != m || q.size() != m) throw LengthMismatch("injection vectors must have length n-1");

    const double v0 = net.buses()[0].v_ref;
    const PowerFlowSolution base = solve_pq(net, p, q, v0, opts);

    SensitivityMatrix result;
    result.m.resize(m, m);
    for (int k = 0; k < m; ++k) {
        Eigen::VectorXd q_plus = q;
        Eigen::VectorXd q_minus = q;
        q_plus[k] += h;
        q_minus[k] -= h;
        const Eigen::VectorXd w_plus = solve_pq(net, p, q_plus, v0, opts).v_mag().tail(m);
        const Eigen::VectorXd w_minus = solve_pq(net, p, q_minus, v0, opts).v_mag().tail(m);
        result.m.col(k) =
            (w_plus.array().square() - w_minus.array().square()).matrix() / (2.0 * h);
    }
    result.method = SensitivityMethod::finite_difference;
    result.operating_point = base;
    return result;
}

}  // namespace voltgrid
