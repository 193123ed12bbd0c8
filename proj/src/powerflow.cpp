#include "voltgrid/powerflow.hpp"

#include <cmath>

namespace voltgrid {

void realized_injections(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v,
                         Eigen::VectorXd& p_out, Eigen::VectorXd& q_out) {
    const Eigen::VectorXcd s = v.array() * (y * v).array().conjugate();
    p_out = s.real();
    q_out = s.imag();
}

Eigen::MatrixXd power_flow_jacobian(const Eigen::MatrixXcd& y, const Eigen::VectorXcd& v) {
    const int n = static_cast<int>(v.size());
    const int m = n - 1;
    const Eigen::MatrixXd g = y.real();
    const Eigen::MatrixXd b = y.imag();
    const Eigen::VectorXd w = v.cwiseAbs();
    Eigen::VectorXd theta(n);
    for (int i = 0; i < n; ++i) theta[i] = std::arg(v[i]);

    Eigen::VectorXd p_real, q_real;
    realized_injections(y, v, p_real, q_real);

    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * m, 2 * m);
    for (int i = 1; i < n; ++i) {
        for (int k = 1; k < n; ++k) {
            if (k == i || (g(i, k) == 0.0 && b(i, k) == 0.0)) continue;
            const double d = theta[i] - theta[k];
            const double a = g(i, k) * std::cos(d) + b(i, k) * std::sin(d);
            const double c = g(i, k) * std::sin(d) - b(i, k) * std::cos(d);
            jac(i - 1, k - 1) = w[i] * w[k] * c;       // dP/dtheta
            jac(i - 1, m + k - 1) = w[i] * a;          // dP/d|V|
            jac(m + i - 1, k - 1) = -w[i] * w[k] * a;  // dQ/dtheta
            jac(m + i - 1, m + k - 1) = w[i] * c;      // dQ/d|V|
        }
        jac(i - 1, i - 1) = -q_real[i] - b(i, i) * w[i] * w[i];
        jac(i - 1, m + i - 1) = p_real[i] / w[i] + g(i, i) * w[i];
        jac(m + i - 1, i - 1) = p_real[i] - g(i, i) * w[i] * w[i];
        jac(m + i - 1, m + i - 1) = q_real[i] / w[i] - b(i, i) * w[i];
    }
    return jac;
}

namespace {

PowerFlowSolution make_solution(const RadialNetwork& net, const Eigen::MatrixXcd& y,
                                const Eigen::VectorXcd& v, const Eigen::VectorXd& p_set,
                                const Eigen::VectorXd& q_set, int iterations, SolveMode mode) {
    PowerFlowSolution sol;
    sol.v = v;
    realized_injections(y, v, sol.p, sol.q);
    sol.p_set = p_set;
    sol.q_set = q_set;
    sol.iterations = iterations;
    sol.mode = mode;
    const int n = net.size();
    double r = 0.0;
    for (int i = 1; i < n; ++i) {
        r = std::max(r, std::abs(Complex(sol.p[i] - p_set[i - 1], sol.q[i] - q_set[i - 1])));
    }
    sol.residual_inf = r;
    return sol;
}

void check_injection_sizes(const RadialNetwork& net, const Eigen::VectorXd& p,
                           const Eigen::VectorXd& q) {
    if (p.size() != net.size() - 1 || q.size() != net.size() - 1)
        throw LengthMismatch("injection vectors must have length n-1");
}

}  // namespace

PowerFlowSolution solve_pq(const RadialNetwork& net, const Eigen::VectorXd& p,
                           const Eigen::VectorXd& q, double v0, const PowerFlowOptions& opts,
                           const Eigen::VectorXcd* v_warm) {
    check_injection_sizes(net, p, q);
    if (v0 <= 0.0) throw InvalidParameter("feeder voltage must be positive");
    if (opts.tol <= 0.0 || opts.max_iter < 1) throw InvalidParameter("bad solver options");

    const int n = net.size();
    const Eigen::MatrixXcd y = admittance_matrix(net);
    const std::vector<int>& order = net.sweep_order();

    Eigen::VectorXcd s(n);
    s[0] = Complex(0.0, 0.0);
    for (int i = 1; i < n; ++i) s[i] = Complex(p[i - 1], q[i - 1]);

    Eigen::VectorXcd v = Eigen::VectorXcd::Constant(n, Complex(v0, 0.0));
    if (v_warm) {
        if (v_warm->size() != n) throw LengthMismatch("warm start does not match network size");
        v = *v_warm;
        v[0] = Complex(v0, 0.0);
    }
    Eigen::VectorXcd flow(n);  // current on the line into each bus from its parent

    auto residual_inf = [&](const Eigen::VectorXcd& volt) {
        const Eigen::VectorXcd mism = volt.array() * (y * volt).array().conjugate();
        double r = 0.0;
        for (int i = 1; i < n; ++i) r = std::max(r, std::abs(mism[i] - s[i]));
        return r;
    };

    double res = residual_inf(v);
    int iter = 0;
    // Plain sweeps overshoot at heavy reactive loading, so each sweep is
    // blended into the iterate with a weight that backs off whenever the
    // mismatch grows and recovers geometrically afterwards.
    double omega = 1.0;
    Eigen::VectorXcd v_sweep(n);
    while (res > opts.tol && iter < opts.max_iter) {
        // Backward: aggregate branch currents from the leaves up.
        flow.setZero();
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const int bus = *it;
            if (bus == 0) continue;
            flow[bus] -= std::conj(s[bus] / v[bus]);
            flow[net.parent(bus)] += flow[bus];
        }
        // Forward: drop voltages from the feeder down.
        v_sweep = v;
        for (int bus : order) {
            if (bus == 0) continue;
            v_sweep[bus] = v_sweep[net.parent(bus)] - flow[bus] / net.parent_line_admittance(bus);
        }
        ++iter;
        if (!v_sweep.allFinite()) {
            res = std::numeric_limits<double>::infinity();
            break;
        }

        // Prefer a blend weight that strictly reduces the mismatch
        // (halving through an overshoot averages it out); when none of
        // them does, take the plain sweep step anyway, since the sweep
        // converges through non-monotone spirals.
        bool progressed = false;
        double om = omega;
        for (int damping = 0; damping <= 10; ++damping) {
            const Eigen::VectorXcd v_next = v + om * (v_sweep - v);
            const double res_next = residual_inf(v_next);
            if (res_next < res) {
                v = v_next;
                res = res_next;
                omega = std::min(1.0, om * 1.3);
                progressed = true;
                break;
            }
            om *= 0.5;
        }
        if (!progressed) {
            v = v_sweep;
            res = residual_inf(v);
            omega = 1.0;
            if (res > 1e9) break;  // running away, report the failure now
        }
    }

    if (!(res <= opts.tol)) {
        Eigen::VectorXcd v_last = v.allFinite() ? v : Eigen::VectorXcd::Constant(n, Complex(v0, 0.0));
        PowerFlowSolution last = make_solution(net, y, v_last, p, q, iter, SolveMode::pq);
        last.converged = false;
        last.residual_inf = res;
        throw PowerFlowNoConvergence(
            "power flow sweep did not converge (residual " + std::to_string(res) + " after " +
                std::to_string(iter) + " iterations); loading may be infeasible",
            std::move(last));
    }
    return make_solution(net, y, v, p, q, iter == 0 ? 1 : iter, SolveMode::pq);
}

PowerFlowSolution solve_pq_newton(const RadialNetwork& net, const Eigen::VectorXd& p,
                                  const Eigen::VectorXd& q, double v0,
                                  const PowerFlowOptions& opts, const Eigen::VectorXcd* v_warm) {
    check_injection_sizes(net, p, q);
    if (v0 <= 0.0) throw InvalidParameter("feeder voltage must be positive");
    if (opts.tol <= 0.0 || opts.max_iter < 1) throw InvalidParameter("bad solver options");

    const int n = net.size();
    const int m = n - 1;
    const Eigen::MatrixXcd y = admittance_matrix(net);

    Eigen::VectorXcd v = Eigen::VectorXcd::Constant(n, Complex(v0, 0.0));
    if (v_warm) {
        if (v_warm->size() != n) throw LengthMismatch("warm start does not match network size");
        v = *v_warm;
        v[0] = Complex(v0, 0.0);
    }

    auto mismatch = [&](const Eigen::VectorXcd& volt) {
        const Eigen::VectorXcd s = volt.array() * (y * volt).array().conjugate();
        Eigen::VectorXd r(2 * m);
        for (int i = 1; i < n; ++i) {
            r[i - 1] = s[i].real() - p[i - 1];
            r[m + i - 1] = s[i].imag() - q[i - 1];
        }
        return r;
    };
    auto rebuild = [&](const Eigen::VectorXd& theta, const Eigen::VectorXd& w) {
        Eigen::VectorXcd volt(n);
        volt[0] = Complex(v0, 0.0);
        for (int i = 1; i < n; ++i) volt[i] = std::polar(w[i - 1], theta[i - 1]);
        return volt;
    };

    Eigen::VectorXd theta(m), w(m);
    for (int i = 1; i < n; ++i) {
        theta[i - 1] = std::arg(v[i]);
        w[i - 1] = std::abs(v[i]);
    }

    Eigen::VectorXd r = mismatch(v);
    double rnorm = r.lpNorm<Eigen::Infinity>();
    int iter = 0;
    while (rnorm > opts.tol && iter < opts.max_iter) {
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(power_flow_jacobian(y, v));
        const Eigen::VectorXd step = lu.solve(-r);
        if (!step.allFinite()) break;

        double lambda = 1.0;
        Eigen::VectorXd theta_try, w_try, r_try;
        double rnorm_try = std::numeric_limits<double>::infinity();
        for (int halving = 0; halving <= 10; ++halving) {
            theta_try = theta + lambda * step.head(m);
            w_try = w + lambda * step.tail(m);
            if ((w_try.array() > 0.0).all()) {
                r_try = mismatch(rebuild(theta_try, w_try));
                rnorm_try = r_try.lpNorm<Eigen::Infinity>();
                if (rnorm_try < rnorm) break;
            }
            lambda *= 0.5;
        }
        ++iter;
        if (!(rnorm_try < rnorm)) break;  // fully damped step made no progress
        theta = theta_try;
        w = w_try;
        v = rebuild(theta, w);
        r = r_try;
        rnorm = rnorm_try;
    }

    if (!(rnorm <= opts.tol)) {
        PowerFlowSolution last = make_solution(net, y, v, p, q, iter, SolveMode::pq);
        last.converged = false;
        last.residual_inf = rnorm;
        throw PowerFlowNoConvergence(
            "Newton power flow did not converge (residual " + std::to_string(rnorm) + " after " +
                std::to_string(iter) + " iterations)",
            std::move(last));
    }
    return make_solution(net, y, v, p, q, iter == 0 ? 1 : iter, SolveMode::pq);
}

PowerFlowSolution solve_fixed_magnitude(const RadialNetwork& net, const Eigen::VectorXd& p,
                                        const Eigen::VectorXd& v_mag,
                                        const PowerFlowOptions& opts) {
    const int n = net.size();
    if (p.size() != n - 1) throw LengthMismatch("active power vector must have length n-1");
    if (v_mag.size() != n) throw LengthMismatch("magnitude vector must have length n");
    if ((v_mag.array() <= 0.0).any()) throw InvalidParameter("magnitudes must be positive");
    if (opts.tol <= 0.0 || opts.max_iter < 1) throw InvalidParameter("bad solver options");

    const Eigen::MatrixXcd y = admittance_matrix(net);
    const Eigen::MatrixXd g = y.real();
    const Eigen::MatrixXd b = y.imag();

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);  // feeder stays at angle 0

    auto active_power = [&](const Eigen::VectorXd& th, int i) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) {
            if (g(i, k) == 0.0 && b(i, k) == 0.0) continue;
            const double d = th[i] - th[k];
            acc += v_mag[i] * v_mag[k] * (g(i, k) * std::cos(d) + b(i, k) * std::sin(d));
        }
        return acc;
    };
    auto residual_vec = [&](const Eigen::VectorXd& th) {
        Eigen::VectorXd r(n - 1);
        for (int i = 1; i < n; ++i) r[i - 1] = active_power(th, i) - p[i - 1];
        return r;
    };

    Eigen::VectorXd r = residual_vec(theta);
    double rnorm = r.lpNorm<Eigen::Infinity>();
    int iter = 0;
    while (rnorm > opts.tol && iter < opts.max_iter) {
        // dP/dtheta at the non-feeder buses; the feeder angle is fixed
        // and contributes no column.
        Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n - 1, n - 1);
        for (int i = 1; i < n; ++i) {
            double qi = 0.0;
            for (int k = 0; k < n; ++k) {
                if (k == i || (g(i, k) == 0.0 && b(i, k) == 0.0)) continue;
                const double d = theta[i] - theta[k];
                const double coupling =
                    v_mag[i] * v_mag[k] * (g(i, k) * std::sin(d) - b(i, k) * std::cos(d));
                qi += coupling;
                if (k != 0) jac(i - 1, k - 1) = coupling;
            }
            // qi excludes the self term, so dP_i/dtheta_i is just -qi.
            jac(i - 1, i - 1) = -qi;
        }

        Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
        if (!lu.isInvertible())
            throw SingularJacobian("angle Jacobian is singular at this loading");
        const Eigen::VectorXd step = lu.solve(-r);

        // Damped update: halve while the residual gets worse.
        double lambda = 1.0;
        Eigen::VectorXd theta_try;
        Eigen::VectorXd r_try;
        double rnorm_try = 0.0;
        for (int halving = 0; halving <= 10; ++halving) {
            theta_try = theta;
            for (int i = 1; i < n; ++i) theta_try[i] += lambda * step[i - 1];
            r_try = residual_vec(theta_try);
            rnorm_try = r_try.lpNorm<Eigen::Infinity>();
            if (rnorm_try < rnorm || halving == 10) break;
            lambda *= 0.5;
        }
        theta = theta_try;
        r = r_try;
        ++iter;
        if (!theta.allFinite()) {
            rnorm = std::numeric_limits<double>::infinity();
            break;
        }
        if (rnorm_try >= rnorm && rnorm_try > opts.tol) {
            // Fully damped step made no progress: treat as divergence.
            rnorm = rnorm_try;
            break;
        }
        rnorm = rnorm_try;
    }

    Eigen::VectorXcd v(n);
    for (int i = 0; i < n; ++i) v[i] = std::polar(v_mag[i], theta.allFinite() ? theta[i] : 0.0);

    if (!(rnorm <= opts.tol)) {
        PowerFlowSolution last = make_solution(net, y, v, p, Eigen::VectorXd::Zero(n - 1), iter,
                                               SolveMode::fixed_magnitude);
        last.q_set = last.q.tail(n - 1);
        last.converged = false;
        last.residual_inf = rnorm;
        throw PowerFlowNoConvergence(
            "fixed-magnitude solve did not converge (residual " + std::to_string(rnorm) +
                " after " + std::to_string(iter) + " iterations)",
            std::move(last));
    }

    // Reactive injections are whatever the solved state implies.
    PowerFlowSolution sol = make_solution(net, y, v, p, Eigen::VectorXd::Zero(n - 1),
                                          iter == 0 ? 1 : iter, SolveMode::fixed_magnitude);
    sol.q_set = sol.q.tail(n - 1);
    sol.residual_inf = rnorm;
    return sol;
}

Eigen::VectorXcd residual(const RadialNetwork& net, const PowerFlowSolution& sol) {
    const int n = net.size();
    if (sol.v.size() != n) throw LengthMismatch("solution does not match network size");
    const Eigen::MatrixXcd y = admittance_matrix(net);
    const Eigen::VectorXcd realized = sol.v.array() * (y * sol.v).array().conjugate();
    Eigen::VectorXcd r(n - 1);
    for (int i = 1; i < n; ++i)
        r[i - 1] = realized[i] - Complex(sol.p_set[i - 1], sol.q_set[i - 1]);
    return r;
}

AngleConditionReport check_angle_condition(const RadialNetwork& net,
                                           const PowerFlowSolution& sol) {
    AngleConditionReport report;
    report.per_line.reserve(net.lines().size());
    for (const Line& l : net.lines()) {
        const double diff = std::abs(std::arg(sol.v[l.from]) - std::arg(sol.v[l.to]));
        const bool ok = diff <= std::atan2(l.b, l.g);
        report.per_line.push_back(ok);
        report.all = report.all && ok;
    }
    return report;
}

}  // namespace voltgrid
