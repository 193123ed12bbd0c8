#include "voltgrid/localsim.hpp"

#include <cmath>
#include <random>

namespace voltgrid {

Eigen::VectorXd control_step(const Eigen::VectorXd& q, const Eigen::VectorXd& v_mag_sq,
                             const Eigen::VectorXd& v_ref_sq, const Eigen::VectorXd& d) {
    const auto len = q.size();
    if (v_mag_sq.size() != len || v_ref_sq.size() != len || d.size() != len)
        throw LengthMismatch("control_step arguments must have equal length");
    if ((d.array() <= 0.0).any()) throw InvalidParameter("gains must be positive");
    return q - d.cwiseProduct(v_mag_sq - v_ref_sq);
}

double objective(const Eigen::VectorXd& v_mag, const Eigen::VectorXd& v_ref) {
    if (v_mag.size() != v_ref.size()) throw LengthMismatch("objective arguments must match");
    return (v_mag.array().square() - v_ref.array().square()).square().sum();
}

SimulationTrace simulate(const RadialNetwork& net, const Eigen::VectorXd& p,
                         const Eigen::VectorXd& q0, const Eigen::VectorXd& d,
                         const SimOptions& opts, std::uint64_t seed,
                         const Eigen::VectorXcd* v_init) {
    const int m = net.size() - 1;
    if (p.size() != m || q0.size() != m || d.size() != m)
        throw LengthMismatch("simulation vectors must have length n-1");
    if ((d.array() <= 0.0).any()) throw InvalidParameter("gains must be positive");
    if (opts.max_steps < 1 || opts.conv_tol <= 0.0 || opts.div_bound <= 0.0)
        throw InvalidParameter("bad simulation options");

    const Eigen::VectorXd v_ref_all = net.v_ref();
    const Eigen::VectorXd ref = v_ref_all.tail(m);
    const Eigen::VectorXd ref_sq = ref.array().square();

    SimulationTrace trace;
    trace.gains = d;
    trace.seed = seed;

    Eigen::VectorXd q = q0;
    Eigen::VectorXcd v_state;
    if (v_init) v_state = *v_init;
    for (int t = 0; t < opts.max_steps; ++t) {
        Eigen::VectorXd vm;
        try {
            // Newton tracking from the previous network state: the sweep
            // only attracts to one branch, while the physical state moves
            // continuously between control updates.
            const PowerFlowSolution sol =
                solve_pq_newton(net, p, q, v_ref_all[0], opts.pf,
                                v_state.size() == net.size() ? &v_state : nullptr);
            v_state = sol.v;
            vm = sol.v_mag().tail(m);
        } catch (const PowerFlowNoConvergence& e) {
            // Collapse: record the failed step with the last iterate and stop.
            trace.steps.push_back({t, q, e.last.v_mag().tail(m), objective(e.last.v_mag().tail(m), ref)});
            trace.status = SimStatus::diverged;
            return trace;
        }
        trace.steps.push_back({t, q, vm, objective(vm, ref)});

        const double dev = (vm - ref).cwiseAbs().maxCoeff();
        if (dev <= opts.conv_tol) {
            trace.status = SimStatus::converged;
            return trace;
        }
        if (dev >= opts.div_bound) {
            trace.status = SimStatus::diverged;
            return trace;
        }
        q = control_step(q, vm.array().square(), ref_sq, d);
    }
    trace.status = SimStatus::max_steps;
    return trace;
}

PowerFlowSolution perturb_initial_state(const RadialNetwork& net, const Eigen::VectorXd& p,
                                        double magnitude_fraction, std::uint64_t seed,
                                        const PowerFlowOptions& opts) {
    if (magnitude_fraction < 0.0 || magnitude_fraction >= 1.0)
        throw InvalidParameter("magnitude fraction must be in [0, 1)");
    const int n = net.size();
    Eigen::VectorXd targets = net.v_ref();
    if (magnitude_fraction > 0.0) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> dev(-magnitude_fraction, magnitude_fraction);
        for (int i = 1; i < n; ++i) targets[i] *= 1.0 + dev(rng);
    }
    return solve_fixed_magnitude(net, p, targets, opts);
}

Eigen::VectorXd perturb_initial(const RadialNetwork& net, const Eigen::VectorXd& p,
                                double magnitude_fraction, std::uint64_t seed,
                                const PowerFlowOptions& opts) {
    return perturb_initial_state(net, p, magnitude_fraction, seed, opts)
        .q.tail(net.size() - 1);
}

Eigen::VectorXd perturb_reactive(const RadialNetwork& net, const Eigen::VectorXd& p,
                                 double magnitude, std::uint64_t seed,
                                 const PowerFlowOptions& opts) {
    if (magnitude < 0.0) throw InvalidParameter("perturbation magnitude must be nonnegative");
    const int m = net.size() - 1;
    Eigen::VectorXd q = solve_fixed_magnitude(net, p, net.v_ref(), opts).q.tail(m);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dev(-magnitude, magnitude);
    for (int i = 0; i < m; ++i) q[i] += dev(rng);
    return q;
}

AutoGainResult simulate_auto_gains(const RadialNetwork& net, const Eigen::VectorXd& p,
                                   const Eigen::VectorXd& q0, const Eigen::VectorXd& d_base,
                                   const SimOptions& opts, std::uint64_t seed, int max_halvings,
                                   const Eigen::VectorXcd* v_init) {
    if (max_halvings < 0) throw InvalidParameter("max_halvings must be nonnegative");
    AutoGainResult result;
    double alpha = 1.0;
    for (int h = 0; h <= max_halvings; ++h, alpha *= 0.5) {
        result.alpha = alpha;
        result.d = alpha * d_base;
        result.trace = simulate(net, p, q0, result.d, opts, seed, v_init);
        if (result.trace.status == SimStatus::converged) break;
    }
    return result;
}

}  // namespace voltgrid
