#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "voltgrid/io.hpp"
#include "voltgrid/localsim.hpp"
#include "voltgrid/sensitivity.hpp"
#include "voltgrid/stability.hpp"

using namespace voltgrid;
using doctest::Approx;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

struct CertifiedLine {
    RadialNetwork net = testing::sim_line(10);
    Eigen::VectorXd p;
    Eigen::VectorXd d_cert;

    CertifiedLine() {
        p = net.p_nominal();
        const PowerFlowSolution ref = reference_operating_point(net, p);
        const StabilityCertificate cert = diagonal_stability(exact_m(net, ref).m);
        REQUIRE(cert.verdict == StabilityVerdict::stable);
        d_cert = cert.d;
    }
};

// the sweep needs headroom at strongly perturbed states
SimOptions sim_opts() {
    SimOptions opts;
    opts.pf.max_iter = 2000;
    return opts;
}

PowerFlowOptions pf_opts() { return {1e-10, 2000}; }

}  // namespace

TEST_CASE("control_step arithmetic") {
    CHECK(control_step(vec({0.0}), vec({1.0}), vec({1.0}), vec({0.5}))[0] == 0.0);
    CHECK(control_step(vec({0.0}), vec({1.21}), vec({1.0}), vec({0.5}))[0] ==
          Approx(-0.105).epsilon(1e-12));
    const Eigen::VectorXd out =
        control_step(vec({0.2, -0.1}), vec({0.81, 1.0}), vec({1.0, 1.0}), vec({1.0, 1.0}));
    CHECK(out[0] == Approx(0.39).epsilon(1e-12));
    CHECK(out[1] == Approx(-0.1).epsilon(1e-12));

    CHECK_THROWS_AS((void)control_step(vec({0.0}), vec({1.0, 1.0}), vec({1.0}), vec({0.5})),
                    LengthMismatch);
    CHECK_THROWS_AS((void)control_step(vec({0.0}), vec({1.0}), vec({1.0}), vec({-0.5})),
                    InvalidParameter);
}

TEST_CASE("objective") {
    CHECK(objective(vec({1.0, 1.0}), vec({1.0, 1.0})) == 0.0);
    CHECK(objective(vec({1.1}), vec({1.0})) == Approx(0.0441).epsilon(1e-12));

    const Eigen::VectorXd v = vec({1.05, 0.97, 1.01});
    const Eigen::VectorXd r = vec({1.0, 1.02, 0.99});
    const Eigen::VectorXd vp = vec({0.97, 1.01, 1.05});
    const Eigen::VectorXd rp = vec({1.02, 0.99, 1.0});
    CHECK(objective(vp, rp) == Approx(objective(v, r)).epsilon(1e-15));

    CHECK_THROWS_AS((void)objective(vec({1.0}), vec({1.0, 1.0})), LengthMismatch);
}

TEST_CASE("simulate: reference injections are a fixed point") {
    const CertifiedLine fix;
    const Eigen::VectorXd q_bar = perturb_initial(fix.net, fix.p, 0.0, 0);
    const SimulationTrace trace =
        simulate(fix.net, fix.p, q_bar, 0.05 * fix.d_cert, sim_opts(), 0);
    CHECK(trace.status == SimStatus::converged);
    CHECK(trace.steps.size() == 1);
    CHECK(trace.steps[0].t == 0);
}

TEST_CASE("perturb_initial: zero fraction returns the reference injections") {
    const RadialNetwork net = testing::homogeneous_line(6);
    const Eigen::VectorXd p = net.p_nominal();
    const Eigen::VectorXd q_bar = reference_operating_point(net, p).q.tail(5);
    const Eigen::VectorXd q0 = perturb_initial(net, p, 0.0, 123);
    CHECK((q0 - q_bar).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("perturb_initial: seeded draws replay exactly and stay inside the band") {
    const RadialNetwork net = testing::sim_line(10);
    const Eigen::VectorXd p = net.p_nominal();
    const Eigen::VectorXd a = perturb_initial(net, p, 0.1, 13, pf_opts());
    const Eigen::VectorXd b = perturb_initial(net, p, 0.1, 13, pf_opts());
    for (int i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK((a - perturb_initial(net, p, 0.1, 43, pf_opts())).cwiseAbs().maxCoeff() > 0.0);

    // realized magnitudes deviate by at most the requested fraction
    const PowerFlowSolution start = perturb_initial_state(net, p, 0.1, 13, pf_opts());
    const PowerFlowSolution sol = solve_pq(net, p, a, 1.0, pf_opts(), &start.v);
    const Eigen::VectorXd dev =
        ((sol.v_mag() - net.v_ref()).cwiseQuotient(net.v_ref())).cwiseAbs();
    CHECK(dev.maxCoeff() <= 0.1 + 1e-6);
}

TEST_CASE("simulate: certified gains recover a 10% perturbation") {
    const CertifiedLine fix;
    const PowerFlowSolution start = perturb_initial_state(fix.net, fix.p, 0.1, 7, pf_opts());
    const AutoGainResult result = simulate_auto_gains(
        fix.net, fix.p, start.q.tail(9), fix.d_cert, sim_opts(), 7, 24, &start.v);
    REQUIRE(result.trace.status == SimStatus::converged);
    CHECK(result.trace.steps.size() <= 10000);

    const Eigen::VectorXd final_v = result.trace.steps.back().v_mag;
    const Eigen::VectorXd ref = fix.net.v_ref().tail(9);
    CHECK((final_v - ref).cwiseAbs().maxCoeff() <= 1e-6);
    // normalized voltages land on 1
    CHECK((final_v.cwiseQuotient(ref).array() - 1.0).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("simulate: objective descends after a finite burn-in on a certified network") {
    const CertifiedLine fix;
    const PowerFlowSolution start = perturb_initial_state(fix.net, fix.p, 0.1, 11, pf_opts());
    const AutoGainResult result = simulate_auto_gains(
        fix.net, fix.p, start.q.tail(9), fix.d_cert, sim_opts(), 11, 24, &start.v);
    REQUIRE(result.trace.status == SimStatus::converged);

    const auto& steps = result.trace.steps;
    std::size_t burn_in = steps.size();
    for (std::size_t s = 0; s + 1 < steps.size(); ++s) {
        bool descending = true;
        for (std::size_t t = s; t + 1 < steps.size(); ++t) {
            if (steps[t + 1].objective > steps[t].objective * (1.0 + 1e-12)) {
                descending = false;
                break;
            }
        }
        if (descending) {
            burn_in = s;
            break;
        }
    }
    CHECK(burn_in < steps.size() / 2 + 1);
}

TEST_CASE("simulate: trace recurrence holds bit-exactly") {
    const CertifiedLine fix;
    const PowerFlowSolution start = perturb_initial_state(fix.net, fix.p, 0.1, 3, pf_opts());
    const AutoGainResult result = simulate_auto_gains(
        fix.net, fix.p, start.q.tail(9), fix.d_cert, sim_opts(), 3, 24, &start.v);
    const auto& steps = result.trace.steps;
    REQUIRE(steps.size() >= 2);
    const Eigen::VectorXd ref_sq = fix.net.v_ref().tail(9).array().square();
    for (std::size_t t = 0; t + 1 < steps.size(); ++t) {
        const Eigen::VectorXd expected = control_step(
            steps[t].q, steps[t].v_mag.array().square(), ref_sq, result.trace.gains);
        for (int i = 0; i < expected.size(); ++i) CHECK(steps[t + 1].q[i] == expected[i]);
    }
}

TEST_CASE("simulate: trace replay is byte-identical") {
    const CertifiedLine fix;
    const PowerFlowSolution start = perturb_initial_state(fix.net, fix.p, 0.1, 19, pf_opts());
    const Eigen::VectorXd q0 = start.q.tail(9);
    const Eigen::VectorXd d = 0.05 * fix.d_cert;
    const SimulationTrace t1 = simulate(fix.net, fix.p, q0, d, sim_opts(), 19, &start.v);
    const SimulationTrace t2 = simulate(fix.net, fix.p, q0, d, sim_opts(), 19, &start.v);
    CHECK(io::trace_csv(fix.net, t1) == io::trace_csv(fix.net, t2));
}

TEST_CASE("simulate: oversized gains diverge, and doubling them does not help") {
    const CertifiedLine fix;
    const PowerFlowSolution start = perturb_initial_state(fix.net, fix.p, 0.1, 23, pf_opts());
    const Eigen::VectorXd q0 = start.q.tail(9);
    SimOptions opts = sim_opts();
    opts.max_steps = 2000;
    const SimulationTrace at_d = simulate(fix.net, fix.p, q0, fix.d_cert, opts, 23, &start.v);
    REQUIRE(at_d.status == SimStatus::diverged);
    const SimulationTrace at_2d =
        simulate(fix.net, fix.p, q0, 2.0 * fix.d_cert, opts, 23, &start.v);
    CHECK(at_2d.status != SimStatus::converged);
}

TEST_CASE("perturb_reactive: seeded offset around the reference injections") {
    const RadialNetwork net = testing::homogeneous_line(5);
    const Eigen::VectorXd p = net.p_nominal();
    const Eigen::VectorXd q_bar = reference_operating_point(net, p).q.tail(4);
    const Eigen::VectorXd q0 = perturb_reactive(net, p, 0.02, 9);
    CHECK((q0 - q_bar).cwiseAbs().maxCoeff() <= 0.02);
    const Eigen::VectorXd replay = perturb_reactive(net, p, 0.02, 9);
    for (int i = 0; i < q0.size(); ++i) CHECK(q0[i] == replay[i]);
}
