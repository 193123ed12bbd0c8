#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "voltgrid/powerflow.hpp"

using namespace voltgrid;
using doctest::Approx;

namespace {

// Independent single-line oracle: solve V1 directly from the complex
// balance V1 * conj(y (V1 - V0)) = s1 with a 2-real-unknown Newton and a
// numerical Jacobian. No sweep machinery involved.
Complex two_bus_oracle(Complex y, double v0, Complex s1) {
    auto mismatch = [&](double re, double im) {
        const Complex v1(re, im);
        const Complex s = v1 * std::conj(y * (v1 - Complex(v0, 0.0)));
        return std::pair{s.real() - s1.real(), s.imag() - s1.imag()};
    };
    double re = v0, im = 0.0;
    for (int it = 0; it < 100; ++it) {
        const auto [f1, f2] = mismatch(re, im);
        if (std::abs(f1) < 1e-14 && std::abs(f2) < 1e-14) break;
        const double h = 1e-8;
        const auto [f1re, f2re] = mismatch(re + h, im);
        const auto [f1im, f2im] = mismatch(re, im + h);
        const double a = (f1re - f1) / h, b = (f1im - f1) / h;
        const double c = (f2re - f2) / h, d = (f2im - f2) / h;
        const double det = a * d - b * c;
        re -= (d * f1 - b * f2) / det;
        im -= (-c * f1 + a * f2) / det;
    }
    return {re, im};
}

// Scalar oracle for the fixed-magnitude 2-bus case with y = 1 - j and
// unit magnitudes: bisection on g(1-cos t) + b sin t = P over the normal
// branch, then Q = (1-cos t) - sin t.
double two_bus_angle_oracle(double p_target) {
    auto f = [](double t) { return (1.0 - std::cos(t)) + std::sin(t); };
    double lo = -M_PI / 4.0, hi = 0.0;
    REQUIRE(f(lo) <= p_target);
    REQUIRE(f(hi) >= p_target);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) < p_target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

Eigen::VectorXd vec1(double x) {
    Eigen::VectorXd v(1);
    v << x;
    return v;
}

}  // namespace

TEST_CASE("solve_pq: zero injection settles immediately") {
    const RadialNetwork net = testing::homogeneous_line(6);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(5);
    const PowerFlowSolution sol = solve_pq(net, zero, zero, 1.0, {});
    CHECK(sol.iterations == 1);
    CHECK(sol.residual_inf == 0.0);
    for (int i = 0; i < 6; ++i) CHECK(sol.v[i] == Complex(1.0, 0.0));
}

TEST_CASE("solve_pq: 2-bus agrees with the direct complex-balance oracle") {
    const RadialNetwork net = testing::homogeneous_line(2, -0.1);
    const PowerFlowSolution sol = solve_pq(net, vec1(-0.1), vec1(0.0), 1.0, {});
    CHECK(sol.residual_inf <= 1e-10);

    const Complex v1_oracle = two_bus_oracle(Complex(1.0, -1.0), 1.0, Complex(-0.1, 0.0));
    CHECK(std::abs(sol.v[1] - v1_oracle) < 1e-9);
    CHECK(std::abs(std::abs(sol.v[1]) - std::abs(v1_oracle)) < 1e-9);
}

TEST_CASE("solve_pq: infeasible loading diverges") {
    const RadialNetwork net = testing::homogeneous_line(10);
    const Eigen::VectorXd p = 50.0 * net.p_nominal();  // kappa = 50
    const Eigen::VectorXd q = Eigen::VectorXd::Zero(9);
    CHECK_THROWS_AS((void)solve_pq(net, p, q, 1.0, {}), PowerFlowNoConvergence);
    try {
        (void)solve_pq(net, p, q, 1.0, {});
    } catch (const PowerFlowNoConvergence& e) {
        CHECK(!e.last.converged);
        CHECK(e.last.residual_inf > 1e-10);
    }
}

TEST_CASE("solve_pq: continuation confirms the infeasible scale is past the nose") {
    // A coarse upward scan: solvable at small kappa, unsolvable by 50.
    const RadialNetwork net = testing::homogeneous_line(10);
    const Eigen::VectorXd q = Eigen::VectorXd::Zero(9);
    bool failed_before_50 = false;
    for (double kappa : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 50.0}) {
        try {
            (void)solve_pq(net, kappa * net.p_nominal(), q, 1.0, {});
        } catch (const PowerFlowNoConvergence&) {
            failed_before_50 = true;
            break;
        }
    }
    CHECK(failed_before_50);
}

TEST_CASE("solve_fixed_magnitude: flat no-flow state") {
    const RadialNetwork net = testing::homogeneous_line(5);
    const Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
    const PowerFlowSolution sol = solve_fixed_magnitude(net, p, Eigen::VectorXd::Ones(5), {});
    CHECK(sol.q.cwiseAbs().maxCoeff() < 1e-12);
    for (int i = 0; i < 5; ++i) CHECK(std::abs(std::arg(sol.v[i])) < 1e-12);
}

TEST_CASE("solve_fixed_magnitude: 2-bus matches the scalar angle oracle") {
    const RadialNetwork net = testing::homogeneous_line(2, -0.1);
    const PowerFlowSolution sol =
        solve_fixed_magnitude(net, vec1(-0.1), Eigen::VectorXd::Ones(2), {});

    const double theta_oracle = two_bus_angle_oracle(-0.1);
    const double q_oracle = (1.0 - std::cos(theta_oracle)) - std::sin(theta_oracle);
    CHECK(theta_oracle == Approx(-0.106).epsilon(0.01));
    CHECK(q_oracle == Approx(0.111).epsilon(0.01));

    CHECK(std::arg(sol.v[1]) == Approx(theta_oracle).epsilon(1e-8));
    CHECK(sol.q[1] == Approx(q_oracle).epsilon(1e-8));
    CHECK(std::abs(sol.v[1]) == Approx(1.0));
}

TEST_CASE("solve_fixed_magnitude: q moves against p on a line network") {
    const RadialNetwork net = testing::homogeneous_line(3);
    Eigen::VectorXd p_light(2), p_heavy(2);
    p_light << -0.05, -0.05;
    p_heavy << -0.10, -0.10;
    const Eigen::VectorXd q_light =
        solve_fixed_magnitude(net, p_light, Eigen::VectorXd::Ones(3), {}).q.tail(2);
    const Eigen::VectorXd q_heavy =
        solve_fixed_magnitude(net, p_heavy, Eigen::VectorXd::Ones(3), {}).q.tail(2);
    // heavier demand (smaller p) needs more reactive support
    CHECK((q_heavy.array() > q_light.array()).all());
}

TEST_CASE("residual: exact solutions and constructed states") {
    const RadialNetwork net = testing::homogeneous_line(4);
    const Eigen::VectorXd p = net.p_nominal();
    const Eigen::VectorXd q = Eigen::VectorXd::Zero(3);
    const PowerFlowSolution sol = solve_pq(net, p, q, 1.0, {});
    CHECK(residual(net, sol).cwiseAbs().maxCoeff() <= 1e-10);

    // flat start with nonzero specified load: residual is exactly -s
    PowerFlowSolution flat;
    flat.v = Eigen::VectorXcd::Constant(4, Complex(1.0, 0.0));
    flat.p_set = p;
    flat.q_set = q;
    const Eigen::VectorXcd r = residual(net, flat);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(r[i] - Complex(-p[i], 0.0)) < 1e-15);

    // perturbing the solved voltages grows the residual continuously
    double prev = 0.0;
    for (double delta : {1e-6, 1e-4, 1e-2}) {
        PowerFlowSolution bumped = sol;
        bumped.v[2] += delta;
        const double r_inf = residual(net, bumped).cwiseAbs().maxCoeff();
        CHECK(r_inf > prev);
        CHECK(r_inf < 10.0 * delta);  // locally Lipschitz in the bump
        prev = r_inf;
    }
}

TEST_CASE("check_angle_condition") {
    const RadialNetwork net = testing::homogeneous_line(2, -0.1);

    // flat state: all angle differences zero
    PowerFlowSolution flat;
    flat.v = Eigen::VectorXcd::Constant(2, Complex(1.0, 0.0));
    CHECK(check_angle_condition(net, flat).all);

    // solved 2-bus case stays within atan(1)
    const PowerFlowSolution sol =
        solve_fixed_magnitude(net, vec1(-0.1), Eigen::VectorXd::Ones(2), {});
    const AngleConditionReport rep = check_angle_condition(net, sol);
    CHECK(rep.all);
    CHECK(rep.per_line.size() == 1);

    // an artificial 1 rad separation breaks the pi/4 bound
    PowerFlowSolution skewed;
    skewed.v = Eigen::VectorXcd(2);
    skewed.v << Complex(1.0, 0.0), std::polar(1.0, 1.0);
    CHECK_FALSE(check_angle_condition(net, skewed).all);
}

TEST_CASE("round-trip: fixed-magnitude injections reproduce the magnitudes in PQ mode") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> load(-0.03, 0.0);
    for (std::uint64_t seed : {7u, 8u, 9u, 10u, 11u}) {
        const RadialNetwork net = testing::random_tree(12, seed);
        Eigen::VectorXd p(11);
        for (int i = 0; i < 11; ++i) p[i] = load(rng);

        const PowerFlowOptions opts;
        const PowerFlowSolution fixed = solve_fixed_magnitude(net, p, net.v_ref(), opts);
        const PowerFlowSolution rt = solve_pq(net, p, fixed.q.tail(11), net.v_ref()[0], opts);
        CHECK((rt.v_mag() - net.v_ref()).cwiseAbs().maxCoeff() < 10.0 * opts.tol);
    }
}

TEST_CASE("conservation: injections balance the line losses") {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        const RadialNetwork net = testing::random_tree(15, seed, 0.02);
        const PowerFlowSolution sol =
            solve_pq(net, net.p_nominal(), net.q_nominal(), 1.0, {});
        double losses = 0.0;
        for (const Line& l : net.lines())
            losses += l.g * std::norm(sol.v[l.from] - sol.v[l.to]);
        CHECK(std::abs(sol.p.sum() - losses) < 1e-8);
    }
}

TEST_CASE("monotonicity: componentwise heavier loads need more reactive support") {
    // Randomized load pairs p_tilde >= p on line networks inside the angle
    // condition; the fixed-magnitude reactive injections must satisfy
    // q_tilde <= q componentwise.
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> base(-0.02, 0.0);
    std::uniform_real_distribution<double> slack(0.0, 1.0);
    int checked = 0;
    while (checked < 20) {
        const int n = 3 + static_cast<int>(rng() % 6);
        const RadialNetwork net = testing::homogeneous_line(n);
        Eigen::VectorXd p(n - 1), p_tilde(n - 1);
        for (int i = 0; i < n - 1; ++i) {
            p[i] = base(rng);
            p_tilde[i] = p[i] * slack(rng);  // closer to zero, so >= p
        }
        const PowerFlowSolution a = solve_fixed_magnitude(net, p, net.v_ref(), {});
        const PowerFlowSolution b = solve_fixed_magnitude(net, p_tilde, net.v_ref(), {});
        if (!check_angle_condition(net, a).all || !check_angle_condition(net, b).all) continue;
        ++checked;
        CHECK((b.q.tail(n - 1).array() <= a.q.tail(n - 1).array() + 1e-9).all());
    }
}

TEST_CASE("solver determinism: identical inputs give identical bits") {
    const RadialNetwork net = testing::random_tree(14, 321, 0.02);
    const PowerFlowSolution a = solve_pq(net, net.p_nominal(), net.q_nominal(), 1.0, {});
    const PowerFlowSolution b = solve_pq(net, net.p_nominal(), net.q_nominal(), 1.0, {});
    REQUIRE(a.v.size() == b.v.size());
    for (int i = 0; i < a.v.size(); ++i) {
        CHECK(a.v[i].real() == b.v[i].real());
        CHECK(a.v[i].imag() == b.v[i].imag());
    }
    CHECK(a.iterations == b.iterations);
    CHECK(a.residual_inf == b.residual_inf);
}

TEST_CASE("input validation") {
    const RadialNetwork net = testing::homogeneous_line(3);
    CHECK_THROWS_AS((void)solve_pq(net, Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(2), 1.0, {}),
                    LengthMismatch);
    CHECK_THROWS_AS((void)solve_pq(net, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), -1.0, {}),
                    InvalidParameter);
    CHECK_THROWS_AS(
        (void)solve_fixed_magnitude(net, Eigen::VectorXd::Zero(2), -Eigen::VectorXd::Ones(3), {}),
        InvalidParameter);
}
