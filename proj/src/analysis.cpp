#include "voltgrid/analysis.hpp"

#include <cmath>
#include <limits>

namespace voltgrid {

double line_threshold(int n, int i) {
    if (n < 2 || i < 1 || i > n - 1) throw InvalidParameter("need 1 <= i <= n-1, n >= 2");
    // Im(X_ii) / sum_k |X_ik|^2 for the homogeneous line with unit-length
    // per-line impedance (1+j)/2: X_ik = (1+j)/2 * min(i,k).
    const double ni = static_cast<double>(n);
    const double bi = static_cast<double>(i);
    return 6.0 / ((bi - 1.0) * (2.0 * bi - 1.0) + 6.0 * (ni - bi) * bi);
}

DepthReport depth_report(const RadialNetwork& net) {
    DepthReport report;
    report.per_bus.resize(net.size());
    for (int i = 0; i < net.size(); ++i) report.per_bus[i] = net.depth(i);
    report.depth = net.max_depth();
    return report;
}

namespace {

struct ScanPoint {
    bool stable = false;
    double opt_lambda = std::numeric_limits<double>::quiet_NaN();
};

ScanPoint evaluate_kappa(const RadialNetwork& net, const Eigen::VectorXd& p_nom, double kappa,
                         const CriticalOptions& opts) {
    ScanPoint point;
    try {
        const PowerFlowSolution sol =
            solve_fixed_magnitude(net, kappa * p_nom, net.v_ref(), opts.pf);
        const Eigen::MatrixXd m =
            opts.use_approx ? approx_m(net, sol).m : exact_m(net, sol).m;
        StabilityOptions fast = opts.stab;
        fast.early_feasible = true;
        const StabilityCertificate cert = diagonal_stability(m, fast);
        point.stable = cert.verdict == StabilityVerdict::stable;
        point.opt_lambda = cert.opt_lambda;
    } catch (const NoConvergence&) {
        point.stable = false;  // unsolvable reference profile counts as lost
    } catch (const SingularJacobian&) {
        point.stable = false;
    }
    return point;
}

}  // namespace

CriticalScan critical_load_scale(const RadialNetwork& net, double kappa_max, std::uint64_t seed,
                                 const CriticalOptions& opts) {
    if (kappa_max <= 0.0) throw InvalidParameter("kappa_max must be positive");
    if (opts.tol_kappa <= 0.0 || opts.tol_kappa >= kappa_max)
        throw InvalidParameter("tol_kappa must be in (0, kappa_max)");
    const Eigen::VectorXd p_nom = net.p_nominal();
    if (p_nom.isZero(0.0)) throw NoFlipFound("network has no nominal load to scale");

    CriticalOptions scan_opts = opts;
    scan_opts.stab.seed = seed;

    CriticalScan result;
    auto probe = [&](double kappa) {
        const ScanPoint point = evaluate_kappa(net, p_nom, kappa, scan_opts);
        result.scan.push_back({kappa, point.opt_lambda});
        return point.stable;
    };

    // The scaled family must start stable for a boundary to make sense.
    const double kappa_eps = std::min(opts.tol_kappa, kappa_max / 1024.0);
    if (!probe(kappa_eps))
        throw NoFlipFound("network is not stable at vanishing load; no boundary to find");

    // Coarse pre-scan: stable below the flip, unstable above it.
    const int points = std::max(2, opts.prescan_points);
    double lo = kappa_eps;
    double hi = 0.0;
    bool found = false;
    for (int j = 1; j <= points; ++j) {
        const double kappa = kappa_max * static_cast<double>(j) / points;
        const bool stable = probe(kappa);
        if (stable && found)
            throw NoFlipFound("stability is not monotone in the load scale");
        if (!stable && !found) {
            found = true;
            hi = kappa;
        }
        if (stable) lo = kappa;
    }
    if (!found)
        throw NoFlipFound("stability does not flip in (0, " + std::to_string(kappa_max) + "]");

    while (hi - lo > opts.tol_kappa) {
        const double mid = 0.5 * (lo + hi);
        if (probe(mid))
            lo = mid;
        else
            hi = mid;
    }
    result.kappa_star = 0.5 * (lo + hi);
    return result;
}

}  // namespace voltgrid
