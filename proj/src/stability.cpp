#include "voltgrid/stability.hpp"

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

namespace voltgrid {

bool positive_diagonal_check(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw InvalidParameter("matrix must be square");
    return (m.diagonal().array() > 0.0).all();
}

namespace {

struct AscentResult {
    double best_lambda = std::numeric_limits<double>::lowest();
    Eigen::VectorXd best_d;
    int iterations = 0;
    bool settled = false;  // stopped improving (or hit a certificate) before the cap
};

double lambda_min(const Eigen::MatrixXd& m, const Eigen::VectorXd& d, Eigen::VectorXd* u_out) {
    const Eigen::MatrixXd dm = d.asDiagonal() * m;
    const Eigen::MatrixXd s = dm + dm.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
    if (u_out) *u_out = eig.eigenvectors().col(0);
    return eig.eigenvalues()(0);
}

AscentResult ascend(const Eigen::MatrixXd& m, Eigen::VectorXd d, const StabilityOptions& opts,
                    std::mt19937_64& rng) {
    const int k = static_cast<int>(m.rows());
    std::uniform_real_distribution<double> interior(0.05, 1.0);
    const int window = 500;  // first-order settling is judged per window

    AscentResult res;
    res.best_lambda = std::numeric_limits<double>::lowest();
    d = d.cwiseMax(0.0).cwiseMin(1.0);
    if (d.maxCoeff() <= 0.0) d.setOnes();
    d /= d.maxCoeff();

    double checkpoint = res.best_lambda;
    Eigen::VectorXd u(k);
    int t = 1;
    for (; t <= opts.max_iter; ++t) {
        const double lam = lambda_min(m, d, &u);
        if (lam > res.best_lambda) {
            res.best_lambda = lam;
            res.best_d = d;
        }
        if (opts.early_feasible && lam > opts.tol) {
            res.settled = true;
            break;
        }
        if (t % window == 0) {
            if (res.best_lambda - checkpoint <=
                1e-9 * std::max(1.0, std::abs(res.best_lambda))) {
                res.settled = true;  // window brought no real improvement
                break;
            }
            checkpoint = res.best_lambda;
        }

        Eigen::VectorXd grad(k);
        const Eigen::VectorXd mu = m * u;
        for (int i = 0; i < k; ++i) grad[i] = 2.0 * u[i] * mu[i];
        const double gn = grad.norm();
        if (gn < 1e-15) {  // flat point, nothing to climb
            res.settled = true;
            break;
        }

        d += (opts.step0 / std::sqrt(static_cast<double>(t))) * grad / gn;
        d = d.cwiseMax(0.0).cwiseMin(1.0);
        const double top = d.maxCoeff();
        if (top < 1e-12) {
            // projected all the way into the corner at zero; restart inside
            for (int i = 0; i < k; ++i) d[i] = interior(rng);
        }
        // lambda_min is positively homogeneous in d, so fixing max(d) = 1
        // removes the trivial shrink-to-zero direction without changing
        // the sign of the optimum.
        d /= d.maxCoeff();
    }
    res.iterations = std::min(t, opts.max_iter);
    return res;
}

/// Precision pass after the ascent: cyclic ternary search per coordinate.
/// f restricted to one coordinate (others fixed) is a minimum of affine
/// functions of that coordinate, hence concave, so the search is exact up
/// to eigensolver accuracy. The largest coordinate stays pinned at 1 (the
/// shell normalization). Returns false if the cycles keep improving past
/// their budget, which flags an untrustworthy optimum.
bool polish(const Eigen::MatrixXd& m, Eigen::VectorXd& d, double& f_best) {
    const int k = static_cast<int>(m.rows());
    if (k == 1) return true;
    int pinned = 0;
    d.maxCoeff(&pinned);
    const int max_cycles = 50;
    for (int cycle = 0; cycle < max_cycles; ++cycle) {
        bool improved = false;
        for (int i = 0; i < k; ++i) {
            if (i == pinned) continue;
            double lo = 0.0, hi = 1.0;
            Eigen::VectorXd trial = d;
            auto eval = [&](double t) {
                trial[i] = t;
                return lambda_min(m, trial, nullptr);
            };
            while (hi - lo > 1e-13) {
                const double m1 = lo + (hi - lo) / 3.0;
                const double m2 = hi - (hi - lo) / 3.0;
                const double f1 = eval(m1);
                const double f2 = eval(m2);
                if (f1 < f2) {
                    lo = m1;
                } else if (f2 < f1) {
                    hi = m2;
                } else {
                    lo = m1;
                    hi = m2;
                }
            }
            const double t_new = 0.5 * (lo + hi);
            const double f_new = eval(t_new);
            if (f_new > f_best + 1e-14 * std::max(1.0, std::abs(f_best))) {
                d[i] = t_new;
                f_best = f_new;
                improved = true;
            }
        }
        if (!improved) return true;
    }
    return false;
}

}  // namespace

StabilityCertificate diagonal_stability(const Eigen::MatrixXd& m, const StabilityOptions& opts) {
    if (m.rows() != m.cols() || m.rows() < 1) throw InvalidParameter("matrix must be square");
    if (!m.allFinite()) throw InvalidParameter("matrix has non-finite entries");
    const int k = static_cast<int>(m.rows());

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> interior(0.05, 1.0);

    // With any nonpositive diagonal entry, (DM + M^T D)_ii = 2 d_i M_ii
    // can never be made positive, so a certificate is impossible and the
    // ascent only refines the (negative) optimum for reporting.
    const bool diag_ok = positive_diagonal_check(m);

    AscentResult best;
    best.best_lambda = std::numeric_limits<double>::lowest();
    int total_iterations = 0;
    const int starts = std::max(1, opts.restarts);
    for (int s = 0; s < starts; ++s) {
        Eigen::VectorXd d0(k);
        if (s == 0) {
            d0.setOnes();
        } else {
            for (int i = 0; i < k; ++i) d0[i] = interior(rng);
        }
        AscentResult r = ascend(m, d0, opts, rng);
        total_iterations += r.iterations;
        if (r.best_lambda > best.best_lambda) {
            best.best_lambda = r.best_lambda;
            best.best_d = r.best_d;
        }
        if (opts.early_feasible && best.best_lambda > opts.tol) break;
        if (opts.early_feasible && !diag_ok) break;  // verdict already decided
    }

    // Verdict-only runs skip the precision pass; any "unstable" they
    // produce gets re-confirmed by a full run before it counts.
    if (!opts.early_feasible) {
        if (!polish(m, best.best_d, best.best_lambda))
            throw NoConvergence("eigenvalue ascent stalled before first-order criteria were met",
                                total_iterations, best.best_lambda);
    }

    StabilityCertificate cert;
    cert.opt_lambda = best.best_lambda;
    cert.iterations = total_iterations;
    if (best.best_lambda > opts.tol) {
        cert.verdict = StabilityVerdict::stable;
        cert.d = best.best_d;
    } else {
        cert.verdict = StabilityVerdict::unstable;
    }
    return cert;
}

namespace {

/// Verdict-oriented check used for sampling: cheap first, and any
/// "unstable" answer is re-confirmed with the full budget so that a
/// counterexample is never just an under-iterated ascent.
bool sample_is_stable(const Eigen::MatrixXd& m, const StabilityOptions& base) {
    if (!positive_diagonal_check(m)) return false;
    StabilityOptions fast = base;
    fast.early_feasible = true;
    fast.max_iter = std::min(base.max_iter, 800);
    fast.restarts = 2;
    try {
        if (diagonal_stability(m, fast).verdict == StabilityVerdict::stable) return true;
    } catch (const NoConvergence&) {
        // fall through to the full run
    }
    StabilityOptions full = base;
    full.early_feasible = true;
    return diagonal_stability(m, full).verdict == StabilityVerdict::stable;
}

}  // namespace

RegionReport region_stability(const RadialNetwork& net, const InjectionBox& box, int samples,
                              std::uint64_t seed, const StabilityOptions& stab_opts,
                              const PowerFlowOptions& pf_opts) {
    const int m = net.size() - 1;
    if (box.p_lower.size() != m) throw LengthMismatch("injection box does not match network size");
    if (samples < 0) throw InvalidParameter("sample count must be nonnegative");

    RegionReport report;
    report.seed = seed;

    const PowerFlowSolution sol_min = solve_fixed_magnitude(net, box.p_lower, net.v_ref(), pf_opts);
    const AngleConditionReport angles = check_angle_condition(net, sol_min);
    if (!angles.all)
        throw AngleConditionViolated(
            "minimum-injection operating point violates the per-line angle bound; "
            "the single-point certificate does not extend to the box");
    report.angle_condition = true;

    report.at_pmin = diagonal_stability(exact_m(net, sol_min).m, stab_opts);
    report.certified = report.at_pmin.verdict == StabilityVerdict::stable;
    if (!report.certified) return report;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int s = 0; s < samples; ++s) {
        Eigen::VectorXd p(m);
        for (int i = 0; i < m; ++i)
            p[i] = box.p_lower[i] + unit(rng) * (box.p_upper[i] - box.p_lower[i]);
        bool stable = false;
        try {
            const PowerFlowSolution sol = solve_fixed_magnitude(net, p, net.v_ref(), pf_opts);
            stable = sample_is_stable(exact_m(net, sol).m, stab_opts);
        } catch (const NoConvergence&) {
            stable = false;  // unsolvable sample counts against the certificate
        } catch (const SingularJacobian&) {
            stable = false;
        }
        ++report.samples_checked;
        if (!stable) ++report.counterexamples;
    }
    return report;
}

}  // namespace voltgrid
