#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "voltgrid/powerflow.hpp"

namespace voltgrid {

struct SimStep {
    int t = 0;
    Eigen::VectorXd q;       // injections applied at this step (buses 1..n-1)
    Eigen::VectorXd v_mag;   // resulting magnitudes (buses 1..n-1)
    double objective = 0.0;
};

enum class SimStatus { converged, diverged, max_steps };

struct SimulationTrace {
    std::vector<SimStep> steps;
    SimStatus status = SimStatus::max_steps;
    Eigen::VectorXd gains;
    std::uint64_t seed = 0;
    std::string perturbation;
};

struct SimOptions {
    int max_steps = 10000;
    double conv_tol = 1e-6;   // max |  |v| - v_ref  | to declare convergence
    double div_bound = 0.5;   // any bus this far off reference is a failure
    PowerFlowOptions pf;
};

/// One local-control update: q - d .* (v_mag_sq - v_ref_sq).
/// Pure arithmetic, no network access. d must be positive componentwise.
Eigen::VectorXd control_step(const Eigen::VectorXd& q, const Eigen::VectorXd& v_mag_sq,
                             const Eigen::VectorXd& v_ref_sq, const Eigen::VectorXd& d);

/// Sum of squared deviations of |v|^2 from the reference squares; zero
/// exactly when every magnitude sits at its reference.
double objective(const Eigen::VectorXd& v_mag, const Eigen::VectorXd& v_ref);

/// Quasi-static closed loop: solve the network at (p, q[t]), measure
/// magnitudes, apply control_step, repeat. Each step's solve is
/// warm-started from the previous network state (the state evolves
/// continuously between control updates); v_init seeds the first step,
/// flat otherwise. Terminates converged when all magnitudes are within
/// conv_tol of reference, diverged when any is div_bound away or the
/// power flow fails (failure is recorded as divergence, not an abort).
/// `seed` is only recorded in the trace.
SimulationTrace simulate(const RadialNetwork& net, const Eigen::VectorXd& p,
                         const Eigen::VectorXd& q0, const Eigen::VectorXd& d,
                         const SimOptions& opts = {}, std::uint64_t seed = 0,
                         const Eigen::VectorXcd* v_init = nullptr);

/// Initial injections consistent with per-bus magnitude deviations drawn
/// uniformly from [-f, +f] (fractional) around reference: draws target
/// magnitudes, then solves the fixed-magnitude flow to realize them.
/// f = 0 returns the reference injections exactly.
Eigen::VectorXd perturb_initial(const RadialNetwork& net, const Eigen::VectorXd& p,
                                double magnitude_fraction, std::uint64_t seed,
                                const PowerFlowOptions& opts = {});

/// Same draw, but hands back the whole solved state so callers can seed
/// the simulation with consistent voltages.
PowerFlowSolution perturb_initial_state(const RadialNetwork& net, const Eigen::VectorXd& p,
                                        double magnitude_fraction, std::uint64_t seed,
                                        const PowerFlowOptions& opts = {});

/// Alternative perturbation that offsets the reference injections by
/// uniform draws in [-f, +f] per-unit instead of realizing a magnitude
/// deviation through the network.
Eigen::VectorXd perturb_reactive(const RadialNetwork& net, const Eigen::VectorXd& p,
                                 double magnitude, std::uint64_t seed,
                                 const PowerFlowOptions& opts = {});

struct AutoGainResult {
    SimulationTrace trace;
    double alpha = 1.0;
    Eigen::VectorXd d;
};

/// Gain selection: run the simulation with d = alpha * d_base, halving
/// alpha from 1 until the trace converges (or max_halvings is exhausted,
/// in which case the last trace is returned as-is).
AutoGainResult simulate_auto_gains(const RadialNetwork& net, const Eigen::VectorXd& p,
                                   const Eigen::VectorXd& q0, const Eigen::VectorXd& d_base,
                                   const SimOptions& opts = {}, std::uint64_t seed = 0,
                                   int max_halvings = 24,
                                   const Eigen::VectorXcd* v_init = nullptr);

}  // namespace voltgrid
