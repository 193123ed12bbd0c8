#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "voltgrid/analysis.hpp"
#include "voltgrid/io.hpp"
#include "voltgrid/localsim.hpp"
#include "voltgrid/netmodel.hpp"
#include "voltgrid/powerflow.hpp"
#include "voltgrid/sensitivity.hpp"
#include "voltgrid/stability.hpp"

namespace {

using namespace voltgrid;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

struct SeedOption {
    std::optional<std::uint64_t> value;

    std::uint64_t resolve() const {
        if (value) return *value;
        if (const char* env = std::getenv("VOLTGRID_SEED")) {
            try {
                return std::stoull(env);
            } catch (const std::exception&) {
                throw UsageError("VOLTGRID_SEED is not a valid integer");
            }
        }
        return 0;
    }
};

void emit(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-")
        std::cout << content;
    else
        io::write_file(path, content);
}

RadialNetwork load_net_file(const std::string& path) {
    return load_network(io::read_file(path));
}

Eigen::VectorXd scaled_loads(const RadialNetwork& net, double kappa) {
    return kappa * net.p_nominal();
}

PowerFlowSolution solve_reference(const RadialNetwork& net, const Eigen::VectorXd& p,
                                  const PowerFlowOptions& pf) {
    return solve_fixed_magnitude(net, p, net.v_ref(), pf);
}

Eigen::VectorXd gains_from_file(const std::string& path, int expected) {
    json doc;
    try {
        doc = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid gains JSON: ") + e.what());
    }
    if (!doc.is_array() || static_cast<int>(doc.size()) != expected)
        throw UsageError("gains file must be a JSON array of length n-1");
    Eigen::VectorXd d(expected);
    for (int i = 0; i < expected; ++i) d[i] = doc[i].get<double>();
    return d;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voltgrid: radial-feeder voltage sensitivity, diagonal stability and "
                 "local volt/var control simulation"};
    app.require_subcommand(1);

    PowerFlowOptions pf;
    StabilityOptions stab;

    // --- gen ---------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "Generate a synthetic star or line feeder");
    std::string gen_topology = "line";
    int gen_buses = 10;
    double gen_g = 1.0, gen_b = 1.0, gen_p = -0.01, gen_q = 0.0, gen_vref = 1.0;
    std::string gen_out;
    gen->add_option("--topology", gen_topology, "star or line")->check(CLI::IsMember({"star", "line"}));
    gen->add_option("--buses", gen_buses, "total bus count including the feeder")->required();
    gen->add_option("--g", gen_g, "per-line conductance (p.u.)");
    gen->add_option("--b", gen_b, "per-line susceptance magnitude (p.u.)");
    gen->add_option("--p", gen_p, "active injection at each load bus (negative = load)");
    gen->add_option("--q", gen_q, "reactive injection at each load bus");
    gen->add_option("--vref", gen_vref, "reference voltage magnitude");
    gen->add_option("-o,--output", gen_out, "output path (default stdout)");

    // --- pf ----------------------------------------------------------
    auto* pfcmd = app.add_subcommand("pf", "Solve the power flow at the stored injections");
    std::string pf_net, pf_mode = "pq", pf_out;
    double pf_kappa = 1.0;
    pfcmd->add_option("--net", pf_net, "network JSON file")->required();
    pfcmd->add_option("--mode", pf_mode, "pq or fixedmag")->check(CLI::IsMember({"pq", "fixedmag"}));
    pfcmd->add_option("--kappa", pf_kappa, "scale applied to the stored active loads");
    pfcmd->add_option("--tol", pf.tol, "power mismatch tolerance (p.u.)");
    pfcmd->add_option("--max-iter", pf.max_iter, "iteration cap");
    pfcmd->add_option("-o,--output", pf_out, "solution CSV path (default stdout)");

    // --- sens --------------------------------------------------------
    auto* sens = app.add_subcommand("sens", "Voltage-squared/reactive-power sensitivity matrix");
    std::string sens_net, sens_method = "exact", sens_point = "ref", sens_out;
    double sens_h = 1e-6, sens_kappa = 1.0;
    sens->add_option("--net", sens_net, "network JSON file")->required();
    sens->add_option("--method", sens_method, "exact, approx or fd")
        ->check(CLI::IsMember({"exact", "approx", "fd"}));
    sens->add_option("--operating-point", sens_point,
                     "ref = fixed magnitudes at reference, pq = solve stored injections")
        ->check(CLI::IsMember({"ref", "pq"}));
    sens->add_option("--fd-step", sens_h, "finite-difference step (fd method)");
    sens->add_option("--kappa", sens_kappa, "scale applied to the stored active loads");
    sens->add_option("-o,--output", sens_out, "matrix CSV path (default stdout)");

    // --- stab --------------------------------------------------------
    auto* stabcmd = app.add_subcommand("stab", "Diagonal stability certificate at one loading");
    std::string stab_net, stab_method = "exact", stab_out;
    double stab_kappa = 1.0;
    SeedOption stab_seed;
    stabcmd->add_option("--net", stab_net, "network JSON file")->required();
    stabcmd->add_option("--method", stab_method, "exact or approx")
        ->check(CLI::IsMember({"exact", "approx"}));
    stabcmd->add_option("--kappa", stab_kappa, "scale applied to the stored active loads");
    stabcmd->add_option("--tol", stab.tol, "eigenvalue threshold");
    stabcmd->add_option("--max-iter", stab.max_iter, "ascent iteration cap");
    stabcmd->add_option("--seed", stab_seed.value, "restart seed (env VOLTGRID_SEED fallback)");
    stabcmd->add_option("-o,--output", stab_out, "certificate JSON path (default stdout)");

    // --- region ------------------------------------------------------
    auto* region = app.add_subcommand("region", "Certify an injection box from its minimum point");
    std::string region_net, region_out;
    int region_samples = 100;
    double region_lower = 1.0, region_upper = 0.0;
    SeedOption region_seed;
    region->add_option("--net", region_net, "network JSON file")->required();
    region->add_option("--samples", region_samples, "number of box samples to validate");
    region->add_option("--lower-scale", region_lower,
                       "box lower bound as a multiple of the stored loads");
    region->add_option("--upper-scale", region_upper,
                       "box upper bound as a multiple of the stored loads");
    region->add_option("--seed", region_seed.value, "sampling seed (env VOLTGRID_SEED fallback)");
    region->add_option("-o,--output", region_out, "report JSON path (default stdout)");

    // --- simulate ----------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "Run the local voltage-control law");
    std::string sim_net, sim_gains = "auto", sim_perturb_mode = "v", sim_out = "trace.csv";
    double sim_perturb = 0.1, sim_kappa = 1.0;
    SeedOption sim_seed;
    SimOptions sim_opts;
    sim->add_option("--net", sim_net, "network JSON file")->required();
    sim->add_option("--perturb", sim_perturb, "fractional initial voltage perturbation");
    sim->add_option("--perturb-mode", sim_perturb_mode,
                    "v = realize magnitude deviations, q = offset reactive injections")
        ->check(CLI::IsMember({"v", "q"}));
    sim->add_option("--gains", sim_gains, "auto or a JSON array file of per-bus gains");
    sim->add_option("--kappa", sim_kappa, "scale applied to the stored active loads");
    sim->add_option("--seed", sim_seed.value, "perturbation seed (env VOLTGRID_SEED fallback)");
    sim->add_option("--max-steps", sim_opts.max_steps, "step cap");
    sim->add_option("--conv-tol", sim_opts.conv_tol, "convergence band on |V|-Vref (p.u.)");
    sim->add_option("--div-bound", sim_opts.div_bound, "divergence band on |V|-Vref (p.u.)");
    sim->add_option("-o,--output", sim_out, "trace CSV path; manifest goes to <path>.manifest.json");

    // --- critical ----------------------------------------------------
    auto* critical = app.add_subcommand("critical", "Bisect the demand scale where stability flips");
    std::string critical_net, critical_out, critical_method = "exact";
    CriticalOptions critical_opts;
    double critical_kappa_max = 10.0;
    SeedOption critical_seed;
    critical->add_option("--net", critical_net, "network JSON file")->required();
    critical->add_option("--kappa-max", critical_kappa_max, "upper end of the scan")->required();
    critical->add_option("--tol", critical_opts.tol_kappa, "bisection tolerance in kappa");
    critical->add_option("--method", critical_method, "exact or approx sensitivity")
        ->check(CLI::IsMember({"exact", "approx"}));
    critical->add_option("--seed", critical_seed.value, "restart seed (env VOLTGRID_SEED fallback)");
    critical->add_option("-o,--output", critical_out, "report JSON path (default stdout)");

    // --- depth -------------------------------------------------------
    auto* depth = app.add_subcommand("depth", "Tree depth report");
    std::string depth_net, depth_out;
    depth->add_option("--net", depth_net, "network JSON file")->required();
    depth->add_option("-o,--output", depth_out, "report JSON path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const Topology topo = gen_topology == "star" ? Topology::star : Topology::line;
            const RadialNetwork net =
                generate_topology(topo, gen_buses, gen_g, gen_b, gen_p, gen_q, gen_vref);
            emit(gen_out, to_json(net));
        } else if (*pfcmd) {
            const RadialNetwork net = load_net_file(pf_net);
            const Eigen::VectorXd p = scaled_loads(net, pf_kappa);
            const PowerFlowSolution sol =
                pf_mode == "pq" ? solve_pq(net, p, net.q_nominal(), net.buses()[0].v_ref, pf)
                                : solve_fixed_magnitude(net, p, net.v_ref(), pf);
            emit(pf_out, io::solution_csv(sol));
        } else if (*sens) {
            const RadialNetwork net = load_net_file(sens_net);
            const Eigen::VectorXd p = scaled_loads(net, sens_kappa);
            SensitivityMatrix m;
            if (sens_method == "fd") {
                const Eigen::VectorXd q = sens_point == "ref"
                                              ? solve_reference(net, p, pf).q.tail(net.size() - 1)
                                              : net.q_nominal();
                m = fd_m(net, p, q, sens_h);
            } else {
                const PowerFlowSolution sol =
                    sens_point == "ref"
                        ? solve_reference(net, p, pf)
                        : solve_pq(net, p, net.q_nominal(), net.buses()[0].v_ref, pf);
                m = sens_method == "exact" ? exact_m(net, sol) : approx_m(net, sol);
            }
            emit(sens_out, io::matrix_csv(m));
        } else if (*stabcmd) {
            const RadialNetwork net = load_net_file(stab_net);
            stab.seed = stab_seed.resolve();
            const PowerFlowSolution sol = solve_reference(net, scaled_loads(net, stab_kappa), pf);
            const Eigen::MatrixXd m =
                stab_method == "exact" ? exact_m(net, sol).m : approx_m(net, sol).m;
            emit(stab_out, io::certificate_json(diagonal_stability(m, stab)));
        } else if (*region) {
            const RadialNetwork net = load_net_file(region_net);
            if (region_lower < region_upper)
                throw UsageError("--lower-scale must be >= --upper-scale (loads are negative)");
            const Eigen::VectorXd p_nom = net.p_nominal();
            if ((p_nom.array() > 0.0).any())
                throw UsageError("scaled boxes assume nonpositive stored loads");
            const InjectionBox box(region_lower * p_nom, region_upper * p_nom);
            const RegionReport report =
                region_stability(net, box, region_samples, region_seed.resolve(), stab, pf);
            emit(region_out, io::region_json(report));
        } else if (*sim) {
            const RadialNetwork net = load_net_file(sim_net);
            const int m = net.size() - 1;
            const std::uint64_t seed = sim_seed.resolve();
            const Eigen::VectorXd p = scaled_loads(net, sim_kappa);
            Eigen::VectorXd q0;
            Eigen::VectorXcd v_init;
            const Eigen::VectorXcd* v_hint = nullptr;
            if (sim_perturb_mode == "v") {
                const PowerFlowSolution start =
                    perturb_initial_state(net, p, sim_perturb, seed, pf);
                q0 = start.q.tail(m);
                v_init = start.v;
                v_hint = &v_init;
            } else {
                q0 = perturb_reactive(net, p, sim_perturb, seed, pf);
            }
            sim_opts.pf = pf;

            SimulationTrace trace;
            double alpha = 1.0;
            std::string gains_source = sim_gains;
            if (sim_gains == "auto") {
                // Gains from the certificate at this loading, scaled back
                // until the loop actually settles.
                const PowerFlowSolution ref_sol = solve_reference(net, p, pf);
                const StabilityCertificate cert = diagonal_stability(exact_m(net, ref_sol).m, stab);
                Eigen::VectorXd d_base;
                if (cert.verdict == StabilityVerdict::stable) {
                    d_base = cert.d;
                } else {
                    d_base = Eigen::VectorXd::Ones(m);
                    gains_source = "auto (no certificate; unit gains)";
                }
                AutoGainResult auto_result =
                    simulate_auto_gains(net, p, q0, d_base, sim_opts, seed, 24, v_hint);
                trace = std::move(auto_result.trace);
                alpha = auto_result.alpha;
            } else {
                trace = simulate(net, p, q0, gains_from_file(sim_gains, m), sim_opts, seed, v_hint);
            }
            trace.perturbation = (sim_perturb_mode == "v" ? "magnitude " : "reactive ") +
                                 io::fmt_double(sim_perturb);

            const std::string manifest = io::manifest_json(trace, alpha, gains_source);
            emit(sim_out, io::trace_csv(net, trace));
            if (!sim_out.empty() && sim_out != "-")
                io::write_file(sim_out + ".manifest.json", manifest);
            else
                std::cout << manifest;
        } else if (*critical) {
            const RadialNetwork net = load_net_file(critical_net);
            critical_opts.use_approx = critical_method == "approx";
            critical_opts.pf = pf;
            const CriticalScan scan =
                critical_load_scale(net, critical_kappa_max, critical_seed.resolve(), critical_opts);
            emit(critical_out, io::critical_json(scan, depth_report(net)));
        } else if (*depth) {
            const RadialNetwork net = load_net_file(depth_net);
            emit(depth_out, io::depth_json(depth_report(net)));
        }
    } catch (const NoConvergence& e) {
        json diag{{"error", "NoConvergence"}, {"detail", e.what()},
                  {"iterations", e.iterations}, {"value", e.value}};
        std::cerr << diag.dump() << "\n";
        return kExitNumerical;
    } catch (const SingularSystem& e) {
        std::cerr << json{{"error", "SingularSystem"}, {"detail", e.what()}}.dump() << "\n";
        return kExitNumerical;
    } catch (const SingularJacobian& e) {
        std::cerr << json{{"error", "SingularJacobian"}, {"detail", e.what()}}.dump() << "\n";
        return kExitNumerical;
    } catch (const AngleConditionViolated& e) {
        std::cerr << json{{"error", "AngleConditionViolated"}, {"detail", e.what()},
                          {"angle_condition", false}}
                         .dump()
                  << "\n";
        return kExitNumerical;
    } catch (const NoFlipFound& e) {
        std::cerr << json{{"error", "NoFlipFound"}, {"detail", e.what()}}.dump() << "\n";
        return kExitNumerical;
    } catch (const DivideByZero& e) {
        std::cerr << json{{"error", "DivideByZero"}, {"detail", e.what()}}.dump() << "\n";
        return kExitNumerical;
    } catch (const Error& e) {
        // Input and usage problems: bad files, bad parameters, bad topology.
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitOk;
}
