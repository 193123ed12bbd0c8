#include "voltgrid/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace voltgrid::io {

using nlohmann::json;

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace {

const char* method_name(SensitivityMethod m) {
    switch (m) {
        case SensitivityMethod::exact: return "exact";
        case SensitivityMethod::approximate: return "approx";
        case SensitivityMethod::finite_difference: return "fd";
    }
    return "unknown";
}

const char* status_name(SimStatus s) {
    switch (s) {
        case SimStatus::converged: return "converged";
        case SimStatus::diverged: return "diverged";
        case SimStatus::max_steps: return "max_steps";
    }
    return "unknown";
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
}

json vector_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

}  // namespace

std::uint64_t operating_point_hash(const PowerFlowSolution& sol) {
    std::uint64_t h = 1469598103934665603ULL;
    const int mode = static_cast<int>(sol.mode);
    hash_bytes(h, &mode, sizeof(mode));
    for (Eigen::Index i = 0; i < sol.v.size(); ++i) {
        const double re = sol.v[i].real();
        const double im = sol.v[i].imag();
        hash_bytes(h, &re, sizeof(re));
        hash_bytes(h, &im, sizeof(im));
    }
    for (Eigen::Index i = 0; i < sol.p_set.size(); ++i) {
        hash_bytes(h, &sol.p_set[i], sizeof(double));
        hash_bytes(h, &sol.q_set[i], sizeof(double));
    }
    return h;
}

std::string solution_csv(const PowerFlowSolution& sol) {
    std::string out = "bus_id,v_mag,v_angle_rad,p,q\n";
    for (Eigen::Index i = 0; i < sol.v.size(); ++i) {
        out += std::to_string(i) + ',' + fmt_double(std::abs(sol.v[i])) + ',' +
               fmt_double(std::arg(sol.v[i])) + ',' + fmt_double(sol.p[i]) + ',' +
               fmt_double(sol.q[i]) + '\n';
    }
    return out;
}

std::string matrix_csv(const SensitivityMatrix& m) {
    char header[96];
    std::snprintf(header, sizeof(header), "# method=%s operating_point=%016llx\n",
                  method_name(m.method),
                  static_cast<unsigned long long>(operating_point_hash(m.operating_point)));
    std::string out = header;
    for (Eigen::Index r = 0; r < m.m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.m.cols(); ++c) {
            if (c) out += ',';
            out += fmt_double(m.m(r, c));
        }
        out += '\n';
    }
    return out;
}

std::string trace_csv(const RadialNetwork& net, const SimulationTrace& trace) {
    const Eigen::VectorXd ref = net.v_ref();
    std::string out = "t,bus_id,v_mag,v_mag_normalized,q,objective\n";
    for (const SimStep& step : trace.steps) {
        for (Eigen::Index i = 0; i < step.v_mag.size(); ++i) {
            const int bus = static_cast<int>(i) + 1;
            out += std::to_string(step.t) + ',' + std::to_string(bus) + ',' +
                   fmt_double(step.v_mag[i]) + ',' + fmt_double(step.v_mag[i] / ref[bus]) + ',' +
                   fmt_double(step.q[i]) + ',' + fmt_double(step.objective) + '\n';
        }
    }
    return out;
}

std::string certificate_json(const StabilityCertificate& cert) {
    json doc;
    doc["verdict"] = cert.verdict == StabilityVerdict::stable ? "stable" : "unstable";
    doc["d"] = vector_json(cert.d);
    doc["opt_lambda"] = cert.opt_lambda;
    doc["iterations"] = cert.iterations;
    return doc.dump(2) + "\n";
}

std::string region_json(const RegionReport& report) {
    json doc;
    doc["verdict"] =
        report.at_pmin.verdict == StabilityVerdict::stable ? "stable" : "unstable";
    doc["certified"] = report.certified;
    doc["d"] = vector_json(report.at_pmin.d);
    doc["opt_lambda"] = report.at_pmin.opt_lambda;
    doc["angle_condition"] = report.angle_condition;
    doc["samples_checked"] = report.samples_checked;
    doc["counterexamples"] = report.counterexamples;
    doc["seed"] = report.seed;
    return doc.dump(2) + "\n";
}

std::string manifest_json(const SimulationTrace& trace, double alpha,
                          const std::string& gains_source) {
    json doc;
    doc["status"] = status_name(trace.status);
    doc["steps"] = trace.steps.size();
    doc["gains"] = vector_json(trace.gains);
    doc["gains_source"] = gains_source;
    doc["alpha"] = alpha;
    doc["seed"] = trace.seed;
    doc["perturbation"] = trace.perturbation;
    if (!trace.steps.empty()) {
        doc["final_objective"] = trace.steps.back().objective;
    }
    return doc.dump(2) + "\n";
}

std::string critical_json(const CriticalScan& scan, const DepthReport& depth) {
    json doc;
    doc["kappa_star"] = scan.kappa_star;
    doc["scan"] = json::array();
    for (const auto& [kappa, opt_lambda] : scan.scan) {
        json point;
        point["kappa"] = kappa;
        if (std::isfinite(opt_lambda))
            point["opt_lambda"] = opt_lambda;
        else
            point["opt_lambda"] = nullptr;  // unsolvable operating point
        doc["scan"].push_back(point);
    }
    doc["depth"] = {{"depth", depth.depth}, {"per_bus", depth.per_bus}};
    return doc.dump(2) + "\n";
}

std::string depth_json(const DepthReport& report) {
    json doc;
    doc["depth"] = report.depth;
    doc["per_bus"] = report.per_bus;
    return doc.dump(2) + "\n";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot write " + path);
    out << content;
    if (!out) throw FileError("short write to " + path);
}

}  // namespace voltgrid::io
