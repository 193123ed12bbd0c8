#pragma once

#include <cstdint>
#include <string>

#include "voltgrid/analysis.hpp"
#include "voltgrid/localsim.hpp"
#include "voltgrid/powerflow.hpp"
#include "voltgrid/sensitivity.hpp"
#include "voltgrid/stability.hpp"

namespace voltgrid::io {

/// Columns: bus_id, v_mag, v_angle_rad, p, q. Doubles printed with %.17g
/// so identical runs emit identical bytes.
std::string solution_csv(const PowerFlowSolution& sol);

/// Row-major matrix dump preceded by a "# method=... operating_point=..."
/// header; the operating-point field is a hash of the solved state.
std::string matrix_csv(const SensitivityMatrix& m);

/// Long-format trace: t, bus_id, v_mag, v_mag_normalized, q, objective.
/// Normalization is |V_i[t]| / V_i_ref.
std::string trace_csv(const RadialNetwork& net, const SimulationTrace& trace);

std::string certificate_json(const StabilityCertificate& cert);
std::string region_json(const RegionReport& report);
std::string manifest_json(const SimulationTrace& trace, double alpha,
                          const std::string& gains_source);
std::string critical_json(const CriticalScan& scan, const DepthReport& depth);
std::string depth_json(const DepthReport& report);

/// FNV-1a over the solved state (mode, voltages, specified injections).
std::uint64_t operating_point_hash(const PowerFlowSolution& sol);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

/// Fixed-format double used by every CSV/JSON writer.
std::string fmt_double(double x);

}  // namespace voltgrid::io
