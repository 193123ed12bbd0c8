#pragma once

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "voltgrid/errors.hpp"

namespace voltgrid {

using Complex = std::complex<double>;

enum class BusKind { feeder, pq };

/// One bus of a radial feeder. Bus 0 is the substation (feeder) and holds
/// its voltage magnitude at v_ref; all other buses are PQ buses whose
/// nominal injections are p_ref/q_ref (negative p_ref = load). Everything
/// is per-unit.
struct Bus {
    int id = 0;
    BusKind kind = BusKind::pq;
    double p_ref = 0.0;
    double q_ref = 0.0;
    double v_ref = 1.0;
};

/// Series line between two buses with admittance y = g - jb, b > 0.
/// Note the sign convention: b is the magnitude of the (inductive)
/// susceptance, so Im(y) = -b. This differs from the common y = g + jb
/// convention but keeps the closed forms below literal.
struct Line {
    int from = 0;
    int to = 0;
    double g = 0.0;
    double b = 0.0;

    Complex admittance() const { return Complex(g, -b); }
};

/// A validated rooted tree of buses. Construction derives parent/depth by
/// traversal from bus 0 and rejects anything that is not a connected tree
/// (cycle, disconnected bus, duplicate edge, missing feeder).
/// Immutable after construction; safe to share across threads.
class RadialNetwork {
public:
    RadialNetwork(std::string name, std::vector<Bus> buses, std::vector<Line> lines);

    int size() const { return static_cast<int>(buses_.size()); }
    const std::string& name() const { return name_; }
    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Line>& lines() const { return lines_; }

    /// Parent bus id; -1 for the feeder.
    int parent(int bus) const { return parent_.at(bus); }
    /// Number of edges between `bus` and the feeder.
    int depth(int bus) const { return depth_.at(bus); }
    int max_depth() const { return max_depth_; }
    /// Bus ids ordered by non-decreasing depth (feeder first).
    const std::vector<int>& sweep_order() const { return order_; }
    /// Admittance of the line joining `bus` to its parent.
    Complex parent_line_admittance(int bus) const;

    Eigen::VectorXd p_nominal() const;   // length n-1, buses 1..n-1
    Eigen::VectorXd q_nominal() const;   // length n-1
    Eigen::VectorXd v_ref() const;       // length n, all buses

private:
    std::string name_;
    std::vector<Bus> buses_;
    std::vector<Line> lines_;
    std::vector<int> parent_;
    std::vector<int> parent_line_;  // index into lines_, -1 for feeder
    std::vector<int> depth_;
    std::vector<int> order_;
    int max_depth_ = 0;
};

/// Componentwise bounds on the active injections at buses 1..n-1.
struct InjectionBox {
    Eigen::VectorXd p_lower;
    Eigen::VectorXd p_upper;

    InjectionBox(Eigen::VectorXd lower, Eigen::VectorXd upper);
};

enum class Topology { star, line };

/// Uniform synthetic feeders: `star` hangs all loads off the feeder,
/// `line` chains them. Every line has admittance g - jb and every load
/// bus injects (p_load, q_load) at reference magnitude v_ref.
RadialNetwork generate_topology(Topology kind, int n, double g, double b,
                                double p_load, double q_load, double v_ref);

/// Parse the normalized network JSON document:
///   { "name": str,
///     "buses": [ { "id": int, "kind": "feeder"|"pq",
///                  "p": float, "q": float, "v_ref": float } ],
///     "lines": [ { "from": int, "to": int, "g": float, "b": float } ] }
/// All quantities per-unit; loads carry negative p. The feeder bus may
/// omit p and q (ignored if present).
RadialNetwork load_network(const std::string& document);

/// Serialize back to the normalized JSON document.
std::string to_json(const RadialNetwork& net);

/// Bus admittance matrix: Y_ii = sum of incident line admittances,
/// Y_ik = -y_ik. Symmetric, zero row sums (no shunts).
Eigen::MatrixXcd admittance_matrix(const RadialNetwork& net);

/// The (n-1)x(n-1) block X of the pseudo-inverse of Y that is grounded at
/// the feeder. Computed by inverting the bordered matrix [[Y, e0],[e0^T, 0]]
/// and verified against its defining identities before returning.
/// Throws SingularSystem if the bordered system is numerically singular.
Eigen::MatrixXcd x_matrix(const RadialNetwork& net);

/// Independent construction of the same matrix: X_ik is the sum of line
/// impedances 1/y over the edges shared by the feeder-to-i and
/// feeder-to-k paths. Symmetric by construction.
Eigen::MatrixXcd x_matrix_path_oracle(const RadialNetwork& net);

}  // namespace voltgrid
