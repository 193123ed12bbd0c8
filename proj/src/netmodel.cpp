#include "voltgrid/netmodel.hpp"

#include <algorithm>
#include <deque>
#include <utility>

#include <nlohmann/json.hpp>

namespace voltgrid {

using nlohmann::json;

RadialNetwork::RadialNetwork(std::string name, std::vector<Bus> buses, std::vector<Line> lines)
    : name_(std::move(name)), buses_(std::move(buses)), lines_(std::move(lines)) {
    const int n = static_cast<int>(buses_.size());
    if (n < 2) throw TopologyError("network needs a feeder and at least one pq bus");

    std::vector<char> seen(n, 0);
    for (const Bus& b : buses_) {
        if (b.id < 0 || b.id >= n) throw TopologyError("bus ids must cover 0..n-1");
        if (seen[b.id]) throw TopologyError("duplicate bus id " + std::to_string(b.id));
        seen[b.id] = 1;
        if (b.v_ref <= 0.0) throw TopologyError("v_ref must be positive at bus " + std::to_string(b.id));
        if (b.id == 0 && b.kind != BusKind::feeder) throw TopologyError("bus 0 must be the feeder");
        if (b.id != 0 && b.kind == BusKind::feeder) throw TopologyError("feeder must be bus 0");
    }
    std::sort(buses_.begin(), buses_.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });

    if (static_cast<int>(lines_.size()) != n - 1)
        throw TopologyError("a tree on " + std::to_string(n) + " buses needs " +
                            std::to_string(n - 1) + " lines, got " + std::to_string(lines_.size()));

    std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, line index)
    for (int li = 0; li < static_cast<int>(lines_.size()); ++li) {
        const Line& l = lines_[li];
        if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n || l.from == l.to)
            throw TopologyError("line references nonexistent bus");
        if (l.g < 0.0) throw TopologyError("line conductance must be >= 0");
        if (l.b <= 0.0) throw TopologyError("line susceptance must be > 0");
        adj[l.from].push_back({l.to, li});
        adj[l.to].push_back({l.from, li});
    }

    parent_.assign(n, -1);
    parent_line_.assign(n, -1);
    depth_.assign(n, -1);
    order_.clear();
    order_.reserve(n);

    std::deque<int> frontier{0};
    depth_[0] = 0;
    while (!frontier.empty()) {
        const int u = frontier.front();
        frontier.pop_front();
        order_.push_back(u);
        for (auto [w, li] : adj[u]) {
            if (li == parent_line_[u]) continue;
            if (depth_[w] >= 0) throw TopologyError("cycle through bus " + std::to_string(w));
            depth_[w] = depth_[u] + 1;
            parent_[w] = u;
            parent_line_[w] = li;
            frontier.push_back(w);
        }
    }
    for (int i = 0; i < n; ++i)
        if (depth_[i] < 0) throw TopologyError("bus " + std::to_string(i) + " unreachable from feeder");
    max_depth_ = *std::max_element(depth_.begin(), depth_.end());
}

Complex RadialNetwork::parent_line_admittance(int bus) const {
    const int li = parent_line_.at(bus);
    if (li < 0) throw InvalidParameter("feeder has no parent line");
    return lines_[li].admittance();
}

Eigen::VectorXd RadialNetwork::p_nominal() const {
    Eigen::VectorXd p(size() - 1);
    for (int i = 1; i < size(); ++i) p[i - 1] = buses_[i].p_ref;
    return p;
}

Eigen::VectorXd RadialNetwork::q_nominal() const {
    Eigen::VectorXd q(size() - 1);
    for (int i = 1; i < size(); ++i) q[i - 1] = buses_[i].q_ref;
    return q;
}

Eigen::VectorXd RadialNetwork::v_ref() const {
    Eigen::VectorXd v(size());
    for (int i = 0; i < size(); ++i) v[i] = buses_[i].v_ref;
    return v;
}

InjectionBox::InjectionBox(Eigen::VectorXd lower, Eigen::VectorXd upper)
    : p_lower(std::move(lower)), p_upper(std::move(upper)) {
    if (p_lower.size() != p_upper.size()) throw LengthMismatch("injection box bound lengths differ");
    if ((p_lower.array() > p_upper.array()).any())
        throw InvalidParameter("injection box has p_lower > p_upper");
}

RadialNetwork generate_topology(Topology kind, int n, double g, double b,
                                double p_load, double q_load, double v_ref) {
    if (n < 2) throw InvalidParameter("topology needs at least 2 buses");
    if (b <= 0.0) throw InvalidParameter("line susceptance must be positive");
    if (g < 0.0) throw InvalidParameter("line conductance must be nonnegative");
    if (v_ref <= 0.0) throw InvalidParameter("reference voltage must be positive");

    std::vector<Bus> buses;
    buses.push_back({0, BusKind::feeder, 0.0, 0.0, v_ref});
    for (int i = 1; i < n; ++i) buses.push_back({i, BusKind::pq, p_load, q_load, v_ref});

    std::vector<Line> lines;
    for (int i = 1; i < n; ++i) {
        const int from = (kind == Topology::star) ? 0 : i - 1;
        lines.push_back({from, i, g, b});
    }
    const std::string name =
        std::string(kind == Topology::star ? "star-" : "line-") + std::to_string(n);
    return RadialNetwork(name, std::move(buses), std::move(lines));
}

RadialNetwork load_network(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid network JSON: ") + e.what());
    }
    try {
        if (!doc.is_object() || !doc.contains("buses") || !doc.contains("lines"))
            throw ParseError("network JSON needs \"buses\" and \"lines\" arrays");
        const std::string name = doc.value("name", std::string{});

        std::vector<Bus> buses;
        for (const auto& jb : doc.at("buses")) {
            Bus b;
            b.id = jb.at("id").get<int>();
            const std::string kind = jb.at("kind").get<std::string>();
            if (kind == "feeder")
                b.kind = BusKind::feeder;
            else if (kind == "pq")
                b.kind = BusKind::pq;
            else
                throw ParseError("unknown bus kind \"" + kind + "\"");
            if (b.kind == BusKind::pq) {
                b.p_ref = jb.at("p").get<double>();
                b.q_ref = jb.at("q").get<double>();
            }
            b.v_ref = jb.at("v_ref").get<double>();
            buses.push_back(b);
        }

        std::vector<Line> lines;
        for (const auto& jl : doc.at("lines")) {
            Line l;
            l.from = jl.at("from").get<int>();
            l.to = jl.at("to").get<int>();
            l.g = jl.at("g").get<double>();
            l.b = jl.at("b").get<double>();
            lines.push_back(l);
        }
        return RadialNetwork(name, std::move(buses), std::move(lines));
    } catch (const json::exception& e) {
        throw ParseError(std::string("invalid network JSON: ") + e.what());
    }
}

std::string to_json(const RadialNetwork& net) {
    json doc;
    doc["name"] = net.name();
    doc["buses"] = json::array();
    for (const Bus& b : net.buses()) {
        json jb;
        jb["id"] = b.id;
        jb["kind"] = (b.kind == BusKind::feeder) ? "feeder" : "pq";
        if (b.kind == BusKind::pq) {
            jb["p"] = b.p_ref;
            jb["q"] = b.q_ref;
        }
        jb["v_ref"] = b.v_ref;
        doc["buses"].push_back(jb);
    }
    doc["lines"] = json::array();
    for (const Line& l : net.lines()) {
        doc["lines"].push_back({{"from", l.from}, {"to", l.to}, {"g", l.g}, {"b", l.b}});
    }
    return doc.dump(2) + "\n";
}

Eigen::MatrixXcd admittance_matrix(const RadialNetwork& net) {
    const int n = net.size();
    Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
    for (const Line& l : net.lines()) {
        const Complex yl = l.admittance();
        y(l.from, l.to) -= yl;
        y(l.to, l.from) -= yl;
        y(l.from, l.from) += yl;
        y(l.to, l.to) += yl;
    }
    return y;
}

Eigen::MatrixXcd x_matrix(const RadialNetwork& net) {
    const int n = net.size();
    const Eigen::MatrixXcd y = admittance_matrix(net);

    Eigen::MatrixXcd bordered = Eigen::MatrixXcd::Zero(n + 1, n + 1);
    bordered.topLeftCorner(n, n) = y;
    bordered(0, n) = 1.0;
    bordered(n, 0) = 1.0;

    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(bordered);
    Eigen::MatrixXcd inv = lu.solve(Eigen::MatrixXcd::Identity(n + 1, n + 1));
    // One step of iterative refinement keeps the identity checks below
    // comfortably inside their tolerances for a few hundred buses.
    inv += lu.solve(Eigen::MatrixXcd::Identity(n + 1, n + 1) - bordered * inv);
    if (!inv.allFinite()) throw SingularSystem("bordered admittance system is singular");

    const Eigen::MatrixXcd x_full = inv.topLeftCorner(n, n);

    Eigen::MatrixXcd identity_check = x_full * y;
    identity_check -= Eigen::MatrixXcd::Identity(n, n);
    identity_check.col(0) += Eigen::VectorXcd::Ones(n);  // X~ Y = I - 1 e0^T
    const double id_err = identity_check.cwiseAbs().maxCoeff();
    const double e0_err = x_full.col(0).cwiseAbs().maxCoeff();
    if (id_err > 1e-10 || e0_err > 1e-10)
        throw SingularSystem("grounded inverse failed verification (residual " +
                             std::to_string(id_err) + ")");

    Eigen::MatrixXcd x = x_full.bottomRightCorner(n - 1, n - 1);
    const double sym_err = (x - x.transpose()).cwiseAbs().maxCoeff();
    if (sym_err > 1e-12) throw SingularSystem("grounded inverse is not symmetric");
    // Symmetrize the last bits so downstream algebra sees an exactly
    // symmetric matrix.
    x = 0.5 * (x + x.transpose()).eval();
    return x;
}

Eigen::MatrixXcd x_matrix_path_oracle(const RadialNetwork& net) {
    const int n = net.size();
    // Impedance from feeder to each bus, accumulated down the tree; the
    // shared-path impedance of (i, k) is the accumulated impedance of
    // their deepest common ancestor.
    std::vector<Complex> z_to_root(n, Complex(0.0, 0.0));
    for (int bus : net.sweep_order()) {
        if (bus == 0) continue;
        z_to_root[bus] = z_to_root[net.parent(bus)] + 1.0 / net.parent_line_admittance(bus);
    }

    auto common_ancestor = [&](int a, int b) {
        while (a != b) {
            if (net.depth(a) >= net.depth(b))
                a = net.parent(a);
            else
                b = net.parent(b);
        }
        return a;
    };

    Eigen::MatrixXcd x(n - 1, n - 1);
    for (int i = 1; i < n; ++i) {
        for (int k = i; k < n; ++k) {
            const Complex shared = z_to_root[common_ancestor(i, k)];
            x(i - 1, k - 1) = shared;
            x(k - 1, i - 1) = shared;
        }
    }
    return x;
}

}  // namespace voltgrid
