#include "hybres/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "hybres/error.hpp"

namespace hybres::network {

namespace {

constexpr double kSingularRcond = 1e-13;

Eigen::MatrixXcd checked_inverse(const Eigen::MatrixXcd& block, const char* what) {
    if (block.rows() == 0) {
        return block;
    }
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(block);
    const double rcond = lu.rcond();
    if (!(rcond > kSingularRcond)) {
        throw SingularMatrix(std::string(what) + " (rcond=" + std::to_string(rcond) + ")");
    }
    return lu.inverse();
}

Eigen::MatrixXcd take(const Eigen::MatrixXcd& m, const std::vector<int>& rows,
                      const std::vector<int>& cols) {
    Eigen::MatrixXcd out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            out(i, j) = m(rows[i], cols[j]);
        }
    }
    return out;
}

}  // namespace

const char* to_string(Stage stage) {
    switch (stage) {
        case Stage::Prefault:
            return "prefault";
        case Stage::Fault:
            return "fault";
        case Stage::Postfault:
            return "postfault";
    }
    return "unknown";
}

bool NetworkModel::has_bus(int id) const {
    return std::any_of(buses.begin(), buses.end(), [id](const Bus& b) { return b.id == id; });
}

void NetworkModel::validate() const {
    if (buses.empty()) {
        throw InvalidInput("network has no buses");
    }
    for (std::size_t i = 0; i < buses.size(); ++i) {
        for (std::size_t j = i + 1; j < buses.size(); ++j) {
            if (buses[i].id == buses[j].id) {
                throw InvalidInput("duplicate bus id " + std::to_string(buses[i].id));
            }
        }
    }
    for (const auto& br : branches) {
        if (!has_bus(br.from) || !has_bus(br.to)) {
            throw InvalidInput("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                               " references a missing bus");
        }
        if (br.from == br.to) {
            throw InvalidInput("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                               " is a self loop");
        }
        if (!(std::abs(br.impedance) > 0.0) || !std::isfinite(std::abs(br.impedance))) {
            throw InvalidInput("branch " + std::to_string(br.from) + "-" + std::to_string(br.to) +
                               " has zero or non-finite impedance");
        }
    }
    for (const auto& sh : shunts) {
        if (!has_bus(sh.bus)) {
            throw InvalidInput("shunt references missing bus " + std::to_string(sh.bus));
        }
    }
    if (!(base.power_mw > 0.0) || !(base.voltage_kv > 0.0) || !(base.frequency_hz > 0.0)) {
        throw InvalidInput("base quantities must be positive");
    }
}

void NetworkModel::validate_hybrid_topology() const {
    validate();
    auto count = [this](BusKind kind) {
        return std::count_if(buses.begin(), buses.end(), [kind](const Bus& b) { return b.kind == kind; });
    };
    if (count(BusKind::GridSource) != 1 || count(BusKind::Gfm) != 1 || count(BusKind::Gfl) != 1) {
        throw InvalidInput("hybrid topology needs exactly one grid, one gfm and one gfl bus");
    }
}

std::vector<int> NetworkModel::matrix_order() const {
    std::vector<int> order;
    for (BusKind kind : {BusKind::GridSource, BusKind::Gfm, BusKind::Gfl}) {
        for (const auto& b : buses) {
            if (b.kind == kind) {
                order.push_back(b.id);
            }
        }
    }
    std::vector<int> passive;
    for (const auto& b : buses) {
        if (b.kind == BusKind::Passive) {
            passive.push_back(b.id);
        }
    }
    std::sort(passive.begin(), passive.end());
    order.insert(order.end(), passive.begin(), passive.end());
    return order;
}

void FaultStage::validate() const {
    if (!(resistance_ohm > 0.0)) {
        throw InvalidInput("fault resistance must be positive");
    }
    if (!(clear > start)) {
        throw InvalidInput("fault clear time must exceed start time");
    }
}

int Admittance::index_of(int bus_id) const {
    auto it = std::find(bus_ids.begin(), bus_ids.end(), bus_id);
    if (it == bus_ids.end()) {
        throw InvalidInput("bus " + std::to_string(bus_id) + " not in admittance matrix");
    }
    return static_cast<int>(it - bus_ids.begin());
}

PolarElement PartitionMatrix::polar(int row, int col) const {
    const Complex v = at(row, col);
    return {std::abs(v), std::arg(v)};
}

Admittance build_admittance(const NetworkModel& model, Stage stage, const FaultStage& fault) {
    model.validate();
    Admittance y;
    y.bus_ids = model.matrix_order();
    const auto n = static_cast<Eigen::Index>(y.bus_ids.size());
    y.matrix = Eigen::MatrixXcd::Zero(n, n);
    for (const auto& br : model.branches) {
        const int i = y.index_of(br.from);
        const int j = y.index_of(br.to);
        const Complex g = 1.0 / br.impedance;
        y.matrix(i, i) += g;
        y.matrix(j, j) += g;
        y.matrix(i, j) -= g;
        y.matrix(j, i) -= g;
    }
    for (const auto& sh : model.shunts) {
        const int i = y.index_of(sh.bus);
        y.matrix(i, i) += sh.admittance;
    }
    if (stage == Stage::Fault) {
        fault.validate();
        if (!model.has_bus(fault.bus)) {
            throw InvalidInput("fault bus " + std::to_string(fault.bus) + " does not exist");
        }
        const int i = y.index_of(fault.bus);
        y.matrix(i, i) += Complex(model.base.impedance_ohm() / fault.resistance_ohm, 0.0);
    }
    return y;
}

Eigen::MatrixXcd kron_reduce(const Eigen::MatrixXcd& y, const std::vector<int>& passive) {
    const auto n = static_cast<int>(y.rows());
    std::vector<int> active;
    for (int i = 0; i < n; ++i) {
        if (std::find(passive.begin(), passive.end(), i) == passive.end()) {
            active.push_back(i);
        }
    }
    if (passive.empty()) {
        return y;
    }
    const Eigen::MatrixXcd ya = take(y, active, active);
    const Eigen::MatrixXcd yb = take(y, active, passive);
    const Eigen::MatrixXcd yc = take(y, passive, active);
    const Eigen::MatrixXcd yd_inv = checked_inverse(take(y, passive, passive), "passive block is singular");
    return ya - yb * yd_inv * yc;
}

PartitionMatrix partition_matrix(const Eigen::Matrix3cd& y_reduced, const std::vector<int>& v_nodes,
                                 const std::vector<int>& i_nodes) {
    std::vector<int> all = v_nodes;
    all.insert(all.end(), i_nodes.begin(), i_nodes.end());
    std::vector<int> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != std::vector<int>{0, 1, 2}) {
        throw InvalidInput("source partition must split {1,2,3} into disjoint sets");
    }
    const Eigen::MatrixXcd y(y_reduced);
    const Eigen::MatrixXcd ya = take(y, v_nodes, v_nodes);
    const Eigen::MatrixXcd yb = take(y, v_nodes, i_nodes);
    const Eigen::MatrixXcd yc = take(y, i_nodes, v_nodes);
    const Eigen::MatrixXcd yd_inv = checked_inverse(take(y, i_nodes, i_nodes), "ill-posed source partition");

    const auto nv = static_cast<Eigen::Index>(v_nodes.size());
    const auto ni = static_cast<Eigen::Index>(i_nodes.size());
    PartitionMatrix m;
    m.order = all;
    if (nv > 0) {
        m.matrix.topLeftCorner(nv, nv) = ya - yb * yd_inv * yc;
    }
    if (nv > 0 && ni > 0) {
        m.matrix.topRightCorner(nv, ni) = yb * yd_inv;
        m.matrix.bottomLeftCorner(ni, nv) = -yd_inv * yc;
    }
    if (ni > 0) {
        m.matrix.bottomRightCorner(ni, ni) = yd_inv;
    }
    return m;
}

ReducedNetwork reduce_network(const NetworkModel& model, Stage stage, const FaultStage& fault) {
    model.validate_hybrid_topology();
    const Admittance full = build_admittance(model, stage, fault);
    std::vector<int> passive;
    for (int i = 3; i < static_cast<int>(full.bus_ids.size()); ++i) {
        passive.push_back(i);
    }
    ReducedNetwork net;
    net.stage = stage;
    net.y_reduced = kron_reduce(full.matrix, passive);
    net.m_nc = partition_matrix(net.y_reduced, {0, 1}, {2});
    net.m_cs = partition_matrix(net.y_reduced, {0}, {1, 2});
    return net;
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXcd& matrix) {
    out << "row,col,re,im\n";
    char line[128];
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
        for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
            std::snprintf(line, sizeof line, "%ld,%ld,%.17g,%.17g\n", static_cast<long>(i + 1),
                          static_cast<long>(j + 1), matrix(i, j).real(), matrix(i, j).imag());
            out << line;
        }
    }
}

}  // namespace hybres::network
