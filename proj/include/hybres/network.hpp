#pragma once

#include <complex>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace hybres {

using Complex = std::complex<double>;

namespace network {

enum class BusKind { GridSource, Gfm, Gfl, Passive };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::Passive;
};

struct Branch {
    int from = 0;
    int to = 0;
    Complex impedance;  // p.u.
};

struct Shunt {
    int bus = 0;
    Complex admittance;  // p.u.
};

struct BaseQuantities {
    double power_mw = 100.0;
    double voltage_kv = 230.0;
    double frequency_hz = 50.0;

    [[nodiscard]] double impedance_ohm() const { return voltage_kv * voltage_kv / power_mw; }
};

struct NetworkModel {
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Shunt> shunts;
    BaseQuantities base;
    double grid_voltage = 1.0;  // U_SYS, p.u.

    /// Checks references and impedances; throws InvalidInput.
    void validate() const;

    /// Additionally requires exactly one grid, one GFM and one GFL bus.
    void validate_hybrid_topology() const;

    [[nodiscard]] bool has_bus(int id) const;

    /// Bus ids in matrix order: grid, GFM, GFL, then passive buses by id.
    /// Models without the three source kinds keep their declared order.
    [[nodiscard]] std::vector<int> matrix_order() const;
};

enum class Stage { Prefault, Fault, Postfault };

const char* to_string(Stage stage);

/// Fault schedule: a resistive three-phase fault applied at one bus.
struct FaultStage {
    int bus = 4;
    double resistance_ohm = 1.0;
    double start = 0.0;
    double clear = 1.2;
    bool enabled = true;  // false keeps the pre-fault network for the whole run

    void validate() const;
};

/// Nodal admittance matrix with the bus id for every row.
struct Admittance {
    Eigen::MatrixXcd matrix;
    std::vector<int> bus_ids;

    [[nodiscard]] int index_of(int bus_id) const;
};

/// Polar view of one matrix element.
struct PolarElement {
    double magnitude = 0.0;
    double angle = 0.0;
};

/// Mixed-source partition matrix: maps (U_V, I_I) to (I_V, U_I).
/// Rows and columns are ordered voltage sources first, then current sources.
struct PartitionMatrix {
    Eigen::Matrix3cd matrix;
    std::vector<int> order;  // position -> reduced-bus index (0-based)

    /// 1-based element access matching the grid=1, GFM=2, GFL=3 numbering.
    [[nodiscard]] Complex at(int row, int col) const { return matrix(row - 1, col - 1); }
    [[nodiscard]] PolarElement polar(int row, int col) const;
};

/// Kron-reduced network of one fault stage plus both source partitions.
struct ReducedNetwork {
    Stage stage = Stage::Prefault;
    Eigen::Matrix3cd y_reduced;
    PartitionMatrix m_nc;  // V-sources {1,2}, I-source {3}
    PartitionMatrix m_cs;  // V-source {1}, I-sources {2,3}
};

Admittance build_admittance(const NetworkModel& model, Stage stage, const FaultStage& fault);

/// Schur complement Y_a - Y_b Y_d^-1 Y_c eliminating `passive` (row indices).
Eigen::MatrixXcd kron_reduce(const Eigen::MatrixXcd& y, const std::vector<int>& passive);

/// Partition matrix for the given voltage-source and current-source index sets.
PartitionMatrix partition_matrix(const Eigen::Matrix3cd& y_reduced, const std::vector<int>& v_nodes,
                                 const std::vector<int>& i_nodes);

ReducedNetwork reduce_network(const NetworkModel& model, Stage stage, const FaultStage& fault);

/// CSV with header `row,col,re,im` (1-based indices).
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXcd& matrix);

}  // namespace network
}  // namespace hybres
