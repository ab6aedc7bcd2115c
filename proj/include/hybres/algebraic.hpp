#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include "hybres/devices.hpp"
#include "hybres/grid.hpp"
#include "hybres/network.hpp"

namespace hybres::algebraic {

using devices::ControlCombination;
using devices::CurrentPhasor;
using devices::GflMode;
using devices::GfmMode;
using network::ReducedNetwork;

struct DeviceParams {
    devices::GfmParams gfm;
    devices::GflParams gfl;
    double grid_voltage = 1.0;
};

/// Quasi-static electrical solution at one (delta12, delta13) under one combination.
struct AlgebraicState {
    double delta12 = 0.0;
    double delta13 = 0.0;
    ControlCombination combination;
    double u_fm = 0.0;        // GFM PCC voltage magnitude
    double u_fm_phase = 0.0;  // GFM PCC voltage angle relative to the grid
    double u_fl = 0.0;
    double u_fl_q = 0.0;
    double i_fl = 0.0;
    double phi_fl = 0.0;
    // Saturation indicator. NC: terminal current magnitude. CS: current of the
    // shadow NC solution with the same GFL mode, +inf when that solve fails.
    double i_fm_proxy = 0.0;
    Complex i_fm;  // terminal current phasor, grid frame
    Complex v_fl;  // GFL PCC voltage phasor, grid frame
    double p_fm = 0.0;
    double q_fm = 0.0;
    CurrentPhasor saturated;  // meaningful in CS only
};

enum class SolveStatus { Converged, NoConvergence, NoRealSolution, NonPhysicalRoot };

const char* to_string(SolveStatus status);

struct ModeSolution {
    SolveStatus status = SolveStatus::NoConvergence;
    AlgebraicState state;
    int iterations = 0;
    double residual = 0.0;  // infinity norm at the returned point

    [[nodiscard]] bool ok() const { return status == SolveStatus::Converged; }
};

/// Newton unknowns: (U_FM, I_FL, phi_FL); U_FM is ignored in CS.
struct Unknowns {
    double u_fm = 1.0;
    double i_fl = 0.0;
    double phi_fl = 0.0;
};

struct SolverOptions {
    double tolerance = 1e-10;
    int max_iterations = 50;
};

struct QuadraticCoefficients {
    double a = 0.0;
    double b = 0.0;
};

QuadraticCoefficients u_fm_quadratic(double i_fl, double phi_fl, double delta12, double delta13,
                                     const network::PartitionMatrix& m_nc, const DeviceParams& p);

/// Positive root of U^2 + aU + b = 0. Throws NoRealSolution or NonPhysicalRoot.
double solve_u_fm_quadratic(double i_fl, double phi_fl, double delta12, double delta13,
                            const network::PartitionMatrix& m_nc, const DeviceParams& p);

/// Root of the quadratic written directly in (a, b); same error contract.
double positive_quadratic_root(QuadraticCoefficients c);

/// Solves the implicit algebraic system of one combination by damped Newton with
/// a fixed multistart list. CS combinations need `saturated`; the result carries
/// the shadow NC current as its saturation indicator.
ModeSolution solve_mode_state(double delta12, double delta13, ControlCombination combination,
                              const ReducedNetwork& net, const DeviceParams& p,
                              std::optional<CurrentPhasor> saturated = std::nullopt,
                              const Unknowns* warm_start = nullptr, const SolverOptions& options = {});

/// Same as solve_mode_state but CS results leave the indicator unset (NaN).
ModeSolution solve_mode_core(double delta12, double delta13, ControlCombination combination,
                             const ReducedNetwork& net, const DeviceParams& p,
                             std::optional<CurrentPhasor> saturated, const Unknowns* warm_start,
                             const SolverOptions& options = {});

/// Infinity norm of the defining residuals at a solved state.
double residual_norm(const AlgebraicState& state, const ReducedNetwork& net, const DeviceParams& p);

Unknowns unknowns_of(const AlgebraicState& state);

bool gfm_condition_holds(const AlgebraicState& state, const DeviceParams& p);
bool gfl_condition_holds(const AlgebraicState& state, const DeviceParams& p);

/// Mode-condition check for the state's own combination.
bool mode_conditions_hold(const AlgebraicState& state, const DeviceParams& p);

struct CandidateReport {
    ControlCombination combination;
    SolveStatus status = SolveStatus::NoConvergence;
    bool consistent = false;
    double residual = 0.0;
    double u_fl = 0.0;
    double i_fm_proxy = 0.0;
};

struct Classification {
    std::optional<ControlCombination> combination;
    AlgebraicState state;
    std::array<CandidateReport, 6> candidates;
    int multiplicity = 0;

    [[nodiscard]] bool ok() const { return combination.has_value(); }
};

/// Tries all six combinations; keeps `previous` when it is consistent, otherwise
/// the lowest consistent n.
Classification classify_combination(double delta12, double delta13, const ReducedNetwork& net,
                                    const DeviceParams& p, CurrentPhasor saturated,
                                    std::optional<ControlCombination> previous = std::nullopt);

/// Sensitivities of the implicit solution with respect to the angles.
struct Partials {
    double du_fm_d12 = 0.0;
    double du_fm_d13 = 0.0;
    double di_fl_d12 = 0.0;
    double di_fl_d13 = 0.0;
    double dphi_fl_d12 = 0.0;
    double dphi_fl_d13 = 0.0;
};

/// Implicit-function-theorem partials. Throws SingularMatrix at degenerate points.
Partials implicit_partials(const AlgebraicState& state, const ReducedNetwork& net, const DeviceParams& p);

/// Total derivatives of P_FM and u_FL,q along the equilibrium manifold.
struct Sensitivity {
    double dp_fm_d12 = 0.0;
    double dp_fm_d13 = 0.0;
    double du_q_d12 = 0.0;
    double du_q_d13 = 0.0;
};

Sensitivity total_sensitivity(const AlgebraicState& state, const Partials& partials,
                              const ReducedNetwork& net, const DeviceParams& p);

/// Per-cell control-combination map over a delta12 x delta13 grid.
struct RegionMap {
    GridSpec grid;
    std::vector<int> combination;          // 1..6, 0 = no consistent solution
    std::vector<std::uint8_t> multiplicity;  // number of consistent combinations
    std::vector<std::uint8_t> consistent_mask;  // bit (n-1) set when n is consistent
    std::vector<AlgebraicState> states;
    std::array<std::vector<Polyline>, 6> boundaries;  // outline of region n at index n-1

    [[nodiscard]] int at(std::size_t i, std::size_t j) const { return combination[grid.index(i, j)]; }
};

RegionMap compute_region_map(const GridSpec& grid, const ReducedNetwork& net, const DeviceParams& p,
                             CurrentPhasor saturated, int threads = 1);

}  // namespace hybres::algebraic
