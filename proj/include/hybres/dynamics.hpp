#pragma once

#include <string>
#include <vector>

#include "hybres/algebraic.hpp"
#include "hybres/network.hpp"

namespace hybres::dynamics {

using algebraic::AlgebraicState;
using algebraic::DeviceParams;
using devices::ControlCombination;
using devices::CurrentPhasor;
using network::Stage;

/// How the swing equation maps the dimensionless inertia and damping to seconds.
/// Seconds: J dw/dt = P_ref - P - D w with w in rad/s.
/// PerUnit: the same law with w in p.u. of the base angular frequency.
enum class SwingTimeBase { Seconds, PerUnit };

const char* to_string(SwingTimeBase base);

struct DynamicsParams {
    DeviceParams device;
    SwingTimeBase time_base = SwingTimeBase::Seconds;
    double base_frequency_hz = 50.0;

    /// Inertia and damping of the equivalent seconds-based swing law.
    [[nodiscard]] double effective_inertia() const;
    [[nodiscard]] double effective_damping() const;
};

struct DynamicState {
    double delta12 = 0.0;
    double omega12 = 0.0;
    double delta13 = 0.0;
    double x_pll = 0.0;

    DynamicState& operator+=(const DynamicState& o);
    friend DynamicState operator+(DynamicState a, const DynamicState& b) { return a += b; }
    friend DynamicState operator*(double k, DynamicState a);
};

/// Time derivative of DynamicState under a solved algebraic state.
DynamicState rhs(const DynamicState& state, const AlgebraicState& algebraic, const DynamicsParams& params);

/// PLL frequency d(delta13)/dt.
double gfl_speed(const DynamicState& state, const AlgebraicState& algebraic, const DynamicsParams& params);

/// Generalized forces acting on the two angles.
struct Forces {
    double fm_potential = 0.0;   // -(P_ref - P_FM)
    double fm_damping = 0.0;     // -D w12
    double fl_potential = 0.0;   // -K_i u_q
    double fl_damping_12 = 0.0;  // -D_FL12 w12
    double fl_damping_13 = 0.0;  // -D_FL13 w13
    double d_fl_12 = 0.0;
    double d_fl_13 = 0.0;
};

/// Forces at a solved point. The GFL damping coefficients come from the implicit
/// sensitivities; they are NaN where the Jacobian is singular.
Forces forces_at(const DynamicState& state, const AlgebraicState& algebraic, const network::ReducedNetwork& net,
                 const DynamicsParams& params);

/// Pre-fault, fault and post-fault reduced networks.
struct StageNetworks {
    network::ReducedNetwork prefault;
    network::ReducedNetwork fault;
    network::ReducedNetwork postfault;

    [[nodiscard]] const network::ReducedNetwork& at(Stage stage) const;
};

StageNetworks build_stage_networks(const network::NetworkModel& model, const network::FaultStage& fault);

/// Stage active at time t (fault window is [start, clear)).
Stage stage_at(double t, const network::FaultStage& fault);

enum class EventKind { GfmSaturation, GfmDesaturation, GflLowVoltage, GflHighVoltage, GflRecovery, Solvability, Stage };

const char* to_string(EventKind kind);

struct Event {
    double t = 0.0;
    int n_old = 0;
    int n_new = 0;
    EventKind kind = EventKind::Stage;
    std::string condition;
    bool localized = false;  // true when found by bisection on a switching function
    double g = 0.0;          // switching function value at the event point
    Stage stage = Stage::Prefault;
    DynamicState state;
    AlgebraicState before;
    AlgebraicState after;
    Forces forces_before;
    Forces forces_after;
    double omega13_before = 0.0;
    double omega13_after = 0.0;
};

struct Sample {
    double t = 0.0;
    Stage stage = Stage::Prefault;
    DynamicState state;
    AlgebraicState algebraic;
    Forces forces;
    double omega13 = 0.0;
};

enum class TrajectoryStatus { Completed, AlgebraicBreakdown, Chattering };

const char* to_string(TrajectoryStatus status);

struct Trajectory {
    std::vector<Sample> samples;
    std::vector<Event> events;
    TrajectoryStatus status = TrajectoryStatus::Completed;
    std::string diagnostic;
    double dt = 0.0;
    int held_exits = 0;  // exit conditions kept pending because no consistent successor existed

    [[nodiscard]] bool completed() const { return status == TrajectoryStatus::Completed; }
};

struct IntegrationOptions {
    double dt = 1e-4;
    double t_end = 3.0;
    double event_tolerance = 1e-9;
    int max_events_per_step = 100;
};

/// Fixed-step RK4 through the fault schedule with localized mode-switch events.
/// `initial_combination` is used at t = 0 when it is consistent there.
Trajectory integrate(const DynamicState& initial, const StageNetworks& nets, const network::FaultStage& fault,
                     const DynamicsParams& params, const IntegrationOptions& options,
                     ControlCombination initial_combination = {});

/// Integrates one segment at fixed combination and stage with classical RK4 and
/// no event handling. Returns false on algebraic failure.
bool integrate_fixed_mode(DynamicState& state, double duration, double dt, ControlCombination combination,
                          const network::ReducedNetwork& net, const DynamicsParams& params,
                          const CurrentPhasor& saturated);

/// Trajectory CSV with the fixed column contract.
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);
void write_events_csv(std::ostream& out, const Trajectory& trajectory);

}  // namespace hybres::dynamics
