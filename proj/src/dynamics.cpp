#include "hybres/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>

#include "hybres/error.hpp"

namespace hybres::dynamics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using devices::GflMode;
using devices::GfmMode;

struct Mode {
    ControlCombination combination;
    CurrentPhasor saturated;
    Stage stage = Stage::Prefault;
};

struct Violation {
    EventKind kind = EventKind::Solvability;
    double g = kNaN;
};

std::optional<AlgebraicState> solve_at(const DynamicState& y, const Mode& mode, const StageNetworks& nets,
                                       const DynamicsParams& params, const AlgebraicState* warm) {
    std::optional<CurrentPhasor> sat;
    if (mode.combination.gfm() == GfmMode::Cs) {
        sat = mode.saturated;
    }
    algebraic::Unknowns seed;
    const algebraic::Unknowns* seed_ptr = nullptr;
    if (warm != nullptr) {
        seed = algebraic::unknowns_of(*warm);
        seed_ptr = &seed;
    }
    const auto sol = algebraic::solve_mode_state(y.delta12, y.delta13, mode.combination, nets.at(mode.stage),
                                                 params.device, sat, seed_ptr);
    if (!sol.ok()) {
        return std::nullopt;
    }
    return sol.state;
}

// Exit condition of the state's own combination. `slack` widens the region
// the state is allowed to occupy.
std::optional<Violation> exit_condition(const AlgebraicState& a, const DeviceParams& p, double slack) {
    const double g1 = a.i_fm_proxy - p.gfm.i_max;
    if (a.combination.gfm() == GfmMode::Nc) {
        if (g1 > slack) return Violation{EventKind::GfmSaturation, g1};
    } else if (g1 <= -slack) {
        return Violation{EventKind::GfmDesaturation, g1};
    }
    const double g2 = a.u_fl - p.gfl.u_lv;
    const double g3 = a.u_fl - p.gfl.u_hv;
    switch (a.combination.gfl()) {
        case GflMode::Lvrt:
            if (g2 >= slack) return Violation{EventKind::GflRecovery, g2};
            break;
        case GflMode::Nc:
            if (g2 < -slack) return Violation{EventKind::GflLowVoltage, g2};
            if (g3 > slack) return Violation{EventKind::GflHighVoltage, g3};
            break;
        case GflMode::Hvrt:
            if (g3 <= -slack) return Violation{EventKind::GflRecovery, g3};
            break;
    }
    return std::nullopt;
}

bool is_gfm_kind(EventKind k) { return k == EventKind::GfmSaturation || k == EventKind::GfmDesaturation; }

std::string condition_text(EventKind kind, const AlgebraicState& a) {
    switch (kind) {
        case EventKind::GfmSaturation:
            return "g1>0 (I_FM>I_max)";
        case EventKind::GfmDesaturation:
            return "g1<=0 (shadow I_FM<=I_max)";
        case EventKind::GflLowVoltage:
            return "g2<0 (U_FL<U_LV)";
        case EventKind::GflHighVoltage:
            return "g3>0 (U_FL>U_HV)";
        case EventKind::GflRecovery:
            return a.combination.gfl() == GflMode::Lvrt ? "g2>=0 (U_FL>=U_LV)" : "g3<=0 (U_FL<=U_HV)";
        case EventKind::Solvability:
            return "algebraic solution lost";
        case EventKind::Stage:
            return "stage";
    }
    return "?";
}

class Integrator {
  public:
    Integrator(const StageNetworks& nets, const network::FaultStage& fault, const DynamicsParams& params,
               const IntegrationOptions& options)
        : nets_(nets), fault_(fault), params_(params), opt_(options) {}

    Trajectory run(const DynamicState& initial, ControlCombination initial_combination);

  private:
    struct StepResult {
        bool ok = false;
        DynamicState y;
        AlgebraicState alg;
    };

    StepResult rk4(const DynamicState& y0, const AlgebraicState& a0, double h) const;
    bool step_acceptable(const StepResult& r, std::optional<Violation>& v) const;
    Forces forces(const DynamicState& y, const AlgebraicState& a) const {
        return forces_at(y, a, nets_.at(mode_.stage), params_);
    }
    double omega13(const DynamicState& y, const AlgebraicState& a) const { return gfl_speed(y, a, params_); }
    // Switches modes at the current point until the state is consistent.
    bool settle(double t, Violation trigger, bool localized, const std::string& prefix);
    // Finds a consistent successor for `trigger`, or nullopt.
    std::optional<std::pair<Mode, AlgebraicState>> successor(const Violation& trigger) const;
    void recheck_held(double t);
    void push_sample(double t);
    void fail(TrajectoryStatus status, const std::string& msg) {
        traj_.status = status;
        traj_.diagnostic = msg;
    }

    const StageNetworks& nets_;
    const network::FaultStage& fault_;
    const DynamicsParams& params_;
    const IntegrationOptions& opt_;

    Trajectory traj_;
    Mode mode_;
    DynamicState y_;
    AlgebraicState alg_;
    int events_this_step_ = 0;
    // Exit condition that had no consistent successor; the mode is held until it clears.
    std::optional<EventKind> held_;
};

Integrator::StepResult Integrator::rk4(const DynamicState& y0, const AlgebraicState& a0, double h) const {
    StepResult r;
    const DynamicState k1 = rhs(y0, a0, params_);
    const DynamicState y1 = y0 + (0.5 * h) * k1;
    auto a1 = solve_at(y1, mode_, nets_, params_, &a0);
    if (!a1) return r;
    const DynamicState k2 = rhs(y1, *a1, params_);
    const DynamicState y2 = y0 + (0.5 * h) * k2;
    auto a2 = solve_at(y2, mode_, nets_, params_, &*a1);
    if (!a2) return r;
    const DynamicState k3 = rhs(y2, *a2, params_);
    const DynamicState y3 = y0 + h * k3;
    auto a3 = solve_at(y3, mode_, nets_, params_, &*a2);
    if (!a3) return r;
    const DynamicState k4 = rhs(y3, *a3, params_);
    r.y = y0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    auto a4 = solve_at(r.y, mode_, nets_, params_, &*a3);
    if (!a4) return r;
    r.alg = *a4;
    r.ok = true;
    return r;
}

bool Integrator::step_acceptable(const StepResult& r, std::optional<Violation>& v) const {
    if (!r.ok) {
        v = Violation{EventKind::Solvability, kNaN};
        return false;
    }
    v = exit_condition(r.alg, params_.device, 0.0);
    if (v && held_ && v->kind == *held_) v.reset();
    return !v.has_value();
}

std::optional<std::pair<Mode, AlgebraicState>> Integrator::successor(const Violation& trigger) const {
    const auto& p = params_.device;
    const GfmMode gfm_now = alg_.combination.gfm();
    const GflMode gfl_now = alg_.combination.gfl();
    const GfmMode gfm_other = gfm_now == GfmMode::Nc ? GfmMode::Cs : GfmMode::Nc;
    std::vector<GfmMode> gfm_order;
    if (is_gfm_kind(trigger.kind)) {
        gfm_order = {gfm_other};
    } else {
        gfm_order = {gfm_now, gfm_other};
    }
    std::vector<GflMode> gfl_order;
    auto add_gfl = [&gfl_order](GflMode m) {
        if (std::find(gfl_order.begin(), gfl_order.end(), m) == gfl_order.end()) gfl_order.push_back(m);
    };
    if (is_gfm_kind(trigger.kind)) add_gfl(gfl_now);
    add_gfl(devices::gfl_mode_of(alg_.u_fl, p.gfl));
    add_gfl(gfl_now);
    add_gfl(GflMode::Lvrt);
    add_gfl(GflMode::Nc);
    add_gfl(GflMode::Hvrt);
    for (GfmMode gm : gfm_order) {
        Mode cand = mode_;
        if (gm == GfmMode::Cs && gfm_now == GfmMode::Nc) {
            const Complex local = alg_.i_fm * std::polar(1.0, -alg_.delta12);
            cand.saturated = devices::gfm_saturated_injection(local, p.gfm);
        }
        for (GflMode fm : gfl_order) {
            cand.combination = ControlCombination(gm, fm);
            if (cand.combination == alg_.combination) continue;
            auto sol = solve_at(y_, cand, nets_, params_, &alg_);
            if (sol && !exit_condition(*sol, p, opt_.event_tolerance)) return std::make_pair(cand, *sol);
        }
    }
    return std::nullopt;
}

bool Integrator::settle(double t, Violation trigger, bool localized, const std::string& prefix) {
    const auto& p = params_.device;
    for (int round = 0;; ++round) {
        if (++events_this_step_ > opt_.max_events_per_step) {
            fail(TrajectoryStatus::Chattering, "more than " + std::to_string(opt_.max_events_per_step) +
                                                   " mode switches within one step near t=" + std::to_string(t));
            return false;
        }
        const auto next_mode = successor(trigger);
        if (!next_mode) {
            if (trigger.kind == EventKind::Solvability) {
                fail(TrajectoryStatus::AlgebraicBreakdown,
                     "no consistent control combination at t=" + std::to_string(t) + " after " +
                         condition_text(trigger.kind, alg_) + " in n=" + std::to_string(alg_.combination.index()));
                return false;
            }
            // Hysteresis: without a consistent successor the current mode is kept.
            held_ = trigger.kind;
            ++traj_.held_exits;
            return true;
        }
        Event e;
        e.t = t;
        e.n_old = alg_.combination.index();
        e.n_new = next_mode->second.combination.index();
        e.kind = trigger.kind;
        e.condition = prefix + condition_text(trigger.kind, alg_);
        e.localized = localized && round == 0;
        e.g = trigger.g;
        e.stage = mode_.stage;
        e.state = y_;
        e.before = alg_;
        e.forces_before = forces(y_, alg_);
        e.omega13_before = omega13(y_, alg_);
        mode_ = next_mode->first;
        alg_ = next_mode->second;
        held_.reset();
        e.after = alg_;
        e.forces_after = forces(y_, alg_);
        e.omega13_after = omega13(y_, alg_);
        traj_.events.push_back(e);

        const auto next = exit_condition(alg_, p, opt_.event_tolerance);
        if (!next) return true;
        trigger = *next;
    }
}

void Integrator::recheck_held(double t) {
    if (!held_) return;
    const auto v = exit_condition(alg_, params_.device, 0.0);
    if (!v || v->kind != *held_) {
        held_.reset();
        return;
    }
    if (successor(*v)) {
        settle(t, *v, false, "held: ");
    }
}

void Integrator::push_sample(double t) {
    Sample s;
    s.t = t;
    s.stage = mode_.stage;
    s.state = y_;
    s.algebraic = alg_;
    s.forces = forces(y_, alg_);
    s.omega13 = omega13(y_, alg_);
    traj_.samples.push_back(s);
}

Trajectory Integrator::run(const DynamicState& initial, ControlCombination initial_combination) {
    traj_.dt = opt_.dt;
    y_ = initial;
    mode_.stage = Stage::Prefault;
    mode_.combination = initial_combination;
    {
        auto sol = initial_combination.gfm() == GfmMode::Nc ? solve_at(y_, mode_, nets_, params_, nullptr)
                                                            : std::optional<AlgebraicState>{};
        if (sol && !exit_condition(*sol, params_.device, opt_.event_tolerance)) {
            alg_ = *sol;
        } else {
            // Cold start without a saturated history: NC candidates only.
            std::optional<AlgebraicState> found;
            for (int n = 1; n <= 3 && !found; ++n) {
                mode_.combination = ControlCombination::from_index(n);
                auto s = solve_at(y_, mode_, nets_, params_, nullptr);
                if (s && !exit_condition(*s, params_.device, opt_.event_tolerance)) found = s;
            }
            if (!found) {
                fail(TrajectoryStatus::AlgebraicBreakdown, "initial state has no consistent NC combination");
                return traj_;
            }
            alg_ = *found;
        }
    }

    struct StageTime {
        double t;
        Stage to;
    };
    std::vector<StageTime> stage_times;
    if (fault_.enabled) {
        stage_times.push_back({fault_.start, Stage::Fault});
        stage_times.push_back({fault_.clear, Stage::Postfault});
    }
    std::size_t next_stage = 0;

    auto apply_stage = [&](double t) -> bool {
        const Stage to = stage_times[next_stage].to;
        ++next_stage;
        const Stage from = mode_.stage;
        Mode moved = mode_;
        moved.stage = to;
        auto sol = solve_at(y_, moved, nets_, params_, &alg_);
        Event e;
        e.t = t;
        e.n_old = alg_.combination.index();
        e.kind = EventKind::Stage;
        e.condition = to == Stage::Fault ? "fault-apply" : "fault-clear";
        e.g = kNaN;
        e.stage = to;
        e.state = y_;
        e.before = alg_;
        e.forces_before = forces(y_, alg_);
        e.omega13_before = omega13(y_, alg_);
        (void)from;
        mode_ = moved;
        std::optional<Violation> v;
        if (sol) {
            alg_ = *sol;
            v = exit_condition(alg_, params_.device, opt_.event_tolerance);
        } else {
            v = Violation{EventKind::Solvability, kNaN};
        }
        e.n_new = alg_.combination.index();
        e.after = alg_;
        e.forces_after = forces(y_, alg_);
        e.omega13_after = omega13(y_, alg_);
        traj_.events.push_back(e);
        if (v) {
            return settle(t, *v, false, std::string(e.condition) + ": ");
        }
        return true;
    };

    const double dt = opt_.dt;
    const auto steps = static_cast<long>(std::llround(opt_.t_end / dt));
    double t = 0.0;
    events_this_step_ = 0;
    while (next_stage < stage_times.size() && stage_times[next_stage].t <= 0.0) {
        if (!apply_stage(0.0)) return traj_;
    }
    push_sample(0.0);

    for (long k = 0; k < steps; ++k) {
        const double t_target = static_cast<double>(k + 1) * dt;
        events_this_step_ = 0;
        while (t < t_target) {
            double t_next = t_target;
            bool hits_stage = false;
            if (next_stage < stage_times.size() && stage_times[next_stage].t <= t_target) {
                t_next = stage_times[next_stage].t;
                hits_stage = true;
            }
            const double h = t_next - t;
            if (h > 0.0) {
                StepResult r = rk4(y_, alg_, h);
                std::optional<Violation> v;
                if (step_acceptable(r, v)) {
                    y_ = r.y;
                    alg_ = r.alg;
                    t = t_next;
                    recheck_held(t);
                    if (!traj_.completed()) return traj_;
                } else {
                    // Bisect the step fraction until the switching function is resolved.
                    double lo = 0.0;
                    double hi = 1.0;
                    StepResult r_lo{true, y_, alg_};
                    StepResult r_hi = r;
                    std::optional<Violation> v_hi = v;
                    for (int it = 0; it < 200; ++it) {
                        if (v_hi && v_hi->kind != EventKind::Solvability &&
                            std::abs(v_hi->g) < opt_.event_tolerance) {
                            break;
                        }
                        if ((hi - lo) * h < 1e-15 * std::max(1.0, t)) break;
                        const double mid = 0.5 * (lo + hi);
                        StepResult rm = rk4(y_, alg_, mid * h);
                        std::optional<Violation> vm;
                        if (step_acceptable(rm, vm)) {
                            lo = mid;
                            r_lo = rm;
                        } else {
                            hi = mid;
                            r_hi = rm;
                            v_hi = vm;
                        }
                    }
                    const double t0 = t;
                    if (v_hi->kind == EventKind::Solvability) {
                        // Switch at the last solvable point.
                        y_ = r_lo.y;
                        alg_ = r_lo.alg;
                        t = t0 + lo * h;
                    } else {
                        y_ = r_hi.y;
                        alg_ = r_hi.alg;
                        t = t0 + hi * h;
                    }
                    if (!settle(t, *v_hi, v_hi->kind != EventKind::Solvability, "")) {
                        return traj_;
                    }
                    if (t >= t_target) t = t_target;
                    continue;
                }
            } else {
                t = t_next;
            }
            if (hits_stage && t >= stage_times[next_stage].t) {
                if (!apply_stage(t)) return traj_;
            }
        }
        t = t_target;
        push_sample(t);
    }
    return traj_;
}

}  // namespace

const char* to_string(SwingTimeBase base) { return base == SwingTimeBase::Seconds ? "seconds" : "per-unit"; }

double DynamicsParams::effective_inertia() const {
    const double s = time_base == SwingTimeBase::Seconds ? 1.0 : 2.0 * std::numbers::pi * base_frequency_hz;
    return device.gfm.inertia / s;
}

double DynamicsParams::effective_damping() const {
    const double s = time_base == SwingTimeBase::Seconds ? 1.0 : 2.0 * std::numbers::pi * base_frequency_hz;
    return device.gfm.damping / s;
}

DynamicState& DynamicState::operator+=(const DynamicState& o) {
    delta12 += o.delta12;
    omega12 += o.omega12;
    delta13 += o.delta13;
    x_pll += o.x_pll;
    return *this;
}

DynamicState operator*(double k, DynamicState a) {
    a.delta12 *= k;
    a.omega12 *= k;
    a.delta13 *= k;
    a.x_pll *= k;
    return a;
}

double gfl_speed(const DynamicState& state, const AlgebraicState& algebraic, const DynamicsParams& params) {
    return params.device.gfl.kp_pll * algebraic.u_fl_q + state.x_pll;
}

DynamicState rhs(const DynamicState& state, const AlgebraicState& algebraic, const DynamicsParams& params) {
    const auto& g = params.device.gfm;
    DynamicState d;
    d.delta12 = state.omega12;
    d.omega12 = (g.p_ref - algebraic.p_fm - params.effective_damping() * state.omega12) / params.effective_inertia();
    d.delta13 = gfl_speed(state, algebraic, params);
    d.x_pll = params.device.gfl.ki_pll * algebraic.u_fl_q;
    return d;
}

Forces forces_at(const DynamicState& state, const AlgebraicState& algebraic, const network::ReducedNetwork& net,
                 const DynamicsParams& params) {
    Forces f;
    const auto& dev = params.device;
    f.fm_potential = -(dev.gfm.p_ref - algebraic.p_fm);
    f.fm_damping = -params.effective_damping() * state.omega12;
    f.fl_potential = -dev.gfl.ki_pll * algebraic.u_fl_q;
    try {
        const auto partials = algebraic::implicit_partials(algebraic, net, dev);
        const auto sens = algebraic::total_sensitivity(algebraic, partials, net, dev);
        f.d_fl_12 = -dev.gfl.kp_pll * sens.du_q_d12;
        f.d_fl_13 = -dev.gfl.kp_pll * sens.du_q_d13;
    } catch (const SingularMatrix&) {
        f.d_fl_12 = kNaN;
        f.d_fl_13 = kNaN;
    }
    f.fl_damping_12 = -f.d_fl_12 * state.omega12;
    f.fl_damping_13 = -f.d_fl_13 * gfl_speed(state, algebraic, params);
    return f;
}

const network::ReducedNetwork& StageNetworks::at(Stage stage) const {
    switch (stage) {
        case Stage::Prefault:
            return prefault;
        case Stage::Fault:
            return fault;
        case Stage::Postfault:
            return postfault;
    }
    return prefault;
}

StageNetworks build_stage_networks(const network::NetworkModel& model, const network::FaultStage& fault) {
    return {network::reduce_network(model, Stage::Prefault, fault), network::reduce_network(model, Stage::Fault, fault),
            network::reduce_network(model, Stage::Postfault, fault)};
}

Stage stage_at(double t, const network::FaultStage& fault) {
    if (!fault.enabled || t < fault.start) return Stage::Prefault;
    return t < fault.clear ? Stage::Fault : Stage::Postfault;
}

const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::GfmSaturation:
            return "gfm-saturation";
        case EventKind::GfmDesaturation:
            return "gfm-desaturation";
        case EventKind::GflLowVoltage:
            return "gfl-low-voltage";
        case EventKind::GflHighVoltage:
            return "gfl-high-voltage";
        case EventKind::GflRecovery:
            return "gfl-recovery";
        case EventKind::Solvability:
            return "solvability";
        case EventKind::Stage:
            return "stage";
    }
    return "?";
}

const char* to_string(TrajectoryStatus status) {
    switch (status) {
        case TrajectoryStatus::Completed:
            return "completed";
        case TrajectoryStatus::AlgebraicBreakdown:
            return "algebraic-breakdown";
        case TrajectoryStatus::Chattering:
            return "chattering";
    }
    return "?";
}

Trajectory integrate(const DynamicState& initial, const StageNetworks& nets, const network::FaultStage& fault,
                     const DynamicsParams& params, const IntegrationOptions& options,
                     ControlCombination initial_combination) {
    if (!(options.dt > 0.0) || !(options.t_end > 0.0)) {
        throw InvalidInput("integration requires dt > 0 and t_end > 0");
    }
    Integrator integrator(nets, fault, params, options);
    return integrator.run(initial, initial_combination);
}

bool integrate_fixed_mode(DynamicState& state, double duration, double dt, ControlCombination combination,
                          const network::ReducedNetwork& net, const DynamicsParams& params,
                          const CurrentPhasor& saturated) {
    std::optional<CurrentPhasor> sat;
    if (combination.gfm() == GfmMode::Cs) sat = saturated;
    auto solve = [&](const DynamicState& y, const AlgebraicState* warm) -> std::optional<AlgebraicState> {
        algebraic::Unknowns seed;
        if (warm != nullptr) seed = algebraic::unknowns_of(*warm);
        const auto sol = algebraic::solve_mode_core(y.delta12, y.delta13, combination, net, params.device, sat,
                                                    warm != nullptr ? &seed : nullptr);
        if (!sol.ok()) return std::nullopt;
        return sol.state;
    };
    auto a = solve(state, nullptr);
    if (!a) return false;
    const auto steps = static_cast<long>(std::llround(duration / dt));
    for (long k = 0; k < steps; ++k) {
        const DynamicState k1 = rhs(state, *a, params);
        const DynamicState y1 = state + (0.5 * dt) * k1;
        auto a1 = solve(y1, &*a);
        if (!a1) return false;
        const DynamicState k2 = rhs(y1, *a1, params);
        const DynamicState y2 = state + (0.5 * dt) * k2;
        auto a2 = solve(y2, &*a1);
        if (!a2) return false;
        const DynamicState k3 = rhs(y2, *a2, params);
        const DynamicState y3 = state + dt * k3;
        auto a3 = solve(y3, &*a2);
        if (!a3) return false;
        const DynamicState k4 = rhs(y3, *a3, params);
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        a = solve(state, &*a3);
        if (!a) return false;
    }
    return true;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
    out << "t,delta12,omega12,delta13,ddelta13_dt,n,u_fm,u_fl,u_fl_q,i_fl,phi_fl,p_fm,i_fm_proxy,f_fl_d_12,"
           "f_fl_d_13\n";
    char buf[512];
    for (const auto& s : trajectory.samples) {
        const auto& a = s.algebraic;
        std::snprintf(buf, sizeof buf,
                      "%.6f,%.12g,%.12g,%.12g,%.12g,%d,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", s.t,
                      s.state.delta12, s.state.omega12, s.state.delta13, s.omega13, a.combination.index(), a.u_fm,
                      a.u_fl, a.u_fl_q, a.i_fl, a.phi_fl, a.p_fm, a.i_fm_proxy, s.forces.fl_damping_12,
                      s.forces.fl_damping_13);
        out << buf;
    }
}

void write_events_csv(std::ostream& out, const Trajectory& trajectory) {
    out << "t,n_old,n_new,condition\n";
    char buf[64];
    for (const auto& e : trajectory.events) {
        std::snprintf(buf, sizeof buf, "%.12g", e.t);
        out << buf << ',' << e.n_old << ',' << e.n_new << ',' << '"' << e.condition << '"' << '\n';
    }
}

}  // namespace hybres::dynamics
