#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "hybres/dynamics.hpp"
#include "support.hpp"

using namespace hybres;
using namespace hybres::dynamics;

namespace {

network::FaultStage no_fault() {
    network::FaultStage f;
    f.enabled = false;
    return f;
}

IntegrationOptions run_for(double t_end, double dt = 1e-3) {
    IntegrationOptions o;
    o.t_end = t_end;
    o.dt = dt;
    return o;
}

}  // namespace

TEST_CASE("derivatives vanish at the operating point") {
    const auto& sys = testing::reference();
    const auto d = rhs(sys.initial(), sys.op.sep1.state, sys.params);
    CHECK(std::abs(d.delta12) < 1e-12);
    CHECK(std::abs(d.omega12) < 1e-10);
    CHECK(std::abs(d.delta13) < 1e-10);
    CHECK(std::abs(d.x_pll) < 1e-10);
}

TEST_CASE("swing acceleration by hand") {
    DynamicsParams params;
    params.device.gfm.p_ref = 1.68;
    params.device.gfm.inertia = 0.5;
    params.device.gfm.damping = 1.0;
    AlgebraicState a;
    a.p_fm = 1.0;
    DynamicState y;
    y.omega12 = 0.2;
    CHECK(rhs(y, a, params).omega12 == doctest::Approx(0.96).epsilon(1e-14));
    CHECK(rhs(y, a, params).delta12 == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("PLL speed from the PI law") {
    DynamicsParams params;
    AlgebraicState a;
    a.u_fl_q = 0.01;
    DynamicState y;
    y.x_pll = 0.3;
    CHECK(gfl_speed(y, a, params) == doctest::Approx(0.3 + params.device.gfl.kp_pll * 0.01).epsilon(1e-15));
    CHECK(rhs(y, a, params).x_pll == doctest::Approx(params.device.gfl.ki_pll * 0.01).epsilon(1e-15));
}

TEST_CASE("per-unit time base scales inertia and damping") {
    DynamicsParams params;
    params.time_base = SwingTimeBase::PerUnit;
    params.base_frequency_hz = 50.0;
    const double wb = 2.0 * std::numbers::pi * 50.0;
    CHECK(params.effective_inertia() == doctest::Approx(params.device.gfm.inertia / wb));
    CHECK(params.effective_damping() == doctest::Approx(params.device.gfm.damping / wb));
}

TEST_CASE("stage schedule") {
    network::FaultStage f;
    f.start = 0.1;
    f.clear = 0.5;
    CHECK(stage_at(0.0, f) == Stage::Prefault);
    CHECK(stage_at(0.1, f) == Stage::Fault);
    CHECK(stage_at(0.4999, f) == Stage::Fault);
    CHECK(stage_at(0.5, f) == Stage::Postfault);
}

TEST_CASE("undisturbed run stays at the operating point") {
    const testing::System sys(no_fault());
    const auto tr = integrate(sys.initial(), sys.nets, sys.fault, sys.params, run_for(5.0),
                              sys.op.sep1.state.combination);
    REQUIRE(tr.completed());
    CHECK(tr.events.empty());
    double worst = 0.0;
    for (const auto& s : tr.samples) {
        worst = std::max({worst, std::abs(s.state.delta12 - sys.op.sep1.delta12),
                          std::abs(s.state.delta13 - sys.op.sep1.delta13)});
    }
    CHECK(worst < 1e-8);
    CHECK(tr.samples.back().t == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("fault drives the converters into CS with low-voltage ride-through") {
    const auto& sys = testing::reference();
    const auto tr = integrate(sys.initial(), sys.nets, sys.fault, sys.params, run_for(1.5, 1e-4),
                              sys.op.sep1.state.combination);
    REQUIRE(tr.completed());
    const Event* first = nullptr;
    for (const auto& e : tr.events) {
        if (e.kind != EventKind::Stage) {
            first = &e;
            break;
        }
    }
    REQUIRE(first != nullptr);
    CHECK(first->n_new == 4);
    CHECK(first->stage == Stage::Fault);
    for (const auto& e : tr.events) {
        if (e.localized) CHECK(std::abs(e.g) < 1e-9);
        if (e.kind == EventKind::Stage) CHECK((e.t == sys.fault.start || e.t == sys.fault.clear));
    }
}

TEST_CASE("fixed-mode integration agrees with the event integrator between events") {
    const testing::System sys(no_fault());
    DynamicState y0 = sys.initial();
    y0.omega12 = 0.05;
    const auto tr = integrate(y0, sys.nets, sys.fault, sys.params, run_for(0.2), sys.op.sep1.state.combination);
    REQUIRE(tr.completed());
    REQUIRE(tr.events.empty());
    DynamicState y = y0;
    REQUIRE(integrate_fixed_mode(y, 0.2, 1e-3, sys.op.sep1.state.combination, sys.nets.prefault, sys.params,
                                 sys.post_sat));
    CHECK(y.delta12 == doctest::Approx(tr.samples.back().state.delta12).epsilon(1e-12));
    CHECK(y.delta13 == doctest::Approx(tr.samples.back().state.delta13).epsilon(1e-12));
}

TEST_CASE("start without a consistent normal-control solution is a breakdown") {
    const testing::System sys(no_fault());
    const DynamicState y0{2.8, 0.0, 0.0, 0.0};
    const auto tr = integrate(y0, sys.nets, sys.fault, sys.params, run_for(0.1));
    CHECK(tr.status == TrajectoryStatus::AlgebraicBreakdown);
    CHECK_FALSE(tr.diagnostic.empty());
}

TEST_CASE("event bound reports chattering") {
    const auto& sys = testing::reference();
    auto opt = run_for(0.1);
    opt.max_events_per_step = 0;
    const auto tr = integrate(sys.initial(), sys.nets, sys.fault, sys.params, opt, sys.op.sep1.state.combination);
    CHECK(tr.status == TrajectoryStatus::Chattering);
}

TEST_CASE("trajectory CSV column contract") {
    const testing::System sys(no_fault());
    const auto tr = integrate(sys.initial(), sys.nets, sys.fault, sys.params, run_for(0.002),
                              sys.op.sep1.state.combination);
    std::ostringstream o;
    write_trajectory_csv(o, tr);
    const std::string text = o.str();
    CHECK(text.rfind("t,delta12,omega12,delta13,ddelta13_dt,n,u_fm,u_fl,u_fl_q,i_fl,phi_fl,p_fm,i_fm_proxy,"
                     "f_fl_d_12,f_fl_d_13\n",
                     0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(tr.samples.size()) + 1);
}
