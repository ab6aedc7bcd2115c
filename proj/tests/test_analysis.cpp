#include <cmath>
#include <random>

#include "doctest.h"
#include "hybres/analysis.hpp"
#include "hybres/run.hpp"
#include "hybres/scenario.hpp"
#include "support.hpp"

using namespace hybres;
using namespace hybres::analysis;
using devices::ControlCombination;
using devices::GflMode;
using devices::GfmMode;

namespace {

GridSpec grid(std::size_t n) {
    GridSpec g;
    g.nx = g.ny = n;
    return g;
}

const EquilibriumSets& postfault_sets() {
    static const EquilibriumSets sets = [] {
        const auto& sys = testing::reference();
        const auto map = algebraic::compute_region_map(grid(121), sys.nets.postfault, sys.params.device,
                                                       sys.post_sat, 2);
        return equilibrium_sets(map, sys.nets.postfault, sys.params.device, sys.post_sat, sys.op.sep1.delta12,
                                sys.op.sep1.delta13);
    }();
    return sets;
}

}  // namespace

TEST_CASE("operating point of the test system") {
    const auto& sys = testing::reference();
    const auto& sep = sys.op.sep1;
    REQUIRE(sep.converged);
    CHECK(std::abs(sep.state.p_fm - 1.68) < 1e-9);
    CHECK(std::abs(sep.state.u_fl_q) < 1e-12);
    CHECK(sep.state.combination.index() == 2);
    const auto f = potential_forces(sep.delta12, sep.delta13, sep.state.combination, sys.nets.prefault,
                                    sys.params.device);
    CHECK(std::abs(f.fm) < 1e-9);
    CHECK(std::abs(f.fl) < 1e-9);
    // Derived limits follow the ratio rules.
    CHECK(sys.params.device.gfl.i_max == doctest::Approx(1.2 * sys.params.device.gfl.i0));
    CHECK(sys.params.device.gfm.i_max == doctest::Approx(1.5 * sys.op.gfm_nominal_current));
}

TEST_CASE("potential force reproduces the power mismatch term by term") {
    const auto& sys = testing::reference();
    const auto& p = sys.params.device;
    const auto& net = sys.nets.postfault;
    const ControlCombination nc(GfmMode::Nc, GflMode::Nc);
    for (double d12 = -0.5; d12 <= 1.0; d12 += 0.25) {
        const double d13 = 0.3;
        const auto s = algebraic::solve_mode_state(d12, d13, nc, net, p);
        REQUIRE(s.ok());
        // P = Re(V2 conj(I2)) with I2 from the reduced admittance rows.
        const Eigen::Matrix3cd& y = net.y_reduced;
        const Complex v2 = std::polar(s.state.u_fm, d12);
        const Complex v3 = s.state.v_fl;
        const Complex i2 = y(1, 0) * p.grid_voltage + y(1, 1) * v2 + y(1, 2) * v3;
        const double p_direct = (v2 * std::conj(i2)).real();
        const auto f = potential_forces(d12, d13, nc, net, p);
        CHECK(f.fm == doctest::Approx(-(p.gfm.p_ref - p_direct)).epsilon(1e-10));
        CHECK(f.fl == doctest::Approx(-p.gfl.ki_pll * (v3 * std::polar(1.0, -d13)).imag()).epsilon(1e-10));
    }
}

TEST_CASE("unsolvable point raises no-solution") {
    const auto& sys = testing::reference();
    const ControlCombination nc(GfmMode::Nc, GflMode::Nc);
    auto p = sys.params.device;
    p.gfm.u_set = -5.0;
    CHECK_THROWS_AS(potential_forces(0.3, 0.3, nc, sys.nets.postfault, p), NoSolution);
}

TEST_CASE("CS with constant GFL injection has a closed-form cross damping") {
    const auto& sys = testing::reference();
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    const ControlCombination cs(GfmMode::Cs, GflMode::Nc);
    const auto s = algebraic::solve_mode_state(0.9, 0.2, cs, net, p, sys.post_sat);
    REQUIRE(s.ok());
    const auto d = damping_coefficients(s.state, algebraic::implicit_partials(s.state, net, p), net, p);
    const auto m32 = net.m_cs.polar(3, 2);
    const double expect = -m32.magnitude * sys.post_sat.magnitude *
                          std::cos(m32.angle + sys.post_sat.angle + 0.9 - 0.2);
    CHECK(d.d12 / p.gfl.kp_pll == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("explicit damping agrees with the sensitivity route") {
    const auto& sys = testing::reference();
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    const auto map = algebraic::compute_region_map(grid(31), net, p, sys.post_sat, 2);
    int checked = 0;
    for (std::size_t k = 0; k < map.grid.size(); ++k) {
        if (map.combination[k] == 0) continue;
        const auto& s = map.states[k];
        algebraic::Partials d;
        try {
            d = algebraic::implicit_partials(s, net, p);
        } catch (const SingularMatrix&) {
            continue;
        }
        const auto dc = damping_coefficients(s, d, net, p);
        const auto sens = algebraic::total_sensitivity(s, d, net, p);
        CHECK(testing::rel_err(dc.d12, -p.gfl.kp_pll * sens.du_q_d12, 1e-9) < 1e-9);
        CHECK(testing::rel_err(dc.d13, -p.gfl.kp_pll * sens.du_q_d13, 1e-9) < 1e-9);
        ++checked;
    }
    CHECK(checked > 500);
}

TEST_CASE("damping sign criterion") {
    CHECK(damping_sign_flag(0.1, 0.2, 0.5) == 1);
    CHECK(damping_sign_flag(-0.1, 0.2, -0.5) == 1);
    CHECK(damping_sign_flag(0.1, 0.2, -0.5) == -1);
    CHECK(damping_sign_flag(0.0, 0.2, 0.5) == 0);
}

TEST_CASE("post-fault equilibrium sets") {
    const auto& sys = testing::reference();
    const auto& sets = postfault_sets();
    CHECK_FALSE(sets.of(Branch::FmSep1).empty());
    CHECK_FALSE(sets.of(Branch::FmSep2).empty());
    CHECK_FALSE(sets.of(Branch::FlSep).empty());
    REQUIRE(sets.sep1);
    REQUIRE(sets.sep2);
    CHECK(std::hypot(sets.sep1->delta12 - sys.op.sep1.delta12, sets.sep1->delta13 - sys.op.sep1.delta13) < 1e-6);
    CHECK(sets.sep2->state.combination.gfm() == GfmMode::Cs);
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    for (int b = 0; b < 5; ++b) {
        for (const auto& line : sets.branches[b]) {
            for (const auto& pt : line) CHECK(pt.residual < 1e-6);
        }
    }
    // Every UEP point fails the stability sign test.
    for (Branch b : {Branch::FmUep, Branch::FlUep}) {
        for (const auto& line : sets.of(b)) {
            for (const auto& pt : line) {
                const auto sat = pt.combination > 3 ? std::optional(sys.post_sat) : std::nullopt;
                const auto s = algebraic::solve_mode_state(pt.delta12, pt.delta13,
                                                           ControlCombination::from_index(pt.combination), net, p, sat);
                REQUIRE(s.ok());
                algebraic::Sensitivity sens;
                try {
                    sens = algebraic::total_sensitivity(s.state, algebraic::implicit_partials(s.state, net, p), net, p);
                } catch (const SingularMatrix&) {
                    continue;
                }
                CHECK((sens.dp_fm_d12 < 0.0 || sens.du_q_d13 > 0.0));
            }
        }
    }
}

TEST_CASE("pre-fault equilibrium sets contain the operating point") {
    const auto& sys = testing::reference();
    const auto map = algebraic::compute_region_map(grid(81), sys.nets.prefault, sys.params.device, sys.post_sat, 2);
    const auto sets = equilibrium_sets(map, sys.nets.prefault, sys.params.device, sys.post_sat, sys.op.sep1.delta12,
                                       sys.op.sep1.delta13);
    REQUIRE(sets.sep1);
    const auto c = algebraic::classify_combination(sets.sep1->delta12, sets.sep1->delta13, sys.nets.prefault,
                                                   sys.params.device, sys.post_sat);
    REQUIRE(c.ok());
    CHECK(c.combination->index() == 2);
}

TEST_CASE("bolted fault leaves no equilibrium") {
    const auto& sys = testing::reference();
    const auto map = algebraic::compute_region_map(grid(61), sys.nets.fault, sys.params.device, sys.fault_sat, 2);
    const auto sets = equilibrium_sets(map, sys.nets.fault, sys.params.device, sys.fault_sat, sys.op.sep1.delta12,
                                       sys.op.sep1.delta13);
    CHECK_FALSE(sets.sep1);
    CHECK_FALSE(sets.sep2);
}

TEST_CASE("distance to a contour") {
    std::vector<ContourLine> lines{{{0.0, 0.0, 2, 0, 0}, {1.0, 0.0, 2, 0, 0}}};
    CHECK(distance_to(lines, 0.5, 0.3) == doctest::Approx(0.3));
    CHECK(distance_to(lines, 2.0, 0.0) == doctest::Approx(1.0));
    CHECK(std::isinf(distance_to({}, 0.0, 0.0)));
}

TEST_CASE("energy ledger of a ride-through run") {
    const auto p = run::prepare(scenario::parse_scenario(testing::scenario_path("short_fault.ini")));
    auto opt = p.integration();
    opt.dt = 1e-3;
    const auto tr = dynamics::integrate(p.initial_state(), p.nets, p.scenario.fault, p.params, opt,
                                        p.op.sep1.state.combination);
    REQUIRE(tr.completed());
    const auto ledger = energy_decompose(tr, p.params);
    REQUIRE(ledger.samples.size() == tr.samples.size());
    const auto& e0 = ledger.samples.front();
    CHECK(e0.fm_k == 0.0);
    CHECK(e0.fm_p == 0.0);
    CHECK(e0.fm_d == 0.0);
    CHECK(e0.fl_k == 0.0);
    CHECK(e0.fl_p == 0.0);
    CHECK(e0.fl_d == 0.0);
    for (std::size_t k = 1; k < ledger.samples.size(); ++k) {
        CHECK(ledger.samples[k].fm_d <= ledger.samples[k - 1].fm_d);
    }
    CHECK(std::abs(ledger.samples.back().fm_k) < 1e-4);
    CHECK(ledger.max_fm_residual < 1e-3);
    CHECK(ledger.max_fl_residual < 1e-3);
}

TEST_CASE("undisturbed run is classified stable") {
    auto s = scenario::parse_scenario(testing::scenario_path("no_fault.ini"));
    s.run.grid = grid(81);
    s.run.dt = 1e-3;
    const auto p = run::prepare(s);
    const auto tr = run::simulate(p);
    const auto sets = run::postfault_sets(p, 2);
    const auto rep = dominant_instability(tr, sets, p.op.sep1.delta12, p.op.sep1.delta13, p.params);
    CHECK(rep.verdict == Verdict::Stable);
}

TEST_CASE("stiff PLL scenario is classified GFL and crosses the GFL UEP set first") {
    auto s = scenario::parse_scenario(testing::scenario_path("gfl_dominant.ini"));
    s.run.grid = grid(201);
    s.run.dt = 5e-4;
    s.run.t_end = 2.0;
    const auto p = run::prepare(s);
    const auto tr = run::simulate(p);
    const auto sets = run::postfault_sets(p, 2);
    ClassifierOptions opt;
    const auto rep = dominant_instability(tr, sets, p.op.sep1.delta12, p.op.sep1.delta13, p.params, opt,
                                          s.fault.clear);
    CHECK(rep.verdict == Verdict::Gfl);
    // Raw cross-check: first post-clearing sample inside either band, by brute-force distance.
    std::optional<double> first_fm;
    std::optional<double> first_fl;
    for (const auto& smp : tr.samples) {
        if (smp.t < s.fault.clear) continue;
        if (!first_fm && distance_to(sets.of(Branch::FmUep), smp.state.delta12, smp.state.delta13) < opt.band) {
            first_fm = smp.t;
        }
        if (!first_fl && distance_to(sets.of(Branch::FlUep), smp.state.delta12, smp.state.delta13) < opt.band) {
            first_fl = smp.t;
        }
    }
    REQUIRE(first_fl);
    CHECK((!first_fm || *first_fl <= *first_fm));
    // The PLL angle runs away while the GFM angle stays bounded.
    CHECK(tr.samples.back().state.delta13 - p.op.sep1.delta13 > 2.0 * std::numbers::pi);
    double d12_max = 0.0;
    for (const auto& smp : tr.samples) d12_max = std::max(d12_max, smp.state.delta12);
    CHECK(d12_max < std::numbers::pi);
}

TEST_CASE("simultaneous band entry is ambiguous") {
    EquilibriumSets sets;
    sets.branches[static_cast<int>(Branch::FmUep)] = {{{0.9, 1.0, 2, 0, 0}, {1.1, 1.0, 2, 0, 0}}};
    sets.branches[static_cast<int>(Branch::FlUep)] = {{{1.0, 0.9, 2, 0, 0}, {1.0, 1.1, 2, 0, 0}}};
    dynamics::DynamicsParams params;
    dynamics::Trajectory tr;
    dynamics::Sample smp;
    smp.state = {1.0, 0.5, 1.0, 0.0};
    smp.omega13 = 0.5;
    smp.algebraic.p_fm = params.device.gfm.p_ref - 0.1;
    smp.algebraic.u_fl_q = 0.01;
    tr.samples.push_back(smp);
    CHECK_THROWS_AS(dominant_instability(tr, sets, 0.0, 0.0, params), AmbiguousVerdict);
}
