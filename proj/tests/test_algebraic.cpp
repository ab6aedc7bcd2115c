#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

#include "doctest.h"
#include "hybres/algebraic.hpp"
#include "hybres/error.hpp"
#include "support.hpp"

using namespace hybres;
using namespace hybres::algebraic;
using devices::GflMode;
using devices::GfmMode;

namespace {

const ControlCombination kNcNc(GfmMode::Nc, GflMode::Nc);
const ControlCombination kNcLvrt(GfmMode::Nc, GflMode::Lvrt);
const ControlCombination kCsNc(GfmMode::Cs, GflMode::Nc);

GridSpec coarse_grid(std::size_t n) {
    GridSpec g;
    g.nx = g.ny = n;
    return g;
}

bool matches_oracle(const ModeSolution& s, const std::vector<testing::OracleSolution>& roots, double tol) {
    for (const auto& r : roots) {
        if (std::abs(r.u_fl - s.state.u_fl) < tol && std::abs(r.u_fm - s.state.u_fm) < tol) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("positive quadratic root") {
    CHECK(positive_quadratic_root({-2.0, 0.0}) == 2.0);
    CHECK_THROWS_AS(positive_quadratic_root({2.0, 0.0}), NonPhysicalRoot);
    CHECK_THROWS_AS(positive_quadratic_root({0.0, 1.0}), NoRealSolution);
    const double u = positive_quadratic_root({-0.4, -1.2});
    CHECK(u * u - 0.4 * u - 1.2 == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("CS with normal GFL control needs no iterations") {
    const auto& sys = testing::reference();
    const auto s = solve_mode_state(0.4, 0.3, kCsNc, sys.nets.postfault, sys.params.device, sys.post_sat);
    REQUIRE(s.ok());
    CHECK(s.iterations == 0);
    CHECK(s.state.i_fl == sys.params.device.gfl.i0);
    CHECK(s.state.phi_fl == sys.params.device.gfl.phi0);
}

TEST_CASE("NC with normal GFL control reduces to the voltage quadratic") {
    const auto& sys = testing::reference();
    const auto& p = sys.params.device;
    const auto s = solve_mode_state(0.5, 0.2, kNcNc, sys.nets.postfault, p);
    REQUIRE(s.ok());
    CHECK(s.state.u_fm == doctest::Approx(solve_u_fm_quadratic(p.gfl.i0, p.gfl.phi0, 0.5, 0.2,
                                                                 sys.nets.postfault.m_nc, p))
                             .epsilon(1e-14));
}

TEST_CASE("CS requires a saturated preset") {
    const auto& sys = testing::reference();
    CHECK_THROWS_AS(solve_mode_state(0.0, 0.0, kCsNc, sys.nets.postfault, sys.params.device), InvalidInput);
}

TEST_CASE("NC with low-voltage ride-through matches the sweep oracle at a sag point") {
    const auto& sys = testing::reference();
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    std::optional<ModeSolution> found;
    for (double d12 = -3.0; d12 < 3.0 && !found; d12 += 0.1) {
        for (double d13 = -3.0; d13 < 3.0 && !found; d13 += 0.1) {
            auto s = solve_mode_state(d12, d13, kNcLvrt, net, p);
            if (s.ok() && s.state.u_fl > 0.5 && s.state.u_fl < 0.85 && mode_conditions_hold(s.state, p)) found = s;
        }
    }
    REQUIRE(found);
    const auto roots = testing::sweep_oracle(found->state.delta12, found->state.delta13, kNcLvrt, net, p, {});
    CHECK(matches_oracle(*found, roots, 1e-6));
}

TEST_CASE("pre-fault operating point classifies as NC+NC") {
    const auto& sys = testing::reference();
    const auto& sep = sys.op.sep1;
    const auto c = classify_combination(sep.delta12, sep.delta13, sys.nets.prefault, sys.params.device,
                                        sys.post_sat);
    REQUIRE(c.ok());
    CHECK(c.combination->index() == 2);
    int consistent = 0;
    for (const auto& r : c.candidates) consistent += r.consistent ? 1 : 0;
    CHECK(consistent == c.multiplicity);
}

TEST_CASE("faulted network near the origin classifies as CS+LVRT") {
    const auto& sys = testing::reference();
    const auto c = classify_combination(0.05, 0.05, sys.nets.fault, sys.params.device, sys.fault_sat);
    REQUIRE(c.ok());
    CHECK(c.combination->index() == 4);
}

TEST_CASE("post-fault region map shows both GFM modes and several GFL modes") {
    const auto& sys = testing::reference();
    const auto& p = sys.params.device;
    const auto map = compute_region_map(coarse_grid(61), sys.nets.postfault, p, sys.post_sat, 2);
    std::array<int, 7> counts{};
    for (std::size_t k = 0; k < map.grid.size(); ++k) {
        const int n = map.combination[k];
        ++counts[n];
        CHECK(std::popcount(static_cast<unsigned>(map.consistent_mask[k])) == map.multiplicity[k]);
        if (n == 0) continue;
        CHECK(mode_conditions_hold(map.states[k], p));
        CHECK((map.consistent_mask[k] >> (n - 1) & 1) == 1);
    }
    const bool nc = counts[1] + counts[2] + counts[3] > 0;
    const bool cs = counts[4] + counts[5] + counts[6] > 0;
    int gfl_modes = 0;
    for (int m = 0; m < 3; ++m) gfl_modes += counts[1 + m] + counts[4 + m] > 0 ? 1 : 0;
    CHECK(nc);
    CHECK(cs);
    CHECK(gfl_modes >= 2);
}

TEST_CASE("region map does not depend on the thread count") {
    const auto& sys = testing::reference();
    const auto a = compute_region_map(coarse_grid(31), sys.nets.postfault, sys.params.device, sys.post_sat, 1);
    const auto b = compute_region_map(coarse_grid(31), sys.nets.postfault, sys.params.device, sys.post_sat, 3);
    CHECK(a.combination == b.combination);
    CHECK(a.multiplicity == b.multiplicity);
    for (std::size_t k = 0; k < a.states.size(); ++k) {
        CHECK(std::bit_cast<std::uint64_t>(a.states[k].u_fl) == std::bit_cast<std::uint64_t>(b.states[k].u_fl));
    }
}

TEST_CASE("implicit partials match central differences") {
    const auto& sys = testing::reference();
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    const auto map = compute_region_map(coarse_grid(41), net, p, sys.post_sat, 2);
    SolverOptions tight;
    tight.tolerance = 1e-14;
    std::mt19937_64 rng(5);
    std::array<int, 7> tested{};
    std::vector<std::size_t> cells(map.grid.size());
    for (std::size_t k = 0; k < cells.size(); ++k) cells[k] = k;
    std::shuffle(cells.begin(), cells.end(), rng);
    for (std::size_t k : cells) {
        const int n = map.combination[k];
        if (n == 0 || tested[n] >= 5) continue;
        const auto& s = map.states[k];
        Partials d;
        try {
            d = implicit_partials(s, net, p);
        } catch (const SingularMatrix&) {
            continue;
        }
        const Unknowns warm = unknowns_of(s);
        const auto sat = n > 3 ? std::optional(s.saturated) : std::nullopt;
        auto at = [&](double d12, double d13) {
            return solve_mode_core(d12, d13, s.combination, net, p, sat, &warm, tight);
        };
        const double h = 1e-6;
        const auto a12 = at(s.delta12 + h, s.delta13);
        const auto b12 = at(s.delta12 - h, s.delta13);
        const auto a13 = at(s.delta12, s.delta13 + h);
        const auto b13 = at(s.delta12, s.delta13 - h);
        if (!a12.ok() || !b12.ok() || !a13.ok() || !b13.ok()) continue;
        // Skip cells where a clamp changes within the stencil.
        if (std::abs(a12.state.u_fl - b12.state.u_fl) > 1e-3) continue;
        auto fd = [h](double a, double b) { return (a - b) / (2.0 * h); };
        const double scale = 1e-2;
        CHECK(testing::rel_err(d.di_fl_d12, fd(a12.state.i_fl, b12.state.i_fl), scale) < 1e-4);
        CHECK(testing::rel_err(d.di_fl_d13, fd(a13.state.i_fl, b13.state.i_fl), scale) < 1e-4);
        CHECK(testing::rel_err(d.dphi_fl_d12, fd(a12.state.phi_fl, b12.state.phi_fl), scale) < 1e-4);
        CHECK(testing::rel_err(d.dphi_fl_d13, fd(a13.state.phi_fl, b13.state.phi_fl), scale) < 1e-4);
        if (n <= 3) {
            CHECK(testing::rel_err(d.du_fm_d12, fd(a12.state.u_fm, b12.state.u_fm), scale) < 1e-4);
            CHECK(testing::rel_err(d.du_fm_d13, fd(a13.state.u_fm, b13.state.u_fm), scale) < 1e-4);
        }
        ++tested[n];
    }
    for (int n = 1; n <= 6; ++n) CHECK(tested[n] > 0);
}

TEST_CASE("finite-difference discrepancy of the partials is second order") {
    const auto& sys = testing::reference();
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    const auto s = solve_mode_state(0.2, 0.1, kNcNc, net, p);
    REQUIRE(s.ok());
    const auto d = implicit_partials(s.state, net, p);
    SolverOptions tight;
    tight.tolerance = 1e-15;
    auto err = [&](double h) {
        const auto a = solve_mode_core(s.state.delta12 + h, s.state.delta13, kNcNc, net, p, std::nullopt, nullptr, tight);
        const auto b = solve_mode_core(s.state.delta12 - h, s.state.delta13, kNcNc, net, p, std::nullopt, nullptr, tight);
        return std::abs((a.state.u_fm - b.state.u_fm) / (2.0 * h) - d.du_fm_d12);
    };
    const double ratio = err(2e-2) / err(1e-2);
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
}

TEST_CASE("CS with constant GFL injection has zero GFL partials") {
    const auto& sys = testing::reference();
    const auto s = solve_mode_state(0.7, -0.4, kCsNc, sys.nets.postfault, sys.params.device, sys.post_sat);
    REQUIRE(s.ok());
    const auto d = implicit_partials(s.state, sys.nets.postfault, sys.params.device);
    CHECK(d.di_fl_d12 == 0.0);
    CHECK(d.di_fl_d13 == 0.0);
    CHECK(d.dphi_fl_d12 == 0.0);
    CHECK(d.dphi_fl_d13 == 0.0);
}

TEST_CASE("NC and CS coincide where the NC current reaches the limit") {
    const auto& sys = testing::reference();
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    const double d13 = sys.op.sep1.delta13;
    auto excess = [&](double d12) {
        const auto s = solve_mode_state(d12, d13, kNcNc, net, p);
        return s.ok() ? s.state.i_fm_proxy - p.gfm.i_max : std::nan("");
    };
    double lo = sys.op.sep1.delta12;
    double hi = lo;
    while (hi < lo + 3.0 && !(excess(hi) > 0.0)) hi += 0.05;
    REQUIRE(excess(hi) > 0.0);
    lo = hi - 0.05;
    REQUIRE(excess(lo) <= 0.0);
    for (int k = 0; k < 80; ++k) {
        const double mid = 0.5 * (lo + hi);
        (excess(mid) > 0.0 ? hi : lo) = mid;
    }
    const auto nc = solve_mode_state(lo, d13, kNcNc, net, p);
    REQUIRE(nc.ok());
    const auto preset = devices::gfm_saturated_injection(nc.state.i_fm * std::polar(1.0, -lo), p.gfm);
    const auto cs = solve_mode_state(lo, d13, kCsNc, net, p, preset);
    REQUIRE(cs.ok());
    CHECK(std::abs(cs.state.u_fm - nc.state.u_fm) < 1e-6);
    CHECK(std::abs(cs.state.v_fl - nc.state.v_fl) < 1e-6);
    CHECK(std::abs(cs.state.u_fm_phase - lo) < 1e-6);
}

TEST_CASE("solver output is bit-identical across calls") {
    const auto& sys = testing::reference();
    const auto a = solve_mode_state(1.1, -0.7, kNcLvrt, sys.nets.postfault, sys.params.device);
    const auto b = solve_mode_state(1.1, -0.7, kNcLvrt, sys.nets.postfault, sys.params.device);
    CHECK(a.status == b.status);
    CHECK(std::bit_cast<std::uint64_t>(a.state.u_fl) == std::bit_cast<std::uint64_t>(b.state.u_fl));
    CHECK(std::bit_cast<std::uint64_t>(a.state.u_fm) == std::bit_cast<std::uint64_t>(b.state.u_fm));
}

TEST_CASE("total sensitivity matches differences of the solved outputs") {
    const auto& sys = testing::reference();
    const auto& net = sys.nets.postfault;
    const auto& p = sys.params.device;
    const auto s = solve_mode_state(0.3, 0.4, kNcNc, net, p);
    REQUIRE(s.ok());
    const auto sens = total_sensitivity(s.state, implicit_partials(s.state, net, p), net, p);
    const double h = 1e-6;
    auto at = [&](double d12, double d13) { return solve_mode_state(d12, d13, kNcNc, net, p).state; };
    CHECK(testing::rel_err(sens.dp_fm_d12, (at(0.3 + h, 0.4).p_fm - at(0.3 - h, 0.4).p_fm) / (2 * h)) < 1e-5);
    CHECK(testing::rel_err(sens.du_q_d13, (at(0.3, 0.4 + h).u_fl_q - at(0.3, 0.4 - h).u_fl_q) / (2 * h)) < 1e-5);
}
