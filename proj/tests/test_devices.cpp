#include <cmath>
#include <numbers>

#include "doctest.h"
#include "hybres/devices.hpp"
#include "hybres/error.hpp"

using namespace hybres;
using namespace hybres::devices;

TEST_CASE("combination numbering") {
    CHECK(ControlCombination(GfmMode::Nc, GflMode::Lvrt).index() == 1);
    CHECK(ControlCombination(GfmMode::Nc, GflMode::Nc).index() == 2);
    CHECK(ControlCombination(GfmMode::Nc, GflMode::Hvrt).index() == 3);
    CHECK(ControlCombination(GfmMode::Cs, GflMode::Lvrt).index() == 4);
    CHECK(ControlCombination(GfmMode::Cs, GflMode::Nc).index() == 5);
    CHECK(ControlCombination(GfmMode::Cs, GflMode::Hvrt).index() == 6);
    for (int n = 1; n <= 6; ++n) CHECK(ControlCombination::from_index(n).index() == n);
    CHECK_THROWS_AS(ControlCombination::from_index(0), InvalidInput);
    CHECK_THROWS_AS(ControlCombination::from_index(7), InvalidInput);
}

TEST_CASE("ride-through mode thresholds") {
    GflParams p;
    CHECK(gfl_mode_of(0.9, p) == GflMode::Nc);
    CHECK(gfl_mode_of(1.1, p) == GflMode::Nc);
    CHECK(gfl_mode_of(0.8999, p) == GflMode::Lvrt);
    CHECK(gfl_mode_of(1.2, p) == GflMode::Hvrt);
}

TEST_CASE("normal control injects the nominal current") {
    GflParams p;
    p.i0 = 1.3;
    p.phi0 = -0.2;
    const auto c = gfl_injection(1.0, GflMode::Nc, p);
    CHECK(c.magnitude == 1.3);
    CHECK(c.angle == -0.2);
}

TEST_CASE("low-voltage injection clamps at full sag") {
    GflParams p;
    p.i0 = 1.0;
    p.i_max = 1.2;
    p.k_i_lvrt = 10.0;
    p.k_phi_lvrt = 10.0;
    const auto c = gfl_injection(0.0, GflMode::Lvrt, p);
    CHECK(c.magnitude == 1.2);
    CHECK(c.angle == doctest::Approx(-std::numbers::pi / 2).epsilon(1e-15));
}

TEST_CASE("low-voltage injection inside the clamps") {
    GflParams p;
    p.i0 = 1.334768;
    p.i_max = 1.2 * p.i0;
    p.phi0 = -0.19186;
    p.k_phi_lvrt = 1.53216;
    const auto c = gfl_injection(0.8, GflMode::Lvrt, p);
    CHECK(c.magnitude == doctest::Approx(std::min(0.5 * 0.1 + p.i0, p.i_max)).epsilon(1e-15));
    CHECK(c.angle == doctest::Approx(std::max(p.k_phi_lvrt * -0.1 + p.phi0, -std::numbers::pi / 2)).epsilon(1e-15));
    const auto s = gfl_injection_slope(0.8, GflMode::Lvrt, p);
    CHECK(s.d_magnitude == -0.5);
    CHECK(s.d_angle == p.k_phi_lvrt);
}

TEST_CASE("injection slopes match finite differences") {
    GflParams p;
    p.i0 = 1.2;
    p.i_max = 1.5;
    p.phi0 = -0.1;
    p.k_phi_lvrt = 1.4;
    p.k_phi_hvrt = 5.0;
    const double h = 1e-7;
    for (GflMode mode : {GflMode::Lvrt, GflMode::Nc, GflMode::Hvrt}) {
        for (double u : {0.35, 0.7, 0.95, 1.15, 1.25}) {
            const auto s = gfl_injection_slope(u, mode, p);
            const auto a = gfl_injection(u + h, mode, p);
            const auto b = gfl_injection(u - h, mode, p);
            CHECK(s.d_magnitude == doctest::Approx((a.magnitude - b.magnitude) / (2 * h)).epsilon(1e-6));
            CHECK(s.d_angle == doctest::Approx((a.angle - b.angle) / (2 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("droop reference voltage") {
    GfmParams p;
    CHECK(gfm_voltage_ref(p.q_ref, p) == p.u_set);
    GfmParams off = p;
    off.kq = 0.0;
    CHECK(gfm_voltage_ref(3.0, off) == p.u_set);
    CHECK(gfm_voltage_ref(0.0, p) == doctest::Approx(1.115).epsilon(1e-14));
}

TEST_CASE("saturated current preset") {
    GfmParams p;
    const double i0 = 1.2;
    p.i_max = 1.5 * i0;
    p.i_saturated = 1.5 * i0;
    const auto held = gfm_saturated_injection(std::polar(1.8, -0.3), p);
    CHECK(held.magnitude == 1.5 * i0);
    CHECK(held.angle == doctest::Approx(-0.3).epsilon(1e-15));
    p.angle_policy = SaturationAnglePolicy::Fixed;
    p.fixed_angle = 0.0;
    const auto fixed = gfm_saturated_injection(std::polar(1.8, -0.3), p);
    CHECK(fixed.magnitude == p.i_saturated);
    CHECK(fixed.angle == 0.0);
}

TEST_CASE("parameter validation") {
    GflParams l;
    l.u_lv = 1.2;
    l.u_hv = 1.1;
    CHECK_THROWS_AS(l.validate(), InvalidInput);
    GfmParams m;
    m.i_saturated = 2.0 * m.i_max;
    CHECK_THROWS_AS(m.validate(), InvalidInput);
}
