#include <algorithm>
#include <numbers>

#include "doctest.h"
#include "hybres/error.hpp"
#include "hybres/scenario.hpp"
#include "support.hpp"

using namespace hybres;
using namespace hybres::scenario;

namespace {

const char* kMinimal = R"(
[network]
bus_1 = grid
bus_2 = gfm
bus_3 = gfl
bus_4 = passive
branch_1_4 = 0.02 0.093
branch_2_4 = 0.007 0.055
branch_3_4 = 0.01 0.065

[fault]
bus = 4
resistance_ohm = 1
clear = 1.2
)";

std::string error_path(const std::string& text) {
    try {
        parse_scenario_text(text);
    } catch (const ScenarioError& e) {
        return e.path();
    }
    return "";
}

bool reported(const Scenario& s, const std::string& key) {
    return std::any_of(s.defaults_applied.begin(), s.defaults_applied.end(),
                       [&key](const std::string& d) { return d.rfind(key + " = ", 0) == 0; });
}

}  // namespace

TEST_CASE("minimal file takes device defaults") {
    const auto s = parse_scenario_text(kMinimal);
    CHECK(s.gfm.params.kq == 0.5);
    CHECK(s.gfm.params.p_ref == 1.68);
    CHECK(s.gfm.params.q_ref == 0.21);
    CHECK(s.gfm.params.u_set == 1.01);
    CHECK(s.gfm.params.inertia == 0.5);
    CHECK(s.gfm.params.damping == 1.0);
    CHECK(s.gfl.params.kp_pll == 10.0);
    CHECK(s.gfl.params.ki_pll == 100.0);
    CHECK(s.gfl.params.p_ref == 1.39);
    CHECK(s.gfl.params.q_ref == 0.27);
    CHECK(s.gfl.params.k_i_lvrt == 0.5);
    CHECK(s.gfl.params.k_i_hvrt == 2.46);
    CHECK(s.gfl.params.u_lv == 0.9);
    CHECK(s.gfl.params.u_hv == 1.1);
    CHECK(s.run.grid.nx == 401);
    CHECK(s.run.grid.x_min == -std::numbers::pi);
    CHECK(reported(s, "gfm.kq"));
    CHECK(reported(s, "gfl.kp_pll"));
    CHECK(reported(s, "gfl.ki_pll"));
    CHECK_FALSE(reported(s, "fault.bus"));
}

TEST_CASE("inverted voltage interval names the constraint") {
    std::string text = kMinimal;
    text += "\n[gfl]\nu_lv = 1.2\nu_hv = 1.1\n";
    try {
        parse_scenario_text(text);
        FAIL("expected a validation error");
    } catch (const ScenarioError& e) {
        CHECK(e.path() == "gfl.u_lv");
        CHECK(std::string(e.what()).find("u_lv < u_hv") != std::string::npos);
    }
}

TEST_CASE("missing required keys and sections are named") {
    CHECK(error_path("[fault]\nbus = 4\nresistance_ohm = 1\nclear = 1\n") == "network");
    std::string no_clear = kMinimal;
    no_clear.replace(no_clear.find("clear = 1.2"), 11, "");
    CHECK(error_path(no_clear) == "fault.clear");
}

TEST_CASE("unknown keys, bad values and cross-field errors are rejected") {
    CHECK(error_path(std::string(kMinimal) + "\n[gfm]\nspeed = 3\n") == "gfm.speed");
    CHECK(error_path(std::string(kMinimal) + "\n[extra]\na = 1\n") == "extra");
    CHECK(error_path(std::string(kMinimal) + "\n[gfm]\ninertia = fast\n") == "gfm.inertia");
    CHECK(error_path(std::string(kMinimal) + "\n[run]\nt_end = 1\n") == "run.t_end");
    std::string bad_bus = kMinimal;
    bad_bus.replace(bad_bus.find("bus = 4"), 7, "bus = 7");
    CHECK(error_path(bad_bus) == "fault.bus");
}

TEST_CASE("serialize and parse round trip") {
    for (const char* name : {"reference.ini", "gfl_dominant.ini", "short_fault.ini", "no_fault.ini"}) {
        const auto a = parse_scenario(testing::scenario_path(name));
        const auto text = serialize(a);
        const auto b = parse_scenario_text(text);
        CHECK(serialize(b) == text);
        CHECK(b.gfm.params.inertia == a.gfm.params.inertia);
        CHECK(b.gfl.k_phi_lvrt == a.gfl.k_phi_lvrt);
        CHECK(b.fault.enabled == a.fault.enabled);
        CHECK(b.run.grid.x_min == a.run.grid.x_min);
        CHECK(b.network.branches.size() == a.network.branches.size());
        for (std::size_t k = 0; k < a.network.branches.size(); ++k) {
            CHECK(b.network.branches[k].impedance == a.network.branches[k].impedance);
        }
    }
}

TEST_CASE("shipped scenario matches the hand-built system") {
    const auto s = parse_scenario(testing::scenario_path("reference.ini"));
    const auto m = testing::reference_model();
    REQUIRE(s.network.branches.size() == m.branches.size());
    for (std::size_t k = 0; k < m.branches.size(); ++k) {
        CHECK(s.network.branches[k].impedance == m.branches[k].impedance);
    }
    CHECK(s.defaults_applied.empty());
    CHECK(s.fault.resistance_ohm == 1.0);
    CHECK(s.fault.clear == 1.2);
}
