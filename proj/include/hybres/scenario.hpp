#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hybres/devices.hpp"
#include "hybres/dynamics.hpp"
#include "hybres/grid.hpp"
#include "hybres/network.hpp"

namespace hybres::scenario {

struct GfmSection {
    devices::GfmParams params;
    double max_current_ratio = 1.5;         // I_FM,max / I_FM,0
    std::optional<double> i_max;            // absolute override of the ratio
    double saturation_ratio = 1.0;          // I_sa / I_FM,max
    dynamics::SwingTimeBase time_base = dynamics::SwingTimeBase::Seconds;
};

struct GflSection {
    devices::GflParams params;
    double max_current_ratio = 1.2;         // I_FL,max / I_FL,0
    std::optional<double> i0;               // otherwise S_ref / U_FL at SEP1
    std::optional<double> phi0;             // otherwise -atan2(Q_ref, P_ref)
    std::optional<double> i_max;
    std::optional<double> k_phi_lvrt;       // otherwise reaches -pi/2 at zero voltage
    std::optional<double> k_phi_hvrt;       // otherwise reaches +pi/2 at hvrt_clamp_voltage
    double hvrt_clamp_voltage = 1.3;
};

struct RunSection {
    double dt = 1e-4;
    double t_end = 3.0;
    GridSpec grid;
    double band = 0.02;
    double capture_radius = 0.05;
    double kinetic_threshold = 1e-4;
    double tail_fraction = 0.1;
    std::string output = "out";
    int max_events_per_step = 100;
};

struct Scenario {
    network::NetworkModel network;
    GfmSection gfm;
    GflSection gfl;
    network::FaultStage fault;
    RunSection run;
    std::vector<std::string> defaults_applied;  // keys filled from built-in defaults
};

/// Reads a sectioned key/value file. Throws ScenarioError naming the key.
Scenario parse_scenario(const std::string& path);
Scenario parse_scenario_text(const std::string& text);

/// Canonical text form; parse_scenario_text(serialize(s)) reproduces s.
std::string serialize(const Scenario& s);

/// Cross-field checks; throws ScenarioError with the field path.
void validate(const Scenario& s);

}  // namespace hybres::scenario
