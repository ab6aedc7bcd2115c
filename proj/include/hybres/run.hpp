#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hybres/analysis.hpp"
#include "hybres/dynamics.hpp"
#include "hybres/scenario.hpp"

namespace hybres::run {

inline constexpr const char* kVersion = "0.1.0";

/// A scenario with its networks built and every derived parameter resolved.
struct Prepared {
    scenario::Scenario scenario;
    dynamics::StageNetworks nets;
    dynamics::DynamicsParams params;
    analysis::OperatingPoint op;
    devices::CurrentPhasor fault_saturation;      // preset seen when saturating at SEP1 on the fault network
    devices::CurrentPhasor postfault_saturation;  // same on the post-fault network

    [[nodiscard]] dynamics::IntegrationOptions integration() const;
    [[nodiscard]] dynamics::DynamicState initial_state() const;
    [[nodiscard]] const devices::CurrentPhasor& saturation(network::Stage stage) const;
};

Prepared prepare(const scenario::Scenario& s);

dynamics::Trajectory simulate(const Prepared& p);

/// Equilibrium sets on the post-fault network, selecting SEPs near the pre-fault SEP1.
analysis::EquilibriumSets postfault_sets(const Prepared& p, int threads);

struct Options {
    std::string out_dir;  // empty: the scenario's run.output
    bool svg = true;
    int threads = 0;      // 0: HYBRES_THREADS or hardware concurrency
};

const std::vector<std::string>& subcommands();

/// Runs one subcommand and writes its artifacts plus a manifest. Returns the
/// process exit status; diagnostics go to diagnostic.json and `log`.
int run_subcommand(const std::string& name, const std::string& scenario_path, const Options& options,
                   std::ostream& log);

}  // namespace hybres::run
