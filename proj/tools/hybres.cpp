#include <exception>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "hybres/error.hpp"
#include "hybres/run.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Hybrid GFM/GFL transient stability analysis"};
    app.set_version_flag("--version", hybres::run::kVersion);
    app.require_subcommand(1);

    const std::map<std::string, std::string> about{
        {"regions", "Control-combination maps on the faulted and post-fault networks"},
        {"equilibria", "SEP/UEP sets and potential-force fields"},
        {"simulate", "Integrate the fault scenario and record mode-switch events"},
        {"damping-map", "GFL damping-coefficient fields and their zero contours"},
        {"classify", "Simulate and classify the dominant instability"},
        {"energy", "Simulate and decompose kinetic, potential and damping energy"},
    };

    std::string scenario;
    hybres::run::Options options;
    for (const auto& name : hybres::run::subcommands()) {
        auto* sub = app.add_subcommand(name, about.at(name));
        sub->add_option("--scenario", scenario, "Scenario INI file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", options.out_dir, "Output directory (overrides run.output)");
        sub->add_flag("!--no-svg", options.svg, "Skip SVG figures");
        sub->add_option("--threads", options.threads, "Worker threads (default: HYBRES_THREADS or all cores)")
            ->check(CLI::NonNegativeNumber);
    }
    CLI11_PARSE(app, argc, argv);

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        return hybres::run::run_subcommand(name, scenario, options, std::cerr);
    } catch (const hybres::ScenarioError& e) {
        std::cerr << "scenario error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
