#include "hybres/run.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "hybres/artifacts.hpp"
#include "hybres/error.hpp"

namespace hybres::run {

namespace {

using json = nlohmann::ordered_json;
using artifacts::num;
using network::Stage;

const std::vector<std::string> kPalette{"#ffffff", "#4e79a7", "#59a14f", "#9c755f", "#e15759", "#f28e2b", "#edc948"};
const std::vector<std::string> kLegend{"none", "n=1", "n=2", "n=3", "n=4", "n=5", "n=6"};

json phasor_json(const devices::CurrentPhasor& c) { return json{{"magnitude", c.magnitude}, {"angle", c.angle}}; }

json resolved_json(const Prepared& p) {
    const auto& d = p.params.device;
    json j;
    j["gfl"] = {{"i0", d.gfl.i0},
                {"phi0", d.gfl.phi0},
                {"i_max", d.gfl.i_max},
                {"k_phi_lvrt", d.gfl.k_phi_lvrt},
                {"k_phi_hvrt", d.gfl.k_phi_hvrt}};
    j["gfm"] = {{"i_nominal", p.op.gfm_nominal_current},
                {"i_max", d.gfm.i_max},
                {"i_saturated", d.gfm.i_saturated},
                {"effective_inertia", p.params.effective_inertia()},
                {"effective_damping", p.params.effective_damping()}};
    j["sep1_prefault"] = {{"delta12", p.op.sep1.delta12},
                          {"delta13", p.op.sep1.delta13},
                          {"p_fm", p.op.sep1.state.p_fm},
                          {"q_fm", p.op.sep1.state.q_fm},
                          {"u_fm", p.op.sep1.state.u_fm},
                          {"u_fl", p.op.sep1.state.u_fl},
                          {"u_fl_q", p.op.sep1.state.u_fl_q}};
    j["saturation_preset"] = {{"fault", phasor_json(p.fault_saturation)},
                              {"postfault", phasor_json(p.postfault_saturation)}};
    return j;
}

std::vector<Polyline> to_polylines(const std::vector<analysis::ContourLine>& lines) {
    std::vector<Polyline> out;
    for (const auto& line : lines) {
        Polyline pl;
        for (const auto& c : line) pl.push_back({c.delta12, c.delta13});
        out.push_back(std::move(pl));
    }
    return out;
}

std::string matrix_csv(const Eigen::MatrixXcd& m) {
    std::ostringstream o;
    network::write_matrix_csv(o, m);
    return o.str();
}

class Runner {
  public:
    Runner(std::string name, Prepared prepared, artifacts::OutputDir& out, const Options& opt, std::ostream& log)
        : name_(std::move(name)), p_(std::move(prepared)), out_(out), opt_(opt), log_(log),
          threads_(opt.threads > 0 ? opt.threads : thread_count_from_env()) {}

    // Returns false when the model broke down; diagnostic_ is then set.
    bool execute();

    json diagnostic_;
    json summary_;

  private:
    void regions();
    void equilibria();
    bool simulate_cmd();
    void damping_map();
    bool classify();
    bool energy();

    bool write_trajectory(const dynamics::Trajectory& tr);
    [[nodiscard]] std::vector<Stage> map_stages() const { return {Stage::Fault, Stage::Postfault}; }
    [[nodiscard]] algebraic::RegionMap region_map(Stage stage) const {
        return algebraic::compute_region_map(p_.scenario.run.grid, p_.nets.at(stage), p_.params.device,
                                             p_.saturation(stage), threads_);
    }
    void write_sets(const analysis::EquilibriumSets& sets, const std::string& tag, const GridSpec& grid,
                    const algebraic::RegionMap& map);

    std::string name_;
    Prepared p_;
    artifacts::OutputDir& out_;
    const Options& opt_;
    std::ostream& log_;
    int threads_;
};

bool Runner::execute() {
    if (name_ == "regions") {
        regions();
        return true;
    }
    if (name_ == "equilibria") {
        equilibria();
        return true;
    }
    if (name_ == "simulate") return simulate_cmd();
    if (name_ == "damping-map") {
        damping_map();
        return true;
    }
    if (name_ == "classify") return classify();
    if (name_ == "energy") return energy();
    throw InvalidInput("unknown subcommand '" + name_ + "'");
}

void Runner::regions() {
    for (Stage stage : map_stages()) {
        const std::string tag = network::to_string(stage);
        const auto map = region_map(stage);
        const auto& g = map.grid;
        std::ostringstream o;
        o << "delta12,delta13,n,multiplicity,consistent_mask\n";
        std::array<std::size_t, 7> counts{};
        std::size_t ambiguous = 0;
        for (std::size_t j = 0; j < g.ny; ++j) {
            for (std::size_t i = 0; i < g.nx; ++i) {
                const auto k = g.index(i, j);
                o << num(g.x(i)) << ',' << num(g.y(j)) << ',' << map.combination[k] << ','
                  << static_cast<int>(map.multiplicity[k]) << ',' << static_cast<int>(map.consistent_mask[k]) << '\n';
                ++counts[map.combination[k]];
                if (map.multiplicity[k] > 1) ++ambiguous;
            }
        }
        out_.write("regions_" + tag + ".csv", o.str());
        std::ostringstream b;
        b << "n,line,delta12,delta13\n";
        for (int n = 1; n <= 6; ++n) {
            const auto& lines = map.boundaries[n - 1];
            for (std::size_t l = 0; l < lines.size(); ++l) {
                for (const auto& pt : lines[l]) b << n << ',' << l << ',' << num(pt.x) << ',' << num(pt.y) << '\n';
            }
        }
        out_.write("region_boundaries_" + tag + ".csv", b.str());
        out_.write("reduced_admittance_" + tag + ".csv", matrix_csv(p_.nets.at(stage).y_reduced));
        if (opt_.svg) {
            std::vector<artifacts::LineSet> lines;
            for (int n = 1; n <= 6; ++n) lines.push_back({map.boundaries[n - 1], "#000000", 0.8});
            out_.write("regions_" + tag + ".svg",
                       artifacts::category_svg(g, map.combination, kPalette, kLegend, lines,
                                               "Control combinations, " + tag + " network"));
        }
        json c;
        for (int n = 0; n <= 6; ++n) c[std::to_string(n)] = counts[n];
        summary_[tag] = {{"cells", c}, {"multi_consistent_cells", ambiguous}};
        log_ << tag << ": region map " << g.nx << "x" << g.ny << " computed\n";
    }
}

void Runner::write_sets(const analysis::EquilibriumSets& sets, const std::string& tag, const GridSpec& grid,
                        const algebraic::RegionMap& map) {
    std::ostringstream o;
    o << "branch,line,delta12,delta13,n,residual,slope\n";
    for (int b = 0; b < 5; ++b) {
        const auto branch = static_cast<analysis::Branch>(b);
        const auto& lines = sets.of(branch);
        for (std::size_t l = 0; l < lines.size(); ++l) {
            for (const auto& c : lines[l]) {
                o << analysis::to_string(branch) << ',' << l << ',' << num(c.delta12) << ',' << num(c.delta13) << ','
                  << c.combination << ',' << num(c.residual) << ',' << num(c.slope) << '\n';
            }
        }
    }
    out_.write("equilibria_" + tag + ".csv", o.str());
    std::ostringstream s;
    s << "kind,delta12,delta13,n,p_fm,u_fl_q,selected\n";
    auto put = [&](const char* kind, const std::vector<analysis::EquilibriumPoint>& pts,
                   const std::optional<analysis::EquilibriumPoint>& chosen) {
        for (const auto& e : pts) {
            const bool sel = chosen && chosen->delta12 == e.delta12 && chosen->delta13 == e.delta13;
            s << kind << ',' << num(e.delta12) << ',' << num(e.delta13) << ',' << e.state.combination.index() << ','
              << num(e.state.p_fm) << ',' << num(e.state.u_fl_q) << ',' << (sel ? 1 : 0) << '\n';
        }
    };
    put("sep1", sets.sep1_candidates, sets.sep1);
    put("sep2", sets.sep2_candidates, sets.sep2);
    out_.write("seps_" + tag + ".csv", s.str());

    if (opt_.svg) {
        std::vector<artifacts::LineSet> lines{
            {to_polylines(sets.of(analysis::Branch::FmSep1)), "#1f77b4", 2.0},
            {to_polylines(sets.of(analysis::Branch::FmSep2)), "#17becf", 2.0},
            {to_polylines(sets.of(analysis::Branch::FmUep)), "#d62728", 2.0},
            {to_polylines(sets.of(analysis::Branch::FlSep)), "#2ca02c", 2.0},
            {to_polylines(sets.of(analysis::Branch::FlUep)), "#ff7f0e", 2.0},
        };
        out_.write("equilibria_" + tag + ".svg",
                   artifacts::category_svg(grid, map.combination, kPalette, kLegend, lines,
                                           "SEP/UEP sets, " + tag + " network"));
    }
    json seps;
    if (sets.sep1) seps["sep1"] = {{"delta12", sets.sep1->delta12}, {"delta13", sets.sep1->delta13}};
    if (sets.sep2) seps["sep2"] = {{"delta12", sets.sep2->delta12}, {"delta13", sets.sep2->delta13}};
    if (!sets.sep1 && !sets.sep2) seps["diagnostic"] = "SEP absent: no intersection of GFM and GFL SEP branches";
    seps["dropped_crossings"] = sets.dropped_crossings;
    summary_[tag] = seps;
}

void Runner::equilibria() {
    for (Stage stage : map_stages()) {
        const std::string tag = network::to_string(stage);
        const auto map = region_map(stage);
        const auto& net = p_.nets.at(stage);
        const auto sets = analysis::equilibrium_sets(map, net, p_.params.device, p_.saturation(stage),
                                                     p_.op.sep1.delta12, p_.op.sep1.delta13);
        write_sets(sets, tag, map.grid, map);
        const auto fields = analysis::compute_fields(map, net, p_.params.device, p_.op.sep1.delta12,
                                                     p_.op.sep1.delta13, threads_);
        const auto& g = map.grid;
        std::ostringstream o;
        o << "delta12,delta13,n,f_fm_p,f_fl_p,braking_fm,braking_fl\n";
        for (std::size_t j = 0; j < g.ny; ++j) {
            for (std::size_t i = 0; i < g.nx; ++i) {
                const auto k = g.index(i, j);
                o << num(g.x(i)) << ',' << num(g.y(j)) << ',' << fields.combination[k] << ',' << num(fields.f_fm_p[k])
                  << ',' << num(fields.f_fl_p[k]) << ',' << static_cast<int>(fields.braking_fm[k]) << ','
                  << static_cast<int>(fields.braking_fl[k]) << '\n';
            }
        }
        out_.write("forces_" + tag + ".csv", o.str());
        if (opt_.svg) {
            out_.write("force_fm_" + tag + ".svg",
                       artifacts::scalar_svg(g, fields.f_fm_p, &fields.braking_fm,
                                             {{to_polylines(sets.of(analysis::Branch::FmSep1)), "#000000", 1.5},
                                              {to_polylines(sets.of(analysis::Branch::FmSep2)), "#000000", 1.5},
                                              {to_polylines(sets.of(analysis::Branch::FmUep)), "#00aa00", 1.5}},
                                             "GFM potential force, " + tag + " network"));
            out_.write("force_fl_" + tag + ".svg",
                       artifacts::scalar_svg(g, fields.f_fl_p, &fields.braking_fl,
                                             {{to_polylines(sets.of(analysis::Branch::FlSep)), "#000000", 1.5},
                                              {to_polylines(sets.of(analysis::Branch::FlUep)), "#00aa00", 1.5}},
                                             "GFL potential force, " + tag + " network"));
        }
        log_ << tag << ": equilibrium sets extracted\n";
    }
}

bool Runner::write_trajectory(const dynamics::Trajectory& tr) {
    std::ostringstream t;
    dynamics::write_trajectory_csv(t, tr);
    out_.write("trajectory.csv", t.str());
    std::ostringstream e;
    dynamics::write_events_csv(e, tr);
    out_.write("events.csv", e.str());
    std::ostringstream ph;
    ph << "t,gfm_phase,gfl_phase\n";
    std::vector<double> ts;
    std::vector<double> d12;
    std::vector<double> gfm_phase;
    std::vector<double> d13;
    for (const auto& s : tr.samples) {
        const double a = wrap_angle(s.algebraic.u_fm_phase);
        const double b = wrap_angle(std::arg(s.algebraic.v_fl));
        ph << num(s.t) << ',' << num(a) << ',' << num(b) << '\n';
        ts.push_back(s.t);
        d12.push_back(s.state.delta12);
        d13.push_back(s.state.delta13);
        gfm_phase.push_back(a);
    }
    out_.write("pcc_phase.csv", ph.str());
    if (opt_.svg) {
        out_.write("trajectory_angles.svg",
                   artifacts::series_svg(ts, {{"delta12", d12, "#1f77b4"}, {"delta13", d13, "#d62728"}},
                                         "Virtual angles", "t (s)"));
        out_.write("pcc_phase.svg",
                   artifacts::series_svg(ts, {{"GFM PCC phase", gfm_phase, "#1f77b4"}}, "GFM PCC voltage phase",
                                         "t (s)"));
    }
    summary_["status"] = dynamics::to_string(tr.status);
    summary_["events"] = tr.events.size();
    summary_["held_exits"] = tr.held_exits;
    if (!tr.completed()) {
        diagnostic_ = {{"error", dynamics::to_string(tr.status)},
                       {"message", tr.diagnostic},
                       {"t_last", tr.samples.empty() ? 0.0 : tr.samples.back().t}};
        return false;
    }
    return true;
}

bool Runner::simulate_cmd() {
    const auto tr = simulate(p_);
    log_ << "simulation " << dynamics::to_string(tr.status) << " with " << tr.events.size() << " events\n";
    return write_trajectory(tr);
}

void Runner::damping_map() {
    for (Stage stage : map_stages()) {
        const std::string tag = network::to_string(stage);
        const auto map = region_map(stage);
        const auto fields = analysis::compute_fields(map, p_.nets.at(stage), p_.params.device, p_.op.sep1.delta12,
                                                     p_.op.sep1.delta13, threads_);
        const auto& g = map.grid;
        std::ostringstream o;
        o << "delta12,delta13,n,d_fl_12,d_fl_13\n";
        for (std::size_t j = 0; j < g.ny; ++j) {
            for (std::size_t i = 0; i < g.nx; ++i) {
                const auto k = g.index(i, j);
                o << num(g.x(i)) << ',' << num(g.y(j)) << ',' << fields.combination[k] << ','
                  << num(fields.d_fl_12[k]) << ',' << num(fields.d_fl_13[k]) << '\n';
            }
        }
        out_.write("damping_" + tag + ".csv", o.str());
        std::ostringstream z;
        z << "field,line,delta12,delta13\n";
        auto put = [&z](const char* field, const std::vector<Polyline>& lines) {
            for (std::size_t l = 0; l < lines.size(); ++l) {
                for (const auto& pt : lines[l]) z << field << ',' << l << ',' << num(pt.x) << ',' << num(pt.y) << '\n';
            }
        };
        put("d_fl_12", fields.d12_zero);
        put("d_fl_13", fields.d13_zero);
        out_.write("damping_zero_" + tag + ".csv", z.str());
        if (opt_.svg) {
            out_.write("damping_d12_" + tag + ".svg",
                       artifacts::scalar_svg(g, fields.d_fl_12, nullptr, {{fields.d12_zero, "#000000", 1.5}},
                                             "D_FL,12, " + tag + " network"));
            out_.write("damping_d13_" + tag + ".svg",
                       artifacts::scalar_svg(g, fields.d_fl_13, nullptr, {{fields.d13_zero, "#000000", 1.5}},
                                             "D_FL,13, " + tag + " network"));
        }
        log_ << tag << ": damping field computed\n";
    }
}

bool Runner::classify() {
    const auto tr = simulate(p_);
    const bool ok = write_trajectory(tr);
    const auto sets = postfault_sets(p_, threads_);
    double sep12 = p_.op.sep1.delta12;
    double sep13 = p_.op.sep1.delta13;
    if (sets.sep1) {
        sep12 = sets.sep1->delta12;
        sep13 = sets.sep1->delta13;
    }
    analysis::ClassifierOptions copt;
    copt.band = p_.scenario.run.band;
    copt.capture_radius = p_.scenario.run.capture_radius;
    copt.kinetic_threshold = p_.scenario.run.kinetic_threshold;
    copt.tail_fraction = p_.scenario.run.tail_fraction;
    const double t_from = p_.scenario.fault.enabled ? p_.scenario.fault.clear : 0.0;
    json verdict;
    try {
        const auto rep = analysis::dominant_instability(tr, sets, sep12, sep13, p_.params, copt, t_from);
        verdict = {{"flag", analysis::to_string(rep.verdict)},
                   {"t", rep.t},
                   {"distance_fm", std::isfinite(rep.distance_fm) ? json(rep.distance_fm) : json(nullptr)},
                   {"distance_fl", std::isfinite(rep.distance_fl) ? json(rep.distance_fl) : json(nullptr)},
                   {"band", copt.band},
                   {"trajectory_status", dynamics::to_string(tr.status)}};
    } catch (const analysis::AmbiguousVerdict& e) {
        verdict = {{"flag", "ambiguous"},
                   {"t", e.t},
                   {"distance_fm", e.distance_fm},
                   {"distance_fl", e.distance_fl},
                   {"band", copt.band},
                   {"trajectory_status", dynamics::to_string(tr.status)}};
    }
    out_.write("verdict.json", verdict.dump(2) + "\n");
    summary_["verdict"] = verdict["flag"];
    log_ << "verdict: " << verdict["flag"].get<std::string>() << "\n";
    return ok;
}

bool Runner::energy() {
    const auto tr = simulate(p_);
    const bool ok = write_trajectory(tr);
    const auto ledger = analysis::energy_decompose(tr, p_.params);
    std::ostringstream o;
    o << "t,fm_k,fm_p,fm_d,fm_residual,fl_k,fl_p,fl_d,fl_residual\n";
    std::vector<double> ts;
    std::vector<double> fmk;
    std::vector<double> flk;
    for (const auto& e : ledger.samples) {
        o << num(e.t) << ',' << num(e.fm_k) << ',' << num(e.fm_p) << ',' << num(e.fm_d) << ',' << num(e.fm_residual())
          << ',' << num(e.fl_k) << ',' << num(e.fl_p) << ',' << num(e.fl_d) << ',' << num(e.fl_residual()) << '\n';
        ts.push_back(e.t);
        fmk.push_back(e.fm_k);
        flk.push_back(e.fl_k);
    }
    out_.write("energy.csv", o.str());
    if (opt_.svg) {
        out_.write("energy.svg", artifacts::series_svg(ts, {{"E_FM,k", fmk, "#1f77b4"}, {"E_FL,k", flk, "#d62728"}},
                                                       "Kinetic energies", "t (s)"));
    }
    summary_["max_fm_residual"] = ledger.max_fm_residual;
    summary_["max_fl_residual"] = ledger.max_fl_residual;
    return ok;
}

}  // namespace

dynamics::IntegrationOptions Prepared::integration() const {
    dynamics::IntegrationOptions o;
    o.dt = scenario.run.dt;
    o.t_end = scenario.run.t_end;
    o.max_events_per_step = scenario.run.max_events_per_step;
    return o;
}

dynamics::DynamicState Prepared::initial_state() const { return {op.sep1.delta12, 0.0, op.sep1.delta13, 0.0}; }

const devices::CurrentPhasor& Prepared::saturation(Stage stage) const {
    return stage == Stage::Fault ? fault_saturation : postfault_saturation;
}

Prepared prepare(const scenario::Scenario& s) {
    scenario::validate(s);
    Prepared p;
    p.scenario = s;
    p.nets = dynamics::build_stage_networks(s.network, s.fault);
    auto& d = p.params.device;
    d.gfm = s.gfm.params;
    d.gfl = s.gfl.params;
    d.grid_voltage = s.network.grid_voltage;
    p.params.time_base = s.gfm.time_base;
    p.params.base_frequency_hz = s.network.base.frequency_hz;

    analysis::OperatingPointRules rules;
    rules.gfl_limit_ratio = s.gfl.max_current_ratio;
    rules.gfm_limit_ratio = s.gfm.max_current_ratio;
    rules.saturation_ratio = s.gfm.saturation_ratio;
    rules.hvrt_clamp_voltage = s.gfl.hvrt_clamp_voltage;
    if (s.gfl.i0 || s.gfl.phi0) {
        rules.derive_gfl_nominal = false;
        d.gfl.i0 = s.gfl.i0.value_or(std::hypot(d.gfl.p_ref, d.gfl.q_ref));
        d.gfl.phi0 = s.gfl.phi0.value_or(-std::atan2(d.gfl.q_ref, d.gfl.p_ref));
    }
    if (s.gfl.i_max) {
        rules.derive_gfl_limit = false;
        d.gfl.i_max = *s.gfl.i_max;
    }
    if (s.gfl.k_phi_lvrt) {
        rules.derive_k_phi_lvrt = false;
        d.gfl.k_phi_lvrt = *s.gfl.k_phi_lvrt;
    }
    if (s.gfl.k_phi_hvrt) {
        rules.derive_k_phi_hvrt = false;
        d.gfl.k_phi_hvrt = *s.gfl.k_phi_hvrt;
    }
    if (s.gfm.i_max) {
        rules.derive_gfm_limit = false;
        d.gfm.i_max = *s.gfm.i_max;
    }
    p.op = analysis::resolve_operating_point(p.nets.prefault, d, rules);
    p.fault_saturation = analysis::reference_saturation(p.nets.fault, p.op.sep1, d);
    p.postfault_saturation = analysis::reference_saturation(p.nets.postfault, p.op.sep1, d);
    return p;
}

dynamics::Trajectory simulate(const Prepared& p) {
    return dynamics::integrate(p.initial_state(), p.nets, p.scenario.fault, p.params, p.integration(),
                               p.op.sep1.state.combination);
}

analysis::EquilibriumSets postfault_sets(const Prepared& p, int threads) {
    const auto& net = p.nets.postfault;
    const auto map = algebraic::compute_region_map(p.scenario.run.grid, net, p.params.device, p.postfault_saturation,
                                                   threads);
    return analysis::equilibrium_sets(map, net, p.params.device, p.postfault_saturation, p.op.sep1.delta12,
                                      p.op.sep1.delta13);
}

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"regions", "equilibria", "simulate", "damping-map", "classify",
                                                "energy"};
    return names;
}

int run_subcommand(const std::string& name, const std::string& scenario_path, const Options& options,
                   std::ostream& log) {
    const auto s = scenario::parse_scenario(scenario_path);
    scenario::validate(s);
    artifacts::OutputDir out(options.out_dir.empty() ? s.run.output : options.out_dir);
    json manifest;
    manifest["tool"] = "hybres";
    manifest["version"] = kVersion;
    manifest["subcommand"] = name;
    manifest["scenario"] = scenario::serialize(s);
    manifest["defaults_applied"] = s.defaults_applied;
    for (const auto& d : s.defaults_applied) log << "default: " << d << "\n";
    int status = 0;
    json diagnostic;
    try {
        Prepared p = prepare(s);
        manifest["resolved"] = resolved_json(p);
        Runner r(name, std::move(p), out, options, log);
        if (!r.execute()) {
            status = 2;
            diagnostic = r.diagnostic_;
        }
        manifest["summary"] = r.summary_;
    } catch (const Error& e) {
        status = 3;
        diagnostic = {{"error", "model"}, {"message", e.what()}};
    }
    if (status != 0) {
        diagnostic["subcommand"] = name;
        out.write("diagnostic.json", diagnostic.dump(2) + "\n");
        log << "error: " << diagnostic["message"].get<std::string>() << "\n";
    }
    manifest["exit_status"] = status;
    json files = json::array();
    for (const auto& f : out.files()) files.push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    manifest["files"] = files;
    out.write("manifest_" + name + ".json", manifest.dump(2) + "\n");
    return status;
}

}  // namespace hybres::run
