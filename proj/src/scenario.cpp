#include "hybres/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hybres/error.hpp"

namespace hybres::scenario {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "pi") return std::numbers::pi;
    if (v == "-pi") return -std::numbers::pi;
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ScenarioError(key, "expected a number, got '" + v + "'");
    }
}

std::vector<double> parse_numbers(const std::string& key, const std::string& raw, std::size_t count) {
    std::istringstream in(raw);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(parse_number(key, tok));
    if (out.size() != count) {
        throw ScenarioError(key, "expected " + std::to_string(count) + " numbers, got '" + trim(raw) + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw ScenarioError(key, "expected true or false, got '" + v + "'");
}

std::string fmt(double v) {
    if (v == std::numbers::pi) return "pi";
    if (v == -std::numbers::pi) return "-pi";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Reads a section while tracking which keys were consumed.
class Section {
  public:
    Section(const pt::ptree* tree, std::string name, std::vector<std::string>& defaults)
        : tree_(tree), name_(std::move(name)), defaults_(defaults) {}

    [[nodiscard]] std::string path(const std::string& key) const { return name_ + "." + key; }
    [[nodiscard]] bool present() const { return tree_ != nullptr; }

    std::optional<std::string> raw(const std::string& key) {
        used_.insert(key);
        if (tree_ == nullptr) return std::nullopt;
        const auto v = tree_->get_optional<std::string>(key);
        if (!v) return std::nullopt;
        return *v;
    }

    void number(const std::string& key, double& target) {
        if (auto v = raw(key)) {
            target = parse_number(path(key), *v);
        } else {
            defaults_.push_back(path(key) + " = " + fmt(target));
        }
    }

    void optional_number(const std::string& key, std::optional<double>& target) {
        if (auto v = raw(key)) target = parse_number(path(key), *v);
    }

    double required(const std::string& key) {
        auto v = raw(key);
        if (!v) throw ScenarioError(path(key), "missing required key");
        return parse_number(path(key), *v);
    }

    void integer(const std::string& key, std::size_t& target) {
        double d = static_cast<double>(target);
        number(key, d);
        if (d < 0.0 || d != std::floor(d)) throw ScenarioError(path(key), "expected a non-negative integer");
        target = static_cast<std::size_t>(d);
    }

    void flag(const std::string& key, bool& target) {
        if (auto v = raw(key)) {
            target = parse_bool(path(key), *v);
        } else {
            defaults_.push_back(path(key) + " = " + (target ? "true" : "false"));
        }
    }

    void text(const std::string& key, std::string& target) {
        if (auto v = raw(key)) {
            target = trim(*v);
        } else {
            defaults_.push_back(path(key) + " = " + target);
        }
    }

    [[nodiscard]] std::vector<std::string> keys() const {
        std::vector<std::string> out;
        if (tree_ != nullptr) {
            for (const auto& kv : *tree_) out.push_back(kv.first);
        }
        return out;
    }

    void mark_used(const std::string& key) { used_.insert(key); }

    void reject_unknown() const {
        for (const auto& k : keys()) {
            if (!used_.contains(k)) throw ScenarioError(path(k), "unknown key");
        }
    }

  private:
    const pt::ptree* tree_;
    std::string name_;
    std::vector<std::string>& defaults_;
    std::set<std::string> used_;
};

network::BusKind parse_bus_kind(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "grid") return network::BusKind::GridSource;
    if (v == "gfm") return network::BusKind::Gfm;
    if (v == "gfl") return network::BusKind::Gfl;
    if (v == "passive") return network::BusKind::Passive;
    throw ScenarioError(key, "bus kind must be grid, gfm, gfl or passive, got '" + v + "'");
}

const char* bus_kind_name(network::BusKind k) {
    switch (k) {
        case network::BusKind::GridSource:
            return "grid";
        case network::BusKind::Gfm:
            return "gfm";
        case network::BusKind::Gfl:
            return "gfl";
        case network::BusKind::Passive:
            return "passive";
    }
    return "passive";
}

int parse_id(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const int id = std::stoi(text, &used);
        if (used != text.size() || id <= 0) throw std::invalid_argument(text);
        return id;
    } catch (const std::exception&) {
        throw ScenarioError(key, "malformed bus id '" + text + "'");
    }
}

void read_network(Section& sec, Scenario& s) {
    if (!sec.present()) throw ScenarioError("network", "missing required section");
    auto& n = s.network;
    sec.number("base_power_mw", n.base.power_mw);
    sec.number("base_voltage_kv", n.base.voltage_kv);
    sec.number("base_frequency_hz", n.base.frequency_hz);
    sec.number("u_sys", n.grid_voltage);
    std::map<int, network::BusKind> buses;
    std::map<std::pair<int, int>, Complex> branches;
    std::map<int, Complex> shunts;
    for (const auto& key : sec.keys()) {
        if (key.rfind("bus_", 0) == 0) {
            sec.mark_used(key);
            buses[parse_id(sec.path(key), key.substr(4))] = parse_bus_kind(sec.path(key), *sec.raw(key));
        } else if (key.rfind("branch_", 0) == 0) {
            sec.mark_used(key);
            const std::string rest = key.substr(7);
            const auto us = rest.find('_');
            if (us == std::string::npos) throw ScenarioError(sec.path(key), "expected branch_<from>_<to>");
            const int a = parse_id(sec.path(key), rest.substr(0, us));
            const int b = parse_id(sec.path(key), rest.substr(us + 1));
            const auto z = parse_numbers(sec.path(key), *sec.raw(key), 2);
            branches[{a, b}] = Complex(z[0], z[1]);
        } else if (key.rfind("shunt_", 0) == 0) {
            sec.mark_used(key);
            const auto y = parse_numbers(sec.path(key), *sec.raw(key), 2);
            shunts[parse_id(sec.path(key), key.substr(6))] = Complex(y[0], y[1]);
        }
    }
    if (buses.empty()) throw ScenarioError("network.bus_<id>", "missing required key");
    if (branches.empty()) throw ScenarioError("network.branch_<from>_<to>", "missing required key");
    for (const auto& [id, kind] : buses) n.buses.push_back({id, kind});
    for (const auto& [ends, z] : branches) n.branches.push_back({ends.first, ends.second, z});
    for (const auto& [bus, y] : shunts) n.shunts.push_back({bus, y});
    sec.reject_unknown();
}

void read_gfm(Section& sec, GfmSection& g) {
    auto& p = g.params;
    sec.number("p_ref", p.p_ref);
    sec.number("q_ref", p.q_ref);
    sec.number("u_set", p.u_set);
    sec.number("inertia", p.inertia);
    sec.number("damping", p.damping);
    sec.number("kq", p.kq);
    sec.number("max_current_ratio", g.max_current_ratio);
    sec.optional_number("i_max", g.i_max);
    sec.number("saturation_ratio", g.saturation_ratio);
    std::string policy = p.angle_policy == devices::SaturationAnglePolicy::Hold ? "hold" : "fixed";
    sec.text("saturation_angle", policy);
    if (policy == "hold") {
        p.angle_policy = devices::SaturationAnglePolicy::Hold;
    } else if (policy == "fixed") {
        p.angle_policy = devices::SaturationAnglePolicy::Fixed;
    } else {
        throw ScenarioError(sec.path("saturation_angle"), "expected hold or fixed, got '" + policy + "'");
    }
    sec.number("fixed_angle", p.fixed_angle);
    std::string base = dynamics::to_string(g.time_base);
    sec.text("time_base", base);
    if (base == "seconds") {
        g.time_base = dynamics::SwingTimeBase::Seconds;
    } else if (base == "per-unit") {
        g.time_base = dynamics::SwingTimeBase::PerUnit;
    } else {
        throw ScenarioError(sec.path("time_base"), "expected seconds or per-unit, got '" + base + "'");
    }
    sec.reject_unknown();
}

void read_gfl(Section& sec, GflSection& g) {
    auto& p = g.params;
    sec.number("p_ref", p.p_ref);
    sec.number("q_ref", p.q_ref);
    sec.number("kp_pll", p.kp_pll);
    sec.number("ki_pll", p.ki_pll);
    sec.number("k_i_lvrt", p.k_i_lvrt);
    sec.number("k_i_hvrt", p.k_i_hvrt);
    sec.number("u_lv", p.u_lv);
    sec.number("u_hv", p.u_hv);
    sec.number("max_current_ratio", g.max_current_ratio);
    sec.optional_number("i0", g.i0);
    sec.optional_number("phi0", g.phi0);
    sec.optional_number("i_max", g.i_max);
    sec.optional_number("k_phi_lvrt", g.k_phi_lvrt);
    sec.optional_number("k_phi_hvrt", g.k_phi_hvrt);
    sec.number("hvrt_clamp_voltage", g.hvrt_clamp_voltage);
    sec.reject_unknown();
}

void read_fault(Section& sec, network::FaultStage& f) {
    if (!sec.present()) throw ScenarioError("fault", "missing required section");
    sec.flag("enabled", f.enabled);
    f.bus = static_cast<int>(sec.required("bus"));
    f.resistance_ohm = sec.required("resistance_ohm");
    sec.number("start", f.start);
    f.clear = sec.required("clear");
    sec.reject_unknown();
}

void read_run(Section& sec, RunSection& r) {
    sec.number("dt", r.dt);
    sec.number("t_end", r.t_end);
    sec.number("delta12_min", r.grid.x_min);
    sec.number("delta12_max", r.grid.x_max);
    sec.integer("delta12_points", r.grid.nx);
    sec.number("delta13_min", r.grid.y_min);
    sec.number("delta13_max", r.grid.y_max);
    sec.integer("delta13_points", r.grid.ny);
    sec.number("band", r.band);
    sec.number("capture_radius", r.capture_radius);
    sec.number("kinetic_threshold", r.kinetic_threshold);
    sec.number("tail_fraction", r.tail_fraction);
    std::size_t events = static_cast<std::size_t>(r.max_events_per_step);
    sec.integer("max_events_per_step", events);
    r.max_events_per_step = static_cast<int>(events);
    sec.text("output", r.output);
    sec.reject_unknown();
}

const pt::ptree* child(const pt::ptree& root, const std::string& name) {
    const auto it = root.find(name);
    return it == root.not_found() ? nullptr : &it->second;
}

}  // namespace

void validate(const Scenario& s) {
    const auto check = [](bool ok, const std::string& path, const std::string& msg) {
        if (!ok) throw ScenarioError(path, msg);
    };
    try {
        s.network.validate_hybrid_topology();
    } catch (const InvalidInput& e) {
        throw ScenarioError("network", e.what());
    }
    check(s.network.base.power_mw > 0.0, "network.base_power_mw", "must be positive");
    check(s.network.base.voltage_kv > 0.0, "network.base_voltage_kv", "must be positive");
    check(s.network.base.frequency_hz > 0.0, "network.base_frequency_hz", "must be positive");
    check(s.network.grid_voltage > 0.0, "network.u_sys", "must be positive");
    const auto& g = s.gfm;
    check(g.params.inertia > 0.0, "gfm.inertia", "must be positive");
    check(g.params.damping >= 0.0, "gfm.damping", "must be non-negative");
    check(g.params.kq > 0.0, "gfm.kq", "must be positive");
    check(g.params.u_set > 0.0, "gfm.u_set", "must be positive");
    check(g.max_current_ratio > 0.0, "gfm.max_current_ratio", "must be positive");
    check(!g.i_max || *g.i_max > 0.0, "gfm.i_max", "must be positive");
    check(g.saturation_ratio > 0.0 && g.saturation_ratio <= 1.0, "gfm.saturation_ratio", "must lie in (0, 1]");
    const auto& l = s.gfl;
    check(l.params.u_lv > 0.0, "gfl.u_lv", "must be positive");
    check(l.params.u_lv < l.params.u_hv, "gfl.u_lv", "interval requires u_lv < u_hv");
    check(l.params.kp_pll > 0.0, "gfl.kp_pll", "must be positive");
    check(l.params.ki_pll > 0.0, "gfl.ki_pll", "must be positive");
    check(l.params.k_i_lvrt >= 0.0, "gfl.k_i_lvrt", "must be non-negative");
    check(l.params.k_i_hvrt >= 0.0, "gfl.k_i_hvrt", "must be non-negative");
    check(l.max_current_ratio >= 1.0, "gfl.max_current_ratio", "must be at least 1");
    check(l.hvrt_clamp_voltage > l.params.u_hv, "gfl.hvrt_clamp_voltage", "must exceed u_hv");
    check(!l.i0 || *l.i0 > 0.0, "gfl.i0", "must be positive");
    check(!l.i_max || *l.i_max > 0.0, "gfl.i_max", "must be positive");
    const auto& f = s.fault;
    check(s.network.has_bus(f.bus), "fault.bus", "bus " + std::to_string(f.bus) + " does not exist");
    check(f.resistance_ohm > 0.0, "fault.resistance_ohm", "must be positive");
    check(f.start >= 0.0, "fault.start", "must be non-negative");
    check(f.clear > f.start, "fault.clear", "must exceed fault.start");
    const auto& r = s.run;
    check(r.dt > 0.0, "run.dt", "must be positive");
    check(r.t_end > 0.0, "run.t_end", "must be positive");
    check(!f.enabled || r.t_end > f.clear, "run.t_end", "must exceed fault.clear");
    check(r.grid.nx >= 3, "run.delta12_points", "must be at least 3");
    check(r.grid.ny >= 3, "run.delta13_points", "must be at least 3");
    check(r.grid.x_max > r.grid.x_min, "run.delta12_max", "must exceed delta12_min");
    check(r.grid.y_max > r.grid.y_min, "run.delta13_max", "must exceed delta13_min");
    check(r.band > 0.0, "run.band", "must be positive");
    check(r.capture_radius > 0.0, "run.capture_radius", "must be positive");
    check(r.tail_fraction > 0.0 && r.tail_fraction <= 1.0, "run.tail_fraction", "must lie in (0, 1]");
    check(r.max_events_per_step > 0, "run.max_events_per_step", "must be positive");
}

Scenario parse_scenario_text(const std::string& text) {
    pt::ptree root;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, root);
    } catch (const pt::ini_parser_error& e) {
        throw ScenarioError("line " + std::to_string(e.line()), e.message());
    }
    static const std::set<std::string> known{"network", "gfm", "gfl", "fault", "run"};
    for (const auto& kv : root) {
        if (!known.contains(kv.first)) throw ScenarioError(kv.first, "unknown section");
    }
    Scenario s;
    Section net(child(root, "network"), "network", s.defaults_applied);
    read_network(net, s);
    Section gfm(child(root, "gfm"), "gfm", s.defaults_applied);
    read_gfm(gfm, s.gfm);
    Section gfl(child(root, "gfl"), "gfl", s.defaults_applied);
    read_gfl(gfl, s.gfl);
    Section fault(child(root, "fault"), "fault", s.defaults_applied);
    read_fault(fault, s.fault);
    Section run(child(root, "run"), "run", s.defaults_applied);
    read_run(run, s.run);
    validate(s);
    return s;
}

Scenario parse_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError(path, "cannot open scenario file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario_text(buf.str());
}

std::string serialize(const Scenario& s) {
    std::ostringstream o;
    const auto& n = s.network;
    o << "[network]\n";
    o << "base_power_mw = " << fmt(n.base.power_mw) << "\n";
    o << "base_voltage_kv = " << fmt(n.base.voltage_kv) << "\n";
    o << "base_frequency_hz = " << fmt(n.base.frequency_hz) << "\n";
    o << "u_sys = " << fmt(n.grid_voltage) << "\n";
    for (const auto& b : n.buses) o << "bus_" << b.id << " = " << bus_kind_name(b.kind) << "\n";
    for (const auto& b : n.branches) {
        o << "branch_" << b.from << "_" << b.to << " = " << fmt(b.impedance.real()) << " " << fmt(b.impedance.imag())
          << "\n";
    }
    for (const auto& sh : n.shunts) {
        o << "shunt_" << sh.bus << " = " << fmt(sh.admittance.real()) << " " << fmt(sh.admittance.imag()) << "\n";
    }
    const auto& g = s.gfm;
    o << "\n[gfm]\n";
    o << "p_ref = " << fmt(g.params.p_ref) << "\n";
    o << "q_ref = " << fmt(g.params.q_ref) << "\n";
    o << "u_set = " << fmt(g.params.u_set) << "\n";
    o << "inertia = " << fmt(g.params.inertia) << "\n";
    o << "damping = " << fmt(g.params.damping) << "\n";
    o << "kq = " << fmt(g.params.kq) << "\n";
    o << "max_current_ratio = " << fmt(g.max_current_ratio) << "\n";
    if (g.i_max) o << "i_max = " << fmt(*g.i_max) << "\n";
    o << "saturation_ratio = " << fmt(g.saturation_ratio) << "\n";
    o << "saturation_angle = " << (g.params.angle_policy == devices::SaturationAnglePolicy::Hold ? "hold" : "fixed")
      << "\n";
    o << "fixed_angle = " << fmt(g.params.fixed_angle) << "\n";
    o << "time_base = " << dynamics::to_string(g.time_base) << "\n";
    const auto& l = s.gfl;
    o << "\n[gfl]\n";
    o << "p_ref = " << fmt(l.params.p_ref) << "\n";
    o << "q_ref = " << fmt(l.params.q_ref) << "\n";
    o << "kp_pll = " << fmt(l.params.kp_pll) << "\n";
    o << "ki_pll = " << fmt(l.params.ki_pll) << "\n";
    o << "k_i_lvrt = " << fmt(l.params.k_i_lvrt) << "\n";
    o << "k_i_hvrt = " << fmt(l.params.k_i_hvrt) << "\n";
    o << "u_lv = " << fmt(l.params.u_lv) << "\n";
    o << "u_hv = " << fmt(l.params.u_hv) << "\n";
    o << "max_current_ratio = " << fmt(l.max_current_ratio) << "\n";
    if (l.i0) o << "i0 = " << fmt(*l.i0) << "\n";
    if (l.phi0) o << "phi0 = " << fmt(*l.phi0) << "\n";
    if (l.i_max) o << "i_max = " << fmt(*l.i_max) << "\n";
    if (l.k_phi_lvrt) o << "k_phi_lvrt = " << fmt(*l.k_phi_lvrt) << "\n";
    if (l.k_phi_hvrt) o << "k_phi_hvrt = " << fmt(*l.k_phi_hvrt) << "\n";
    o << "hvrt_clamp_voltage = " << fmt(l.hvrt_clamp_voltage) << "\n";
    const auto& f = s.fault;
    o << "\n[fault]\n";
    o << "enabled = " << (f.enabled ? "true" : "false") << "\n";
    o << "bus = " << f.bus << "\n";
    o << "resistance_ohm = " << fmt(f.resistance_ohm) << "\n";
    o << "start = " << fmt(f.start) << "\n";
    o << "clear = " << fmt(f.clear) << "\n";
    const auto& r = s.run;
    o << "\n[run]\n";
    o << "dt = " << fmt(r.dt) << "\n";
    o << "t_end = " << fmt(r.t_end) << "\n";
    o << "delta12_min = " << fmt(r.grid.x_min) << "\n";
    o << "delta12_max = " << fmt(r.grid.x_max) << "\n";
    o << "delta12_points = " << r.grid.nx << "\n";
    o << "delta13_min = " << fmt(r.grid.y_min) << "\n";
    o << "delta13_max = " << fmt(r.grid.y_max) << "\n";
    o << "delta13_points = " << r.grid.ny << "\n";
    o << "band = " << fmt(r.band) << "\n";
    o << "capture_radius = " << fmt(r.capture_radius) << "\n";
    o << "kinetic_threshold = " << fmt(r.kinetic_threshold) << "\n";
    o << "tail_fraction = " << fmt(r.tail_fraction) << "\n";
    o << "max_events_per_step = " << r.max_events_per_step << "\n";
    o << "output = " << r.output << "\n";
    return o.str();
}

}  // namespace hybres::scenario
