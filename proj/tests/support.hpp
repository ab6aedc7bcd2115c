#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hybres/analysis.hpp"
#include "hybres/dynamics.hpp"
#include "hybres/network.hpp"

namespace hybres::testing {

inline std::string scenario_path(const std::string& name) {
    return std::string(HYBRES_SOURCE_DIR) + "/scenarios/" + name;
}

/// The three-source test system, built without the scenario parser.
inline network::NetworkModel reference_model() {
    using network::BusKind;
    network::NetworkModel m;
    m.buses = {{1, BusKind::GridSource}, {2, BusKind::Gfm}, {3, BusKind::Gfl}, {4, BusKind::Passive}};
    m.branches = {{1, 4, {0.02, 0.093}}, {2, 4, {0.007, 0.055}}, {3, 4, {0.01, 0.065}}};
    return m;
}

/// Networks and resolved parameters of the test system with default fault schedule.
struct System {
    network::FaultStage fault;
    dynamics::StageNetworks nets;
    dynamics::DynamicsParams params;
    analysis::OperatingPoint op;
    devices::CurrentPhasor fault_sat;
    devices::CurrentPhasor post_sat;

    explicit System(network::FaultStage f = {}) : fault(f) {
        nets = dynamics::build_stage_networks(reference_model(), fault);
        op = analysis::resolve_operating_point(nets.prefault, params.device);
        fault_sat = analysis::reference_saturation(nets.fault, op.sep1, params.device);
        post_sat = analysis::reference_saturation(nets.postfault, op.sep1, params.device);
    }

    [[nodiscard]] dynamics::DynamicState initial() const { return {op.sep1.delta12, 0.0, op.sep1.delta13, 0.0}; }
};

inline const System& reference() {
    static const System s;
    return s;
}

inline Eigen::MatrixXcd random_complex(std::mt19937_64& rng, int rows, int cols) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXcd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = {u(rng), u(rng)};
    }
    return m;
}

/// Random symmetric, diagonally dominant admittance-like matrix.
inline Eigen::MatrixXcd random_admittance(std::mt19937_64& rng, int n) {
    Eigen::MatrixXcd m = random_complex(rng, n, n);
    m = (0.5 * (m + m.transpose())).eval();
    for (int i = 0; i < n; ++i) m(i, i) += std::complex<double>(static_cast<double>(n), -2.0 * n);
    return m;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Quasi-static solution computed directly from the reduced admittance matrix,
/// without partition matrices or Newton iterations.
struct OracleSolution {
    double u_fm = 0.0;
    double u_fl = 0.0;
};

namespace detail {

struct Injection {
    std::complex<double> v3;
    double u_fm = 0.0;
    bool ok = false;
};

// GFM voltage on the droop law for given GFL current, by bisection on U.
inline Injection nc_voltages(const Eigen::Matrix3cd& y, double d12, std::complex<double> i3,
                             const algebraic::DeviceParams& p) {
    const std::complex<double> v1 = p.grid_voltage;
    auto state = [&](double u) {
        const std::complex<double> v2 = std::polar(u, d12);
        const std::complex<double> v3 = (i3 - y(2, 0) * v1 - y(2, 1) * v2) / y(2, 2);
        const std::complex<double> i2 = y(1, 0) * v1 + y(1, 1) * v2 + y(1, 2) * v3;
        const double q = (v2 * std::conj(i2)).imag();
        return std::pair{u - (p.gfm.u_set + p.gfm.kq * (p.gfm.q_ref - q)), v3};
    };
    // The droop residual is quadratic in U: negative at 0 and positive for large U.
    double lo = 0.0;
    double hi = 10.0;
    if (state(lo).first >= 0.0 || state(hi).first <= 0.0) return {};
    for (int k = 0; k < 200 && hi - lo > 1e-15; ++k) {
        const double mid = 0.5 * (lo + hi);
        (state(mid).first < 0.0 ? lo : hi) = mid;
    }
    const double u = 0.5 * (lo + hi);
    return {state(u).second, u, true};
}

inline Injection cs_voltages(const Eigen::Matrix3cd& y, std::complex<double> i2, std::complex<double> i3,
                             const algebraic::DeviceParams& p) {
    const std::complex<double> v1 = p.grid_voltage;
    Eigen::Matrix2cd a;
    a << y(1, 1), y(1, 2), y(2, 1), y(2, 2);
    const Eigen::Vector2cd rhs(i2 - y(1, 0) * v1, i3 - y(2, 0) * v1);
    const Eigen::Vector2cd v = a.fullPivLu().solve(rhs);
    return {v(1), std::abs(v(0)), true};
}

}  // namespace detail

/// Every solution with U_FL in [0, u_max] found by sweeping U_FL with `step`
/// and bisecting each sign change of |V3(U_FL)| - U_FL.
inline std::vector<OracleSolution> sweep_oracle(double d12, double d13, devices::ControlCombination c,
                                                const network::ReducedNetwork& net,
                                                const algebraic::DeviceParams& p, devices::CurrentPhasor sat,
                                                double step = 1e-5, double u_max = 2.5) {
    const Eigen::Matrix3cd& y = net.y_reduced;
    const bool cs = c.gfm() == devices::GfmMode::Cs;
    auto eval = [&](double u_fl, double* u_fm) -> std::optional<double> {
        const auto inj = devices::gfl_injection(u_fl, c.gfl(), p.gfl);
        const std::complex<double> i3 = std::polar(inj.magnitude, d13 + inj.angle);
        const detail::Injection r = cs ? detail::cs_voltages(y, std::polar(sat.magnitude, d12 + sat.angle), i3, p)
                                       : detail::nc_voltages(y, d12, i3, p);
        if (!r.ok) return std::nullopt;
        if (u_fm) *u_fm = r.u_fm;
        return std::abs(r.v3) - u_fl;
    };
    std::vector<OracleSolution> out;
    std::optional<double> prev = eval(0.0, nullptr);
    double u_prev = 0.0;
    const auto n = static_cast<long>(std::ceil(u_max / step));
    for (long k = 1; k <= n; ++k) {
        const double u = static_cast<double>(k) * step;
        const auto cur = eval(u, nullptr);
        if (prev && cur && ((*prev < 0.0) != (*cur < 0.0))) {
            double lo = u_prev;
            double hi = u;
            const bool lo_neg = *prev < 0.0;
            for (int it = 0; it < 100 && hi - lo > 1e-14; ++it) {
                const double mid = 0.5 * (lo + hi);
                const auto fm = eval(mid, nullptr);
                if (!fm) break;
                ((*fm < 0.0) == lo_neg ? lo : hi) = mid;
            }
            OracleSolution s;
            s.u_fl = 0.5 * (lo + hi);
            eval(s.u_fl, &s.u_fm);
            out.push_back(s);
        }
        prev = cur;
        u_prev = u;
    }
    return out;
}

}  // namespace hybres::testing
