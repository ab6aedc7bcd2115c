#include "hybres/algebraic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "hybres/contour.hpp"
#include "hybres/error.hpp"

namespace hybres::algebraic {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kHalfPi = std::numbers::pi / 2.0;
constexpr Complex kJ{0.0, 1.0};

Complex polar_unit(double angle) { return {std::cos(angle), std::sin(angle)}; }

// Directional derivative of |v| given dv.
double d_abs(Complex v, Complex dv, double abs_v) {
    return abs_v > 0.0 ? (std::conj(v) * dv).real() / abs_v : 0.0;
}

// Residual, Jacobian w.r.t. unknowns and w.r.t. (delta12, delta13).
template <int N>
struct Evaluation {
    bool defined = false;
    SolveStatus failure = SolveStatus::NoConvergence;
    Eigen::Matrix<double, N, 1> r;
    Eigen::Matrix<double, N, N> jx;
    Eigen::Matrix<double, N, 2> jd;
};

struct Context {
    double d12;
    double d13;
    GflMode gfl_mode;
    const ReducedNetwork& net;
    const DeviceParams& p;
    CurrentPhasor sat;
};

// GFM voltage from the Q-V droop closed through the NC partition.
struct UfmEval {
    bool defined = false;
    SolveStatus failure = SolveStatus::NoConvergence;
    double u = 0.0;
    double du_di = 0.0;
    double du_dphi = 0.0;
    double du_d12 = 0.0;
    double du_d13 = 0.0;
};

UfmEval eval_u_fm(double i_fl, double phi_fl, double d12, double d13, const network::PartitionMatrix& m,
                  const DeviceParams& p) {
    UfmEval out;
    const auto m21 = m.polar(2, 1);
    const auto m22 = m.polar(2, 2);
    const auto m23 = m.polar(2, 3);
    const double den = m22.magnitude * std::sin(-m22.angle);
    const double th23 = d12 - d13 - m23.angle - phi_fl;
    const double s23 = std::sin(th23);
    const double c23 = std::cos(th23);
    const double num = m21.magnitude * p.grid_voltage * std::sin(d12 - m21.angle) + 1.0 / p.gfm.kq +
                       m23.magnitude * i_fl * s23;
    const double a = num / den;
    const double b = -(p.gfm.kq * p.gfm.q_ref + p.gfm.u_set) / (p.gfm.kq * den);
    const double disc = a * a - 4.0 * b;
    if (!(disc >= 0.0)) {
        out.failure = SolveStatus::NoRealSolution;
        return out;
    }
    const double s = std::sqrt(disc);
    out.u = 0.5 * (-a + s);
    if (!(out.u > 0.0)) {
        out.failure = SolveStatus::NonPhysicalRoot;
        return out;
    }
    const double du_da = s > 0.0 ? 0.5 * (-1.0 + a / s) : 0.0;
    const double da_di = m23.magnitude * s23 / den;
    const double da_dphi = -m23.magnitude * i_fl * c23 / den;
    const double da_d12 = (m21.magnitude * p.grid_voltage * std::cos(d12 - m21.angle) + m23.magnitude * i_fl * c23) / den;
    const double da_d13 = -m23.magnitude * i_fl * c23 / den;
    out.defined = true;
    out.du_di = du_da * da_di;
    out.du_dphi = du_da * da_dphi;
    out.du_d12 = du_da * da_d12;
    out.du_d13 = du_da * da_d13;
    return out;
}

// NC unknowns x = (U_FM, I_FL, phi_FL).
Evaluation<3> eval_nc(const Eigen::Vector3d& x, const Context& c) {
    Evaluation<3> e;
    const double u = x(0);
    const double i = x(1);
    const double phi = x(2);
    const UfmEval uf = eval_u_fm(i, phi, c.d12, c.d13, c.net.m_nc, c.p);
    if (!uf.defined) {
        e.failure = uf.failure;
        return e;
    }
    const auto& m = c.net.m_nc;
    const Complex e12 = polar_unit(c.d12);
    const Complex e3 = polar_unit(c.d13 + phi);
    const Complex v3 = m.at(3, 1) * c.p.grid_voltage + m.at(3, 2) * u * e12 + m.at(3, 3) * i * e3;
    const double u_fl = std::abs(v3);
    const Complex dv3_du = m.at(3, 2) * e12;
    const Complex dv3_di = m.at(3, 3) * e3;
    const Complex dv3_dphi = kJ * m.at(3, 3) * i * e3;
    const Complex dv3_d12 = kJ * m.at(3, 2) * u * e12;
    const Complex dv3_d13 = dv3_dphi;
    const double g_u = d_abs(v3, dv3_du, u_fl);
    const double g_i = d_abs(v3, dv3_di, u_fl);
    const double g_phi = d_abs(v3, dv3_dphi, u_fl);
    const double g_12 = d_abs(v3, dv3_d12, u_fl);
    const double g_13 = d_abs(v3, dv3_d13, u_fl);

    const auto law = devices::gfl_injection(u_fl, c.gfl_mode, c.p.gfl);
    const auto slope = devices::gfl_injection_slope(u_fl, c.gfl_mode, c.p.gfl);

    e.r << u - uf.u, i - law.magnitude, phi - law.angle;
    e.jx << 1.0, -uf.du_di, -uf.du_dphi,  //
        -slope.d_magnitude * g_u, 1.0 - slope.d_magnitude * g_i, -slope.d_magnitude * g_phi,  //
        -slope.d_angle * g_u, -slope.d_angle * g_i, 1.0 - slope.d_angle * g_phi;
    e.jd << -uf.du_d12, -uf.du_d13,  //
        -slope.d_magnitude * g_12, -slope.d_magnitude * g_13,  //
        -slope.d_angle * g_12, -slope.d_angle * g_13;
    e.defined = true;
    return e;
}

// CS unknowns x = (I_FL, phi_FL).
Evaluation<2> eval_cs(const Eigen::Vector2d& x, const Context& c) {
    Evaluation<2> e;
    const double i = x(0);
    const double phi = x(1);
    const auto& m = c.net.m_cs;
    const Complex i2 = c.sat.magnitude * polar_unit(c.d12 + c.sat.angle);
    const Complex e3 = polar_unit(c.d13 + phi);
    const Complex v3 = m.at(3, 1) * c.p.grid_voltage + m.at(3, 2) * i2 + m.at(3, 3) * i * e3;
    const double u_fl = std::abs(v3);
    const double g_i = d_abs(v3, m.at(3, 3) * e3, u_fl);
    const double g_phi = d_abs(v3, kJ * m.at(3, 3) * i * e3, u_fl);
    const double g_12 = d_abs(v3, kJ * m.at(3, 2) * i2, u_fl);
    const double g_13 = g_phi;
    const auto law = devices::gfl_injection(u_fl, c.gfl_mode, c.p.gfl);
    const auto slope = devices::gfl_injection_slope(u_fl, c.gfl_mode, c.p.gfl);
    e.r << i - law.magnitude, phi - law.angle;
    e.jx << 1.0 - slope.d_magnitude * g_i, -slope.d_magnitude * g_phi,  //
        -slope.d_angle * g_i, 1.0 - slope.d_angle * g_phi;
    e.jd << -slope.d_magnitude * g_12, -slope.d_magnitude * g_13,  //
        -slope.d_angle * g_12, -slope.d_angle * g_13;
    e.defined = true;
    return e;
}

template <int N, typename Eval>
struct NewtonOutcome {
    SolveStatus status = SolveStatus::NoConvergence;
    Eigen::Matrix<double, N, 1> x;
    int iterations = 0;
    double residual = kInf;
};

template <int N, typename Eval>
NewtonOutcome<N, Eval> damped_newton(Eigen::Matrix<double, N, 1> x, const Eval& eval, const SolverOptions& opt) {
    NewtonOutcome<N, Eval> out;
    auto e = eval(x);
    if (!e.defined) {
        out.status = e.failure;
        return out;
    }
    double norm = e.r.template lpNorm<Eigen::Infinity>();
    for (int it = 0;; ++it) {
        if (norm <= opt.tolerance) {
            out.status = SolveStatus::Converged;
            out.x = x;
            out.iterations = it;
            out.residual = norm;
            return out;
        }
        if (it >= opt.max_iterations) {
            break;
        }
        Eigen::Matrix<double, N, N> inv;
        bool invertible = false;
        double det = 0.0;
        e.jx.computeInverseAndDetWithCheck(inv, det, invertible, 1e-14);
        if (!invertible) {
            break;
        }
        const Eigen::Matrix<double, N, 1> step = -(inv * e.r);
        double lambda = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 30; ++halving) {
            const Eigen::Matrix<double, N, 1> trial = x + lambda * step;
            auto et = eval(trial);
            if (et.defined) {
                const double tn = et.r.template lpNorm<Eigen::Infinity>();
                if (tn < norm) {
                    x = trial;
                    e = et;
                    norm = tn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            break;
        }
    }
    out.residual = norm;
    return out;
}

std::vector<Unknowns> seed_list(GflMode mode, const Context& c, const Unknowns* warm) {
    std::vector<Unknowns> seeds;
    auto push = [&seeds](Unknowns s) {
        for (const auto& t : seeds) {
            if (t.u_fm == s.u_fm && t.i_fl == s.i_fl && t.phi_fl == s.phi_fl) {
                return;
            }
        }
        seeds.push_back(s);
    };
    if (warm != nullptr) {
        push(*warm);
    }
    const auto& g = c.p.gfl;
    push({1.0, g.i0, g.phi0});
    for (double level : {1.0, 0.75, 0.5, 0.25, 0.05, 1.2, 1.5}) {
        const auto inj = devices::gfl_injection(level, mode, g);
        push({1.0, inj.magnitude, inj.angle});
    }
    push({1.0, g.i_max, -kHalfPi});
    push({1.0, g.i_max, kHalfPi});
    return seeds;
}

void fill_outputs_nc(AlgebraicState& s, const Context& c) {
    const auto& m = c.net.m_nc;
    const Complex v2 = s.u_fm * polar_unit(s.delta12);
    const Complex i3 = s.i_fl * polar_unit(s.delta13 + s.phi_fl);
    s.i_fm = m.at(2, 1) * c.p.grid_voltage + m.at(2, 2) * v2 + m.at(2, 3) * i3;
    s.v_fl = m.at(3, 1) * c.p.grid_voltage + m.at(3, 2) * v2 + m.at(3, 3) * i3;
    s.u_fm_phase = s.delta12;
    s.i_fm_proxy = std::abs(s.i_fm);
    const Complex sp = v2 * std::conj(s.i_fm);
    s.p_fm = sp.real();
    s.q_fm = sp.imag();
    s.u_fl = std::abs(s.v_fl);
    s.u_fl_q = (s.v_fl * polar_unit(-s.delta13)).imag();
}

void fill_outputs_cs(AlgebraicState& s, const Context& c) {
    const auto& m = c.net.m_cs;
    s.i_fm = c.sat.magnitude * polar_unit(s.delta12 + c.sat.angle);
    const Complex i3 = s.i_fl * polar_unit(s.delta13 + s.phi_fl);
    const Complex v2 = m.at(2, 1) * c.p.grid_voltage + m.at(2, 2) * s.i_fm + m.at(2, 3) * i3;
    s.v_fl = m.at(3, 1) * c.p.grid_voltage + m.at(3, 2) * s.i_fm + m.at(3, 3) * i3;
    s.u_fm = std::abs(v2);
    s.u_fm_phase = std::arg(v2);
    const Complex sp = v2 * std::conj(s.i_fm);
    s.p_fm = sp.real();
    s.q_fm = sp.imag();
    s.u_fl = std::abs(s.v_fl);
    s.u_fl_q = (s.v_fl * polar_unit(-s.delta13)).imag();
    s.saturated = c.sat;
    s.i_fm_proxy = std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::Converged:
            return "converged";
        case SolveStatus::NoConvergence:
            return "no-convergence";
        case SolveStatus::NoRealSolution:
            return "no-real-solution";
        case SolveStatus::NonPhysicalRoot:
            return "nonphysical-root";
    }
    return "?";
}

QuadraticCoefficients u_fm_quadratic(double i_fl, double phi_fl, double delta12, double delta13,
                                     const network::PartitionMatrix& m, const DeviceParams& p) {
    const auto m21 = m.polar(2, 1);
    const auto m22 = m.polar(2, 2);
    const auto m23 = m.polar(2, 3);
    const double den = m22.magnitude * std::sin(-m22.angle);
    const double num = m21.magnitude * p.grid_voltage * std::sin(delta12 - m21.angle) + 1.0 / p.gfm.kq +
                       m23.magnitude * i_fl * std::sin(delta12 - delta13 - m23.angle - phi_fl);
    return {num / den, -(p.gfm.kq * p.gfm.q_ref + p.gfm.u_set) / (p.gfm.kq * den)};
}

double positive_quadratic_root(QuadraticCoefficients c) {
    const double disc = c.a * c.a - 4.0 * c.b;
    if (!(disc >= 0.0)) {
        throw NoRealSolution("GFM voltage quadratic has no real root (discriminant " + std::to_string(disc) + ")");
    }
    const double root = 0.5 * (-c.a + std::sqrt(disc));
    if (!(root > 0.0)) {
        throw NonPhysicalRoot("GFM voltage quadratic root is not positive (" + std::to_string(root) + ")");
    }
    return root;
}

double solve_u_fm_quadratic(double i_fl, double phi_fl, double delta12, double delta13,
                            const network::PartitionMatrix& m_nc, const DeviceParams& p) {
    return positive_quadratic_root(u_fm_quadratic(i_fl, phi_fl, delta12, delta13, m_nc, p));
}

Unknowns unknowns_of(const AlgebraicState& s) { return {s.u_fm, s.i_fl, s.phi_fl}; }

ModeSolution solve_mode_core(double delta12, double delta13, ControlCombination combination,
                             const ReducedNetwork& net, const DeviceParams& p,
                             std::optional<CurrentPhasor> saturated, const Unknowns* warm_start,
                             const SolverOptions& options) {
    if (combination.gfm() == GfmMode::Cs && !saturated) {
        throw InvalidInput("CS combination requires a saturated current preset");
    }
    const Context ctx{delta12, delta13, combination.gfl(), net, p, saturated.value_or(CurrentPhasor{})};
    ModeSolution sol;
    sol.state.delta12 = delta12;
    sol.state.delta13 = delta13;
    sol.state.combination = combination;
    SolveStatus first_failure = SolveStatus::NoConvergence;
    bool have_failure = false;

    for (const auto& seed : seed_list(combination.gfl(), ctx, warm_start)) {
        if (combination.gfm() == GfmMode::Nc) {
            Eigen::Vector3d x0(seed.u_fm, seed.i_fl, seed.phi_fl);
            // Project the voltage seed onto the droop quadratic when possible.
            const UfmEval uf = eval_u_fm(seed.i_fl, seed.phi_fl, delta12, delta13, net.m_nc, p);
            if (uf.defined) {
                x0(0) = uf.u;
            }
            auto eval = [&ctx](const Eigen::Vector3d& x) { return eval_nc(x, ctx); };
            const auto r = damped_newton<3>(x0, eval, options);
            if (r.status == SolveStatus::Converged) {
                sol.status = r.status;
                sol.iterations = r.iterations;
                sol.residual = r.residual;
                sol.state.u_fm = r.x(0);
                sol.state.i_fl = r.x(1);
                sol.state.phi_fl = r.x(2);
                fill_outputs_nc(sol.state, ctx);
                return sol;
            }
            if (!have_failure) {
                first_failure = r.status;
                have_failure = true;
            }
        } else {
            Eigen::Vector2d x0(seed.i_fl, seed.phi_fl);
            auto eval = [&ctx](const Eigen::Vector2d& x) { return eval_cs(x, ctx); };
            const auto r = damped_newton<2>(x0, eval, options);
            if (r.status == SolveStatus::Converged) {
                sol.status = r.status;
                sol.iterations = r.iterations;
                sol.residual = r.residual;
                sol.state.i_fl = r.x(0);
                sol.state.phi_fl = r.x(1);
                fill_outputs_cs(sol.state, ctx);
                return sol;
            }
            if (!have_failure) {
                first_failure = r.status;
                have_failure = true;
            }
        }
    }
    sol.status = first_failure == SolveStatus::Converged ? SolveStatus::NoConvergence : first_failure;
    return sol;
}

ModeSolution solve_mode_state(double delta12, double delta13, ControlCombination combination,
                              const ReducedNetwork& net, const DeviceParams& p,
                              std::optional<CurrentPhasor> saturated, const Unknowns* warm_start,
                              const SolverOptions& options) {
    ModeSolution sol = solve_mode_core(delta12, delta13, combination, net, p, saturated, warm_start, options);
    if (sol.ok() && combination.gfm() == GfmMode::Cs) {
        const ControlCombination shadow_comb(GfmMode::Nc, combination.gfl());
        const Unknowns shadow_seed = unknowns_of(sol.state);
        const ModeSolution shadow =
            solve_mode_core(delta12, delta13, shadow_comb, net, p, std::nullopt, &shadow_seed, options);
        sol.state.i_fm_proxy = shadow.ok() ? shadow.state.i_fm_proxy : kInf;
    }
    return sol;
}

double residual_norm(const AlgebraicState& s, const ReducedNetwork& net, const DeviceParams& p) {
    const Context ctx{s.delta12, s.delta13, s.combination.gfl(), net, p, s.saturated};
    if (s.combination.gfm() == GfmMode::Nc) {
        const auto e = eval_nc(Eigen::Vector3d(s.u_fm, s.i_fl, s.phi_fl), ctx);
        return e.defined ? e.r.lpNorm<Eigen::Infinity>() : kInf;
    }
    const auto e = eval_cs(Eigen::Vector2d(s.i_fl, s.phi_fl), ctx);
    return e.defined ? e.r.lpNorm<Eigen::Infinity>() : kInf;
}

bool gfm_condition_holds(const AlgebraicState& s, const DeviceParams& p) {
    if (s.combination.gfm() == GfmMode::Nc) {
        return s.i_fm_proxy >= 0.0 && s.i_fm_proxy <= p.gfm.i_max;
    }
    return s.i_fm_proxy > p.gfm.i_max;
}

bool gfl_condition_holds(const AlgebraicState& s, const DeviceParams& p) {
    return devices::gfl_mode_of(s.u_fl, p.gfl) == s.combination.gfl();
}

bool mode_conditions_hold(const AlgebraicState& s, const DeviceParams& p) {
    return gfm_condition_holds(s, p) && gfl_condition_holds(s, p);
}

Classification classify_combination(double delta12, double delta13, const ReducedNetwork& net,
                                    const DeviceParams& p, CurrentPhasor saturated,
                                    std::optional<ControlCombination> previous) {
    Classification out;
    std::array<ModeSolution, 6> sols;
    for (int k = 0; k < 3; ++k) {
        const ControlCombination nc(GfmMode::Nc, static_cast<GflMode>(k));
        sols[nc.index() - 1] = solve_mode_core(delta12, delta13, nc, net, p, std::nullopt, nullptr);
    }
    for (int k = 0; k < 3; ++k) {
        const ControlCombination cs(GfmMode::Cs, static_cast<GflMode>(k));
        auto& sol = sols[cs.index() - 1];
        sol = solve_mode_core(delta12, delta13, cs, net, p, saturated, nullptr);
        if (sol.ok()) {
            const auto& shadow = sols[ControlCombination(GfmMode::Nc, cs.gfl()).index() - 1];
            sol.state.i_fm_proxy = shadow.ok() ? shadow.state.i_fm_proxy : kInf;
        }
    }
    std::optional<int> chosen;
    for (int n = 1; n <= 6; ++n) {
        const auto& sol = sols[n - 1];
        auto& rep = out.candidates[n - 1];
        rep.combination = ControlCombination::from_index(n);
        rep.status = sol.status;
        rep.residual = sol.residual;
        if (sol.ok()) {
            rep.u_fl = sol.state.u_fl;
            rep.i_fm_proxy = sol.state.i_fm_proxy;
            rep.consistent = mode_conditions_hold(sol.state, p);
        }
        if (rep.consistent) {
            ++out.multiplicity;
            if (!chosen) {
                chosen = n;
            }
        }
    }
    if (previous && out.candidates[previous->index() - 1].consistent) {
        chosen = previous->index();
    }
    if (chosen) {
        out.combination = ControlCombination::from_index(*chosen);
        out.state = sols[*chosen - 1].state;
    }
    return out;
}

Partials implicit_partials(const AlgebraicState& s, const ReducedNetwork& net, const DeviceParams& p) {
    const Context ctx{s.delta12, s.delta13, s.combination.gfl(), net, p, s.saturated};
    Partials out;
    if (s.combination.gfm() == GfmMode::Nc) {
        const auto e = eval_nc(Eigen::Vector3d(s.u_fm, s.i_fl, s.phi_fl), ctx);
        Eigen::Matrix3d inv;
        bool invertible = false;
        double det = 0.0;
        e.jx.computeInverseAndDetWithCheck(inv, det, invertible, 1e-14);
        if (!e.defined || !invertible) {
            throw SingularMatrix("residual Jacobian is singular at a region boundary");
        }
        const Eigen::Matrix<double, 3, 2> dx = -(inv * e.jd);
        out.du_fm_d12 = dx(0, 0);
        out.du_fm_d13 = dx(0, 1);
        out.di_fl_d12 = dx(1, 0);
        out.di_fl_d13 = dx(1, 1);
        out.dphi_fl_d12 = dx(2, 0);
        out.dphi_fl_d13 = dx(2, 1);
    } else {
        const auto e = eval_cs(Eigen::Vector2d(s.i_fl, s.phi_fl), ctx);
        Eigen::Matrix2d inv;
        bool invertible = false;
        double det = 0.0;
        e.jx.computeInverseAndDetWithCheck(inv, det, invertible, 1e-14);
        if (!e.defined || !invertible) {
            throw SingularMatrix("residual Jacobian is singular at a region boundary");
        }
        const Eigen::Matrix<double, 2, 2> dx = -(inv * e.jd);
        out.di_fl_d12 = dx(0, 0);
        out.di_fl_d13 = dx(0, 1);
        out.dphi_fl_d12 = dx(1, 0);
        out.dphi_fl_d13 = dx(1, 1);
    }
    return out;
}

Sensitivity total_sensitivity(const AlgebraicState& s, const Partials& d, const ReducedNetwork& net,
                              const DeviceParams& p) {
    const Complex e3 = polar_unit(s.delta13 + s.phi_fl);
    const Complex rot13 = polar_unit(-s.delta13);
    Sensitivity out;
    for (int k = 0; k < 2; ++k) {
        const bool wrt12 = k == 0;
        const double di = wrt12 ? d.di_fl_d12 : d.di_fl_d13;
        const double dphi = wrt12 ? d.dphi_fl_d12 : d.dphi_fl_d13;
        const Complex di3 = e3 * (di + kJ * s.i_fl * (dphi + (wrt12 ? 0.0 : 1.0)));
        Complex v2;
        Complex dv2;
        Complex di2;
        Complex dv3;
        if (s.combination.gfm() == GfmMode::Nc) {
            const auto& m = net.m_nc;
            const Complex e12 = polar_unit(s.delta12);
            const double du = wrt12 ? d.du_fm_d12 : d.du_fm_d13;
            v2 = s.u_fm * e12;
            dv2 = (du + kJ * s.u_fm * (wrt12 ? 1.0 : 0.0)) * e12;
            di2 = m.at(2, 2) * dv2 + m.at(2, 3) * di3;
            dv3 = m.at(3, 2) * dv2 + m.at(3, 3) * di3;
        } else {
            const auto& m = net.m_cs;
            di2 = wrt12 ? kJ * s.i_fm : Complex{};
            v2 = m.at(2, 1) * p.grid_voltage + m.at(2, 2) * s.i_fm + m.at(2, 3) * (s.i_fl * e3);
            dv2 = m.at(2, 2) * di2 + m.at(2, 3) * di3;
            dv3 = m.at(3, 2) * di2 + m.at(3, 3) * di3;
        }
        const double dp = (dv2 * std::conj(s.i_fm) + v2 * std::conj(di2)).real();
        const double duq = (dv3 * rot13 - (wrt12 ? Complex{} : kJ * s.v_fl * rot13)).imag();
        if (wrt12) {
            out.dp_fm_d12 = dp;
            out.du_q_d12 = duq;
        } else {
            out.dp_fm_d13 = dp;
            out.du_q_d13 = duq;
        }
    }
    return out;
}

RegionMap compute_region_map(const GridSpec& grid, const ReducedNetwork& net, const DeviceParams& p,
                             CurrentPhasor saturated, int threads) {
    grid.validate();
    RegionMap map;
    map.grid = grid;
    map.combination.assign(grid.size(), 0);
    map.multiplicity.assign(grid.size(), 0);
    map.consistent_mask.assign(grid.size(), 0);
    map.states.resize(grid.size());
    parallel_for(grid.ny, threads, [&](std::size_t j) {
        for (std::size_t i = 0; i < grid.nx; ++i) {
            const std::size_t k = grid.index(i, j);
            const auto c = classify_combination(grid.x(i), grid.y(j), net, p, saturated);
            map.multiplicity[k] = static_cast<std::uint8_t>(c.multiplicity);
            std::uint8_t mask = 0;
            for (int n = 0; n < 6; ++n) {
                if (c.candidates[n].consistent) {
                    mask |= static_cast<std::uint8_t>(1u << n);
                }
            }
            map.consistent_mask[k] = mask;
            if (c.ok()) {
                map.combination[k] = c.combination->index();
                map.states[k] = c.state;
            }
        }
    });
    std::vector<double> indicator(grid.size());
    for (int n = 1; n <= 6; ++n) {
        for (std::size_t k = 0; k < grid.size(); ++k) {
            indicator[k] = map.combination[k] == n ? 1.0 : -1.0;
        }
        const auto segments = contour::marching_squares(grid, indicator);
        for (const auto& keys : contour::chain(segments)) {
            Polyline line;
            line.reserve(keys.size());
            for (const auto& key : keys) {
                line.push_back(contour::interpolate(grid, indicator, key));
            }
            map.boundaries[n - 1].push_back(std::move(line));
        }
    }
    return map;
}

}  // namespace hybres::algebraic
