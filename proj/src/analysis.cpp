#include "hybres/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <unordered_map>

#include <Eigen/Dense>

#include "hybres/contour.hpp"
#include "hybres/error.hpp"

namespace hybres::analysis {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;

using devices::GfmMode;

std::optional<CurrentPhasor> sat_for(ControlCombination c, CurrentPhasor s) {
    if (c.gfm() == GfmMode::Cs) return s;
    return std::nullopt;
}

double wrapped_distance(double a12, double a13, double b12, double b13) {
    return std::hypot(wrap_angle(a12 - b12), wrap_angle(a13 - b13));
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax;
    const double vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double s = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    return std::hypot(px - (ax + s * vx), py - (ay + s * vy));
}

// Bucketed segment set for repeated distance queries near the lines.
class SegmentIndex {
  public:
    SegmentIndex(const std::vector<ContourLine>& lines, double reach) : reach_(reach) {
        cells_ = static_cast<int>(std::ceil(2.0 * kPi / cell_));
        for (const auto& line : lines) {
            for (std::size_t k = 0; k + 1 < line.size(); ++k) {
                const std::size_t id = segs_.size();
                segs_.push_back({line[k].delta12, line[k].delta13, line[k + 1].delta12, line[k + 1].delta13});
                const auto& s = segs_.back();
                const int i0 = bucket(std::min(s[0], s[2]) - reach_);
                const int i1 = bucket(std::max(s[0], s[2]) + reach_);
                const int j0 = bucket(std::min(s[1], s[3]) - reach_);
                const int j1 = bucket(std::max(s[1], s[3]) + reach_);
                for (int i = i0; i <= i1; ++i) {
                    for (int j = j0; j <= j1; ++j) {
                        buckets_[key(i, j)].push_back(id);
                    }
                }
            }
        }
    }

    // Exact distance when it is below `reach`, otherwise some value >= reach.
    [[nodiscard]] double distance(double x, double y) const {
        const auto it = buckets_.find(key(bucket(x), bucket(y)));
        if (it == buckets_.end()) return kInf;
        double best = kInf;
        for (std::size_t id : it->second) {
            const auto& s = segs_[id];
            best = std::min(best, point_segment_distance(x, y, s[0], s[1], s[2], s[3]));
        }
        return best;
    }

  private:
    [[nodiscard]] int bucket(double v) const {
        return std::clamp(static_cast<int>(std::floor((v + kPi) / cell_)), 0, cells_ - 1);
    }
    [[nodiscard]] long key(int i, int j) const { return static_cast<long>(i) * 100000L + j; }

    double reach_;
    double cell_ = 0.1;
    int cells_ = 0;
    std::vector<std::array<double, 4>> segs_;
    std::unordered_map<long, std::vector<std::size_t>> buckets_;
};

struct Family {
    bool fm;  // P_FM - P_ref (true) or u_FL,q (false)
};

double family_value(const AlgebraicState& s, const DeviceParams& p, bool fm) {
    return fm ? s.p_fm - p.gfm.p_ref : s.u_fl_q;
}

std::optional<AlgebraicState> solve_point(double d12, double d13, ControlCombination c, const ReducedNetwork& net,
                                          const DeviceParams& p, CurrentPhasor sat, const AlgebraicState* warm) {
    algebraic::Unknowns seed;
    if (warm != nullptr) seed = algebraic::unknowns_of(*warm);
    const auto sol =
        algebraic::solve_mode_state(d12, d13, c, net, p, sat_for(c, sat), warm != nullptr ? &seed : nullptr);
    if (!sol.ok()) return std::nullopt;
    return sol.state;
}

// Root of the family value along a grid edge under a fixed combination.
std::optional<ContourPoint> polish_edge(const RegionMap& map, const contour::EdgeKey& e, const ReducedNetwork& net,
                                        const DeviceParams& p, CurrentPhasor sat, bool fm) {
    const auto& g = map.grid;
    const std::size_t ka = g.index(e.i, e.j);
    const std::size_t kb = e.vertical ? g.index(e.i, e.j + 1) : g.index(e.i + 1, e.j);
    const double ax = g.x(e.i);
    const double ay = g.y(e.j);
    const double bx = e.vertical ? ax : g.x(e.i + 1);
    const double by = e.vertical ? g.y(e.j + 1) : ay;
    std::vector<int> combos{map.combination[ka]};
    if (map.combination[kb] != map.combination[ka]) combos.push_back(map.combination[kb]);
    for (int n : combos) {
        if (n == 0) continue;
        const auto c = ControlCombination::from_index(n);
        const AlgebraicState* warm = map.combination[ka] == n ? &map.states[ka] : &map.states[kb];
        auto sa = solve_point(ax, ay, c, net, p, sat, warm);
        auto sb = solve_point(bx, by, c, net, p, sat, warm);
        if (!sa || !sb) continue;
        double fa = family_value(*sa, p, fm);
        const double fb = family_value(*sb, p, fm);
        if ((fa < 0.0) == (fb < 0.0)) continue;
        double lo = 0.0;
        double hi = 1.0;
        AlgebraicState s_lo = *sa;
        AlgebraicState s_mid = *sa;
        bool failed = false;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            auto sm = solve_point(ax + mid * (bx - ax), ay + mid * (by - ay), c, net, p, sat, &s_lo);
            if (!sm) {
                failed = true;
                break;
            }
            s_mid = *sm;
            const double fm_val = family_value(s_mid, p, fm);
            if ((fm_val < 0.0) == (fa < 0.0)) {
                lo = mid;
                s_lo = s_mid;
                fa = fm_val;
            } else {
                hi = mid;
            }
            if (std::abs(fm_val) < 1e-13) break;
        }
        if (failed) continue;
        const double residual = std::abs(family_value(s_mid, p, fm));
        if (residual >= 1e-6 || !algebraic::mode_conditions_hold(s_mid, p)) continue;
        ContourPoint cp;
        cp.delta12 = s_mid.delta12;
        cp.delta13 = s_mid.delta13;
        cp.combination = n;
        cp.residual = residual;
        try {
            const auto sens = algebraic::total_sensitivity(s_mid, algebraic::implicit_partials(s_mid, net, p), net, p);
            cp.slope = fm ? sens.dp_fm_d12 : sens.du_q_d13;
        } catch (const SingularMatrix&) {
            continue;
        }
        return cp;
    }
    return std::nullopt;
}

Branch branch_of(const ContourPoint& cp, bool fm) {
    if (fm) {
        if (cp.slope < 0.0) return Branch::FmUep;
        return ControlCombination::from_index(cp.combination).gfm() == GfmMode::Nc ? Branch::FmSep1 : Branch::FmSep2;
    }
    return cp.slope < 0.0 ? Branch::FlSep : Branch::FlUep;
}

void extract_family(const RegionMap& map, const ReducedNetwork& net, const DeviceParams& p, CurrentPhasor sat,
                    bool fm, EquilibriumSets& out) {
    const auto& g = map.grid;
    std::vector<double> values(g.size(), kNaN);
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (map.combination[k] != 0) values[k] = family_value(map.states[k], p, fm);
    }
    const auto segments = contour::marching_squares(g, values);
    std::unordered_map<std::uint64_t, std::optional<ContourPoint>> cache;
    auto point_of = [&](const contour::EdgeKey& e) -> const std::optional<ContourPoint>& {
        auto it = cache.find(e.packed());
        if (it == cache.end()) {
            auto cp = polish_edge(map, e, net, p, sat, fm);
            if (!cp) ++out.dropped_crossings;
            it = cache.emplace(e.packed(), cp).first;
        }
        return it->second;
    };
    for (const auto& keys : contour::chain(segments)) {
        ContourLine run;
        int run_branch = -1;
        auto flush = [&]() {
            if (!run.empty() && run_branch >= 0) out.branches[run_branch].push_back(run);
            run.clear();
            run_branch = -1;
        };
        for (const auto& key : keys) {
            const auto& cp = point_of(key);
            if (!cp) {
                flush();
                continue;
            }
            const int b = static_cast<int>(branch_of(*cp, fm));
            if (run_branch >= 0 && run_branch != b) flush();
            run_branch = b;
            run.push_back(*cp);
        }
        flush();
    }
}

std::optional<std::pair<double, double>> segment_intersection(const ContourPoint& a, const ContourPoint& b,
                                                              const ContourPoint& c, const ContourPoint& d) {
    const double rx = b.delta12 - a.delta12;
    const double ry = b.delta13 - a.delta13;
    const double sx = d.delta12 - c.delta12;
    const double sy = d.delta13 - c.delta13;
    const double den = rx * sy - ry * sx;
    if (den == 0.0) return std::nullopt;
    const double qx = c.delta12 - a.delta12;
    const double qy = c.delta13 - a.delta13;
    const double t = (qx * sy - qy * sx) / den;
    const double u = (qx * ry - qy * rx) / den;
    if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return std::nullopt;
    return std::make_pair(a.delta12 + t * rx, a.delta13 + t * ry);
}

void find_seps(const std::vector<ContourLine>& fm_lines, const std::vector<ContourLine>& fl_lines,
               const ReducedNetwork& net, const DeviceParams& p, CurrentPhasor sat,
               std::vector<EquilibriumPoint>& found) {
    for (const auto& a : fm_lines) {
        for (std::size_t i = 0; i + 1 < a.size(); ++i) {
            for (const auto& b : fl_lines) {
                for (std::size_t k = 0; k + 1 < b.size(); ++k) {
                    const auto x = segment_intersection(a[i], a[i + 1], b[k], b[k + 1]);
                    if (!x) continue;
                    const auto c = ControlCombination::from_index(a[i].combination);
                    const auto eq = solve_equilibrium(x->first, x->second, c, net, p, sat_for(c, sat));
                    if (!eq.converged || !algebraic::mode_conditions_hold(eq.state, p)) continue;
                    bool duplicate = false;
                    for (const auto& f : found) {
                        if (wrapped_distance(f.delta12, f.delta13, eq.delta12, eq.delta13) < 1e-6) duplicate = true;
                    }
                    if (!duplicate) found.push_back(eq);
                }
            }
        }
    }
}

std::optional<EquilibriumPoint> nearest(const std::vector<EquilibriumPoint>& pts, double x, double y) {
    std::optional<EquilibriumPoint> best;
    double best_d = kInf;
    for (const auto& e : pts) {
        const double d = wrapped_distance(e.delta12, e.delta13, x, y);
        if (d < best_d) {
            best_d = d;
            best = e;
        }
    }
    return best;
}

}  // namespace

EquilibriumPoint solve_equilibrium(double delta12, double delta13, ControlCombination combination,
                                   const ReducedNetwork& net, const DeviceParams& p,
                                   std::optional<CurrentPhasor> saturated) {
    EquilibriumPoint out;
    Eigen::Vector2d x(delta12, delta13);
    std::optional<AlgebraicState> state;
    auto eval = [&](const Eigen::Vector2d& z, const AlgebraicState* warm) -> std::optional<AlgebraicState> {
        algebraic::Unknowns seed;
        if (warm != nullptr) seed = algebraic::unknowns_of(*warm);
        const auto sol = algebraic::solve_mode_state(z(0), z(1), combination, net, p, saturated,
                                                     warm != nullptr ? &seed : nullptr);
        if (!sol.ok()) return std::nullopt;
        return sol.state;
    };
    auto residual = [&p](const AlgebraicState& s) { return Eigen::Vector2d(s.p_fm - p.gfm.p_ref, s.u_fl_q); };
    state = eval(x, nullptr);
    if (!state) return out;
    Eigen::Vector2d r = residual(*state);
    double norm = r.lpNorm<Eigen::Infinity>();
    for (int it = 0; it < 60; ++it) {
        if (norm < 1e-12) {
            out.converged = true;
            out.iterations = it;
            break;
        }
        algebraic::Sensitivity s;
        try {
            s = algebraic::total_sensitivity(*state, algebraic::implicit_partials(*state, net, p), net, p);
        } catch (const SingularMatrix&) {
            break;
        }
        Eigen::Matrix2d jac;
        jac << s.dp_fm_d12, s.dp_fm_d13, s.du_q_d12, s.du_q_d13;
        Eigen::Matrix2d inv;
        bool invertible = false;
        double det = 0.0;
        jac.computeInverseAndDetWithCheck(inv, det, invertible, 1e-14);
        if (!invertible) break;
        const Eigen::Vector2d step = -(inv * r);
        double lambda = 1.0;
        bool accepted = false;
        for (int h = 0; h < 30; ++h) {
            const Eigen::Vector2d trial = x + lambda * step;
            auto st = eval(trial, &*state);
            if (st) {
                const Eigen::Vector2d rt = residual(*st);
                if (rt.lpNorm<Eigen::Infinity>() < norm) {
                    x = trial;
                    state = st;
                    r = rt;
                    norm = rt.lpNorm<Eigen::Infinity>();
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if (!accepted) break;
    }
    if (!out.converged && norm < 1e-12) out.converged = true;
    out.delta12 = x(0);
    out.delta13 = x(1);
    out.state = *state;
    out.residual = norm;
    return out;
}

OperatingPoint resolve_operating_point(const ReducedNetwork& prefault, DeviceParams& p,
                                       const OperatingPointRules& rules) {
    const double s_fl = std::hypot(p.gfl.p_ref, p.gfl.q_ref);
    if (rules.derive_gfl_nominal) {
        p.gfl.phi0 = -std::atan2(p.gfl.q_ref, p.gfl.p_ref);
        p.gfl.i0 = s_fl;
    }
    const ControlCombination nc_nc(GfmMode::Nc, devices::GflMode::Nc);
    const std::array<std::pair<double, double>, 6> guesses{
        {{0.3, 0.3}, {0.0, 0.0}, {0.6, 0.3}, {0.3, 0.0}, {0.8, 0.6}, {-0.3, -0.3}}};
    OperatingPoint op;
    std::pair<double, double> guess = guesses[0];
    for (int it = 0; it < 100; ++it) {
        std::optional<EquilibriumPoint> sep;
        for (const auto& gs : it == 0 ? std::vector<std::pair<double, double>>(guesses.begin(), guesses.end())
                                      : std::vector<std::pair<double, double>>{guess}) {
            auto eq = solve_equilibrium(gs.first, gs.second, nc_nc, prefault, p);
            if (!eq.converged) continue;
            const auto sens =
                algebraic::total_sensitivity(eq.state, algebraic::implicit_partials(eq.state, prefault, p), prefault, p);
            if (sens.dp_fm_d12 > 0.0 && sens.du_q_d13 < 0.0) {
                sep = eq;
                break;
            }
        }
        if (!sep) throw NoSolution("no stable pre-fault equilibrium under NC+NC");
        op.sep1 = *sep;
        op.nominal_iterations = it + 1;
        guess = {sep->delta12, sep->delta13};
        if (!rules.derive_gfl_nominal) break;
        const double i0 = s_fl / sep->state.u_fl;
        const bool done = std::abs(i0 - p.gfl.i0) < 1e-14;
        p.gfl.i0 = i0;
        if (done) break;
    }
    if (rules.derive_gfl_nominal) {
        op.sep1 = solve_equilibrium(guess.first, guess.second, nc_nc, prefault, p);
    }
    if (rules.derive_gfl_limit) p.gfl.i_max = rules.gfl_limit_ratio * p.gfl.i0;
    if (rules.derive_k_phi_lvrt) p.gfl.k_phi_lvrt = (kPi / 2.0 + p.gfl.phi0) / p.gfl.u_lv;
    if (rules.derive_k_phi_hvrt) p.gfl.k_phi_hvrt = (kPi / 2.0 - p.gfl.phi0) / (rules.hvrt_clamp_voltage - p.gfl.u_hv);
    op.gfm_nominal_current = std::abs(op.sep1.state.i_fm);
    if (rules.derive_gfm_limit) p.gfm.i_max = rules.gfm_limit_ratio * op.gfm_nominal_current;
    if (rules.derive_gfm_saturated) p.gfm.i_saturated = rules.saturation_ratio * p.gfm.i_max;
    // Recompute so the reported state reflects the final parameters.
    op.sep1 = solve_equilibrium(op.sep1.delta12, op.sep1.delta13, nc_nc, prefault, p);
    if (!op.sep1.converged) throw NoSolution("pre-fault equilibrium lost after deriving limits");
    return op;
}

CurrentPhasor reference_saturation(const ReducedNetwork& net, const EquilibriumPoint& at, const DeviceParams& p) {
    const ControlCombination c(GfmMode::Nc, at.state.combination.gfl());
    const auto warm = algebraic::unknowns_of(at.state);
    const auto sol = algebraic::solve_mode_state(at.delta12, at.delta13, c, net, p, std::nullopt, &warm);
    if (!sol.ok()) throw NoSolution("NC solution needed for the saturation preset does not exist");
    return devices::gfm_saturated_injection(sol.state.i_fm * std::polar(1.0, -at.delta12), p.gfm);
}

PotentialForces potential_forces(double delta12, double delta13, ControlCombination combination,
                                 const ReducedNetwork& net, const DeviceParams& p,
                                 std::optional<CurrentPhasor> saturated) {
    const auto sol = algebraic::solve_mode_state(delta12, delta13, combination, net, p, saturated);
    if (!sol.ok()) {
        throw NoSolution(std::string("no algebraic solution under n=") + std::to_string(combination.index()) + " (" +
                         algebraic::to_string(sol.status) + ")");
    }
    return {sol.state.p_fm - p.gfm.p_ref, -p.gfl.ki_pll * sol.state.u_fl_q};
}

DampingCoefficients damping_coefficients(const AlgebraicState& s, const algebraic::Partials& d,
                                         const ReducedNetwork& net, const DeviceParams& p) {
    const bool nc = s.combination.gfm() == GfmMode::Nc;
    const auto& m = nc ? net.m_nc : net.m_cs;
    const auto m31 = m.polar(3, 1);
    const auto m32 = m.polar(3, 2);
    const auto m33 = m.polar(3, 3);
    const double u_sys = p.grid_voltage;
    const double a33 = m33.angle + s.phi_fl;
    const double fl12 = -m33.magnitude * d.di_fl_d12 * std::sin(a33) -
                        m33.magnitude * d.dphi_fl_d12 * s.i_fl * std::cos(a33);
    const double fl13 = -m33.magnitude * d.di_fl_d13 * std::sin(a33) -
                        m33.magnitude * d.dphi_fl_d13 * s.i_fl * std::cos(a33);
    const double grid13 = m31.magnitude * u_sys * std::cos(m31.angle - s.delta13);
    DampingCoefficients out;
    if (nc) {
        const double a32 = m32.angle + s.delta12 - s.delta13;
        out.d12 = -m32.magnitude * d.du_fm_d12 * std::sin(a32) - m32.magnitude * s.u_fm * std::cos(a32) + fl12;
        out.d13 = grid13 - m32.magnitude * d.du_fm_d13 * std::sin(a32) + m32.magnitude * s.u_fm * std::cos(a32) + fl13;
    } else {
        const double a32 = m32.angle + s.saturated.angle + s.delta12 - s.delta13;
        out.d12 = -m32.magnitude * s.saturated.magnitude * std::cos(a32) + fl12;
        out.d13 = grid13 + m32.magnitude * s.saturated.magnitude * std::cos(a32) + fl13;
    }
    out.d12 *= p.gfl.kp_pll;
    out.d13 *= p.gfl.kp_pll;
    return out;
}

FieldGrid compute_fields(const RegionMap& map, const ReducedNetwork& net, const DeviceParams& p, double ref_delta12,
                         double ref_delta13, int threads) {
    const auto& g = map.grid;
    FieldGrid f;
    f.grid = g;
    f.combination = map.combination;
    f.f_fm_p.assign(g.size(), kNaN);
    f.f_fl_p.assign(g.size(), kNaN);
    f.d_fl_12.assign(g.size(), kNaN);
    f.d_fl_13.assign(g.size(), kNaN);
    f.braking_fm.assign(g.size(), 0);
    f.braking_fl.assign(g.size(), 0);
    parallel_for(g.ny, threads, [&](std::size_t j) {
        for (std::size_t i = 0; i < g.nx; ++i) {
            const std::size_t k = g.index(i, j);
            if (map.combination[k] == 0) continue;
            const auto& s = map.states[k];
            f.f_fm_p[k] = s.p_fm - p.gfm.p_ref;
            f.f_fl_p[k] = -p.gfl.ki_pll * s.u_fl_q;
            const double disp12 = wrap_angle(s.delta12 - ref_delta12);
            const double disp13 = wrap_angle(s.delta13 - ref_delta13);
            f.braking_fm[k] = f.f_fm_p[k] * disp12 > 0.0 ? 1 : 0;
            f.braking_fl[k] = f.f_fl_p[k] * disp13 > 0.0 ? 1 : 0;
            try {
                const auto dc = damping_coefficients(s, algebraic::implicit_partials(s, net, p), net, p);
                f.d_fl_12[k] = dc.d12;
                f.d_fl_13[k] = dc.d13;
            } catch (const SingularMatrix&) {
            }
        }
    });
    auto zero_lines = [&g](const std::vector<double>& values) {
        std::vector<Polyline> lines;
        for (const auto& keys : contour::chain(contour::marching_squares(g, values))) {
            Polyline line;
            for (const auto& key : keys) line.push_back(contour::interpolate(g, values, key));
            lines.push_back(std::move(line));
        }
        return lines;
    };
    f.d12_zero = zero_lines(f.d_fl_12);
    f.d13_zero = zero_lines(f.d_fl_13);
    return f;
}

const char* to_string(Branch branch) {
    switch (branch) {
        case Branch::FmSep1:
            return "fm_sep1";
        case Branch::FmSep2:
            return "fm_sep2";
        case Branch::FmUep:
            return "fm_uep";
        case Branch::FlSep:
            return "fl_sep";
        case Branch::FlUep:
            return "fl_uep";
    }
    return "?";
}

EquilibriumSets equilibrium_sets(const RegionMap& map, const ReducedNetwork& net, const DeviceParams& p,
                                 CurrentPhasor saturated, double near12, double near13) {
    map.grid.validate();
    EquilibriumSets out;
    extract_family(map, net, p, saturated, true, out);
    extract_family(map, net, p, saturated, false, out);
    find_seps(out.of(Branch::FmSep1), out.of(Branch::FlSep), net, p, saturated, out.sep1_candidates);
    find_seps(out.of(Branch::FmSep2), out.of(Branch::FlSep), net, p, saturated, out.sep2_candidates);
    auto by_position = [](const EquilibriumPoint& a, const EquilibriumPoint& b) {
        return a.delta12 != b.delta12 ? a.delta12 < b.delta12 : a.delta13 < b.delta13;
    };
    std::sort(out.sep1_candidates.begin(), out.sep1_candidates.end(), by_position);
    std::sort(out.sep2_candidates.begin(), out.sep2_candidates.end(), by_position);
    out.sep1 = nearest(out.sep1_candidates, near12, near13);
    out.sep2 = nearest(out.sep2_candidates, near12, near13);
    return out;
}

const char* to_string(Verdict verdict) {
    switch (verdict) {
        case Verdict::Gfm:
            return "GFM";
        case Verdict::Gfl:
            return "GFL";
        case Verdict::Stable:
            return "stable";
        case Verdict::Undetermined:
            return "undetermined";
    }
    return "?";
}

AmbiguousVerdict::AmbiguousVerdict(double t_, double d_fm, double d_fl)
    : Error("both UEP bands entered at t=" + std::to_string(t_) + " (distance GFM " + std::to_string(d_fm) +
            ", GFL " + std::to_string(d_fl) + ")"),
      t(t_),
      distance_fm(d_fm),
      distance_fl(d_fl) {}

InstabilityReport dominant_instability(const dynamics::Trajectory& trajectory, const EquilibriumSets& sets,
                                       double sep12, double sep13, const dynamics::DynamicsParams& params,
                                       const ClassifierOptions& options, double t_from) {
    const auto& dev = params.device;
    const SegmentIndex fm_index(sets.of(Branch::FmUep), options.band);
    const SegmentIndex fl_index(sets.of(Branch::FlUep), options.band);
    InstabilityReport rep;
    for (std::size_t k = 0; k < trajectory.samples.size(); ++k) {
        const auto& s = trajectory.samples[k];
        if (s.t < t_from) continue;
        const double x = wrap_angle(s.state.delta12);
        const double y = wrap_angle(s.state.delta13);
        const double d_fm = fm_index.distance(x, y);
        const double d_fl = fl_index.distance(x, y);
        const double disp12 = wrap_angle(s.state.delta12 - sep12);
        const double disp13 = wrap_angle(s.state.delta13 - sep13);
        const bool fm_hit = d_fm < options.band && (s.algebraic.p_fm - dev.gfm.p_ref) * disp12 <= 0.0 &&
                            s.state.omega12 * disp12 > 0.0;
        const bool fl_hit =
            d_fl < options.band && -dev.gfl.ki_pll * s.algebraic.u_fl_q * disp13 <= 0.0 && s.omega13 * disp13 > 0.0;
        if (fm_hit && fl_hit) throw AmbiguousVerdict(s.t, d_fm, d_fl);
        if (fm_hit || fl_hit) {
            rep.verdict = fm_hit ? Verdict::Gfm : Verdict::Gfl;
            rep.t = s.t;
            rep.distance_fm = d_fm;
            rep.distance_fl = d_fl;
            rep.sample = k;
            return rep;
        }
    }
    if (trajectory.samples.empty() || !trajectory.completed()) return rep;
    const auto n = trajectory.samples.size();
    const auto tail = static_cast<std::size_t>(std::floor(options.tail_fraction * static_cast<double>(n)));
    bool captured = true;
    for (std::size_t k = n - std::max<std::size_t>(tail, 1); k < n; ++k) {
        const auto& s = trajectory.samples[k];
        const double e_fm = 0.5 * params.effective_inertia() * s.state.omega12 * s.state.omega12;
        const double e_fl = 0.5 * s.omega13 * s.omega13;
        if (std::max(e_fm, e_fl) >= options.kinetic_threshold) captured = false;
    }
    const auto& last = trajectory.samples.back();
    if (wrapped_distance(last.state.delta12, last.state.delta13, sep12, sep13) > options.capture_radius) {
        captured = false;
    }
    rep.t = last.t;
    rep.sample = n - 1;
    rep.distance_fm = fm_index.distance(wrap_angle(last.state.delta12), wrap_angle(last.state.delta13));
    rep.distance_fl = fl_index.distance(wrap_angle(last.state.delta12), wrap_angle(last.state.delta13));
    rep.verdict = captured ? Verdict::Stable : Verdict::Undetermined;
    return rep;
}

int damping_sign_flag(double omega12, double omega13, double d_fl_12) {
    const double v = omega12 * omega13;
    if (v == 0.0 || d_fl_12 == 0.0) return 0;
    const double prod = (v > 0.0 ? 1.0 : -1.0) * d_fl_12;
    return prod > 0.0 ? 1 : -1;
}

EnergyLedger energy_decompose(const dynamics::Trajectory& trajectory, const dynamics::DynamicsParams& params) {
    EnergyLedger ledger;
    const auto& samples = trajectory.samples;
    if (samples.empty()) return ledger;
    const auto& dev = params.device;
    const double jm = params.effective_inertia();
    const double dm = params.effective_damping();
    const double kp = dev.gfl.kp_pll;
    const double ki = dev.gfl.ki_pll;

    struct Point {
        double t;
        double w12;
        double w13;
        double dp;    // P_ref - P_FM
        double uq;
        double fd;    // F_FL,d^12 + F_FL,d^13
    };
    auto from_parts = [&](double t, const dynamics::DynamicState& y, const AlgebraicState& a,
                          const dynamics::Forces& f, double w13) {
        return Point{t, y.omega12, w13, dev.gfm.p_ref - a.p_fm, a.u_fl_q, f.fl_damping_12 + f.fl_damping_13};
    };
    EnergySample acc;
    acc.t = samples.front().t;
    const double e_fm0 = 0.5 * jm * samples.front().state.omega12 * samples.front().state.omega12;
    const double e_fl0 = 0.5 * samples.front().omega13 * samples.front().omega13;
    auto record = [&](double t, double w12, double w13) {
        EnergySample e = acc;
        e.t = t;
        e.fm_k = 0.5 * jm * w12 * w12 - e_fm0;
        e.fl_k = 0.5 * w13 * w13 - e_fl0;
        ledger.max_fm_residual = std::max(ledger.max_fm_residual, std::abs(e.fm_residual()));
        ledger.max_fl_residual = std::max(ledger.max_fl_residual, std::abs(e.fl_residual()));
        ledger.samples.push_back(e);
    };
    auto integrate_piece = [&](const Point& a, const Point& b) {
        const double h = b.t - a.t;
        if (h <= 0.0) return;
        acc.fm_p += 0.5 * h * (a.dp * a.w12 + b.dp * b.w12);
        acc.fm_d += 0.5 * h * (-dm * a.w12 * a.w12 - dm * b.w12 * b.w12);
        acc.fl_p += 0.5 * h * (ki * a.uq * a.w13 + ki * b.uq * b.w13);
        const double fa = std::isfinite(a.fd) ? a.fd : b.fd;
        const double fb = std::isfinite(b.fd) ? b.fd : a.fd;
        acc.fl_d += 0.5 * h * (fa * a.w13 + fb * b.w13);
    };

    const auto& s0 = samples.front();
    record(s0.t, s0.state.omega12, s0.omega13);
    std::size_t ev = 0;
    const auto& events = trajectory.events;
    while (ev < events.size() && events[ev].t <= s0.t) ++ev;
    for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
        const auto& sa = samples[k];
        const auto& sb = samples[k + 1];
        Point cur = from_parts(sa.t, sa.state, sa.algebraic, sa.forces, sa.omega13);
        while (ev < events.size() && events[ev].t <= sb.t) {
            const auto& e = events[ev];
            const Point before = from_parts(e.t, e.state, e.before, e.forces_before, e.omega13_before);
            integrate_piece(cur, before);
            // Jump in u_q moves the PLL speed instantly; the PI law books it as damping work.
            acc.fl_d += kp * 0.5 * (e.omega13_before + e.omega13_after) * (e.after.u_fl_q - e.before.u_fl_q);
            cur = from_parts(e.t, e.state, e.after, e.forces_after, e.omega13_after);
            ++ev;
        }
        integrate_piece(cur, from_parts(sb.t, sb.state, sb.algebraic, sb.forces, sb.omega13));
        record(sb.t, sb.state.omega12, sb.omega13);
    }
    return ledger;
}

double distance_to(const std::vector<ContourLine>& lines, double delta12, double delta13) {
    double best = kInf;
    const double x = wrap_angle(delta12);
    const double y = wrap_angle(delta13);
    for (const auto& line : lines) {
        if (line.size() == 1) best = std::min(best, std::hypot(x - line[0].delta12, y - line[0].delta13));
        for (std::size_t k = 0; k + 1 < line.size(); ++k) {
            best = std::min(best, point_segment_distance(x, y, line[k].delta12, line[k].delta13, line[k + 1].delta12,
                                                         line[k + 1].delta13));
        }
    }
    return best;
}

}  // namespace hybres::analysis
