#include "hybres/devices.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hybres/error.hpp"

namespace hybres::devices {

namespace {
constexpr double kHalfPi = std::numbers::pi / 2.0;
}

const char* to_string(GfmMode mode) { return mode == GfmMode::Nc ? "NC" : "CS"; }

const char* to_string(GflMode mode) {
    switch (mode) {
        case GflMode::Lvrt:
            return "LVRT";
        case GflMode::Nc:
            return "NC";
        case GflMode::Hvrt:
            return "HVRT";
    }
    return "?";
}

ControlCombination ControlCombination::from_index(int n) {
    if (n < 1 || n > 6) {
        throw InvalidInput("control combination index must be 1..6, got " + std::to_string(n));
    }
    const GfmMode gfm = n > 3 ? GfmMode::Cs : GfmMode::Nc;
    const auto gfl = static_cast<GflMode>((n - 1) % 3);
    return {gfm, gfl};
}

void GfmParams::validate() const {
    if (!(inertia > 0.0)) throw InvalidInput("gfm.inertia must be positive");
    if (!(damping >= 0.0)) throw InvalidInput("gfm.damping must be non-negative");
    if (!(i_max > 0.0)) throw InvalidInput("gfm.i_max must be positive");
    if (!(i_saturated > 0.0) || i_saturated > i_max * (1.0 + 1e-12)) {
        throw InvalidInput("gfm saturated current must lie in (0, i_max]");
    }
    if (kq == 0.0) throw InvalidInput("gfm.kq must be nonzero");
}

void GflParams::validate() const {
    if (!(u_lv > 0.0) || !(u_lv < u_hv)) throw InvalidInput("gfl requires 0 < u_lv < u_hv");
    if (!(i_max >= i0)) throw InvalidInput("gfl.i_max must be at least i0");
    if (!(kp_pll > 0.0) || !(ki_pll > 0.0)) throw InvalidInput("gfl PLL gains must be positive");
}

GflMode gfl_mode_of(double u_fl, const GflParams& p) {
    if (u_fl < p.u_lv) return GflMode::Lvrt;
    if (u_fl > p.u_hv) return GflMode::Hvrt;
    return GflMode::Nc;
}

CurrentPhasor gfl_injection(double u_fl, GflMode mode, const GflParams& p) {
    switch (mode) {
        case GflMode::Nc:
            return {p.i0, p.phi0};
        case GflMode::Lvrt:
            return {std::min(p.k_i_lvrt * (p.u_lv - u_fl) + p.i0, p.i_max),
                    std::max(p.k_phi_lvrt * (u_fl - p.u_lv) + p.phi0, -kHalfPi)};
        case GflMode::Hvrt:
            return {std::min(p.k_i_hvrt * (u_fl - p.u_hv) + p.i0, p.i_max),
                    std::min(p.k_phi_hvrt * (u_fl - p.u_hv) + p.phi0, kHalfPi)};
    }
    return {p.i0, p.phi0};
}

InjectionSlope gfl_injection_slope(double u_fl, GflMode mode, const GflParams& p) {
    InjectionSlope s;
    switch (mode) {
        case GflMode::Nc:
            break;
        case GflMode::Lvrt:
            if (p.k_i_lvrt * (p.u_lv - u_fl) + p.i0 < p.i_max) s.d_magnitude = -p.k_i_lvrt;
            if (p.k_phi_lvrt * (u_fl - p.u_lv) + p.phi0 > -kHalfPi) s.d_angle = p.k_phi_lvrt;
            break;
        case GflMode::Hvrt:
            if (p.k_i_hvrt * (u_fl - p.u_hv) + p.i0 < p.i_max) s.d_magnitude = p.k_i_hvrt;
            if (p.k_phi_hvrt * (u_fl - p.u_hv) + p.phi0 < kHalfPi) s.d_angle = p.k_phi_hvrt;
            break;
    }
    return s;
}

double gfm_voltage_ref(double q_fm, const GfmParams& p) { return p.kq * (p.q_ref - q_fm) + p.u_set; }

CurrentPhasor gfm_saturated_injection(std::complex<double> entry_current, const GfmParams& p) {
    if (p.angle_policy == SaturationAnglePolicy::Fixed) {
        return {p.i_saturated, p.fixed_angle};
    }
    return {p.i_saturated, std::arg(entry_current)};
}

}  // namespace hybres::devices
