#pragma once

#include <complex>
#include <numbers>

namespace hybres::devices {

enum class GfmMode { Nc, Cs };
enum class GflMode { Lvrt, Nc, Hvrt };

const char* to_string(GfmMode mode);
const char* to_string(GflMode mode);

/// One of the six GFM x GFL mode pairings, numbered 1..6:
/// 1 NC+LVRT, 2 NC+NC, 3 NC+HVRT, 4 CS+LVRT, 5 CS+NC, 6 CS+HVRT.
class ControlCombination {
  public:
    constexpr ControlCombination() = default;
    constexpr ControlCombination(GfmMode gfm, GflMode gfl)
        : index_(1 + (gfm == GfmMode::Cs ? 3 : 0) + static_cast<int>(gfl)) {}

    /// Throws InvalidInput outside 1..6.
    static ControlCombination from_index(int n);

    [[nodiscard]] constexpr int index() const { return index_; }
    [[nodiscard]] constexpr GfmMode gfm() const { return index_ > 3 ? GfmMode::Cs : GfmMode::Nc; }
    [[nodiscard]] constexpr GflMode gfl() const { return static_cast<GflMode>((index_ - 1) % 3); }

    friend constexpr bool operator==(ControlCombination, ControlCombination) = default;

  private:
    int index_ = 2;
};

enum class SaturationAnglePolicy { Hold, Fixed };

/// A current phasor in a converter's own rotating frame.
struct CurrentPhasor {
    double magnitude = 0.0;
    double angle = 0.0;
};

struct GfmParams {
    double p_ref = 1.68;
    double q_ref = 0.21;
    double u_set = 1.01;       // u_FM,0
    double inertia = 0.5;      // J_FM
    double damping = 1.0;      // D_FM
    double kq = 0.5;           // Q-V droop gain
    double i_max = 1.5;        // absolute p.u. limit
    double i_saturated = 1.5;  // magnitude held during CS
    SaturationAnglePolicy angle_policy = SaturationAnglePolicy::Hold;
    double fixed_angle = 0.0;

    void validate() const;
};

struct GflParams {
    double p_ref = 1.39;
    double q_ref = 0.27;
    double i0 = 1.0;
    double phi0 = 0.0;
    double i_max = 1.2;
    double k_i_lvrt = 0.5;
    double k_phi_lvrt = 0.0;
    double k_i_hvrt = 2.46;
    double k_phi_hvrt = 0.0;
    double u_lv = 0.9;
    double u_hv = 1.1;
    double kp_pll = 10.0;
    double ki_pll = 100.0;

    void validate() const;
};

/// Ride-through mode implied by the PCC voltage; [u_lv, u_hv] is NC.
GflMode gfl_mode_of(double u_fl, const GflParams& p);

/// Injected current (magnitude, angle in the PLL frame) under `mode`.
CurrentPhasor gfl_injection(double u_fl, GflMode mode, const GflParams& p);

/// d(I_FL)/dU_FL and d(phi_FL)/dU_FL; zero on clamped branches.
struct InjectionSlope {
    double d_magnitude = 0.0;
    double d_angle = 0.0;
};
InjectionSlope gfl_injection_slope(double u_fl, GflMode mode, const GflParams& p);

/// Q-V droop reference voltage.
double gfm_voltage_ref(double q_fm, const GfmParams& p);

/// Saturated current preset sampled at NC->CS entry. `entry_current` is the
/// GFM terminal current expressed in the GFM (delta12-aligned) frame.
CurrentPhasor gfm_saturated_injection(std::complex<double> entry_current, const GfmParams& p);

}  // namespace hybres::devices
