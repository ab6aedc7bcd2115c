#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybres/algebraic.hpp"
#include "hybres/dynamics.hpp"
#include "hybres/error.hpp"
#include "hybres/grid.hpp"

namespace hybres::analysis {

using algebraic::AlgebraicState;
using algebraic::DeviceParams;
using algebraic::RegionMap;
using devices::ControlCombination;
using devices::CurrentPhasor;
using network::ReducedNetwork;

/// Zero of (P_FM - P_ref, u_FL,q) under a fixed combination.
struct EquilibriumPoint {
    bool converged = false;
    double delta12 = 0.0;
    double delta13 = 0.0;
    AlgebraicState state;
    int iterations = 0;
    double residual = 0.0;
};

/// 2-D Newton on the equilibrium conditions starting from (delta12, delta13).
EquilibriumPoint solve_equilibrium(double delta12, double delta13, ControlCombination combination,
                                   const ReducedNetwork& net, const DeviceParams& p,
                                   std::optional<CurrentPhasor> saturated = std::nullopt);

/// Which device quantities are derived from the pre-fault operating point.
struct OperatingPointRules {
    bool derive_gfl_nominal = true;    // I_FL,0 and phi_FL,0 from the GFL power reference
    bool derive_gfl_limit = true;      // I_FL,max = ratio * I_FL,0
    bool derive_k_phi_lvrt = true;     // angle reaches -pi/2 at zero voltage
    bool derive_k_phi_hvrt = true;     // angle reaches +pi/2 at hvrt_clamp_voltage
    bool derive_gfm_limit = true;      // I_FM,max = ratio * I_FM,0
    bool derive_gfm_saturated = true;  // I_sa = saturation_ratio * I_FM,max
    double gfl_limit_ratio = 1.2;
    double gfm_limit_ratio = 1.5;
    double saturation_ratio = 1.0;
    double hvrt_clamp_voltage = 1.3;
};

struct OperatingPoint {
    EquilibriumPoint sep1;
    double gfm_nominal_current = 0.0;  // I_FM,0
    int nominal_iterations = 0;
};

/// Resolves SEP1 on the pre-fault network and fills the derived parameters of
/// `p` per `rules`. Throws NoSolution when no pre-fault equilibrium exists.
OperatingPoint resolve_operating_point(const ReducedNetwork& prefault, DeviceParams& p,
                                       const OperatingPointRules& rules = {});

/// Saturated current the GFM would sample if it saturated at `at` on `net`.
CurrentPhasor reference_saturation(const ReducedNetwork& net, const EquilibriumPoint& at, const DeviceParams& p);

struct PotentialForces {
    double fm = 0.0;  // -(P_ref - P_FM)
    double fl = 0.0;  // -K_i u_FL,q
};

/// Throws NoSolution when the point is not solvable under `combination`.
PotentialForces potential_forces(double delta12, double delta13, ControlCombination combination,
                                 const ReducedNetwork& net, const DeviceParams& p,
                                 std::optional<CurrentPhasor> saturated = std::nullopt);

struct DampingCoefficients {
    double d12 = 0.0;
    double d13 = 0.0;
};

/// GFL damping coefficients from the explicit partition-matrix expressions.
DampingCoefficients damping_coefficients(const AlgebraicState& state, const algebraic::Partials& partials,
                                         const ReducedNetwork& net, const DeviceParams& p);

/// Per-cell field over a classified region map. Cells without a consistent
/// combination, and cells where the partials are singular, hold NaN.
struct FieldGrid {
    GridSpec grid;
    std::vector<int> combination;
    std::vector<double> f_fm_p;
    std::vector<double> f_fl_p;
    std::vector<double> d_fl_12;
    std::vector<double> d_fl_13;
    std::vector<std::uint8_t> braking_fm;  // potential force opposes displacement from the reference SEP
    std::vector<std::uint8_t> braking_fl;
    std::vector<Polyline> d12_zero;
    std::vector<Polyline> d13_zero;
};

FieldGrid compute_fields(const RegionMap& map, const ReducedNetwork& net, const DeviceParams& p, double ref_delta12,
                         double ref_delta13, int threads = 1);

enum class Branch { FmSep1, FmSep2, FmUep, FlSep, FlUep };

const char* to_string(Branch branch);

struct ContourPoint {
    double delta12 = 0.0;
    double delta13 = 0.0;
    int combination = 0;
    double residual = 0.0;
    double slope = 0.0;  // dP_FM/d(delta12) or du_q/d(delta13)
};

using ContourLine = std::vector<ContourPoint>;

struct EquilibriumSets {
    std::array<std::vector<ContourLine>, 5> branches;  // indexed by Branch
    std::vector<EquilibriumPoint> sep1_candidates;
    std::vector<EquilibriumPoint> sep2_candidates;
    std::optional<EquilibriumPoint> sep1;
    std::optional<EquilibriumPoint> sep2;
    int dropped_crossings = 0;  // edges whose sign change came from a mode discontinuity

    [[nodiscard]] const std::vector<ContourLine>& of(Branch b) const { return branches[static_cast<int>(b)]; }
};

/// Zero contours of P_FM - P_ref and u_FL,q over a classified map, polished,
/// partitioned into SEP/UEP branches. `near` selects SEP1/SEP2 among several
/// intersections. Reports no SEP when the branches do not intersect.
EquilibriumSets equilibrium_sets(const RegionMap& map, const ReducedNetwork& net, const DeviceParams& p,
                                 CurrentPhasor saturated, double near12, double near13);

enum class Verdict { Gfm, Gfl, Stable, Undetermined };

const char* to_string(Verdict verdict);

struct InstabilityReport {
    Verdict verdict = Verdict::Undetermined;
    double t = 0.0;  // sample time of the verdict
    double distance_fm = 0.0;
    double distance_fl = 0.0;
    std::size_t sample = 0;
};

struct ClassifierOptions {
    double band = 0.02;
    double capture_radius = 0.05;
    double kinetic_threshold = 1e-4;
    double tail_fraction = 0.1;
};

/// Throws AmbiguousVerdict when both UEP bands are entered at the same sample.
InstabilityReport dominant_instability(const dynamics::Trajectory& trajectory, const EquilibriumSets& sets,
                                       double sep12, double sep13, const dynamics::DynamicsParams& params,
                                       const ClassifierOptions& options = {}, double t_from = 0.0);

class AmbiguousVerdict : public Error {
  public:
    AmbiguousVerdict(double t, double d_fm, double d_fl);
    double t;
    double distance_fm;
    double distance_fl;
};

/// +1 when the cross damping of the GFM speed stabilizes the GFL, -1 when it
/// destabilizes, 0 on the boundary.
int damping_sign_flag(double omega12, double omega13, double d_fl_12);

struct EnergySample {
    double t = 0.0;
    double fm_k = 0.0;
    double fm_p = 0.0;
    double fm_d = 0.0;
    double fl_k = 0.0;
    double fl_p = 0.0;
    double fl_d = 0.0;

    [[nodiscard]] double fm_residual() const { return fm_k - fm_p - fm_d; }
    [[nodiscard]] double fl_residual() const { return fl_k - fl_p - fl_d; }
};

struct EnergyLedger {
    std::vector<EnergySample> samples;
    double max_fm_residual = 0.0;
    double max_fl_residual = 0.0;
};

EnergyLedger energy_decompose(const dynamics::Trajectory& trajectory, const dynamics::DynamicsParams& params);

/// Distance from a point to a set of contour lines in the wrapped angle plane.
double distance_to(const std::vector<ContourLine>& lines, double delta12, double delta13);

}  // namespace hybres::analysis
