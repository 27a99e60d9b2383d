#pragma once

// Closed-form EIT cooling theory for a single vibrational mode and its
// mode-by-mode application to a whole crystal.
//
// All frequencies are angular (rad/s); conversion to cycles/s happens at the
// I/O boundary only.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "eitcool/chain_mechanics.hpp"
#include "eitcool/errors.hpp"

namespace eitcool {

struct EITBeams {
    double omega_sigma = 0.0;  // dressing Rabi frequency
    double omega_pi = 0.0;     // probe Rabi frequency
    double delta = 0.0;        // dressing detuning, > 0 is blue
    double delta_pi = 0.0;     // probe detuning; only the master equation uses it
    double gamma = 0.0;        // excited-state linewidth
    double branching_g = 2.0 / 3.0;  // fraction of decays |e> -> |g>
    double branching_f = 1.0 / 3.0;  // fraction of decays |e> -> |f>

    /// Probe-to-dressing ratio above which the weak-probe theory is questionable.
    static constexpr double weak_probe_limit = 0.5;

    void validate() const {
        if (!(gamma > 0.0)) throw ConfigError("beams: linewidth gamma must be positive");
        if (!(delta >= 0.0)) throw ConfigError("beams: detuning delta must be >= 0 (blue)");
        if (!(omega_sigma >= 0.0) || !(omega_pi >= 0.0))
            throw ConfigError("beams: Rabi frequencies must be >= 0");
        if (branching_g < 0.0 || branching_f < 0.0 ||
            std::abs(branching_g + branching_f - 1.0) > 1e-12)
            throw ConfigError("beams: branching ratios must be non-negative and sum to 1");
        if (!std::isfinite(delta_pi)) throw ConfigError("beams: delta_pi must be finite");
    }

    std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        if (omega_sigma > 0.0 && omega_pi / omega_sigma > weak_probe_limit)
            w.emplace_back("beams: omega_pi/omega_sigma exceeds 0.5, outside the weak-probe regime");
        if (omega_sigma == 0.0 && omega_pi > 0.0)
            w.emplace_back("beams: probe without dressing field, no EIT");
        return w;
    }
};

struct RateCoefficients {
    double a_plus = 0.0;   // blue-sideband (heating) coefficient, 1/s
    double a_minus = 0.0;  // red-sideband (cooling) coefficient, 1/s

    bool cools() const { return a_minus > a_plus; }
};

/// Dressed-state light shift delta = (sqrt(Os^2 + D^2) - |D|)/2, evaluated in a
/// cancellation-free form.
inline double light_shift(const EITBeams& beams) {
    const double os2 = beams.omega_sigma * beams.omega_sigma;
    const double d = std::abs(beams.delta);
    const double root = std::sqrt(os2 + d * d);
    if (root == 0.0) return 0.0;
    return 0.5 * os2 / (root + d);
}

/// Dressing Rabi frequency that produces the light shift `shift` at detuning `delta`.
inline double inverse_light_shift(double shift, double delta) {
    if (shift < 0.0 || delta < 0.0)
        throw ConfigError("inverse_light_shift: shift and detuning must be >= 0");
    return 2.0 * std::sqrt(shift * (shift + delta));
}

/// Weak-probe rate coefficients A+- for a mode of angular frequency `omega`.
inline RateCoefficients rate_coefficients(const EITBeams& beams, double omega) {
    if (!(omega > 0.0)) throw ConfigError("rate_coefficients: mode frequency must be positive");
    const double g = beams.gamma;
    const double prefactor = beams.omega_pi * beams.omega_pi / g;
    const double gw2 = g * g * omega * omega;
    const double dressing = 0.25 * beams.omega_sigma * beams.omega_sigma;
    auto lorentz = [&](double sign) {
        const double detune = dressing - omega * (omega - sign * beams.delta);
        return prefactor * gw2 / (gw2 + 4.0 * detune * detune);
    };
    return {lorentz(+1.0), lorentz(-1.0)};
}

/// Steady-state mean phonon number A+/(A- - A+).
inline double steady_state_nbar(const RateCoefficients& rc) {
    if (!rc.cools())
        throw RegimeError("steady_state_nbar: A+ >= A-, the mode is heated and has no steady state");
    return rc.a_plus / (rc.a_minus - rc.a_plus);
}

/// Cooling rate eta^2 (A- - A+); negative values signal heating.
inline double cooling_rate(double eta, const RateCoefficients& rc) {
    if (eta < 0.0) throw ConfigError("cooling_rate: eta must be >= 0");
    return eta * eta * (rc.a_minus - rc.a_plus);
}

struct CoolingTrajectory {
    std::vector<double> times;               // s
    std::vector<std::vector<double>> nbar;   // [mode][time]
    std::vector<double> rates;               // R per mode, 1/s
    std::vector<double> heating_rates;       // R_h per mode, phonons/s
};

inline std::vector<double> linear_time_grid(double duration, int points) {
    if (points < 2 || !(duration > 0.0))
        throw ConfigError("time grid: need duration > 0 and at least two points");
    std::vector<double> t(points);
    for (int i = 0; i < points; ++i) t[i] = duration * i / (points - 1);
    return t;
}

/// n(t) for n' = -R n + R_h, closed form. Requires R > 0.
inline CoolingTrajectory evolve_nbar(double nbar0, double rate, double heating_rate,
                                     const std::vector<double>& times) {
    if (!(rate > 0.0))
        throw RegimeError("evolve_nbar: closed form requires a positive cooling rate");
    const double neq = heating_rate / rate;
    CoolingTrajectory traj;
    traj.times = times;
    traj.rates = {rate};
    traj.heating_rates = {heating_rate};
    std::vector<double> n(times.size());
    for (size_t i = 0; i < times.size(); ++i)
        n[i] = (nbar0 - neq) * std::exp(-rate * times[i]) + neq;
    traj.nbar.push_back(std::move(n));
    return traj;
}

/// Fixed-step classical Runge-Kutta integration of n' = -R(t) n + R_h(t).
/// `substeps` RK4 steps are taken between consecutive grid times. Any sign of R
/// is accepted, so heating trajectories are representable.
inline CoolingTrajectory integrate_nbar(double nbar0, const std::function<double(double)>& rate,
                                        const std::function<double(double)>& heating_rate,
                                        const std::vector<double>& times, int substeps = 64) {
    CoolingTrajectory traj;
    traj.times = times;
    traj.rates = {rate(times.empty() ? 0.0 : times.front())};
    traj.heating_rates = {heating_rate(times.empty() ? 0.0 : times.front())};
    auto f = [&](double t, double n) { return -rate(t) * n + heating_rate(t); };
    std::vector<double> out(times.size());
    double n = nbar0;
    for (size_t i = 0; i < times.size(); ++i) {
        if (i > 0) {
            const double h = (times[i] - times[i - 1]) / substeps;
            double t = times[i - 1];
            for (int s = 0; s < substeps; ++s) {
                const double k1 = f(t, n);
                const double k2 = f(t + 0.5 * h, n + 0.5 * h * k1);
                const double k3 = f(t + 0.5 * h, n + 0.5 * h * k2);
                const double k4 = f(t + h, n + h * k3);
                n += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
                t += h;
            }
        }
        out[i] = n;
    }
    traj.nbar.push_back(std::move(out));
    return traj;
}

/// Time at which n(t) first drops below `level`; nullopt if never.
inline std::optional<double> time_to_reach(double nbar0, double rate, double heating_rate,
                                           double level = 1.0) {
    if (nbar0 <= level) return 0.0;
    if (!(rate > 0.0)) return std::nullopt;
    const double neq = heating_rate / rate;
    if (neq >= level) return std::nullopt;
    return std::log((nbar0 - neq) / (level - neq)) / rate;
}

enum class ModeStatus { ok, heating, uncoupled };

inline const char* status_name(ModeStatus s) {
    switch (s) {
        case ModeStatus::ok: return "ok";
        case ModeStatus::heating: return "heating";
        case ModeStatus::uncoupled: return "uncoupled";
    }
    return "?";
}

struct ModeCoolingSummary {
    Branch branch = Branch::axial;
    int index = 0;
    double frequency = 0.0;  // rad/s
    double eta = 0.0;
    RateCoefficients coefficients;
    double rate = 0.0;                       // 1/s
    std::optional<double> steady_state;      // absent in the heating regime
    std::optional<double> time_below_one;    // s
    ModeStatus status = ModeStatus::ok;
};

struct MultimodeScan {
    CoolingTrajectory trajectory;
    std::vector<ModeCoolingSummary> modes;
};

struct MultimodeOptions {
    double initial_nbar = 5.0;
    double heating_rate = 0.0;  // phonons/s, applied to every mode
    int time_points = 101;
};

/// Independent rate-equation evolution of every mode in `set`. Heating-regime
/// modes are flagged and still evolved (their n grows); they never abort the scan.
inline MultimodeScan multimode_cooling_scan(const ModeSet& set, const EITBeams& beams,
                                            double duration, const MultimodeOptions& opt = {}) {
    beams.validate();
    MultimodeScan scan;
    scan.trajectory.times = linear_time_grid(duration, opt.time_points);
    const auto& t = scan.trajectory.times;
    for (const auto& mode : set.modes) {
        if (mode.lamb_dicke.size() == 0)
            throw ConfigError("multimode_cooling_scan: Lamb-Dicke factors missing");
        ModeCoolingSummary s;
        s.branch = mode.branch;
        s.index = mode.index;
        s.frequency = mode.frequency;
        // Sum over ions of eta_im^2 equals the single-ion equivalent squared.
        s.eta = std::sqrt(mode.lamb_dicke.squaredNorm());
        s.coefficients = rate_coefficients(beams, mode.frequency);
        s.rate = cooling_rate(s.eta, s.coefficients);
        const double heating = s.eta * s.eta * s.coefficients.a_plus + opt.heating_rate;
        std::vector<double> n(t.size());
        if (s.eta == 0.0) {
            s.status = ModeStatus::uncoupled;
            for (size_t i = 0; i < t.size(); ++i) n[i] = opt.initial_nbar + opt.heating_rate * t[i];
        } else if (!s.coefficients.cools()) {
            s.status = ModeStatus::heating;
            // n' = -R n + R_h with R <= 0: growth, solved exactly.
            for (size_t i = 0; i < t.size(); ++i) {
                if (s.rate == 0.0)
                    n[i] = opt.initial_nbar + heating * t[i];
                else
                    n[i] = (opt.initial_nbar - heating / s.rate) * std::exp(-s.rate * t[i]) +
                           heating / s.rate;
            }
        } else {
            s.steady_state = heating / s.rate;
            s.time_below_one = time_to_reach(opt.initial_nbar, s.rate, heating);
            n = evolve_nbar(opt.initial_nbar, s.rate, heating, t).nbar.front();
        }
        scan.trajectory.nbar.push_back(std::move(n));
        scan.trajectory.rates.push_back(s.rate);
        scan.trajectory.heating_rates.push_back(heating);
        scan.modes.push_back(s);
    }
    return scan;
}

inline MultimodeScan multimode_cooling_scan(const TrapConfig& trap, const BeamGeometry& geometry,
                                            const EITBeams& beams, double duration,
                                            const MultimodeOptions& opt = {}) {
    return multimode_cooling_scan(compute_modes(trap, geometry), beams, duration, opt);
}

struct CoolingRangePoint {
    double omega = 0.0;
    RateCoefficients coefficients;
    double nbar_ss = std::numeric_limits<double>::quiet_NaN();  // NaN when heating
    double rate = 0.0;
    ModeStatus status = ModeStatus::ok;
};

/// Steady state and cooling rate across a grid of trap frequencies.
inline std::vector<CoolingRangePoint> cooling_range_scan(const EITBeams& beams, double eta,
                                                         const std::vector<double>& omegas) {
    beams.validate();
    std::vector<CoolingRangePoint> out;
    out.reserve(omegas.size());
    for (double w : omegas) {
        CoolingRangePoint p;
        p.omega = w;
        p.coefficients = rate_coefficients(beams, w);
        p.rate = cooling_rate(eta, p.coefficients);
        if (p.coefficients.cools())
            p.nbar_ss = steady_state_nbar(p.coefficients);
        else if (p.coefficients.a_plus == 0.0 && p.coefficients.a_minus == 0.0)
            p.status = ModeStatus::uncoupled;
        else
            p.status = ModeStatus::heating;
        out.push_back(p);
    }
    return out;
}

}  // namespace eitcool
