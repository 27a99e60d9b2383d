#include "eitcool/lindblad_engine.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "eitcool/estimators.hpp"
#include "support.hpp"

using namespace eitcool;
using eitcool::testing::khz;
using eitcool::testing::linspace;
using eitcool::testing::mhz;

namespace {

const double kGamma = mhz(21.57);

EITBeams fig1_beams(double omega_sigma_mhz, double omega_pi_mhz) {
    EITBeams b;
    b.gamma = kGamma;
    b.delta = mhz(100);
    b.delta_pi = b.delta;
    b.omega_sigma = mhz(omega_sigma_mhz);
    b.omega_pi = mhz(omega_pi_mhz);
    return b;
}

LambdaSystem mode_system(const EITBeams& b, double eta, int cutoff) {
    LambdaSystem s;
    s.beams = b;
    s.eta_total = eta;
    s.fock_cutoff = cutoff;
    s.mode_frequency = light_shift(b);
    return s;
}

ComplexMatrix atom_projector(Level a) {
    ComplexMatrix r = ComplexMatrix::Zero(3, 3);
    r(static_cast<int>(a), static_cast<int>(a)) = 1.0;
    return r;
}

double argmax_x(const std::vector<AbsorptionPoint>& s) {
    return std::max_element(s.begin(), s.end(), [](auto& a, auto& b) { return a.scatter_rate < b.scatter_rate; })
        ->delta_pi;
}

std::vector<double> grid(double a, double b, double step) {
    std::vector<double> g;
    for (double x = a; x <= b + 0.5 * step; x += step) g.push_back(x);
    return g;
}

}  // namespace

TEST(Liouvillian, PreservesTrace) {
    LambdaSystem atom;
    atom.beams = fig1_beams(50, 10);
    EXPECT_LT(trace_preservation_defect(build_liouvillian(atom), atom.dimension()), 1e-12);
    const auto sys = mode_system(fig1_beams(50, 10), 0.05, 8);
    const auto l = build_liouvillian(sys);
    EXPECT_LT(trace_preservation_defect(l, sys.dimension()), 1e-12);

    const int d = sys.dimension();
    const ComplexMatrix mixed = ComplexMatrix::Identity(d, d) / static_cast<double>(d);
    const ComplexMatrix out = unvectorize(l * vectorize(mixed), d);
    EXPECT_LT(std::abs(out.trace()), 1e-12 * sys.beams.gamma);
}

TEST(Liouvillian, DimensionGuard) {
    auto sys = mode_system(fig1_beams(50, 10), 0.05, 1364);
    EXPECT_EQ(sys.dimension(), 4095);
    EXPECT_NO_THROW(sys.validate());
    sys.fock_cutoff = 1365;
    EXPECT_THROW(build_liouvillian(sys), ConfigError);
}

TEST(Liouvillian, PureDecayWithoutFields) {
    LambdaSystem atom;
    atom.beams = fig1_beams(0, 0);
    const auto times = linspace(0, 5.0 / kGamma, 11);
    const auto states = evolve_density(atom, atom_projector(Level::e), times);
    for (size_t i = 0; i < times.size(); ++i) {
        EXPECT_NEAR(level_population(atom, states[i].matrix, Level::e), std::exp(-kGamma * times[i]), 1e-9);
        EXPECT_NEAR(level_population(atom, states[i].matrix, Level::f),
                    atom.beams.branching_f * (1 - std::exp(-kGamma * times[i])), 1e-9);
    }
}

TEST(Liouvillian, DarkStateAtTwoPhotonResonance) {
    for (double os : {20.0, 50.0, 80.0}) {
        LambdaSystem atom;
        atom.beams = fig1_beams(os, 0.2 * os);
        const auto rho = steady_state(atom);
        EXPECT_FALSE(rho.violation().has_value());
        EXPECT_LT(level_population(atom, rho.matrix, Level::e), 1e-6) << os;
        // population split fixed by the dark-state amplitudes
        const double ratio = level_population(atom, rho.matrix, Level::g) / level_population(atom, rho.matrix, Level::f);
        EXPECT_NEAR(ratio, 0.04, 1e-6);
    }
}

TEST(Liouvillian, DegenerateSteadyStateRejected) {
    LambdaSystem atom;
    atom.beams = fig1_beams(0, 0);
    EXPECT_THROW(steady_state(atom), NumericalError);
}

TEST(DensityOperator, InvariantChecks) {
    ComplexMatrix r = ComplexMatrix::Zero(2, 2);
    r(0, 0) = 0.5;
    r(1, 1) = 0.5;
    EXPECT_FALSE((DensityOperator{r, 0}.violation()));
    ComplexMatrix bad = r;
    bad(0, 0) = 0.6;
    EXPECT_THROW((DensityOperator{bad, 0}.check()), NumericalError);
    bad = r;
    bad(0, 1) = Complex(0.1, 0.0);
    EXPECT_THROW((DensityOperator{bad, 0}.check()), NumericalError);
    bad = r;
    bad(0, 0) = 1.1;
    bad(1, 1) = -0.1;
    EXPECT_THROW((DensityOperator{bad, 0}.check()), NumericalError);
}

TEST(AbsorptionSpectrum, FanoProfileFeatures) {
    LambdaSystem atom;
    atom.beams = fig1_beams(50, 0.5);
    const double delta = atom.beams.delta, shift = light_shift(atom.beams);

    const auto at_dark = absorption_spectrum(atom, {delta});
    const double step = khz(10);
    const auto narrow = absorption_spectrum(atom, grid(delta + shift - mhz(1), delta + shift + mhz(1), step));
    EXPECT_LT(at_dark[0].scatter_rate, 1e-6 * kGamma);
    EXPECT_LE(std::abs(argmax_x(narrow) - (delta + shift)), step);

    const auto broad = absorption_spectrum(atom, grid(-mhz(60), mhz(60), mhz(0.5)));
    EXPECT_LT(std::abs(argmax_x(broad)), 0.5 * kGamma);
    // the narrow feature is much narrower than the broad one
    double peak = 0.0;
    for (auto& p : narrow) peak = std::max(peak, p.scatter_rate);
    int above = 0;
    for (auto& p : narrow) above += p.scatter_rate > 0.5 * peak;
    EXPECT_LT(above * step, 0.1 * kGamma);
}

TEST(AbsorptionSpectrum, UndressedLimitIsTwoLevelLorentzian) {
    LambdaSystem atom;
    // weak dressing only empties |g>; nothing decays back into it
    atom.beams = fig1_beams(1.0, 1.0);
    atom.beams.branching_g = 0.0;
    atom.beams.branching_f = 1.0;
    const double om = atom.beams.omega_pi, g = kGamma;
    for (const auto& p : absorption_spectrum(atom, grid(-mhz(40), mhz(40), mhz(4)))) {
        const double expected = g * 0.25 * om * om / (p.delta_pi * p.delta_pi + 0.25 * g * g + 0.5 * om * om);
        EXPECT_NEAR(p.scatter_rate, expected, 1e-3 * expected);
    }
    EXPECT_NEAR(argmax_x(absorption_spectrum(atom, grid(-mhz(5), mhz(5), mhz(0.1)))), 0.0, mhz(0.05));
}

TEST(AbsorptionSpectrum, NarrowPeakTracksLightShift) {
    const double step = khz(20);
    for (double os : {20.0, 35.0, 50.0, 65.0}) {
        LambdaSystem atom;
        atom.beams = fig1_beams(os, 0.5);
        const double centre = atom.beams.delta + light_shift(atom.beams);
        const auto s = absorption_spectrum(atom, grid(centre - mhz(0.6), centre + mhz(0.6), step));
        EXPECT_LE(std::abs(argmax_x(s) - centre), step) << os;
    }
    LambdaSystem with_mode = mode_system(fig1_beams(50, 1), 0.05, 3);
    EXPECT_THROW(absorption_spectrum(with_mode, {0.0}), ConfigError);
}

TEST(EITCooling, UncoupledModeKeepsItsPopulation) {
    auto sys = mode_system(fig1_beams(50, 10), 0.0, 15);
    sys.beams.delta_pi += mhz(1);  // off the dark resonance so the atom scatters
    const auto res = simulate_eit_cooling(sys, 0.5, 20e-6, 11);
    for (double n : res.trajectory.nbar[0]) EXPECT_NEAR(n, res.trajectory.nbar[0][0], 1e-10);
    // atom starts in its steady state, so the scattering record grows linearly
    const auto& sc = res.scattering;
    for (size_t i = 0; i < sc.scattered_photons.size(); ++i)
        EXPECT_NEAR(sc.scattered_photons[i], kGamma * sc.excited_population[0] * res.trajectory.times[i],
                    1e-6 * sc.scattered_photons.back() + 1e-12);
}

TEST(EITCooling, SteadyStateMatchesRateModel) {
    for (double os : {50.0, 70.0})
        for (double ratio : {0.1, 0.2})
            for (double eta : {0.02, 0.05}) {
                const auto b = fig1_beams(os, ratio * os);
                const auto sys = mode_system(b, eta, 10);
                const double sim = mean_phonon_number(sys, steady_state(sys).matrix);
                const double model = steady_state_nbar(rate_coefficients(b, light_shift(b)));
                EXPECT_NEAR(sim / model, 1.0, 0.25) << os << " " << ratio << " " << eta;
            }
}

TEST(EITCooling, CoolingFromThermalTwoMatchesRateModel) {
    const auto b = fig1_beams(100, 15);
    const auto sys = mode_system(b, 0.05, 34);
    const auto rc = rate_coefficients(b, light_shift(b));
    const double rate = cooling_rate(0.05, rc);
    IntegratorOptions opt;
    opt.relative_tolerance = 1e-7;
    opt.absolute_tolerance = 1e-10;
    const auto res = simulate_eit_cooling(sys, 2.0, linspace(0, 1.5 / rate, 16), opt);
    const auto& n = res.trajectory.nbar[0];
    EXPECT_NEAR(n.front(), 2.0, 1e-4);  // thermal start truncated at the cutoff
    const auto fit = cooling_rate_fit(res.trajectory.times, n);
    EXPECT_NEAR(fit.value("rate") / rate, 1.0, 0.25) << fit.value("rate") << " vs " << rate;
    // scattering record is non-decreasing and P_e stays small
    for (size_t i = 1; i < n.size(); ++i) {
        EXPECT_GE(res.scattering.scattered_photons[i], res.scattering.scattered_photons[i - 1]);
        EXPECT_LT(res.scattering.excited_population[i], 0.05);
    }
    EXPECT_FALSE(res.final_state.violation().has_value());
}

TEST(EITCooling, StepHalvingChangesNbarBelowTolerance) {
    const auto sys = mode_system(fig1_beams(70, 10.5), 0.05, 15);
    const auto times = linspace(0, 2e-6, 5);
    IntegratorOptions coarse, fine;
    coarse.fixed_step = 1e-9;
    fine.fixed_step = 0.5e-9;
    const auto a = simulate_eit_cooling(sys, 0.5, times, coarse);
    const auto c = simulate_eit_cooling(sys, 0.5, times, fine);
    const auto adaptive = simulate_eit_cooling(sys, 0.5, times);
    for (size_t i = 0; i < times.size(); ++i) {
        EXPECT_LT(std::abs(a.trajectory.nbar[0][i] - c.trajectory.nbar[0][i]), 1e-6);
        EXPECT_LT(std::abs(adaptive.trajectory.nbar[0][i] - c.trajectory.nbar[0][i]), 1e-6);
    }
}

TEST(EITCooling, GuardsCutoffAndLambDickeRegime) {
    auto sys = mode_system(fig1_beams(70, 10.5), 0.05, 10);
    EXPECT_THROW(simulate_eit_cooling(sys, 2.0, 1e-6, 3), NumericalError);
    sys.eta_total = 0.2;
    EXPECT_THROW(simulate_eit_cooling(sys, 0.1, 1e-6, 3), RegimeError);
    sys.eta_total = 0.05;
    sys.fock_cutoff = 0;
    EXPECT_THROW(simulate_eit_cooling(sys, 0.1, 1e-6, 3), ConfigError);
}

TEST(LightShiftSpectroscopy, UnshiftedLineWithoutDressing) {
    EITBeams off;
    off.gamma = kGamma;
    off.delta = mhz(106);
    const ProbePulse probe{khz(39), 250e-6};
    const auto scan = simulate_lightshift_spectroscopy(off, probe, grid(-khz(20), khz(20), khz(1)));
    EXPECT_NEAR(dip_center(scan), 0.0, 1e-6);
    // without pump-out the pulse is a plain Rabi rotation
    const double s = std::sin(0.5 * probe.rabi * probe.duration);
    EXPECT_NEAR(lightshift_probe_population(off, probe, 0.0), 1.0 - s * s, 1e-12);
}

TEST(LightShiftSpectroscopy, DipAtCalibratedShift) {
    EITBeams b;
    b.gamma = kGamma;
    b.delta = mhz(106);
    b.omega_sigma = inverse_light_shift(mhz(2.3), b.delta);
    const auto scan = simulate_lightshift_spectroscopy(b, {khz(39), 250e-6}, grid(mhz(1.5), mhz(3.1), khz(5)));
    EXPECT_NEAR(dip_center(scan), mhz(2.3), 0.05 * mhz(2.3));
}

TEST(LightShiftSpectroscopy, MatchesDirectIntegrationAndEliminationWidth) {
    EITBeams b;
    b.gamma = kGamma;
    b.delta = mhz(106);
    b.omega_sigma = inverse_light_shift(mhz(2.2), b.delta);
    const ProbePulse probe{khz(39), 250e-6};
    const double shift = light_shift(b), pump = dressing_pump_rate(b);

    // RK4 on the two amplitudes
    auto direct = [&](double det) {
        Eigen::Vector2cd c(1.0, 0.0);
        Eigen::Matrix2cd h;
        h << 0.0, 0.5 * probe.rabi, 0.5 * probe.rabi, Complex(shift - det, -0.5 * pump);
        const Eigen::Matrix2cd m = Complex(0, -1) * h;
        const int steps = 20000;
        const double dt = probe.duration / steps;
        for (int i = 0; i < steps; ++i) {
            const Eigen::Vector2cd k1 = m * c, k2 = m * (c + 0.5 * dt * k1), k3 = m * (c + 0.5 * dt * k2),
                                   k4 = m * (c + dt * k3);
            c += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        return std::norm(c[0]);
    };
    for (double off : {-khz(300), 0.0, khz(80), khz(500)})
        EXPECT_NEAR(lightshift_probe_population(b, probe, shift + off), direct(shift + off), 1e-9);

    // full width at half depletion against adiabatic elimination of S
    auto half_width = [&](auto&& pd) {
        const double depth = 1.0 - pd(shift);
        double lo = 0.0, hi = mhz(5);
        for (int i = 0; i < 100; ++i) {
            const double mid = 0.5 * (lo + hi);
            (1.0 - pd(shift + mid) > 0.5 * depth ? lo : hi) = mid;
        }
        return lo;
    };
    auto eliminated = [&](double det) {
        const double x = det - shift;
        return std::exp(-probe.duration * 0.25 * probe.rabi * probe.rabi * pump / (x * x + 0.25 * pump * pump));
    };
    const double w_exact = half_width([&](double d) { return lightshift_probe_population(b, probe, d); });
    EXPECT_NEAR(w_exact / half_width(eliminated), 1.0, 0.15);
}

TEST(LightShiftSpectroscopy, DipShallowerWhenPulseAreaHalved) {
    EITBeams b;
    b.gamma = kGamma;
    b.delta = mhz(106);
    b.omega_sigma = inverse_light_shift(mhz(2.2), b.delta);
    const double at = light_shift(b);
    double previous = 1.0;
    for (double scale : {1.0, 0.5, 0.25}) {
        const double depth = 1.0 - lightshift_probe_population(b, {scale * khz(39), 250e-6}, at);
        EXPECT_LT(depth, previous);
        previous = depth;
        const double depth_tau = 1.0 - lightshift_probe_population(b, {khz(39), scale * 250e-6}, at);
        if (scale < 1.0) {
            EXPECT_LT(depth_tau, 1.0 - lightshift_probe_population(b, {khz(39), 250e-6}, at));
        }
    }
}

TEST(PolarizationRamsey, FlatWithoutSpuriousShift) {
    for (const auto& p : simulate_polarization_ramsey(0.0, 0.0, linspace(0, 500e-6, 26)))
        EXPECT_NEAR(p.d_population, 0.5, 1e-12);
}

TEST(PolarizationRamsey, SignalFormAndPeriod) {
    const double w = khz(10.8), g = 1.0 / 200e-6;
    const auto t = linspace(0, 300e-6, 301);
    const auto sig = simulate_polarization_ramsey(w, g, t);
    for (const auto& p : sig) EXPECT_NEAR(p.d_population, ramsey_signal(p.x, w, g), 1e-12);
    // downward zero crossings of (signal - 0.5) are one period apart
    std::vector<double> crossings;
    for (size_t i = 1; i < sig.size(); ++i) {
        const double a = sig[i - 1].d_population - 0.5, b = sig[i].d_population - 0.5;
        if (a > 0 && b <= 0) crossings.push_back(sig[i - 1].x + (sig[i].x - sig[i - 1].x) * a / (a - b));
    }
    ASSERT_GE(crossings.size(), 2u);
    EXPECT_NEAR((crossings[1] - crossings[0]) * 1e6, 92.6, 0.1);
}

TEST(PolarizationRamsey, FitRecoversShift) {
    const double w = khz(10.8), g = 1.0 / 120e-6;
    const auto t = linspace(0, 250e-6, 51);
    std::vector<double> y;
    for (const auto& p : simulate_polarization_ramsey(w, g, t)) y.push_back(p.d_population);
    const auto fr = ramsey_fit(t, y);
    EXPECT_NEAR(fr.value("shift"), w, 0.02 * w);
    EXPECT_NEAR(fr.value("decay_rate"), g, 0.02 * g);
}
