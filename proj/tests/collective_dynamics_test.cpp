#include "eitcool/collective_dynamics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <utility>

#include "support.hpp"

using namespace eitcool;
using eitcool::testing::khz;
using eitcool::testing::linspace;
using eitcool::testing::mhz;

namespace {

// Sparse tensor-product state: (excitation mask, phonon number) -> amplitude.
using TensorState = std::map<std::pair<unsigned, int>, double>;

// sum_i eta_i sigma_i^+ a applied term by term.
TensorState apply_red_raising(const TensorState& in, const std::vector<double>& eta) {
    TensorState out;
    for (const auto& [key, amp] : in) {
        const auto [mask, n] = key;
        if (n == 0) continue;
        for (size_t i = 0; i < eta.size(); ++i) {
            if (mask & (1u << i)) continue;
            out[{mask | (1u << i), n - 1}] += amp * eta[i] * std::sqrt(static_cast<double>(n));
        }
    }
    return out;
}

double norm_of(const TensorState& s) {
    double v = 0.0;
    for (const auto& [key, amp] : s) v += amp * amp;
    return std::sqrt(v);
}

double factorial(int k) { return std::tgamma(k + 1.0); }

double binomial(int n, int k) { return factorial(n) / (factorial(k) * factorial(n - k)); }

double max_deviation(const ExcitationTrajectory& a, const ExcitationTrajectory& b) {
    double d = 0.0;
    for (size_t t = 0; t < a.distributions.size(); ++t)
        for (size_t k = 0; k < a.distributions[t].size(); ++k)
            d = std::max(d, std::abs(a.distributions[t][k] - b.distributions[t][k]));
    return d;
}

TrapConfig four_ion_trap() {
    TrapConfig t;
    t.ion_count = 4;
    t.omega_axial = mhz(0.5);
    t.omega_radial_1 = mhz(2.7);
    t.omega_radial_2 = mhz(2.8);
    return t;
}

// 729 nm beam at 45 degrees to the radial mode direction.
std::vector<double> radial_eta(const Mode& m, const TrapConfig& trap) {
    return mode_lamb_dicke(m, 729e-9, constants::pi / 4.0, trap.mass_kg());
}

std::vector<double> com_eta(int n, double eta_single) { return std::vector<double>(n, eta_single / std::sqrt(n)); }

}  // namespace

// ---------------------------------------------------------------------------
// Ladder basis

TEST(ReducedBasis, SingleIonIsJaynesCummings) {
    for (int n : {1, 4, 17}) {
        const auto b = build_reduced_basis(1, {0.07}, n);
        ASSERT_EQ(b.dimension(), 2);
        EXPECT_NEAR(b.couplings[0], 0.07 * std::sqrt(n), 1e-15);
        EXPECT_FALSE(b.truncated);
    }
    EXPECT_EQ(build_reduced_basis(1, {0.07}, 0).dimension(), 1);
}

TEST(ReducedBasis, TwoIonsOnePhononCoupleToSymmetricState) {
    const double eta = 0.05;
    const auto b = build_reduced_basis(2, {eta, eta}, 1);
    ASSERT_EQ(b.dimension(), 2);
    EXPECT_NEAR(b.couplings[0], eta * std::sqrt(2.0), 1e-15);
}

TEST(ReducedBasis, NormsMatchExplicitTensorConstruction) {
    for (int ions = 1; ions <= 4; ++ions) {
        const double eta = 0.08;
        const std::vector<double> etas(ions, eta);
        for (int n = 0; n <= 6; ++n) {
            const auto b = build_reduced_basis(ions, etas, n);
            ASSERT_EQ(b.k_max, std::min(ions, n));
            TensorState psi{{{0u, n}, 1.0}};
            for (int k = 0; k <= b.k_max; ++k) {
                const double explicit_norm = norm_of(psi);
                const double dicke_sq = factorial(k) * factorial(k) * binomial(ions, k) * std::pow(eta, 2 * k) *
                                        factorial(n) / factorial(n - k);
                EXPECT_NEAR(b.norms[k], explicit_norm, 1e-12 * explicit_norm) << ions << " ions, n=" << n;
                EXPECT_NEAR(b.norms[k] * b.norms[k], dicke_sq, 1e-12 * dicke_sq);
                psi = apply_red_raising(psi, etas);
            }
        }
    }
}

TEST(ReducedBasis, UnequalNormsMatchExplicitTensorConstruction) {
    const std::vector<double> etas{0.03, 0.11, 0.07};
    const auto b = build_reduced_basis(3, etas, 5);
    TensorState psi{{{0u, 5}, 1.0}};
    for (int k = 0; k <= b.k_max; ++k) {
        EXPECT_NEAR(b.norms[k], norm_of(psi), 1e-12 * norm_of(psi));
        psi = apply_red_raising(psi, etas);
    }
}

TEST(ReducedBasis, LadderLengthDependsOnSidebandAndStart) {
    const std::vector<double> eta(5, 0.05);
    EXPECT_EQ(build_reduced_basis(5, eta, 2).k_max, 2);
    EXPECT_EQ(build_reduced_basis(5, eta, 9).k_max, 5);
    EXPECT_EQ(build_reduced_basis(5, eta, 0, Sideband::blue).k_max, 5);
    EXPECT_EQ(build_reduced_basis(5, eta, 0, Sideband::red, StartState::metastable).k_max, 5);
    EXPECT_EQ(build_reduced_basis(5, eta, 3, Sideband::blue, StartState::metastable).k_max, 3);
}

TEST(ReducedBasis, VanishingNormTruncatesWithFlag) {
    const auto b = build_reduced_basis(3, {0.1, 0.0, 0.0}, 4);
    EXPECT_TRUE(b.truncated);
    EXPECT_EQ(b.k_max, 1);
    EXPECT_FALSE(build_reduced_basis(3, {0.1, 0.02, 0.05}, 4).truncated);
}

TEST(ReducedBasis, RejectsBadInput) {
    EXPECT_THROW(build_reduced_basis(0, {}, 1), ConfigError);
    EXPECT_THROW(build_reduced_basis(2, {0.1}, 1), ConfigError);
    EXPECT_THROW(build_reduced_basis(2, {0.1, NAN}, 1), ConfigError);
    EXPECT_THROW(build_reduced_basis(2, {0.1, 0.1}, -1), ConfigError);
}

// ---------------------------------------------------------------------------
// Full-space reference

TEST(BruteForce, TwoEqualIonsMatchLadderForLowPhononNumbers) {
    const double eta = 0.06, rabi = khz(150);
    const auto times = linspace(0.0, 400e-6, 81);
    for (int n = 0; n <= 3; ++n) {
        for (double det : {0.0, khz(3)}) {
            const auto full = brute_force_reference(2, {eta, eta}, 6, n, rabi, det, times);
            const auto ladder = excitation_trajectory(build_reduced_basis(2, {eta, eta}, n).model(), rabi, det, times);
            EXPECT_LT(max_deviation(full, ladder), 1e-8) << "n=" << n;
            for (double l : full.leakage) EXPECT_LT(l, 1e-12);
        }
    }
}

TEST(BruteForce, ThreeIonsBlueAndMetastableLaddersMatch) {
    const std::vector<double> eta(3, 0.05);
    const auto times = linspace(0.0, 300e-6, 31);
    const double rabi = khz(120), det = khz(-2);
    for (auto [side, start] : {std::pair{Sideband::blue, StartState::ground},
                               std::pair{Sideband::red, StartState::metastable},
                               std::pair{Sideband::blue, StartState::metastable}}) {
        for (int n : {0, 2, 4}) {
            const auto full = brute_force_reference(3, eta, 8, n, rabi, det, times, side, start);
            const auto ladder =
                excitation_trajectory(build_reduced_basis(3, eta, n, side, start).model(), rabi, det, times);
            EXPECT_LT(max_deviation(full, ladder), 1e-8) << sideband_name(side) << " " << start_state_name(start);
        }
    }
}

TEST(BruteForce, SingleIonLadderIsExactForAnyPhononNumber) {
    const auto times = linspace(0.0, 1e-3, 41);
    for (int n : {0, 1, 5, 30}) {
        const auto full = brute_force_reference(1, {0.04}, 40, n, khz(80), khz(1), times);
        const auto ladder = excitation_trajectory(build_reduced_basis(1, {0.04}, n).model(), khz(80), khz(1), times);
        EXPECT_LT(max_deviation(full, ladder), 1e-8);
    }
}

TEST(BruteForce, UnequalFactorsAgreeOnlyWhileLeakageIsSmall) {
    const std::vector<double> eta{0.08, 0.04};
    auto times = linspace(0.0, 15e-6, 31);
    for (double t : linspace(30e-6, 600e-6, 20)) times.push_back(t);
    const auto full = brute_force_reference(2, eta, 6, 2, khz(150), 0.0, times);
    const auto ladder = excitation_trajectory(build_reduced_basis(2, eta, 2).model(), khz(150), 0.0, times);
    int small = 0;
    double worst_late = 0.0;
    for (size_t t = 0; t < times.size(); ++t) {
        double dev = 0.0;
        for (size_t k = 0; k < 3; ++k)
            dev = std::max(dev, std::abs(full.distributions[t][k] - ladder.distributions[t][k]));
        if (full.leakage[t] < 1e-6) {
            ++small;
            EXPECT_LT(dev, 2.0 * full.leakage[t] + 1e-12) << "t=" << times[t];
        } else {
            worst_late = std::max(worst_late, dev);
        }
    }
    EXPECT_GE(small, 5);
    EXPECT_GT(worst_late, 0.1);

    // The exact sector model has no such restriction.
    const auto exact = excitation_trajectory(exact_sector_model(2, eta, 2), khz(150), 0.0, times);
    EXPECT_LT(max_deviation(full, exact), 1e-8);
}

TEST(BruteForce, ExactSectorMatchesFullSpaceForThreeUnequalIons) {
    const std::vector<double> eta{0.02, 0.07, 0.05};
    const auto times = linspace(0.0, 500e-6, 26);
    for (auto [side, start] : {std::pair{Sideband::red, StartState::ground},
                               std::pair{Sideband::red, StartState::metastable}}) {
        const auto full = brute_force_reference(3, eta, 9, 3, khz(200), khz(4), times, side, start);
        const auto exact = excitation_trajectory(exact_sector_model(3, eta, 3, side, start), khz(200), khz(4), times);
        EXPECT_LT(max_deviation(full, exact), 1e-8);
    }
}

TEST(BruteForce, DimensionAndCutoffGuards) {
    const std::vector<double> eta(3, 0.05);
    EXPECT_THROW(brute_force_reference(4, std::vector<double>(4, 0.05), 3, 1, 1.0, 0.0, {0.0}), ConfigError);
    EXPECT_NO_THROW(full_space_model(3, eta, 127, 2));
    EXPECT_THROW(full_space_model(3, eta, 128, 2), ConfigError);
    EXPECT_THROW(full_space_model(3, eta, 4, 2, Sideband::blue), ConfigError);
    EXPECT_THROW(full_space_model(3, eta, 4, 5), ConfigError);
}

TEST(Evolution, NormIsConservedAlongTrajectories) {
    const auto times = linspace(0.0, 2e-3, 51);
    for (int n : {0, 3, 12}) {
        const auto tr = excitation_trajectory(build_reduced_basis(6, {0.01, 0.03, 0.05, 0.02, 0.04, 0.06}, n).model(),
                                              khz(300), khz(7), times);
        for (const auto& d : tr.distributions) {
            double s = 0.0;
            for (double p : d) s += p;
            EXPECT_NEAR(s, 1.0, 1e-9);
        }
    }
}

// ---------------------------------------------------------------------------
// Spectra

TEST(SidebandSpectrum, GroundStateRedSidebandIsDark) {
    const auto grid = linspace(khz(-20), khz(20), 41);
    const auto s = sideband_spectrum(4, com_eta(4, 0.06), 0.0, khz(100), 200e-6, grid);
    for (double x : s.excited_fraction) EXPECT_EQ(x, 0.0);
    EXPECT_EQ(s.fock_cutoff, 0);
}

TEST(SidebandSpectrum, SingleIonRatioMatchesThermalInversion) {
    const double nbar = 5.0, eta = 0.06, rabi = khz(100);
    const double t = constants::pi / (rabi * eta);
    const auto grid = linspace(khz(-10), khz(10), 81);
    const auto red = sideband_spectrum(1, {eta}, nbar, rabi, t, grid);
    SpectrumOptions o;
    o.side = Sideband::blue;
    const auto blue = sideband_spectrum(1, {eta}, nbar, rabi, t, grid, o);
    for (size_t j = 0; j < grid.size(); ++j) {
        if (blue.excited_fraction[j] < 1e-3) continue;
        EXPECT_NEAR(red.excited_fraction[j] / blue.excited_fraction[j], nbar / (nbar + 1.0), 1e-3);
    }
    const double pr = *std::max_element(red.excited_fraction.begin(), red.excited_fraction.end());
    const double pb = *std::max_element(blue.excited_fraction.begin(), blue.excited_fraction.end());
    EXPECT_NEAR(sideband_ratio_nbar(pr, pb).nbar, nbar, 0.01);
}

TEST(SidebandSpectrum, NineIonsShowExcessAsymmetry) {
    const double eta = 0.06, rabi = khz(100);
    const double t = constants::pi / (rabi * eta);
    const auto grid = linspace(khz(-10), khz(10), 41);
    for (double nbar : {5.0, 6.0, 8.0}) {
        const auto red = sideband_spectrum(9, com_eta(9, eta), nbar, rabi, t, grid);
        SpectrumOptions o;
        o.side = Sideband::blue;
        const auto blue = sideband_spectrum(9, com_eta(9, eta), nbar, rabi, t, grid, o);
        const double pr = *std::max_element(red.excited_fraction.begin(), red.excited_fraction.end());
        const double pb = *std::max_element(blue.excited_fraction.begin(), blue.excited_fraction.end());
        EXPECT_LT(pr / pb, nbar / (nbar + 1.0) - 0.1) << "nbar=" << nbar;
        EXPECT_LT(sideband_ratio_nbar(pr, pb).nbar, 0.5 * nbar);
    }
}

TEST(SidebandSpectrum, ThermalAverageIsLinearInTheMixture) {
    const std::vector<double> eta{0.02, 0.03, 0.025};
    const double nbar = 1.5, rabi = khz(200), t = 150e-6;
    const auto grid = linspace(khz(-15), khz(15), 31);
    const auto s = sideband_spectrum(3, eta, nbar, rabi, t, grid);
    const ThermalDistribution th(nbar);
    std::vector<double> manual(grid.size(), 0.0);
    for (int n = 0; n <= s.fock_cutoff; ++n) {
        const auto f = fock_sideband_excitation(3, eta, n, rabi, t, grid);
        for (size_t j = 0; j < grid.size(); ++j) manual[j] += th.p(n) * f[j];
    }
    for (size_t j = 0; j < grid.size(); ++j) EXPECT_NEAR(s.excited_fraction[j], manual[j], 1e-12);
    EXPECT_LE(s.omitted_probability, 1e-4);
    EXPECT_GT(th.tail(s.fock_cutoff), 1e-4);
}

TEST(SidebandSpectrum, ThreadCountDoesNotChangeBits) {
    const auto grid = linspace(khz(-10), khz(10), 21);
    SpectrumOptions a, b;
    b.threads = 3;
    const auto s1 = sideband_spectrum(5, com_eta(5, 0.05), 3.0, khz(100), 300e-6, grid, a);
    const auto s3 = sideband_spectrum(5, com_eta(5, 0.05), 3.0, khz(100), 300e-6, grid, b);
    EXPECT_EQ(s1.excited_fraction, s3.excited_fraction);
}

TEST(SidebandSpectrum, TruncationBudget) {
    SpectrumOptions o;
    o.max_fock = 50;
    EXPECT_THROW(sideband_spectrum(2, {0.05, 0.05}, 20.0, khz(100), 1e-4, {0.0}, o), ConfigError);
    EXPECT_THROW(sideband_spectrum(2, {0.05, 0.05}, 1.0, khz(100), 1e-4, {0.0}, SpectrumOptions{.truncation = 0.0}),
                 ConfigError);
}

// ---------------------------------------------------------------------------
// Rapid adiabatic passage

TEST(Sweep, ProfileShapeAndValidation) {
    SweepProfile s;
    EXPECT_NEAR(s.rabi(0.0) / s.peak_rabi, s.truncation, 1e-12);
    EXPECT_NEAR(s.rabi(s.duration) / s.peak_rabi, s.truncation, 1e-12);
    EXPECT_DOUBLE_EQ(s.rabi(0.5 * s.duration), s.peak_rabi);
    EXPECT_DOUBLE_EQ(s.detuning(0.0), -0.5 * s.span);
    EXPECT_DOUBLE_EQ(s.detuning(s.duration), 0.5 * s.span);
    s.span = 0.0;
    EXPECT_THROW(s.validate(), ConfigError);
    EXPECT_THROW(rap_evolve(build_reduced_basis(1, {0.05}, 1).model(), s), ConfigError);
}

TEST(Rap, GroundStateWithoutPhononsStaysDark) {
    const auto r = rap_transfer(4, com_eta(4, 0.042), SweepProfile{}, {1.0});
    EXPECT_GT(r.histogram.probabilities[0], 0.999);
}

TEST(Rap, ComModeMapsPhononsOneToOne) {
    const auto trap = four_ion_trap();
    const auto modes = compute_modes(trap, BeamGeometry{});
    const auto eta = radial_eta(modes.com(Branch::radial_1), trap);
    const auto fid = rap_fidelity_map(4, eta, SweepProfile{}, 6);
    for (int n = 0; n <= 6; ++n) EXPECT_GE(fid[n], 0.95) << "n=" << n;
}

TEST(Rap, MetastableStartInvertsIndependentlyOfPhonons) {
    RapTransferOptions opt;
    opt.start = StartState::metastable;
    const auto r = rap_transfer(4, com_eta(4, 0.042), SweepProfile{}, truncated_thermal(5.0), opt);
    EXPECT_GE(r.mean_transferred(opt.start), 0.97 * 4);
    for (size_t n = 0; n < r.per_phonon.size(); n += 7) EXPECT_GT(r.per_phonon[n][0], 0.97) << "n=" << n;
}

TEST(Rap, FidelityDegradesMonotonicallyWithShorterSweeps) {
    const auto eta = com_eta(4, 0.042);
    double previous = 2.0;
    for (double duration : {4e-3, 1e-3, 4e-4, 2e-4, 1e-4, 5e-5}) {
        SweepProfile s;
        s.duration = duration;
        const auto fid = rap_fidelity_map(4, eta, s, 4);
        double worst = 1.0;
        for (int n = 1; n <= 4; ++n) worst = std::min(worst, fid[n]);
        EXPECT_LE(worst, previous + 1e-6) << "duration " << duration;
        previous = worst;
    }
    EXPECT_LT(previous, 0.9);
}

TEST(Rap, UnequalModeMapsLowPhononNumbers) {
    const auto trap = four_ion_trap();
    const auto modes = compute_modes(trap, BeamGeometry{});
    int unequal = 0;
    for (const Mode* m : modes.branch(Branch::radial_1)) {
        const auto eta = radial_eta(*m, trap);
        if (equal_lamb_dicke(eta, 1e-6)) continue;
        ++unequal;
        const auto fid = rap_fidelity_map(4, eta, SweepProfile{}, 2);
        for (int n = 0; n <= 2; ++n) EXPECT_GE(fid[n], 0.9) << "mode " << m->index << " n=" << n;
    }
    EXPECT_GE(unequal, 2);
}

TEST(Rap, LadderAgreesWithFullSpaceSweep) {
    const std::vector<double> eta{0.03, 0.03};
    for (int n : {1, 2, 3}) {
        const auto ladder = rap_evolve(build_reduced_basis(2, eta, n).model(), SweepProfile{});
        const auto full = rap_evolve(full_space_model(2, eta, 5, n).model, SweepProfile{});
        for (size_t k = 0; k < 3; ++k) EXPECT_NEAR(ladder.distribution[k], full.distribution[k], 1e-7);
    }
}

TEST(Rap, StepDoublingConverges) {
    const auto model = build_reduced_basis(4, com_eta(4, 0.042), 3).model();
    const auto coarse = rap_evolve(model, SweepProfile{});
    RapOptions tight;
    tight.tolerance = 1e-11;
    const auto fine = rap_evolve(model, SweepProfile{}, tight);
    EXPECT_GE(fine.steps, coarse.steps);
    for (size_t k = 0; k < coarse.distribution.size(); ++k)
        EXPECT_NEAR(coarse.distribution[k], fine.distribution[k], 1e-7);
    RapOptions capped;
    capped.max_steps = 256;
    EXPECT_THROW(rap_evolve(model, SweepProfile{}, capped), NumericalError);
}

TEST(Rap, ThreadedTransferIsBitIdentical) {
    RapTransferOptions one, three;
    three.threads = 3;
    const auto p = truncated_thermal(1.0, 1e-3);
    const auto a = rap_transfer(3, com_eta(3, 0.05), SweepProfile{}, p, one);
    const auto b = rap_transfer(3, com_eta(3, 0.05), SweepProfile{}, p, three);
    EXPECT_EQ(a.histogram.probabilities, b.histogram.probabilities);
}

TEST(Rap, RejectsBadPhononDistribution) {
    EXPECT_THROW(rap_transfer(2, {0.05, 0.05}, SweepProfile{}, {}), ConfigError);
    EXPECT_THROW(rap_transfer(2, {0.05, 0.05}, SweepProfile{}, {0.5, -0.1}), ConfigError);
    EXPECT_THROW(rap_transfer(2, {0.05, 0.05}, SweepProfile{}, {0.0, 0.0}), ConfigError);
}

// ---------------------------------------------------------------------------
// Shot sampling

TEST(HistogramSampler, DeltaDistributionGivesIdenticalShots) {
    const auto h = histogram_sampler({0.0, 0.0, 1.0, 0.0}, 1000, 7);
    EXPECT_EQ(h.probabilities, (std::vector<double>{0.0, 0.0, 1.0, 0.0}));
    EXPECT_EQ(h.shots, 1000);
}

TEST(HistogramSampler, UniformBinsWithinBinomialError) {
    const auto h = histogram_sampler(std::vector<double>(5, 0.2), 100000, 2024);
    for (double p : h.probabilities) EXPECT_NEAR(p, 0.2, 0.004);
    EXPECT_NO_THROW(h.validate());
}

TEST(HistogramSampler, FixedSeedIsReproducible) {
    const std::vector<double> p{0.1, 0.35, 0.3, 0.25};
    EXPECT_EQ(histogram_sampler(p, 500, 42).probabilities, histogram_sampler(p, 500, 42).probabilities);
    EXPECT_NE(histogram_sampler(p, 500, 42).probabilities, histogram_sampler(p, 500, 43).probabilities);
}

TEST(HistogramSampler, SamplesRapOutcome) {
    const auto r = rap_transfer(3, com_eta(3, 0.05), SweepProfile{}, truncated_thermal(0.5, 1e-3));
    const auto h = histogram_sampler(r.histogram, 20000, 11);
    for (size_t k = 0; k < h.probabilities.size(); ++k) {
        const double p = r.histogram.probabilities[k];
        EXPECT_NEAR(h.probabilities[k], p, 4.0 * std::sqrt(p * (1 - p) / 20000) + 1e-12);
    }
}
