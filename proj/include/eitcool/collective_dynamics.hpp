#pragma once

// N two-level ions sharing one vibrational mode, driven on a motional sideband
// in the rotating-wave approximation.
//
// Starting from |0,n> (all ions in the ground state) or from the fully excited
// string, repeated application of the sideband ladder operator
// S = sum_i eta_i sigma_i^(+/-) a^(+/-) generates states psi_k, one per
// excitation sector. In the normalized ladder basis the Hamiltonian is
//   H = (rabi/2) C - detuning * diag(excited ions)
// with C tridiagonal. The same form is used for the exact excitation-sector
// basis (needed when the eta_i differ) and for the full tensor space, so every
// model shares one evolution code path.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitcool/chain_mechanics.hpp"
#include "eitcool/constants.hpp"
#include "eitcool/errors.hpp"
#include "eitcool/estimators.hpp"
#include "eitcool/histogram.hpp"
#include "eitcool/parallel.hpp"
#include "eitcool/sideband.hpp"

namespace eitcool {

enum class StartState { ground, metastable };

inline const char* start_state_name(StartState s) { return s == StartState::ground ? "ground" : "metastable"; }

/// True when the ladder removes phonons, which caps it at min(N, n) steps.
inline bool ladder_lowers_phonons(Sideband side, StartState start) {
    return (side == Sideband::red) == (start == StartState::ground);
}

inline int ladder_length(int ion_count, int phonons, Sideband side, StartState start) {
    return ladder_lowers_phonons(side, start) ? std::min(ion_count, phonons) : ion_count;
}

/// Phonon factor of the k -> k+1 ladder step.
inline double ladder_phonon_factor(int k, int phonons, Sideband side, StartState start) {
    return ladder_lowers_phonons(side, start) ? std::sqrt(static_cast<double>(phonons - k))
                                              : std::sqrt(static_cast<double>(phonons + k + 1));
}

inline int excited_after(int k, int ion_count, StartState start) {
    return start == StartState::ground ? k : ion_count - k;
}

namespace detail {

inline void validate_ions(int ion_count, const std::vector<double>& eta) {
    if (ion_count < 1) throw ConfigError("collective dynamics: ion count must be >= 1");
    if (static_cast<int>(eta.size()) != ion_count)
        throw ConfigError("collective dynamics: need one Lamb-Dicke factor per ion");
    for (double e : eta)
        if (!std::isfinite(e)) throw ConfigError("collective dynamics: Lamb-Dicke factors must be finite");
}

/// Elementary symmetric polynomials e_0..e_N of the squared Lamb-Dicke factors.
inline std::vector<double> elementary_symmetric_squares(const std::vector<double>& eta) {
    std::vector<double> e(eta.size() + 1, 0.0);
    e[0] = 1.0;
    for (size_t i = 0; i < eta.size(); ++i) {
        const double x = eta[i] * eta[i];
        for (size_t k = i + 1; k >= 1; --k) e[k] += x * e[k - 1];
    }
    return e;
}

inline int popcount(std::uint64_t x) {
    int c = 0;
    for (; x; x &= x - 1) ++c;
    return c;
}

}  // namespace detail

/// Lamb-Dicke factor of a single travelling beam whose k-vector makes
/// `angle` (radians) with the oscillation direction.
inline double single_beam_lamb_dicke(double wavelength, double angle, double mass_kg, double omega) {
    if (!(wavelength > 0.0) || !(mass_kg > 0.0) || !(omega > 0.0))
        throw ConfigError("Lamb-Dicke factor: wavelength, mass and frequency must be positive");
    return constants::two_pi / wavelength * std::abs(std::cos(angle)) *
           std::sqrt(constants::hbar / (2.0 * mass_kg * omega));
}

/// Per-ion factors eta_i = eta(omega_m) |b_im| of one normal mode.
inline std::vector<double> mode_lamb_dicke(const Mode& mode, double wavelength, double angle, double mass_kg) {
    const double eta = single_beam_lamb_dicke(wavelength, angle, mass_kg, mode.frequency);
    std::vector<double> out;
    for (Eigen::Index i = 0; i < mode.participation.size(); ++i) out.push_back(eta * std::abs(mode.participation(i)));
    return out;
}

/// H = (rabi/2) coupling - detuning * diag(excited) on some basis.
struct LadderModel {
    int ion_count = 0;
    Eigen::MatrixXd coupling;   // real symmetric, per unit rabi/2
    std::vector<int> excited;   // excited-ion count of each basis state
    int initial = 0;            // basis index of the start state

    int dimension() const { return static_cast<int>(excited.size()); }

    Eigen::MatrixXd hamiltonian(double rabi, double detuning) const {
        Eigen::MatrixXd h = 0.5 * rabi * coupling;
        for (int i = 0; i < dimension(); ++i) h(i, i) -= detuning * excited[i];
        return h;
    }

    Eigen::VectorXcd initial_state() const {
        Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(dimension());
        psi(initial) = 1.0;
        return psi;
    }

    /// Probability of each excited-ion count 0..N.
    std::vector<double> excitation_distribution(const Eigen::VectorXcd& psi) const {
        std::vector<double> p(ion_count + 1, 0.0);
        for (int i = 0; i < dimension(); ++i) p[excited[i]] += std::norm(psi(i));
        return p;
    }
};

struct ReducedBasis {
    int ion_count = 0;
    std::vector<double> eta;
    int phonons = 0;
    Sideband side = Sideband::red;
    StartState start = StartState::ground;
    int k_max = 0;               // last ladder index kept
    std::vector<double> norms;   // |psi_k| before normalization, k = 0..k_max
    std::vector<double> couplings;  // <psi_(k+1)|S|psi_k> between normalized states
    bool truncated = false;      // a norm vanished before the nominal end of the ladder

    int dimension() const { return k_max + 1; }

    LadderModel model() const {
        LadderModel m;
        m.ion_count = ion_count;
        m.coupling = Eigen::MatrixXd::Zero(dimension(), dimension());
        for (int k = 0; k < k_max; ++k) {
            m.coupling(k + 1, k) = couplings[k];
            m.coupling(k, k + 1) = couplings[k];
        }
        m.excited.resize(dimension());
        for (int k = 0; k <= k_max; ++k) m.excited[k] = excited_after(k, ion_count, start);
        return m;
    }
};

/// Ladder states psi_k = S^k |start, n> with closed-form norms
/// |psi_k|^2 = (k!)^2 e_k(eta^2) P_k(n), P_k the phonon factor product.
/// Consecutive ladder states live in different excitation sectors, so they are
/// orthogonal by construction.
inline ReducedBasis build_reduced_basis(int ion_count, const std::vector<double>& eta, int phonons,
                                        Sideband side = Sideband::red,
                                        StartState start = StartState::ground) {
    detail::validate_ions(ion_count, eta);
    if (phonons < 0) throw ConfigError("reduced basis: phonon number must be >= 0");
    ReducedBasis b;
    b.ion_count = ion_count;
    b.eta = eta;
    b.phonons = phonons;
    b.side = side;
    b.start = start;
    const int nominal = ladder_length(ion_count, phonons, side, start);
    const auto e = detail::elementary_symmetric_squares(eta);
    double eta_scale = 0.0;
    for (double x : eta) eta_scale += x * x;
    eta_scale = std::sqrt(eta_scale);

    b.norms.push_back(1.0);
    for (int k = 0; k < nominal; ++k) {
        const double pf = ladder_phonon_factor(k, phonons, side, start);
        const double c = e[k] > 0.0 ? (k + 1) * std::sqrt(e[k + 1] / e[k]) * pf : 0.0;
        if (!(c > 1e-12 * (k + 1) * eta_scale * pf)) {
            b.truncated = true;
            break;
        }
        b.couplings.push_back(c);
        b.norms.push_back(b.norms.back() * c);
    }
    b.k_max = static_cast<int>(b.couplings.size());
    return b;
}

/// Exact model on every configuration reachable from the start state: subsets
/// of flipped ions of size <= k_max with the matching phonon number. Unlike the
/// ladder basis it stays exact for unequal Lamb-Dicke factors.
inline LadderModel exact_sector_model(int ion_count, const std::vector<double>& eta, int phonons,
                                      Sideband side = Sideband::red, StartState start = StartState::ground,
                                      int max_dimension = 4096) {
    detail::validate_ions(ion_count, eta);
    if (phonons < 0) throw ConfigError("exact sector: phonon number must be >= 0");
    if (ion_count > 20) throw ConfigError("exact sector: too many ions");
    const int k_max = ladder_length(ion_count, phonons, side, start);

    std::vector<std::uint64_t> masks;
    const std::uint64_t full = (std::uint64_t{1} << ion_count);
    for (std::uint64_t m = 0; m < full; ++m)
        if (detail::popcount(m) <= k_max) {
            masks.push_back(m);
            if (static_cast<int>(masks.size()) > max_dimension)
                throw ConfigError("exact sector: dimension exceeds " + std::to_string(max_dimension));
        }
    std::stable_sort(masks.begin(), masks.end(),
                     [](std::uint64_t a, std::uint64_t b) { return detail::popcount(a) < detail::popcount(b); });
    std::vector<int> index(full, -1);
    for (size_t i = 0; i < masks.size(); ++i) index[masks[i]] = static_cast<int>(i);

    LadderModel m;
    m.ion_count = ion_count;
    const int d = static_cast<int>(masks.size());
    m.coupling = Eigen::MatrixXd::Zero(d, d);
    m.excited.resize(d);
    for (int a = 0; a < d; ++a) {
        const int k = detail::popcount(masks[a]);
        m.excited[a] = excited_after(k, ion_count, start);
        if (k == k_max) continue;
        const double pf = ladder_phonon_factor(k, phonons, side, start);
        for (int i = 0; i < ion_count; ++i) {
            const std::uint64_t bit = std::uint64_t{1} << i;
            if (masks[a] & bit) continue;
            const int b = index[masks[a] | bit];
            m.coupling(b, a) = eta[i] * pf;
            m.coupling(a, b) = eta[i] * pf;
        }
    }
    return m;
}

/// Excited-ion distributions along a constant drive; leakage is filled only by
/// the full-space reference.
struct ExcitationTrajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> distributions;
    std::vector<double> leakage;
};

inline constexpr double norm_tolerance = 1e-9;

inline void check_norm(const Eigen::VectorXcd& psi, const char* where) {
    const double dev = std::abs(psi.squaredNorm() - 1.0);
    if (!(dev <= norm_tolerance))
        throw NumericalError(std::string(where) + ": state norm drifted by " + std::to_string(dev));
}

/// Time-independent evolution by diagonalizing the real symmetric Hamiltonian.
class ConstantDrive {
public:
    ConstantDrive(const LadderModel& model, double rabi, double detuning)
        : solver_(model.hamiltonian(rabi, detuning)), psi0_(model.initial_state()) {
        if (solver_.info() != Eigen::Success) throw NumericalError("constant drive: eigensolver failed");
        overlaps_ = solver_.eigenvectors().transpose().cast<std::complex<double>>() * psi0_;
    }

    Eigen::VectorXcd state(double t) const {
        Eigen::VectorXcd phased(overlaps_.size());
        for (Eigen::Index i = 0; i < overlaps_.size(); ++i)
            phased(i) = std::polar(1.0, -solver_.eigenvalues()(i) * t) * overlaps_(i);
        Eigen::VectorXcd psi = solver_.eigenvectors().cast<std::complex<double>>() * phased;
        check_norm(psi, "constant drive");
        return psi;
    }

private:
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver_;
    Eigen::VectorXcd psi0_;
    Eigen::VectorXcd overlaps_;
};

inline ExcitationTrajectory excitation_trajectory(const LadderModel& model, double rabi, double detuning,
                                                  const std::vector<double>& times) {
    ConstantDrive drive(model, rabi, detuning);
    ExcitationTrajectory out;
    out.times = times;
    for (double t : times) out.distributions.push_back(model.excitation_distribution(drive.state(t)));
    return out;
}

// ---------------------------------------------------------------------------
// Full tensor-space reference

struct FullSpaceModel {
    LadderModel model;
    Eigen::MatrixXd ladder_states;  // columns: normalized S^k |start>, built by brute force
    int fock_cutoff = 0;
};

inline constexpr int full_space_max_ions = 3;
inline constexpr int full_space_max_dimension = 1024;

/// Hamiltonian on 2^N (cutoff+1) states, basis index mask*(cutoff+1)+n.
inline FullSpaceModel full_space_model(int ion_count, const std::vector<double>& eta, int fock_cutoff,
                                       int phonons, Sideband side = Sideband::red,
                                       StartState start = StartState::ground) {
    detail::validate_ions(ion_count, eta);
    if (ion_count > full_space_max_ions)
        throw ConfigError("full-space reference: at most " + std::to_string(full_space_max_ions) + " ions");
    if (fock_cutoff < 0 || phonons < 0 || phonons > fock_cutoff)
        throw ConfigError("full-space reference: phonon number outside the Fock cutoff");
    const int levels = fock_cutoff + 1;
    const int d = (1 << ion_count) * levels;
    if (d > full_space_max_dimension)
        throw ConfigError("full-space reference: dimension " + std::to_string(d) + " exceeds " +
                          std::to_string(full_space_max_dimension));
    const int reach = ladder_lowers_phonons(side, start) ? phonons : phonons + ion_count;
    if (reach > fock_cutoff)
        throw ConfigError("full-space reference: Fock cutoff too small for the reachable phonon numbers");

    FullSpaceModel out;
    out.fock_cutoff = fock_cutoff;
    LadderModel& m = out.model;
    m.ion_count = ion_count;
    m.coupling = Eigen::MatrixXd::Zero(d, d);
    m.excited.resize(d);
    // raise(i) sigma_i^+ combined with a (red) or a^dag (blue).
    Eigen::MatrixXd raise = Eigen::MatrixXd::Zero(d, d);
    for (int mask = 0; mask < (1 << ion_count); ++mask) {
        for (int n = 0; n < levels; ++n) {
            const int from = mask * levels + n;
            m.excited[from] = detail::popcount(static_cast<std::uint64_t>(mask));
            for (int i = 0; i < ion_count; ++i) {
                if (mask & (1 << i)) continue;
                const int n_to = side == Sideband::red ? n - 1 : n + 1;
                if (n_to < 0 || n_to >= levels) continue;
                const double amp = side == Sideband::red ? std::sqrt(static_cast<double>(n))
                                                         : std::sqrt(static_cast<double>(n + 1));
                raise((mask | (1 << i)) * levels + n_to, from) += eta[i] * amp;
            }
        }
    }
    m.coupling = raise + raise.transpose();
    const int start_mask = start == StartState::ground ? 0 : (1 << ion_count) - 1;
    m.initial = start_mask * levels + phonons;

    const Eigen::MatrixXd ladder = start == StartState::ground ? raise : Eigen::MatrixXd(raise.transpose());
    const int length = ladder_length(ion_count, phonons, side, start);
    out.ladder_states = Eigen::MatrixXd::Zero(d, length + 1);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
    v(m.initial) = 1.0;
    for (int k = 0; k <= length; ++k) {
        const double nv = v.norm();
        if (!(nv > 0.0)) break;
        out.ladder_states.col(k) = v / nv;
        v = ladder * out.ladder_states.col(k);
    }
    return out;
}

/// Weight outside the span of the ladder states.
inline double ladder_leakage(const FullSpaceModel& fs, const Eigen::VectorXcd& psi) {
    const Eigen::VectorXcd proj = fs.ladder_states.transpose().cast<std::complex<double>>() * psi;
    return std::max(0.0, psi.squaredNorm() - proj.squaredNorm());
}

inline ExcitationTrajectory brute_force_reference(int ion_count, const std::vector<double>& eta,
                                                  int fock_cutoff, int phonons, double rabi, double detuning,
                                                  const std::vector<double>& times,
                                                  Sideband side = Sideband::red,
                                                  StartState start = StartState::ground) {
    const FullSpaceModel fs = full_space_model(ion_count, eta, fock_cutoff, phonons, side, start);
    ConstantDrive drive(fs.model, rabi, detuning);
    ExcitationTrajectory out;
    out.times = times;
    for (double t : times) {
        const Eigen::VectorXcd psi = drive.state(t);
        out.distributions.push_back(fs.model.excitation_distribution(psi));
        out.leakage.push_back(ladder_leakage(fs, psi));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sideband spectra

struct SpectrumOptions {
    Sideband side = Sideband::red;
    StartState start = StartState::ground;
    double truncation = 1e-4;  // thermal tail left out of the average
    int max_fock = 2000;
    unsigned threads = 1;
};

struct SidebandSpectrum {
    std::vector<double> detunings;         // rad/s from the sideband resonance
    std::vector<double> excited_fraction;  // mean excited ions / N
    std::vector<std::vector<double>> distributions;  // excited-ion count 0..N at each detuning
    int fock_cutoff = 0;                   // largest phonon number included
    double omitted_probability = 0.0;
};

/// Excited-ion distribution after a square pulse at each detuning, for one
/// phonon number.
inline std::vector<std::vector<double>> fock_sideband_distributions(
    int ion_count, const std::vector<double>& eta, int phonons, double rabi, double pulse_time,
    const std::vector<double>& detunings, Sideband side = Sideband::red, StartState start = StartState::ground) {
    const LadderModel model = build_reduced_basis(ion_count, eta, phonons, side, start).model();
    std::vector<std::vector<double>> out;
    out.reserve(detunings.size());
    for (double det : detunings)
        out.push_back(model.excitation_distribution(ConstantDrive(model, rabi, det).state(pulse_time)));
    return out;
}

inline double mean_excited_fraction(const std::vector<double>& distribution) {
    double mean = 0.0;
    for (size_t k = 0; k < distribution.size(); ++k) mean += static_cast<double>(k) * distribution[k];
    return mean / static_cast<double>(distribution.size() - 1);
}

/// Mean excited fraction after a square pulse, for one phonon number.
inline std::vector<double> fock_sideband_excitation(int ion_count, const std::vector<double>& eta, int phonons,
                                                    double rabi, double pulse_time,
                                                    const std::vector<double>& detunings,
                                                    Sideband side = Sideband::red,
                                                    StartState start = StartState::ground) {
    std::vector<double> out;
    for (const auto& d : fock_sideband_distributions(ion_count, eta, phonons, rabi, pulse_time, detunings, side, start))
        out.push_back(mean_excited_fraction(d));
    return out;
}

/// Thermal average over n = 0..n_max, where n_max leaves at most `truncation`
/// probability out. The average is not renormalized.
inline SidebandSpectrum sideband_spectrum(int ion_count, const std::vector<double>& eta, double nbar, double rabi,
                                          double pulse_time, const std::vector<double>& detunings,
                                          const SpectrumOptions& opt = {}) {
    detail::validate_ions(ion_count, eta);
    if (!(rabi >= 0.0) || !(pulse_time >= 0.0)) throw ConfigError("sideband spectrum: negative rabi or pulse time");
    if (!(opt.truncation > 0.0 && opt.truncation < 1.0))
        throw ConfigError("sideband spectrum: truncation must lie in (0, 1)");
    const ThermalDistribution thermal(nbar);
    const int n_max = nbar == 0.0 ? 0 : thermal.cutoff_for(opt.truncation) - 1;
    if (n_max > opt.max_fock)
        throw ConfigError("sideband spectrum: truncation budget exceeded (needs n up to " + std::to_string(n_max) +
                          ", limit " + std::to_string(opt.max_fock) + ")");

    std::vector<std::vector<std::vector<double>>> per_n(n_max + 1);
    parallel_for(per_n.size(), opt.threads, [&](size_t n) {
        per_n[n] = fock_sideband_distributions(ion_count, eta, static_cast<int>(n), rabi, pulse_time, detunings,
                                               opt.side, opt.start);
    });

    SidebandSpectrum s;
    s.detunings = detunings;
    s.fock_cutoff = n_max;
    s.distributions.assign(detunings.size(), std::vector<double>(ion_count + 1, 0.0));
    double kept = 0.0;
    for (int n = 0; n <= n_max; ++n) {
        const double p = thermal.p(n);
        kept += p;
        for (size_t j = 0; j < detunings.size(); ++j)
            for (int k = 0; k <= ion_count; ++k) s.distributions[j][k] += p * per_n[n][j][k];
    }
    for (const auto& d : s.distributions) s.excited_fraction.push_back(mean_excited_fraction(d));
    s.omitted_probability = std::max(0.0, 1.0 - kept);
    return s;
}

// ---------------------------------------------------------------------------
// Rapid adiabatic passage

/// Linear chirp across the sideband under a truncated-Gaussian Rabi envelope.
struct SweepProfile {
    double duration = 4e-3;                    // s
    double span = constants::two_pi * 50e3;       // rad/s, centred on the sideband
    double peak_rabi = constants::two_pi * 200e3;  // rad/s, carrier Rabi frequency at the peak
    double truncation = 0.05;                  // envelope at the edges relative to the peak

    void validate() const {
        if (!(duration > 0.0) || !std::isfinite(duration)) throw ConfigError("sweep: duration must be positive");
        if (!(span > 0.0) || !std::isfinite(span)) throw ConfigError("sweep: span must be positive");
        if (!(peak_rabi > 0.0) || !std::isfinite(peak_rabi)) throw ConfigError("sweep: peak Rabi frequency must be positive");
        if (!(truncation > 0.0 && truncation < 1.0)) throw ConfigError("sweep: truncation must lie in (0, 1)");
    }

    double sigma() const { return 0.5 * duration / std::sqrt(2.0 * std::log(1.0 / truncation)); }

    double rabi(double t) const {
        const double x = (t - 0.5 * duration) / sigma();
        return peak_rabi * std::exp(-0.5 * x * x);
    }

    double detuning(double t) const { return span * (t / duration - 0.5); }
};

struct RapOptions {
    double tolerance = 1e-8;  // max change of the outcome distribution between step doublings
    int initial_steps = 256;
    int max_steps = 1 << 22;
};

struct RapOutcome {
    std::vector<double> distribution;  // excited-ion count 0..N
    int steps = 0;
    double change = 0.0;  // last doubling difference
};

namespace detail {

/// Fourth-order Magnus propagation of H(t) = a(t) C + b(t) E with a fixed step.
inline Eigen::VectorXcd magnus4(const LadderModel& model, const SweepProfile& sweep, int steps) {
    const int d = model.dimension();
    const double h = sweep.duration / steps;
    const double c1 = 0.5 - std::sqrt(3.0) / 6.0;
    const double c2 = 0.5 + std::sqrt(3.0) / 6.0;
    Eigen::MatrixXd ce(d, d);  // [C, E]
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) ce(i, j) = model.coupling(i, j) * (model.excited[j] - model.excited[i]);
    Eigen::VectorXd e(d);
    for (int i = 0; i < d; ++i) e(i) = model.excited[i];

    Eigen::VectorXcd psi = model.initial_state();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(d);
    Eigen::MatrixXcd k(d, d);
    Eigen::VectorXcd tmp(d);
    for (int s = 0; s < steps; ++s) {
        const double t = s * h;
        const double a1 = 0.5 * sweep.rabi(t + c1 * h), b1 = -sweep.detuning(t + c1 * h);
        const double a2 = 0.5 * sweep.rabi(t + c2 * h), b2 = -sweep.detuning(t + c2 * h);
        // K = h/2 (H1 + H2) - i sqrt(3)/12 h^2 [H2, H1],  [H2, H1] = (a2 b1 - a1 b2) [C, E]
        const double comm = -std::sqrt(3.0) / 12.0 * h * h * (a2 * b1 - a1 * b2);
        k.real() = 0.5 * h * (a1 + a2) * model.coupling;
        k.real().diagonal() += 0.5 * h * (b1 + b2) * e;
        k.imag() = comm * ce;
        solver.compute(k);
        if (solver.info() != Eigen::Success) throw NumericalError("rap: eigensolver failed");
        tmp.noalias() = solver.eigenvectors().adjoint() * psi;
        for (int i = 0; i < d; ++i) tmp(i) *= std::polar(1.0, -solver.eigenvalues()(i));
        psi.noalias() = solver.eigenvectors() * tmp;
    }
    check_norm(psi, "rap");
    return psi;
}

}  // namespace detail

/// Runs the sweep, doubling the step count until the outcome distribution moves
/// by less than the tolerance.
inline RapOutcome rap_evolve(const LadderModel& model, const SweepProfile& sweep, const RapOptions& opt = {}) {
    sweep.validate();
    if (opt.initial_steps < 1 || opt.max_steps < opt.initial_steps)
        throw ConfigError("rap: invalid step limits");
    RapOutcome out;
    int steps = opt.initial_steps;
    std::vector<double> prev = model.excitation_distribution(detail::magnus4(model, sweep, steps));
    while (true) {
        if (2 * static_cast<long>(steps) > opt.max_steps)
            throw NumericalError("rap: step doubling did not converge within " + std::to_string(opt.max_steps) +
                                 " steps");
        steps *= 2;
        std::vector<double> cur = model.excitation_distribution(detail::magnus4(model, sweep, steps));
        double change = 0.0;
        for (size_t i = 0; i < cur.size(); ++i) change = std::max(change, std::abs(cur[i] - prev[i]));
        prev = std::move(cur);
        if (change < opt.tolerance) {
            out.change = change;
            break;
        }
    }
    out.distribution = std::move(prev);
    out.steps = steps;
    return out;
}

enum class BasisChoice { automatic, ladder, exact_sector };

struct RapTransferOptions {
    Sideband side = Sideband::red;
    StartState start = StartState::ground;
    BasisChoice basis = BasisChoice::automatic;  // automatic: ladder for equal eta, exact sector otherwise
    RapOptions integration;
    unsigned threads = 1;
};

inline bool equal_lamb_dicke(const std::vector<double>& eta, double rel = 1e-12) {
    const auto [lo, hi] = std::minmax_element(eta.begin(), eta.end(),
                                              [](double a, double b) { return std::abs(a) < std::abs(b); });
    return std::abs(*hi) - std::abs(*lo) <= rel * std::abs(*hi);
}

inline LadderModel rap_model(int ion_count, const std::vector<double>& eta, int phonons,
                             const RapTransferOptions& opt) {
    const bool ladder = opt.basis == BasisChoice::ladder ||
                        (opt.basis == BasisChoice::automatic && equal_lamb_dicke(eta));
    if (ladder) return build_reduced_basis(ion_count, eta, phonons, opt.side, opt.start).model();
    return exact_sector_model(ion_count, eta, phonons, opt.side, opt.start);
}

struct RapTransferResult {
    ExcitationHistogram histogram;               // mixture over the phonon distribution
    std::vector<std::vector<double>> per_phonon;  // outcome distribution for each n
    std::vector<int> steps;                       // converged step count for each n
    double input_weight = 0.0;                    // sum of the supplied phonon probabilities

    /// Mean number of ions whose state was changed by the sweep.
    double mean_transferred(StartState start) const {
        const double m = histogram.mean();
        return start == StartState::ground ? m : histogram.ion_count() - m;
    }
};

/// Outcome histogram for a phonon distribution p_n, n = 0..size-1. The
/// distribution is renormalized, so a truncated thermal law may be passed.
inline RapTransferResult rap_transfer(int ion_count, const std::vector<double>& eta, const SweepProfile& sweep,
                                      const std::vector<double>& phonon_distribution,
                                      const RapTransferOptions& opt = {}) {
    detail::validate_ions(ion_count, eta);
    sweep.validate();
    if (phonon_distribution.empty()) throw ConfigError("rap: empty phonon distribution");
    double total = 0.0;
    for (double p : phonon_distribution) {
        if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("rap: invalid phonon probability");
        total += p;
    }
    if (!(total > 0.0)) throw ConfigError("rap: phonon distribution has no weight");

    RapTransferResult r;
    r.input_weight = total;
    const size_t count = phonon_distribution.size();
    r.per_phonon.assign(count, {});
    r.steps.assign(count, 0);
    parallel_for(count, opt.threads, [&](size_t n) {
        if (phonon_distribution[n] == 0.0) return;
        const RapOutcome o = rap_evolve(rap_model(ion_count, eta, static_cast<int>(n), opt), sweep, opt.integration);
        r.per_phonon[n] = o.distribution;
        r.steps[n] = o.steps;
    });

    r.histogram.probabilities.assign(ion_count + 1, 0.0);
    for (size_t n = 0; n < count; ++n) {
        if (phonon_distribution[n] == 0.0) continue;
        const double w = phonon_distribution[n] / total;
        for (int k = 0; k <= ion_count; ++k) r.histogram.probabilities[k] += w * r.per_phonon[n][k];
    }
    double s = 0.0;
    for (double p : r.histogram.probabilities) s += p;
    for (double& p : r.histogram.probabilities) p /= s;
    return r;
}

/// Renormalized thermal law on n = 0..n_max with at most `truncation` left out.
inline std::vector<double> truncated_thermal(double nbar, double truncation = 1e-4, int max_fock = 2000) {
    const ThermalDistribution thermal(nbar);
    const int n_max = nbar == 0.0 ? 0 : thermal.cutoff_for(truncation) - 1;
    if (n_max > max_fock) throw ConfigError("thermal distribution: truncation budget exceeded");
    auto p = thermal.populations(n_max);
    double s = 0.0;
    for (double x : p) s += x;
    for (double& x : p) x /= s;
    return p;
}

/// Probability that a ground-state RAP on the red sideband reports min(n, N)
/// excited ions, for n = 0..n_max.
inline std::vector<double> rap_fidelity_map(int ion_count, const std::vector<double>& eta, const SweepProfile& sweep,
                                            int n_max, const RapTransferOptions& opt = {}) {
    if (n_max < 0) throw ConfigError("rap fidelity map: n_max must be >= 0");
    RapTransferOptions o = opt;
    o.side = Sideband::red;
    o.start = StartState::ground;
    std::vector<double> fidelity(n_max + 1, 0.0);
    parallel_for(fidelity.size(), opt.threads, [&](size_t n) {
        const auto dist =
            rap_evolve(rap_model(ion_count, eta, static_cast<int>(n), o), sweep, o.integration).distribution;
        fidelity[n] = dist[std::min<int>(static_cast<int>(n), ion_count)];
    });
    return fidelity;
}

}  // namespace eitcool
