#pragma once

// Master-equation model of a three-level Lambda atom, optionally coupled to
// one truncated harmonic-oscillator mode, plus the two effective models used
// for light-shift and polarization calibration.
//
// Rotating frame: |e> at zero energy, |g> at +delta, |f> at +delta_pi.
// The dressing field couples g<->e with omega_sigma/2, the probe f<->e with
// omega_pi/2. The probe carries the momentum kick: to first order in eta its
// motional part is V (a + a^dag) with V = i eta omega_pi/2 (|e><f| - |f><e|).
// Density operators are vectorized column-major, vec(A X B) = (B^T kron A) vec X.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "eitcool/eit_rate_model.hpp"
#include "eitcool/errors.hpp"

namespace eitcool {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using SuperOperator = Eigen::SparseMatrix<Complex>;

enum class Level : int { g = 0, f = 1, e = 2 };

struct LambdaSystem {
    EITBeams beams;
    int fock_cutoff = 0;        // highest Fock state kept; 0 = atom only
    double eta_total = 0.0;     // Lamb-Dicke factor of the probe on the mode
    double mode_frequency = 0.0;

    static constexpr int max_dimension = 4096;
    static constexpr double max_eta = 0.15;

    int fock_levels() const { return fock_cutoff + 1; }
    int dimension() const { return 3 * fock_levels(); }
    int index(Level a, int n) const { return static_cast<int>(a) * fock_levels() + n; }

    void validate() const {
        beams.validate();
        if (fock_cutoff < 0) throw ConfigError("lambda system: fock_cutoff must be >= 0");
        if (dimension() > max_dimension)
            throw ConfigError("lambda system: composite dimension " + std::to_string(dimension()) +
                              " exceeds the limit of " + std::to_string(max_dimension));
        if (!(eta_total >= 0.0)) throw ConfigError("lambda system: eta must be >= 0");
        if (fock_cutoff > 0 && !(mode_frequency > 0.0))
            throw ConfigError("lambda system: mode frequency must be positive");
    }
};

struct DensityOperator {
    ComplexMatrix matrix;
    double time = 0.0;

    static constexpr double trace_tolerance = 1e-9;
    static constexpr double hermiticity_tolerance = 1e-12;
    static constexpr double positivity_tolerance = 1e-9;

    Complex trace() const { return matrix.trace(); }

    std::optional<std::string> violation() const {
        if (std::abs(trace() - 1.0) > trace_tolerance)
            return "density operator: trace deviates from 1 by " + std::to_string(std::abs(trace() - 1.0));
        const double herm = (matrix - matrix.adjoint()).cwiseAbs().maxCoeff();
        if (herm > hermiticity_tolerance)
            return "density operator: not Hermitian (max deviation " + std::to_string(herm) + ")";
        Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(matrix, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -positivity_tolerance)
            return "density operator: negative eigenvalue " + std::to_string(es.eigenvalues().minCoeff());
        return std::nullopt;
    }

    void check() const {
        if (auto v = violation()) throw NumericalError(*v);
    }
};

namespace detail {

using Triplet = Eigen::Triplet<Complex>;

inline SuperOperator sparse_identity(int n) {
    SuperOperator m(n, n);
    m.setIdentity();
    return m;
}

inline SuperOperator kron(const SuperOperator& a, const SuperOperator& b) {
    std::vector<Triplet> t;
    t.reserve(static_cast<size_t>(a.nonZeros()) * static_cast<size_t>(b.nonZeros()));
    for (int ka = 0; ka < a.outerSize(); ++ka)
        for (SuperOperator::InnerIterator ia(a, ka); ia; ++ia)
            for (int kb = 0; kb < b.outerSize(); ++kb)
                for (SuperOperator::InnerIterator ib(b, kb); ib; ++ib)
                    t.emplace_back(ia.row() * b.rows() + ib.row(), ia.col() * b.cols() + ib.col(),
                                   ia.value() * ib.value());
    SuperOperator m(a.rows() * b.rows(), a.cols() * b.cols());
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

/// |to><from| on the atom.
inline SuperOperator transition(Level to, Level from) {
    SuperOperator m(3, 3);
    m.insert(static_cast<int>(to), static_cast<int>(from)) = 1.0;
    return m;
}

inline SuperOperator annihilation(int levels) {
    SuperOperator a(levels, levels);
    for (int n = 1; n < levels; ++n) a.insert(n - 1, n) = std::sqrt(static_cast<double>(n));
    return a;
}

inline SuperOperator number_operator(int levels) {
    SuperOperator m(levels, levels);
    for (int n = 1; n < levels; ++n) m.insert(n, n) = static_cast<double>(n);
    return m;
}

inline SuperOperator atom_hamiltonian(const EITBeams& b) {
    using L = Level;
    SuperOperator h = b.delta * transition(L::g, L::g) + b.delta_pi * transition(L::f, L::f) +
                      0.5 * b.omega_sigma * (transition(L::e, L::g) + transition(L::g, L::e)) +
                      0.5 * b.omega_pi * (transition(L::e, L::f) + transition(L::f, L::e));
    h.prune(Complex(0.0));
    return h;
}

/// Motional part of the probe coupling at first order in eta (atom operator).
inline SuperOperator sideband_atom_operator(const LambdaSystem& sys) {
    const Complex c(0.0, 0.5 * sys.eta_total * sys.beams.omega_pi);
    SuperOperator v = c * transition(Level::e, Level::f) - c * transition(Level::f, Level::e);
    v.prune(Complex(0.0));
    return v;
}

/// Superoperator of rho -> -i [X, rho] (X need not be Hermitian).
inline SuperOperator commutator(const SuperOperator& x) {
    const int n = static_cast<int>(x.rows());
    const SuperOperator id = sparse_identity(n);
    const SuperOperator xt = x.transpose();
    return Complex(0.0, -1.0) * (kron(id, x) - kron(xt, id));
}

/// Superoperator of rho -> J rho J^dag - {J^dag J, rho}/2.
inline SuperOperator dissipator(const SuperOperator& j) {
    const int n = static_cast<int>(j.rows());
    const SuperOperator id = sparse_identity(n);
    const SuperOperator jdj = j.adjoint() * j;
    const SuperOperator jdj_t = jdj.transpose();
    const SuperOperator jc = j.conjugate();
    return kron(jc, j) - 0.5 * kron(id, jdj) - 0.5 * kron(jdj_t, id);
}

inline std::array<SuperOperator, 2> jump_operators(const LambdaSystem& sys) {
    const int m = sys.fock_levels();
    const SuperOperator idm = sparse_identity(m);
    const double gam = sys.beams.gamma;
    return {std::sqrt(gam * sys.beams.branching_g) * kron(transition(Level::g, Level::e), idm),
            std::sqrt(gam * sys.beams.branching_f) * kron(transition(Level::f, Level::e), idm)};
}

}  // namespace detail

/// Generator split for the interaction picture with respect to the mode
/// energy: L(t) = stationary + exp(-i w t) lower + exp(+i w t) raise.
struct LiouvillianParts {
    SuperOperator stationary;
    SuperOperator lower;
    SuperOperator raise;
    double mode_frequency = 0.0;
    int dimension = 0;
};

inline LiouvillianParts liouvillian_parts(const LambdaSystem& sys) {
    sys.validate();
    const int m = sys.fock_levels();
    const SuperOperator idm = detail::sparse_identity(m);
    const SuperOperator h_atom = detail::kron(detail::atom_hamiltonian(sys.beams), idm);

    LiouvillianParts parts;
    parts.dimension = sys.dimension();
    parts.mode_frequency = sys.mode_frequency;
    parts.stationary = detail::commutator(h_atom);
    for (const auto& j : detail::jump_operators(sys)) parts.stationary += detail::dissipator(j);
    parts.stationary.prune(Complex(0.0));

    const int d = sys.dimension();
    const int d2 = d * d;
    if (m > 1 && sys.eta_total > 0.0) {
        const SuperOperator v = detail::sideband_atom_operator(sys);
        const SuperOperator a = detail::annihilation(m);
        const SuperOperator ad = a.adjoint();
        parts.lower = detail::commutator(detail::kron(v, a));
        parts.raise = detail::commutator(detail::kron(v, ad));
    } else {
        parts.lower = SuperOperator(d2, d2);
        parts.raise = SuperOperator(d2, d2);
    }
    return parts;
}

/// Time-independent (Schroedinger-frame) Lindblad generator acting on vec(rho).
inline SuperOperator build_liouvillian(const LambdaSystem& sys) {
    LiouvillianParts p = liouvillian_parts(sys);
    SuperOperator l = p.stationary + p.lower + p.raise;
    if (sys.fock_levels() > 1) {
        const SuperOperator n = detail::kron(detail::sparse_identity(3), detail::number_operator(sys.fock_levels()));
        l += detail::commutator(sys.mode_frequency * n);
    }
    l.prune(Complex(0.0));
    return l;
}

/// max |tr L(E_ij)| over all matrix units, relative to the largest generator entry.
inline double trace_preservation_defect(const SuperOperator& l, int dimension) {
    ComplexVector trace_row = ComplexVector::Zero(static_cast<Eigen::Index>(dimension) * dimension);
    for (int i = 0; i < dimension; ++i) trace_row[i + i * dimension] = 1.0;
    const ComplexVector cols = l.adjoint() * trace_row;
    double scale = 0.0;
    for (int k = 0; k < l.outerSize(); ++k)
        for (SuperOperator::InnerIterator it(l, k); it; ++it) scale = std::max(scale, std::abs(it.value()));
    return scale > 0.0 ? cols.cwiseAbs().maxCoeff() / scale : 0.0;
}

inline ComplexVector vectorize(const ComplexMatrix& rho) {
    return Eigen::Map<const ComplexVector>(rho.data(), rho.size());
}

inline ComplexMatrix unvectorize(const ComplexVector& v, int dimension) {
    return Eigen::Map<const ComplexMatrix>(v.data(), dimension, dimension);
}

/// Population of an atomic level, summed over the mode.
inline double level_population(const LambdaSystem& sys, const ComplexMatrix& rho, Level a) {
    double p = 0.0;
    for (int n = 0; n < sys.fock_levels(); ++n) {
        const int i = sys.index(a, n);
        p += rho(i, i).real();
    }
    return p;
}

inline std::vector<double> fock_populations(const LambdaSystem& sys, const ComplexMatrix& rho) {
    std::vector<double> p(sys.fock_levels(), 0.0);
    for (int a = 0; a < 3; ++a)
        for (int n = 0; n < sys.fock_levels(); ++n) {
            const int i = sys.index(static_cast<Level>(a), n);
            p[n] += rho(i, i).real();
        }
    return p;
}

inline double mean_phonon_number(const LambdaSystem& sys, const ComplexMatrix& rho) {
    const auto p = fock_populations(sys, rho);
    double n = 0.0;
    for (size_t k = 0; k < p.size(); ++k) n += static_cast<double>(k) * p[k];
    return n;
}

/// Throws if the two highest Fock states hold too much population.
inline void check_fock_cutoff(const LambdaSystem& sys, const ComplexMatrix& rho, double t,
                              double tolerance = 1e-6) {
    if (sys.fock_cutoff < 2) return;
    const auto p = fock_populations(sys, rho);
    const double top = p[sys.fock_cutoff] + p[sys.fock_cutoff - 1];
    if (top >= tolerance)
        throw NumericalError("fock cutoff " + std::to_string(sys.fock_cutoff) +
                             " too small: top-two populations " + std::to_string(top) +
                             " at t=" + std::to_string(t) + " s");
}

/// Steady state of the time-independent generator, normalized to unit trace.
/// Small problems use the smallest right singular vector; larger ones a sparse
/// LU solve with one equation replaced by the trace condition.
inline DensityOperator steady_state(const LambdaSystem& sys) {
    const SuperOperator l = build_liouvillian(sys);
    const int d = sys.dimension();
    const int d2 = d * d;
    ComplexVector v;
    if (d2 <= 1024) {
        const ComplexMatrix dense(l);
        Eigen::JacobiSVD<ComplexMatrix> svd(dense, Eigen::ComputeFullV);
        const auto& s = svd.singularValues();
        const double threshold = 1e-10 * std::max(1.0, s[0]);
        if (s[d2 - 2] < threshold)
            throw NumericalError("steady state: null space of the generator is degenerate");
        v = svd.matrixV().col(d2 - 1);
    } else {
        std::vector<detail::Triplet> t;
        t.reserve(static_cast<size_t>(l.nonZeros()) + d);
        for (int k = 0; k < l.outerSize(); ++k)
            for (SuperOperator::InnerIterator it(l, k); it; ++it)
                if (it.row() != 0) t.emplace_back(it.row(), it.col(), it.value());
        for (int i = 0; i < d; ++i) t.emplace_back(0, i + i * d, 1.0);
        SuperOperator a(d2, d2);
        a.setFromTriplets(t.begin(), t.end());
        a.makeCompressed();
        Eigen::SparseLU<SuperOperator> lu;
        lu.analyzePattern(a);
        lu.factorize(a);
        if (lu.info() != Eigen::Success)
            throw NumericalError("steady state: generator is singular beyond the trace constraint");
        ComplexVector rhs = ComplexVector::Zero(d2);
        rhs[0] = 1.0;
        v = lu.solve(rhs);
        if (lu.info() != Eigen::Success || !v.allFinite())
            throw NumericalError("steady state: sparse solve failed");
        const double residual = (l * v).cwiseAbs().maxCoeff();
        const double scale = std::max(1.0, sys.beams.gamma);
        if (residual > 1e-8 * scale)
            throw NumericalError("steady state: residual too large, null space may be degenerate");
    }
    ComplexMatrix rho = unvectorize(v, d);
    rho /= rho.trace();
    rho = 0.5 * (rho + rho.adjoint()).eval();
    return {rho, 0.0};
}

struct AbsorptionPoint {
    double delta_pi = 0.0;      // rad/s
    double scatter_rate = 0.0;  // photons/s
};

/// Steady-state photon scattering rate Gamma P_e versus probe detuning.
inline std::vector<AbsorptionPoint> absorption_spectrum(const LambdaSystem& sys,
                                                        const std::vector<double>& delta_pi_grid) {
    if (sys.fock_cutoff != 0) throw ConfigError("absorption spectrum: atom-only system required (fock_cutoff = 0)");
    std::vector<AbsorptionPoint> out;
    out.reserve(delta_pi_grid.size());
    LambdaSystem s = sys;
    for (double dp : delta_pi_grid) {
        s.beams.delta_pi = dp;
        const auto rho = steady_state(s);
        out.push_back({dp, s.beams.gamma * level_population(s, rho.matrix, Level::e)});
    }
    return out;
}

/// Truncated thermal distribution over `levels` Fock states, renormalized.
inline std::vector<double> thermal_fock_distribution(double nbar, int levels) {
    if (!(nbar >= 0.0)) throw ConfigError("thermal distribution: nbar must be >= 0");
    std::vector<double> p(levels);
    const double q = nbar / (nbar + 1.0);
    double w = 1.0 / (nbar + 1.0), sum = 0.0;
    for (int n = 0; n < levels; ++n) {
        p[n] = w;
        sum += w;
        w *= q;
    }
    for (auto& x : p) x /= sum;
    return p;
}

struct IntegratorOptions {
    double relative_tolerance = 1e-9;
    double absolute_tolerance = 1e-12;
    double fixed_step = 0.0;    // > 0 disables step-size control
    long max_steps = 20'000'000;
};

namespace detail {

/// Dormand-Prince 5(4) on a complex state vector. `rhs(t, y, dy)`;
/// `on_step(t0, y0, t1, y1)` after every accepted step; `on_output(i, y)` at
/// each requested time. Output times must be non-decreasing and >= t0.
template <class Rhs, class OnStep, class OnOutput>
long dopri5(Rhs&& rhs, ComplexVector y, double t0, const std::vector<double>& outputs,
            const IntegratorOptions& opt, OnStep&& on_step, OnOutput&& on_output) {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                            b5 = -2187.0 / 6784, b6 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

    const auto n = y.size();
    ComplexVector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n);
    double t = t0;
    rhs(t, y, k1);
    const bool adaptive = !(opt.fixed_step > 0.0);
    double h = adaptive ? 0.0 : opt.fixed_step;
    if (adaptive) {
        const double scale = opt.absolute_tolerance + opt.relative_tolerance * y.cwiseAbs().maxCoeff();
        const double rate = k1.cwiseAbs().maxCoeff();
        h = rate > 0.0 ? 0.01 * scale / rate : 1e-9;
        h = std::max(h, 1e-15);
    }
    long steps = 0;
    for (size_t out = 0; out < outputs.size(); ++out) {
        const double target = outputs[out];
        while (t < target) {
            if (++steps > opt.max_steps) throw NumericalError("integrator: step limit exceeded");
            const double remaining = target - t;
            const bool last = (adaptive ? h : opt.fixed_step) >= remaining * (1.0 - 1e-12);
            const double hs = last ? remaining : (adaptive ? h : opt.fixed_step);

            tmp = y + hs * a21 * k1;
            rhs(t + c2 * hs, tmp, k2);
            tmp = y + hs * (a31 * k1 + a32 * k2);
            rhs(t + c3 * hs, tmp, k3);
            tmp = y + hs * (a41 * k1 + a42 * k2 + a43 * k3);
            rhs(t + c4 * hs, tmp, k4);
            tmp = y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
            rhs(t + c5 * hs, tmp, k5);
            tmp = y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
            rhs(t + hs, tmp, k6);
            ynew = y + hs * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            rhs(t + hs, ynew, k7);

            if (adaptive) {
                tmp = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
                double acc = 0.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double sc = opt.absolute_tolerance +
                                      opt.relative_tolerance * std::max(std::abs(y[i]), std::abs(ynew[i]));
                    const double r = std::abs(tmp[i]) / sc;
                    acc += r * r;
                }
                const double err = std::sqrt(acc / static_cast<double>(n));
                const double fac = err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
                if (err > 1.0) {
                    h = hs * std::max(0.2, fac);
                    if (h < 1e-15 * std::max(1.0, std::abs(t)))
                        throw NumericalError("integrator: step size underflow");
                    continue;
                }
                if (!last || fac < 1.0) h = hs * fac;
            }
            const double tnew = last ? target : t + hs;
            on_step(t, y, tnew, ynew);
            t = tnew;
            y.swap(ynew);
            k1.swap(k7);
        }
        on_output(out, y);
    }
    return steps;
}

/// Integrates the master equation in the interaction picture of the mode from
/// `rho0` at t = 0. Every output state is checked against the density-operator
/// invariants and the Fock cutoff before `on_output(i, rho)` sees it.
template <class OnStep, class OnOutput>
long propagate(const LambdaSystem& sys, const ComplexMatrix& rho0, const std::vector<double>& times,
               const IntegratorOptions& opt, OnStep&& on_step, OnOutput&& on_output) {
    if (times.empty() || times.front() < 0.0 || !std::is_sorted(times.begin(), times.end()))
        throw ConfigError("master equation: output times must be sorted and non-negative");
    const int d = sys.dimension();
    if (rho0.rows() != d || rho0.cols() != d) throw ConfigError("master equation: initial state has the wrong dimension");
    DensityOperator{rho0, 0.0}.check();

    const LiouvillianParts parts = liouvillian_parts(sys);
    const bool coupled = parts.lower.nonZeros() > 0;
    const double w = parts.mode_frequency;
    ComplexVector scratch(static_cast<Eigen::Index>(d) * d);
    auto rhs = [&](double t, const ComplexVector& y, ComplexVector& dy) {
        dy.noalias() = parts.stationary * y;
        if (coupled) {
            const Complex ph(std::cos(w * t), -std::sin(w * t));
            scratch.noalias() = parts.lower * y;
            dy += ph * scratch;
            scratch.noalias() = parts.raise * y;
            dy += std::conj(ph) * scratch;
        }
    };
    auto checked_output = [&](size_t i, const ComplexVector& y) {
        DensityOperator rho{unvectorize(y, d), times[i]};
        rho.check();
        check_fock_cutoff(sys, rho.matrix, times[i]);
        on_output(i, std::move(rho));
    };
    return dopri5(rhs, vectorize(rho0), 0.0, times, opt, on_step, checked_output);
}

}  // namespace detail

/// Density operator at each requested time (interaction picture of the mode;
/// identical to the lab frame for atomic and phonon-number observables).
inline std::vector<DensityOperator> evolve_density(const LambdaSystem& sys, const ComplexMatrix& rho0,
                                                   const std::vector<double>& times,
                                                   const IntegratorOptions& opt = {}) {
    sys.validate();
    std::vector<DensityOperator> out(times.size());
    detail::propagate(
        sys, rho0, times, opt, [](double, const ComplexVector&, double, const ComplexVector&) {},
        [&](size_t i, DensityOperator rho) { out[i] = std::move(rho); });
    return out;
}

/// Product state: atom density matrix (3x3) times a diagonal Fock distribution.
inline ComplexMatrix product_state(const LambdaSystem& sys, const ComplexMatrix& rho_atom,
                                   const std::vector<double>& fock) {
    const int m = sys.fock_levels();
    if (rho_atom.rows() != 3 || rho_atom.cols() != 3 || static_cast<int>(fock.size()) != m)
        throw ConfigError("product state: dimension mismatch");
    ComplexMatrix rho = ComplexMatrix::Zero(sys.dimension(), sys.dimension());
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int n = 0; n < m; ++n) rho(a * m + n, b * m + n) = rho_atom(a, b) * fock[n];
    return rho;
}

struct ScatteringRecord {
    std::vector<double> excited_population;  // P_e at each output time
    std::vector<double> scattered_photons;   // integral of Gamma P_e dt up to each output time
};

struct LindbladCoolingResult {
    CoolingTrajectory trajectory;  // one mode; rates left empty
    ScatteringRecord scattering;
    DensityOperator final_state;
    long steps = 0;
};

/// Mode starts thermal with `nbar0` (truncated at the cutoff and
/// renormalized); the atom starts in the steady state of the uncoupled Lambda
/// system.
inline LindbladCoolingResult simulate_eit_cooling(const LambdaSystem& sys, double nbar0,
                                                  const std::vector<double>& times,
                                                  const IntegratorOptions& opt = {}) {
    sys.validate();
    if (sys.fock_cutoff < 1) throw ConfigError("eit cooling simulation: needs a mode (fock_cutoff >= 1)");
    if (sys.eta_total > LambdaSystem::max_eta)
        throw RegimeError("eit cooling simulation: eta above 0.15 is outside the first-order Lamb-Dicke model");

    LambdaSystem atom = sys;
    atom.fock_cutoff = 0;
    const ComplexMatrix rho0 =
        product_state(sys, steady_state(atom).matrix, thermal_fock_distribution(nbar0, sys.fock_levels()));

    const int d = sys.dimension();
    const double gam = sys.beams.gamma;
    auto excited = [&](const ComplexVector& y) {
        double p = 0.0;
        for (int n = 0; n < sys.fock_levels(); ++n) {
            const int i = sys.index(Level::e, n);
            p += y[i + static_cast<Eigen::Index>(i) * d].real();
        }
        return p;
    };

    LindbladCoolingResult res;
    res.trajectory.times = times;
    res.trajectory.nbar.assign(1, std::vector<double>(times.size()));
    res.scattering.excited_population.resize(times.size());
    res.scattering.scattered_photons.resize(times.size());
    double photons = 0.0;

    auto on_step = [&](double t0, const ComplexVector& y0, double t1, const ComplexVector& y1) {
        photons += 0.5 * gam * (excited(y0) + excited(y1)) * (t1 - t0);
    };
    auto on_output = [&](size_t i, DensityOperator rho) {
        res.trajectory.nbar[0][i] = mean_phonon_number(sys, rho.matrix);
        res.scattering.excited_population[i] = level_population(sys, rho.matrix, Level::e);
        res.scattering.scattered_photons[i] = photons;
        if (i + 1 == times.size()) res.final_state = std::move(rho);
    };
    res.steps = detail::propagate(sys, rho0, times, opt, on_step, on_output);
    return res;
}

inline LindbladCoolingResult simulate_eit_cooling(const LambdaSystem& sys, double nbar0, double duration,
                                                  int points = 101, const IntegratorOptions& opt = {}) {
    return simulate_eit_cooling(sys, nbar0, linear_time_grid(duration, points), opt);
}

// ---------------------------------------------------------------------------
// Calibration experiments on the S <-> D quadrupole transition.

struct CalibrationPoint {
    double x = 0.0;             // detuning (rad/s) or pulse duration (s)
    double d_population = 0.0;
};

struct ProbePulse {
    double rabi = 0.0;      // rad/s
    double duration = 0.0;  // s
};

/// Pump-out rate of the dressed ground state: scattering rate of the dressing
/// beam times the probability of decaying into the other ground state.
inline double dressing_pump_rate(const EITBeams& b) {
    const double s = 0.25 * b.omega_sigma * b.omega_sigma;
    return b.branching_f * b.gamma * s / (b.delta * b.delta + 0.25 * b.gamma * b.gamma + 2.0 * s);
}

namespace detail {

/// exp(M t) for a 2x2 complex matrix via the Cayley-Hamilton closed form.
inline Eigen::Matrix2cd expm2(const Eigen::Matrix2cd& m, double t) {
    const Complex half_tr = 0.5 * m.trace();
    const Eigen::Matrix2cd b = m - half_tr * Eigen::Matrix2cd::Identity();
    const Complex s = std::sqrt(-b.determinant());
    const Complex st = s * t;
    const Complex sinch = std::abs(st) < 1e-8 ? Complex(t) * (1.0 + st * st / 6.0) : std::sinh(st) / s;
    return std::exp(half_tr * t) * (std::cosh(st) * Eigen::Matrix2cd::Identity() + sinch * b);
}

}  // namespace detail

/// Effective two-level model: the ion starts in D, a probe of detuning
/// `detuning` drives D <-> S, and S is light shifted by the dressing beam and
/// pumped out of the two-level manifold at `pump_rate` (defaults to the
/// dressing-beam estimate). Returns the D population after the pulse.
inline double lightshift_probe_population(const EITBeams& dressing, const ProbePulse& probe, double detuning,
                                          std::optional<double> pump_rate = std::nullopt) {
    const double shift = light_shift(dressing);
    const double pump = pump_rate.value_or(dressing_pump_rate(dressing));
    Eigen::Matrix2cd h;  // basis (D, S)
    h << 0.0, 0.5 * probe.rabi, 0.5 * probe.rabi, Complex(shift - detuning, -0.5 * pump);
    const Eigen::Matrix2cd u = detail::expm2(Complex(0.0, -1.0) * h, probe.duration);
    return std::norm(u(0, 0));
}

inline std::vector<CalibrationPoint> simulate_lightshift_spectroscopy(
    const EITBeams& dressing, const ProbePulse& probe, const std::vector<double>& detunings,
    std::optional<double> pump_rate = std::nullopt) {
    dressing.validate();
    if (!(probe.rabi > 0.0) || !(probe.duration > 0.0))
        throw ConfigError("light-shift spectroscopy: probe Rabi frequency and duration must be positive");
    if (pump_rate && !(*pump_rate >= 0.0)) throw ConfigError("light-shift spectroscopy: pump rate must be >= 0");
    std::vector<CalibrationPoint> out;
    out.reserve(detunings.size());
    for (double x : detunings) out.push_back({x, lightshift_probe_population(dressing, probe, x, pump_rate)});
    return out;
}

/// Centre of the depletion feature: depletion-weighted mean detuning over the
/// points depleted by at least half the maximum. Symmetric side lobes of a
/// coherent pulse therefore average out.
inline double dip_center(const std::vector<CalibrationPoint>& scan) {
    if (scan.empty()) throw ConfigError("dip_center: empty scan");
    double deepest = 0.0;
    for (const auto& p : scan) deepest = std::max(deepest, 1.0 - p.d_population);
    if (!(deepest > 0.0)) throw RegimeError("dip_center: no depletion in the scan");
    double w = 0.0, wx = 0.0;
    for (const auto& p : scan) {
        const double dep = 1.0 - p.d_population;
        if (dep < 0.5 * deepest) continue;
        w += dep;
        wx += dep * p.x;
    }
    return wx / w;
}

/// Ramsey sequence on S <-> D with the second pi/2 pulse phase shifted by
/// pi/2. During the dressing pulse S picks up phase `shift` * t and the
/// S-D coherence decays at `decay_rate`. Result: 0.5 + 0.5 exp(-t/tau) sin(shift t).
inline std::vector<CalibrationPoint> simulate_polarization_ramsey(double shift, double decay_rate,
                                                                  const std::vector<double>& durations) {
    if (!(decay_rate >= 0.0)) throw ConfigError("polarization ramsey: decay rate must be >= 0");
    auto pulse = [](double phase) {
        // pi/2 rotation about cos(phase) x + sin(phase) y, basis (S, D)
        const double r = 1.0 / std::sqrt(2.0);
        Eigen::Matrix2cd u;
        u << r, Complex(0.0, -r) * std::exp(Complex(0.0, -phase)), Complex(0.0, -r) * std::exp(Complex(0.0, phase)), r;
        return u;
    };
    const Eigen::Matrix2cd first = pulse(0.0), second = pulse(0.5 * constants::pi);
    std::vector<CalibrationPoint> out;
    out.reserve(durations.size());
    for (double t : durations) {
        if (t < 0.0) throw ConfigError("polarization ramsey: durations must be >= 0");
        Eigen::Matrix2cd rho = Eigen::Matrix2cd::Zero();
        rho(0, 0) = 1.0;
        rho = first * rho * first.adjoint();
        const Complex coh = std::exp(Complex(-decay_rate * t, -shift * t));
        rho(0, 1) *= coh;
        rho(1, 0) *= std::conj(coh);
        rho = second * rho * second.adjoint();
        out.push_back({t, rho(1, 1).real()});
    }
    return out;
}

}  // namespace eitcool
