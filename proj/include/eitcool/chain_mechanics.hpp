#pragma once

// Equilibrium configuration and normal modes of N-ion linear Coulomb crystals
// in a three-dimensional harmonic trap.
//
// Internally positions are measured in units of the length scale
//   l = (q^2 / (4 pi eps0 m omega_z^2))^(1/3),
// in which the axial potential energy reads sum u_i^2/2 + sum_{i<j} 1/|u_i - u_j|.
// Every public function takes and returns SI quantities.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "eitcool/constants.hpp"
#include "eitcool/errors.hpp"

namespace eitcool {

enum class Branch { axial, radial_1, radial_2 };

inline std::string_view branch_name(Branch b) {
    switch (b) {
        case Branch::axial: return "axial";
        case Branch::radial_1: return "radial_1";
        case Branch::radial_2: return "radial_2";
    }
    return "?";
}

inline constexpr std::array<Branch, 3> all_branches{Branch::axial, Branch::radial_1,
                                                    Branch::radial_2};

struct TrapConfig {
    int ion_count = 1;
    double ion_mass_u = 40.0;  // atomic mass units
    double omega_axial = 0.0;  // rad/s
    double omega_radial_1 = 0.0;
    double omega_radial_2 = 0.0;
    // Labels of the principal-axis frame. Direction vectors elsewhere are given
    // as (radial_1, radial_2, axial) components.
    std::array<std::string, 3> principal_axes{"radial_1", "radial_2", "axial"};

    double mass_kg() const { return ion_mass_u * constants::atomic_mass_unit; }

    double omega(Branch b) const {
        switch (b) {
            case Branch::axial: return omega_axial;
            case Branch::radial_1: return omega_radial_1;
            case Branch::radial_2: return omega_radial_2;
        }
        return 0.0;
    }

    /// Throws ConfigError unless the trap can hold a linear string.
    void validate() const {
        if (ion_count < 1) throw ConfigError("trap: ion_count must be >= 1");
        if (!(ion_mass_u > 0.0) || !std::isfinite(ion_mass_u))
            throw ConfigError("trap: ion mass must be positive");
        for (Branch b : all_branches) {
            if (!(omega(b) > 0.0) || !std::isfinite(omega(b)))
                throw ConfigError("trap: " + std::string(branch_name(b)) +
                                  " frequency must be positive");
        }
        if (!(omega_radial_1 > omega_axial) || !(omega_radial_2 > omega_axial))
            throw ConfigError("trap: radial frequencies must exceed the axial frequency");
    }

    /// Axial length scale l in meters.
    double length_scale() const {
        return std::cbrt(constants::coulomb_k / (mass_kg() * omega_axial * omega_axial));
    }
};

struct BeamGeometry {
    double wavelength = 397e-9;  // m
    Eigen::Vector3d unit_k_sigma{0.0, 0.0, 1.0};
    Eigen::Vector3d unit_k_pi{0.0, 0.0, -1.0};

    void validate() const {
        if (!(wavelength > 0.0)) throw ConfigError("geometry: wavelength must be positive");
        if (std::abs(unit_k_sigma.norm() - 1.0) > 1e-12)
            throw ConfigError("geometry: k_sigma direction is not a unit vector");
        if (std::abs(unit_k_pi.norm() - 1.0) > 1e-12)
            throw ConfigError("geometry: k_pi direction is not a unit vector");
    }

    /// k_pi - k_sigma in 1/m, principal-axis frame.
    Eigen::Vector3d delta_k() const {
        return (constants::two_pi / wavelength) * (unit_k_pi - unit_k_sigma);
    }

    /// Builds beam directions whose difference vector points along `raman_direction`
    /// with the two beams separated by `opening_angle` (radians).
    static BeamGeometry from_raman_direction(double wavelength, Eigen::Vector3d raman_direction,
                                             double opening_angle) {
        raman_direction.normalize();
        // Any unit vector orthogonal to the Raman direction.
        Eigen::Vector3d seed = std::abs(raman_direction.z()) < 0.9 ? Eigen::Vector3d::UnitZ()
                                                                   : Eigen::Vector3d::UnitX();
        Eigen::Vector3d perp = (seed - seed.dot(raman_direction) * raman_direction).normalized();
        const double half = 0.5 * opening_angle;
        BeamGeometry g;
        g.wavelength = wavelength;
        g.unit_k_pi = (std::cos(half) * perp + std::sin(half) * raman_direction).normalized();
        g.unit_k_sigma = (std::cos(half) * perp - std::sin(half) * raman_direction).normalized();
        return g;
    }
};

/// Oscillation direction of a branch in the principal-axis frame.
inline Eigen::Vector3d branch_direction(Branch b) {
    switch (b) {
        case Branch::radial_1: return Eigen::Vector3d::UnitX();
        case Branch::radial_2: return Eigen::Vector3d::UnitY();
        case Branch::axial: return Eigen::Vector3d::UnitZ();
    }
    return Eigen::Vector3d::Zero();
}

struct Mode {
    double frequency = 0.0;  // rad/s
    Branch branch = Branch::axial;
    int index = 0;                  // position within its branch, ascending frequency
    Eigen::VectorXd participation;  // b_im, unit norm
    Eigen::VectorXd lamb_dicke;     // eta_im, empty until lamb_dicke_factors ran
    double eta_com_equivalent = 0.0;  // single-ion eta at this frequency
};

struct ModeSet {
    int ion_count = 0;
    std::vector<Mode> modes;

    std::vector<const Mode*> branch(Branch b) const {
        std::vector<const Mode*> out;
        for (const auto& m : modes)
            if (m.branch == b) out.push_back(&m);
        return out;
    }

    /// The centre-of-mass mode of a branch (all-equal participation).
    const Mode& com(Branch b) const {
        auto modes_b = branch(b);
        const Mode* best = modes_b.front();
        double best_score = -1.0;
        for (const Mode* m : modes_b) {
            double score = std::abs(m->participation.sum());
            if (score > best_score) {
                best_score = score;
                best = m;
            }
        }
        return *best;
    }
};

namespace detail {

/// Gradient of the dimensionless axial potential.
inline Eigen::VectorXd axial_force_residual(const Eigen::VectorXd& u) {
    const auto n = u.size();
    Eigen::VectorXd g = u;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double d = u[i] - u[j];
            g[i] -= (d > 0 ? 1.0 : -1.0) / (d * d);
        }
    }
    return g;
}

/// Dimensionless axial Hessian A (eigenvalues are (omega_m/omega_z)^2).
inline Eigen::MatrixXd axial_hessian(const Eigen::VectorXd& u) {
    const auto n = u.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        a(i, i) = 1.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double inv3 = 1.0 / std::pow(std::abs(u[i] - u[j]), 3);
            a(i, i) += 2.0 * inv3;
            a(i, j) = -2.0 * inv3;
        }
    }
    return a;
}

/// Radial Hessian assembled directly from the Coulomb couplings; alpha = (omega_r/omega_z)^2.
inline Eigen::MatrixXd radial_hessian(const Eigen::VectorXd& u, double alpha) {
    const auto n = u.size();
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        b(i, i) = alpha;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double inv3 = 1.0 / std::pow(std::abs(u[i] - u[j]), 3);
            b(i, i) -= inv3;
            b(i, j) = inv3;
        }
    }
    return b;
}

inline double axial_potential(const Eigen::VectorXd& u) {
    double v = 0.5 * u.squaredNorm();
    for (Eigen::Index i = 0; i < u.size(); ++i)
        for (Eigen::Index j = i + 1; j < u.size(); ++j) v += 1.0 / std::abs(u[i] - u[j]);
    return v;
}

/// Damped Newton on the dimensionless force balance.
inline Eigen::VectorXd dimensionless_equilibrium(int n, int max_iterations = 200) {
    Eigen::VectorXd u(n);
    if (n == 1) {
        u[0] = 0.0;
        return u;
    }
    // Quasi-uniform seed; the spacing roughly matches the known N^-0.56 law.
    const double spacing = 2.0 * std::pow(static_cast<double>(n), -0.56);
    for (int i = 0; i < n; ++i) u[i] = spacing * (i + 1 - 0.5 * (n + 1));

    for (int iter = 0; iter < max_iterations; ++iter) {
        Eigen::VectorXd g = axial_force_residual(u);
        if (g.lpNorm<Eigen::Infinity>() < 1e-14) break;
        Eigen::VectorXd step = axial_hessian(u).ldlt().solve(g);
        if (step.lpNorm<Eigen::Infinity>() < 1e-16 * u.lpNorm<Eigen::Infinity>()) break;
        const double v0 = axial_potential(u);
        double lambda = 1.0;
        Eigen::VectorXd trial = u - step;
        // Backtrack until ordering is preserved and the energy does not rise.
        for (int k = 0; k < 60; ++k) {
            trial = u - lambda * step;
            bool ordered = true;
            for (int i = 1; i < n; ++i) ordered = ordered && trial[i] > trial[i - 1];
            if (ordered && axial_potential(trial) <= v0 + 1e-15 * std::abs(v0)) break;
            lambda *= 0.5;
        }
        u = trial;
    }
    // Enforce reflection antisymmetry removed by round-off.
    Eigen::VectorXd sym = 0.5 * (u - u.reverse());
    if (axial_force_residual(sym).lpNorm<Eigen::Infinity>() <=
        axial_force_residual(u).lpNorm<Eigen::Infinity>())
        u = sym;
    if (axial_force_residual(u).lpNorm<Eigen::Infinity>() > 1e-12)
        throw NumericalError("equilibrium_positions: Newton solve did not converge for N=" +
                             std::to_string(n));
    return u;
}

struct BranchSolution {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
};

inline BranchSolution diagonalize_branch(const Eigen::MatrixXd& h, Branch b) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    if (es.info() != Eigen::Success)
        throw NumericalError("normal_modes: eigensolver failed on " + std::string(branch_name(b)));
    BranchSolution s{es.eigenvalues(), es.eigenvectors()};
    const double hnorm = h.norm();
    for (Eigen::Index m = 0; m < h.rows(); ++m) {
        Eigen::VectorXd v = s.eigenvectors.col(m);
        if ((h * v - s.eigenvalues[m] * v).norm() > 1e-10 * hnorm)
            throw NumericalError("normal_modes: eigenpair residual too large on " +
                                 std::string(branch_name(b)));
        if (!(s.eigenvalues[m] > 0.0))
            throw RegimeError("normal_modes: non-positive eigenvalue in the " +
                              std::string(branch_name(b)) +
                              " branch (zigzag instability, crystal is not linear)");
        // Deterministic sign: the largest-magnitude component is positive,
        // ties broken towards the lowest index.
        Eigen::Index imax = 0;
        for (Eigen::Index i = 1; i < v.size(); ++i)
            if (std::abs(v[i]) > std::abs(v[imax]) + 1e-9) imax = i;
        if (v[imax] < 0) s.eigenvectors.col(m) = -v;
    }
    return s;
}

}  // namespace detail

/// Equilibrium axial coordinates (m), sorted ascending.
inline std::vector<double> equilibrium_positions(const TrapConfig& trap) {
    trap.validate();
    const Eigen::VectorXd u = detail::dimensionless_equilibrium(trap.ion_count);
    const double l = trap.length_scale();
    std::vector<double> z(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) z[i] = u[i] * l;
    return z;
}

/// All 3N normal modes: frequencies and participation vectors. Lamb-Dicke
/// factors are left empty.
inline ModeSet normal_modes(const TrapConfig& trap, const std::vector<double>& positions) {
    trap.validate();
    const int n = trap.ion_count;
    if (static_cast<int>(positions.size()) != n)
        throw ConfigError("normal_modes: position count does not match ion_count");
    const double l = trap.length_scale();
    Eigen::VectorXd u(n);
    for (int i = 0; i < n; ++i) u[i] = positions[i] / l;

    const Eigen::MatrixXd a = detail::axial_hessian(u);
    ModeSet set;
    set.ion_count = n;
    for (Branch b : all_branches) {
        Eigen::MatrixXd h;
        if (b == Branch::axial) {
            h = a;
        } else {
            const double ratio = trap.omega(b) / trap.omega_axial;
            const double alpha = ratio * ratio;
            h = detail::radial_hessian(u, alpha);
            const Eigen::MatrixXd from_axial =
                (alpha + 0.5) * Eigen::MatrixXd::Identity(n, n) - 0.5 * a;
            if ((h - from_axial).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, alpha))
                throw NumericalError("normal_modes: radial/axial Hessian relation violated");
        }
        const auto sol = detail::diagonalize_branch(h, b);
        for (Eigen::Index m = 0; m < n; ++m) {
            Mode mode;
            mode.branch = b;
            mode.index = static_cast<int>(m);
            mode.frequency = trap.omega_axial * std::sqrt(sol.eigenvalues[m]);
            mode.participation = sol.eigenvectors.col(m);
            set.modes.push_back(std::move(mode));
        }
    }
    return set;
}

/// Fills eta_im = |dk . e_m| sqrt(hbar / (2 m omega_m)) |b_im| for every mode.
/// The magnitude of b_im is used; relative signs between ions only amount to a
/// local phase convention for each ion's internal states.
inline ModeSet lamb_dicke_factors(ModeSet modes, const BeamGeometry& geometry,
                                  const TrapConfig& trap) {
    geometry.validate();
    const Eigen::Vector3d dk = geometry.delta_k();
    const double mass = trap.mass_kg();
    for (auto& mode : modes.modes) {
        if (!(mode.frequency > 0.0))
            throw NumericalError("lamb_dicke_factors: zero mode frequency");
        const double projection = std::abs(dk.dot(branch_direction(mode.branch)));
        mode.eta_com_equivalent =
            projection * std::sqrt(constants::hbar / (2.0 * mass * mode.frequency));
        mode.lamb_dicke = mode.eta_com_equivalent * mode.participation.cwiseAbs();
    }
    return modes;
}

/// Convenience: equilibrium, modes and Lamb-Dicke factors in one call.
inline ModeSet compute_modes(const TrapConfig& trap, const BeamGeometry& geometry) {
    return lamb_dicke_factors(normal_modes(trap, equilibrium_positions(trap)), geometry, trap);
}

}  // namespace eitcool
