#pragma once

#include <numbers>

namespace eitcool::constants {

// CODATA 2018 values, SI units.
inline constexpr double hbar = 1.054571817e-34;             // J s
inline constexpr double elementary_charge = 1.602176634e-19; // C
inline constexpr double vacuum_permittivity = 8.8541878128e-12; // F/m
inline constexpr double atomic_mass_unit = 1.66053906660e-27;   // kg

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

// Coulomb prefactor q^2 / (4 pi eps0) for singly charged ions.
inline constexpr double coulomb_k =
    elementary_charge * elementary_charge / (4.0 * pi * vacuum_permittivity);

/// Cycles/s to rad/s.
constexpr double angular(double hz) { return two_pi * hz; }
/// Rad/s to cycles/s.
constexpr double cyclic(double rad_per_s) { return rad_per_s / two_pi; }

}  // namespace eitcool::constants
