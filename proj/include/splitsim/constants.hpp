#pragma once

namespace splitsim::constants {

inline constexpr double pi = 3.14159265358979323846;

// SI values, CODATA 2018 where applicable
inline constexpr double mu0     = 4.0e-7 * pi;        // vacuum permeability [T m / A]
inline constexpr double mu_bohr = 9.2740100783e-24;   // Bohr magneton [J / T]
inline constexpr double hbar    = 1.054571817e-34;    // reduced Planck constant [J s]
inline constexpr double planck  = 6.62607015e-34;     // Planck constant [J s]
inline constexpr double amu     = 1.66053906660e-27;  // atomic mass unit [kg]
inline constexpr double g_earth = 9.80665;            // standard gravity [m / s^2]

} // namespace splitsim::constants
