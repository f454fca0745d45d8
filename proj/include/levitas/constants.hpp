#pragma once

#include <numbers>

namespace levitas::constants {

// CODATA 2018 (exact where the SI fixes them).
inline constexpr double boltzmann = 1.380649e-23;            // J/K
inline constexpr double elementary_charge = 1.602176634e-19; // C
inline constexpr double vacuum_permittivity = 8.8541878128e-12; // F/m
inline constexpr double hbar = 1.054571817e-34;              // J s
inline constexpr double atomic_mass_unit = 1.66053906660e-27; // kg

inline constexpr double pi = std::numbers::pi;

// Mean molecular mass of dry air.
inline constexpr double air_molecule_mass = 28.97 * atomic_mass_unit;

// Epstein drag coefficient for diffuse reflection with full accommodation.
inline constexpr double epstein_diffuse = 1.0 + pi / 8.0;

// Unit conversions applied at the configuration boundary.
inline constexpr double pascal_per_mbar = 100.0;

}  // namespace levitas::constants
