#pragma once

namespace qnd {

inline constexpr double k_boltzmann = 1.380649e-23;   // J/K
inline constexpr double hbar = 1.054571817e-34;       // J*s
inline constexpr double pi = 3.141592653589793238462643383279502884;

// Cesium-133
inline constexpr double cesium_mass = 2.20694650e-25;  // kg

}  // namespace qnd
