#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qnd/rng.hpp"

namespace qnd {

// Two-exponential radial trap: repulsive blue evanescent tail plus
// attractive red tail,
//   U(r) = A_b exp(-2 r / lambda_b) - A_r exp(-2 r / lambda_r).
// A bound minimum requires lambda_b < lambda_r and amplitudes such that
// the blue wall dominates at short range.
struct TrapPotential {
    double repulsive_amplitude;      // J
    double repulsive_decay_length;   // m
    double attractive_amplitude;     // J
    double attractive_decay_length;  // m
    double surface_offset = 0.0;     // m, radial coordinate of fiber surface

    void validate() const;

    double evaluate(double r) const;   // J
    double force(double r) const;      // N, -dU/dr
    double minimum_radius() const;     // m, closed form from dU/dr = 0
    double depth() const;              // J, -U(r_min)
    double curvature_at_minimum() const;               // J/m^2
    double harmonic_frequency(double mass) const;      // rad/s

    // Radius beyond which the trap is considered irrelevant for bound
    // motion (|U| below depth * tail_cutoff); used as sampling/escape limit.
    double outer_radius(double tail_cutoff = 1e-3) const;

    // Construct from a target geometry: minimum position, depth and the two
    // decay lengths. Amplitudes follow from the stationarity condition.
    static TrapPotential from_geometry(double r_min, double depth,
                                       double repulsive_decay_length,
                                       double attractive_decay_length);
};

// Exponentially decaying probe coupling, normalized so that an atom at rest
// at the trap minimum picks up peak_phase_per_atom.
struct CouplingProfile {
    double peak_phase_per_atom;  // rad
    double probe_decay_length;   // m
    double reference_radius;     // m, usually the trap minimum

    void validate() const;
    double coupling(double r) const;  // rad
};

struct AtomState {
    double position;  // m, radial, > 0
    double velocity;  // m/s
};

struct Trajectory {
    double time_step = 0.0;  // s
    std::vector<AtomState> samples;
    bool escaped = false;
    std::size_t escape_index = 0;  // first sample index past escape

    double duration() const { return time_step * static_cast<double>(samples.size() - 1); }
};

// Draw (r, v) from the 1-D Boltzmann distribution restricted to bound
// states (total energy < 0). Throws if the acceptance rate of the bound
// sampler drops below ~1e-3 (trap too shallow for the temperature).
AtomState sample_thermal_state(const TrapPotential& trap, double temperature,
                               double mass, RandomStream& rng);

// Fixed-step leapfrog (kick-drift-kick) integration of 1-D radial motion.
// dt must not exceed 1/50 of the small-oscillation period. Escaping atoms
// (E >= 0 or r beyond the outer radius) are flagged, not thrown.
Trajectory simulate_trajectory(const AtomState& initial, const TrapPotential& trap,
                               double mass, double dt, double total_time);

// Total energy at a trajectory sample.
double trajectory_energy(const Trajectory& traj, const TrapPotential& trap,
                         double mass, std::size_t index);

// Mean probe coupling over the leading window of a trajectory. Samples past
// an escape contribute zero.
double time_averaged_coupling(const Trajectory& traj, const CouplingProfile& coupling,
                              double window);

// Upsilon = 1 + var/mean^2 over per-atom couplings (population variance).
double inhomogeneity_factor(std::span<const double> couplings);

// Squared Lamb-Dicke parameter, omega_rec / omega_trap.
double lamb_dicke_squared(double omega_recoil, double omega_trap);

}  // namespace qnd
