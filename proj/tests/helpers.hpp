#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "qnd/constants.hpp"
#include "qnd/probe.hpp"
#include "qnd/trap.hpp"

namespace testutil {

inline qnd::TrapPotential default_trap() {
    return qnd::TrapPotential::from_geometry(105e-9, 70.0 * qnd::k_boltzmann * 1e-6,
                                             42e-9, 420e-9);
}

inline qnd::CouplingProfile default_coupling() {
    return qnd::CouplingProfile{2.0e-3, 265e-9, 105e-9};
}

inline qnd::PumpingModel default_pumping() { return qnd::PumpingModel{1.6, 10e-6, 400e-6}; }

inline qnd::ProbeSchedule default_schedule() {
    return qnd::ProbeSchedule{8e-6, 32e-6, 120e-6, 0.5e-6};
}

// Homogeneous-coupling ensemble suitable for closed-form checks.
inline qnd::EnsembleConfig homogeneous_ensemble(double mean_atoms, double shot_noise,
                                                qnd::LoadingModel loading) {
    qnd::EnsembleConfig cfg;
    cfg.mean_atom_number = mean_atoms;
    cfg.loading = loading;
    cfg.temperature = 120e-6;
    cfg.phase_shot_noise = shot_noise;
    cfg.coupling_mode = qnd::CouplingMode::homogeneous;
    cfg.atom_mass = qnd::cesium_mass;
    cfg.trap = default_trap();
    cfg.coupling = default_coupling();
    cfg.pumping = default_pumping();
    return cfg;
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double variance(std::span<const double> v) {
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return ss / static_cast<double>(v.size() - 1);
}

}  // namespace testutil
