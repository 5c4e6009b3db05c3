#include "qnd/trap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qnd/constants.hpp"

namespace qnd {

void TrapPotential::validate() const {
    if (repulsive_amplitude <= 0.0 || attractive_amplitude <= 0.0)
        throw std::invalid_argument("trap: amplitudes must be positive");
    if (repulsive_decay_length <= 0.0 || attractive_decay_length <= 0.0)
        throw std::invalid_argument("trap: decay lengths must be positive");
    if (repulsive_decay_length >= attractive_decay_length)
        throw std::invalid_argument(
            "trap: repulsive decay length must be shorter than attractive one");
    if (depth() <= 0.0) throw std::invalid_argument("trap: no bound minimum");
}

double TrapPotential::evaluate(double r) const {
    if (r <= 0.0) throw std::domain_error("trap: radius must be positive");
    return repulsive_amplitude * std::exp(-2.0 * r / repulsive_decay_length) -
           attractive_amplitude * std::exp(-2.0 * r / attractive_decay_length);
}

double TrapPotential::force(double r) const {
    if (r <= 0.0) throw std::domain_error("trap: radius must be positive");
    return 2.0 * repulsive_amplitude / repulsive_decay_length *
               std::exp(-2.0 * r / repulsive_decay_length) -
           2.0 * attractive_amplitude / attractive_decay_length *
               std::exp(-2.0 * r / attractive_decay_length);
}

double TrapPotential::minimum_radius() const {
    // dU/dr = 0  =>  (A_b/l_b) e^{-2r/l_b} = (A_r/l_r) e^{-2r/l_r}
    const double lb = repulsive_decay_length;
    const double lr = attractive_decay_length;
    const double num = std::log((repulsive_amplitude * lr) / (attractive_amplitude * lb));
    const double den = 2.0 * (1.0 / lb - 1.0 / lr);
    const double r_min = num / den;
    if (!(r_min > 0.0)) throw std::invalid_argument("trap: minimum not at positive radius");
    return r_min;
}

double TrapPotential::depth() const {
    const double lb = repulsive_decay_length;
    const double lr = attractive_decay_length;
    if (lb >= lr) return -1.0;
    const double arg = (repulsive_amplitude * lr) / (attractive_amplitude * lb);
    if (arg <= 0.0 || std::log(arg) <= 0.0) return -1.0;
    const double r_min = std::log(arg) / (2.0 * (1.0 / lb - 1.0 / lr));
    if (!(r_min > 0.0)) return -1.0;
    return -(repulsive_amplitude * std::exp(-2.0 * r_min / lb) -
             attractive_amplitude * std::exp(-2.0 * r_min / lr));
}

double TrapPotential::curvature_at_minimum() const {
    const double r_min = minimum_radius();
    const double lb = repulsive_decay_length;
    const double lr = attractive_decay_length;
    return 4.0 * repulsive_amplitude / (lb * lb) * std::exp(-2.0 * r_min / lb) -
           4.0 * attractive_amplitude / (lr * lr) * std::exp(-2.0 * r_min / lr);
}

double TrapPotential::harmonic_frequency(double mass) const {
    if (mass <= 0.0) throw std::invalid_argument("trap: mass must be positive");
    return std::sqrt(curvature_at_minimum() / mass);
}

double TrapPotential::outer_radius(double tail_cutoff) const {
    const double target = depth() * tail_cutoff;
    double lo = minimum_radius();
    double hi = lo + 100.0 * attractive_decay_length;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (-evaluate(mid) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

TrapPotential TrapPotential::from_geometry(double r_min, double depth,
                                           double repulsive_decay_length,
                                           double attractive_decay_length) {
    if (repulsive_decay_length >= attractive_decay_length)
        throw std::invalid_argument("trap: repulsive decay length must be shorter");
    if (r_min <= 0.0 || depth <= 0.0)
        throw std::invalid_argument("trap: r_min and depth must be positive");
    const double lb = repulsive_decay_length;
    const double lr = attractive_decay_length;
    // At r_min: A_b x_b / lb = A_r x_r / lr and A_b x_b - A_r x_r = -depth.
    const double p = depth * lb / (lr - lb);  // A_b x_b
    const double q = depth * lr / (lr - lb);  // A_r x_r
    TrapPotential trap{p * std::exp(2.0 * r_min / lb), lb, q * std::exp(2.0 * r_min / lr), lr};
    trap.validate();
    return trap;
}

void CouplingProfile::validate() const {
    if (peak_phase_per_atom <= 0.0)
        throw std::invalid_argument("coupling: peak phase must be positive");
    if (probe_decay_length <= 0.0 || reference_radius <= 0.0)
        throw std::invalid_argument("coupling: lengths must be positive");
}

double CouplingProfile::coupling(double r) const {
    if (r <= 0.0) throw std::domain_error("coupling: radius must be positive");
    return peak_phase_per_atom * std::exp(-2.0 * (r - reference_radius) / probe_decay_length);
}

AtomState sample_thermal_state(const TrapPotential& trap, double temperature,
                               double mass, RandomStream& rng) {
    if (temperature <= 0.0) throw std::invalid_argument("thermal state: T must be positive");
    const double kt = k_boltzmann * temperature;
    const double r_min = trap.minimum_radius();
    const double u_min = trap.evaluate(r_min);
    const double v_sigma = std::sqrt(kt / mass);

    // Position bracket: inner wall where U = +10 kT, outer tail cutoff.
    double lo = r_min, hi = r_min;
    {
        double a = r_min * 1e-3, b = r_min;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (a + b);
            if (trap.evaluate(mid) > 10.0 * kt)
                a = mid;
            else
                b = mid;
        }
        lo = 0.5 * (a + b);
        hi = trap.outer_radius();
    }

    // Rejection sampling of exp(-(U + m v^2/2)/kT) restricted to E < 0.
    constexpr long max_attempts = 200000;  // acceptance < ~1e-3 is a config error
    for (long attempt = 0; attempt < max_attempts; ++attempt) {
        const double r = rng.uniform(lo, hi);
        const double u = trap.evaluate(r);
        if (rng.uniform() >= std::exp(-(u - u_min) / kt)) continue;
        const double v = v_sigma * rng.normal();
        if (u + 0.5 * mass * v * v < 0.0) return AtomState{r, v};
    }
    throw std::runtime_error(
        "thermal state: bound-state acceptance below threshold (trap too shallow for T)");
}

Trajectory simulate_trajectory(const AtomState& initial, const TrapPotential& trap,
                               double mass, double dt, double total_time) {
    if (dt <= 0.0 || total_time <= 0.0)
        throw std::invalid_argument("trajectory: dt and total time must be positive");
    const double period = 2.0 * pi / trap.harmonic_frequency(mass);
    if (dt > period / 50.0)
        throw std::invalid_argument("trajectory: dt exceeds 1/50 of the oscillation period");

    const double r_escape = trap.outer_radius();
    const std::size_t n_steps = static_cast<std::size_t>(std::ceil(total_time / dt));

    Trajectory traj;
    traj.time_step = dt;
    traj.samples.reserve(n_steps + 1);
    traj.samples.push_back(initial);

    double r = initial.position;
    double v = initial.velocity;
    double acc = trap.force(r) / mass;
    for (std::size_t step = 0; step < n_steps; ++step) {
        v += 0.5 * dt * acc;
        r += dt * v;
        if (r <= 0.0 || r >= r_escape) {
            traj.escaped = true;
            traj.escape_index = traj.samples.size();
            break;
        }
        acc = trap.force(r) / mass;
        v += 0.5 * dt * acc;
        traj.samples.push_back(AtomState{r, v});
        if (trap.evaluate(r) + 0.5 * mass * v * v >= 0.0) {
            traj.escaped = true;
            traj.escape_index = traj.samples.size();
            break;
        }
    }
    if (!traj.escaped) traj.escape_index = traj.samples.size();
    return traj;
}

double trajectory_energy(const Trajectory& traj, const TrapPotential& trap,
                         double mass, std::size_t index) {
    const AtomState& s = traj.samples.at(index);
    return trap.evaluate(s.position) + 0.5 * mass * s.velocity * s.velocity;
}

double time_averaged_coupling(const Trajectory& traj, const CouplingProfile& coupling,
                              double window) {
    if (traj.samples.empty()) throw std::invalid_argument("coupling average: empty trajectory");
    // escaped trajectories are truncated at the escape point; the remaining
    // window contributes zero coupling, so a short sample list is fine there
    if (!traj.escaped && window > traj.duration() + 0.5 * traj.time_step)
        throw std::invalid_argument("coupling average: window exceeds trajectory duration");
    if (window <= 0.0) return coupling.coupling(traj.samples.front().position);

    const std::size_t n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(window / traj.time_step)));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < traj.escape_index) sum += coupling.coupling(traj.samples[i].position);
        // escaped atoms contribute zero for the rest of the window
    }
    return sum / static_cast<double>(n);
}

double inhomogeneity_factor(std::span<const double> couplings) {
    if (couplings.empty()) throw std::invalid_argument("inhomogeneity: empty list");
    double mean = 0.0;
    for (double c : couplings) mean += c;
    mean /= static_cast<double>(couplings.size());
    if (mean == 0.0) throw std::invalid_argument("inhomogeneity: zero mean coupling");
    double var = 0.0;
    for (double c : couplings) var += (c - mean) * (c - mean);
    var /= static_cast<double>(couplings.size());  // population variance
    return 1.0 + var / (mean * mean);
}

double lamb_dicke_squared(double omega_recoil, double omega_trap) {
    if (omega_recoil <= 0.0 || omega_trap <= 0.0)
        throw std::domain_error("lamb_dicke: frequencies must be positive");
    return omega_recoil / omega_trap;
}

}  // namespace qnd
