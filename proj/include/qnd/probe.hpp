#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "qnd/rng.hpp"
#include "qnd/trap.hpp"

namespace qnd {

// Phenomenological mean-response model
//   m(t) = (beta - (beta - 1) exp(-t/tau_at)) exp(-t/tau_loss)
// combining Zeeman-pumping gain and population loss.
struct PumpingModel {
    double beta;      // dimensionless, >= 1
    double tau_at;    // s
    double tau_loss;  // s

    void validate() const;
    double mean_response(double t) const;
};

// Two probing segments separated by a probe-off gap. Samples during the gap
// carry no data and are excluded from traces entirely.
struct ProbeSchedule {
    double segment1_duration;  // s
    double gap_duration;       // s
    double segment2_duration;  // s
    double sample_period;      // s

    void validate() const;
    double t_flip() const { return segment1_duration + gap_duration; }
    std::size_t segment1_samples() const;
    std::size_t segment2_samples() const;
    std::size_t total_samples() const { return segment1_samples() + segment2_samples(); }
    // time of the i-th recorded (non-gap) sample
    double sample_time(std::size_t i) const;
    std::vector<double> sample_times() const;
};

// Piecewise mean trace per the two-segment model. Returns nullopt inside the
// probe-off gap.
std::optional<double> two_segment_mean(const PumpingModel& model, const ProbeSchedule& schedule,
                                       double phi4, double phi3, double t);

enum class LoadingModel { fixed, poisson, scaled };
enum class CouplingMode { homogeneous, thermal_static, motion };
enum class PulseAngle { half_pi, pi, three_half_pi };

// Saturating Ramsey-contrast model eta(t) = eta_inf - (eta_inf - eta0) e^{-t/tau}.
struct RamseyContrastParams {
    double eta0;
    double eta_inf;
    double tau_recovery;  // s
};

double ramsey_contrast(double t, const RamseyContrastParams& params);

struct EnsembleConfig {
    double mean_atom_number = 0.0;
    LoadingModel loading = LoadingModel::poisson;
    double loading_kappa = 1.0;  // scaled model: var = kappa * mean
    double temperature = 0.0;    // K, used by thermal_static / motion modes
    double phase_shot_noise = 0.0;  // rad per sample
    CouplingMode coupling_mode = CouplingMode::homogeneous;
    double coupling_scale = 1.0;  // enhancement-scenario multiplier
    bool pulse_between_segments = true;
    double atom_mass = 0.0;  // kg

    TrapPotential trap{};
    CouplingProfile coupling{};
    PumpingModel pumping{};
};

// Precomputed per-atom coupling time series on the schedule's sample grid.
// Thermal trajectories are independent of the shot contents, so shots draw
// atoms from a seeded pool instead of re-integrating per shot.
class TrajectoryPool {
public:
    TrajectoryPool(const TrapPotential& trap, const CouplingProfile& coupling,
                   const ProbeSchedule& schedule, double atom_mass, double temperature,
                   double time_step, std::size_t size, std::uint64_t seed);

    std::size_t size() const { return size_; }
    std::size_t samples_per_row() const { return n_samples_; }
    const float* row(std::size_t i) const { return &table_[i * n_samples_]; }
    double row_mean_coupling(std::size_t i) const { return row_means_[i]; }

private:
    std::size_t size_;
    std::size_t n_samples_;
    std::vector<float> table_;
    std::vector<double> row_means_;
};

struct ShotTruth {
    long total_atoms = 0;
    long atoms_f4 = 0;  // projected into the upper clock level by the pi/2 pulse
    long atoms_f3 = 0;
    std::vector<double> mean_couplings;  // per-atom, averaged over the sample grid
};

struct ShotRecord {
    std::vector<double> trace;  // rad, one entry per recorded sample
    ShotTruth truth;
    std::uint64_t seed = 0;
};

// Atom number per the configured loading dispersion model.
long sample_loading(const EnsembleConfig& cfg, RandomStream& rng);

// Ideal microwave pulse acting on (N4, N3) populations. pi swaps
// deterministically; pi/2 and 3pi/2 project each atom independently.
std::pair<long, long> apply_pulse(long n4, long n3, PulseAngle angle, RandomStream& rng);

// Synthesize one single-shot phase trace. Deterministic given (cfg, seed).
// `pool` is required when coupling_mode == motion.
ShotRecord synthesize_shot(const EnsembleConfig& cfg, const ProbeSchedule& schedule,
                           std::uint64_t seed, const TrajectoryPool* pool = nullptr);

// Counter-based per-shot seed: batches parallelize with order-independent,
// reproducible results.
std::uint64_t shot_seed(std::uint64_t master_seed, std::uint64_t shot_index);

// Parallel batch synthesis; shot i uses shot_seed(master_seed, first_index + i).
std::vector<ShotRecord> synthesize_batch(const EnsembleConfig& cfg,
                                         const ProbeSchedule& schedule,
                                         std::uint64_t master_seed, std::uint64_t first_index,
                                         std::size_t count,
                                         const TrajectoryPool* pool = nullptr);

}  // namespace qnd
