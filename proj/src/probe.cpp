#include "qnd/probe.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

#include "qnd/constants.hpp"

namespace qnd {

void PumpingModel::validate() const {
    if (beta < 1.0) throw std::invalid_argument("pumping: beta must be >= 1");
    if (tau_at <= 0.0) throw std::invalid_argument("pumping: tau_at must be positive");
    if (tau_loss <= tau_at)
        throw std::invalid_argument("pumping: tau_loss must exceed tau_at");
}

double PumpingModel::mean_response(double t) const {
    if (t < 0.0) throw std::domain_error("mean_response: negative time");
    return (beta - (beta - 1.0) * std::exp(-t / tau_at)) * std::exp(-t / tau_loss);
}

namespace {

std::size_t duration_to_samples(double duration, double period, const char* what) {
    const double ratio = duration / period;
    const double rounded = std::round(ratio);
    if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio + 1e-12)
        throw std::invalid_argument(std::string(what) +
                                    ": duration must be a positive multiple of sample_period");
    return static_cast<std::size_t>(rounded);
}

}  // namespace

void ProbeSchedule::validate() const {
    if (sample_period <= 0.0) throw std::invalid_argument("schedule: sample_period <= 0");
    duration_to_samples(segment1_duration, sample_period, "segment1");
    duration_to_samples(gap_duration, sample_period, "gap");
    duration_to_samples(segment2_duration, sample_period, "segment2");
}

std::size_t ProbeSchedule::segment1_samples() const {
    return duration_to_samples(segment1_duration, sample_period, "segment1");
}

std::size_t ProbeSchedule::segment2_samples() const {
    return duration_to_samples(segment2_duration, sample_period, "segment2");
}

double ProbeSchedule::sample_time(std::size_t i) const {
    const std::size_t n1 = segment1_samples();
    if (i < n1) return static_cast<double>(i) * sample_period;
    if (i >= total_samples()) throw std::out_of_range("schedule: sample index");
    return t_flip() + static_cast<double>(i - n1) * sample_period;
}

std::vector<double> ProbeSchedule::sample_times() const {
    std::vector<double> times(total_samples());
    for (std::size_t i = 0; i < times.size(); ++i) times[i] = sample_time(i);
    return times;
}

std::optional<double> two_segment_mean(const PumpingModel& model, const ProbeSchedule& schedule,
                                       double phi4, double phi3, double t) {
    if (t < 0.0 || t > schedule.t_flip() + schedule.segment2_duration)
        throw std::domain_error("two_segment_mean: t outside schedule");
    const double tf = schedule.t_flip();
    if (t < schedule.segment1_duration) return phi4 * model.mean_response(t);
    if (t < tf) return std::nullopt;  // probe off, no data
    return phi4 * model.mean_response(t) + phi3 * model.mean_response(t - tf);
}

double ramsey_contrast(double t, const RamseyContrastParams& params) {
    if (t < 0.0) throw std::domain_error("ramsey_contrast: negative time");
    if (params.eta0 < 0.0 || params.eta0 > params.eta_inf || params.eta_inf > 1.0)
        throw std::invalid_argument("ramsey_contrast: need 0 <= eta0 <= eta_inf <= 1");
    if (params.tau_recovery <= 0.0)
        throw std::invalid_argument("ramsey_contrast: tau_recovery must be positive");
    return params.eta_inf - (params.eta_inf - params.eta0) * std::exp(-t / params.tau_recovery);
}

TrajectoryPool::TrajectoryPool(const TrapPotential& trap, const CouplingProfile& coupling,
                               const ProbeSchedule& schedule, double atom_mass,
                               double temperature, double time_step, std::size_t size,
                               std::uint64_t seed)
    : size_(size), n_samples_(schedule.total_samples()) {
    if (size == 0) throw std::invalid_argument("trajectory pool: size must be positive");
    table_.resize(size_ * n_samples_);
    row_means_.resize(size_);

    const std::vector<double> times = schedule.sample_times();
    const double total_time = times.back() + schedule.sample_period;

    auto fill_row = [&](std::size_t row) {
        RandomStream rng = RandomStream::substream(seed, row);
        const AtomState initial = sample_thermal_state(trap, temperature, atom_mass, rng);
        const Trajectory traj = simulate_trajectory(initial, trap, atom_mass, time_step, total_time);
        float* out = &table_[row * n_samples_];
        double sum = 0.0;
        for (std::size_t k = 0; k < n_samples_; ++k) {
            const auto step = static_cast<std::size_t>(std::llround(times[k] / time_step));
            double phi = 0.0;
            if (step < traj.escape_index)
                phi = coupling.coupling(traj.samples[step].position);
            out[k] = static_cast<float>(phi);
            sum += phi;
        }
        row_means_[row] = sum / static_cast<double>(n_samples_);
    };

    const unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    for (unsigned w = 0; w < n_threads; ++w) {
        workers.emplace_back([&, w] {
            for (std::size_t row = w; row < size_; row += n_threads) fill_row(row);
        });
    }
    for (auto& worker : workers) worker.join();
}

long sample_loading(const EnsembleConfig& cfg, RandomStream& rng) {
    if (cfg.mean_atom_number < 0.0)
        throw std::invalid_argument("loading: mean atom number must be >= 0");
    switch (cfg.loading) {
        case LoadingModel::fixed:
            return std::lround(cfg.mean_atom_number);
        case LoadingModel::poisson:
            return rng.poisson(cfg.mean_atom_number);
        case LoadingModel::scaled: {
            // Gaussian with var = kappa * mean, rounded and clipped at zero.
            const double draw = rng.normal(cfg.mean_atom_number,
                                           std::sqrt(cfg.loading_kappa * cfg.mean_atom_number));
            return std::max(0L, std::lround(draw));
        }
    }
    throw std::invalid_argument("loading: unknown model");
}

std::pair<long, long> apply_pulse(long n4, long n3, PulseAngle angle, RandomStream& rng) {
    if (n4 < 0 || n3 < 0) throw std::invalid_argument("pulse: negative population");
    switch (angle) {
        case PulseAngle::pi:
            return {n3, n4};
        case PulseAngle::half_pi:
        case PulseAngle::three_half_pi: {
            // Statistics of pi/2 and 3pi/2 projections are identical.
            const long total = n4 + n3;
            const long up = rng.binomial_half(total);
            return {up, total - up};
        }
    }
    throw std::invalid_argument("pulse: unsupported angle");
}

ShotRecord synthesize_shot(const EnsembleConfig& cfg, const ProbeSchedule& schedule,
                           std::uint64_t seed, const TrajectoryPool* pool) {
    schedule.validate();
    cfg.pumping.validate();
    if (cfg.phase_shot_noise < 0.0)
        throw std::invalid_argument("shot: phase_shot_noise must be >= 0");
    if (cfg.coupling_mode == CouplingMode::motion && pool == nullptr)
        throw std::invalid_argument("shot: motion mode requires a trajectory pool");

    RandomStream rng(seed);
    const long n_atoms = sample_loading(cfg, rng);

    const std::size_t n_samples = schedule.total_samples();
    const std::size_t n1 = schedule.segment1_samples();

    ShotRecord shot;
    shot.seed = seed;
    shot.truth.total_atoms = n_atoms;
    shot.truth.mean_couplings.reserve(static_cast<std::size_t>(n_atoms));

    // Per-atom projection by the pi/2 pulse plus per-atom coupling series,
    // accumulated into the two level groups.
    std::vector<double> sum_f4(n_samples, 0.0);
    std::vector<double> sum_f3(n_samples, 0.0);

    RandomStream thermal_rng = RandomStream::substream(seed, 0x7472616a);  // trajectory substream
    for (long atom = 0; atom < n_atoms; ++atom) {
        const bool in_f4 = rng.bernoulli_half();
        std::vector<double>& sums = in_f4 ? sum_f4 : sum_f3;
        if (in_f4)
            ++shot.truth.atoms_f4;
        else
            ++shot.truth.atoms_f3;

        switch (cfg.coupling_mode) {
            case CouplingMode::homogeneous: {
                const double phi = cfg.coupling.peak_phase_per_atom * cfg.coupling_scale;
                for (std::size_t k = 0; k < n_samples; ++k) sums[k] += phi;
                shot.truth.mean_couplings.push_back(phi);
                break;
            }
            case CouplingMode::thermal_static: {
                const AtomState state =
                    sample_thermal_state(cfg.trap, cfg.temperature, cfg.atom_mass, thermal_rng);
                const double phi = cfg.coupling.coupling(state.position) * cfg.coupling_scale;
                for (std::size_t k = 0; k < n_samples; ++k) sums[k] += phi;
                shot.truth.mean_couplings.push_back(phi);
                break;
            }
            case CouplingMode::motion: {
                const std::size_t row =
                    static_cast<std::size_t>(rng.next_u64() % pool->size());
                const float* series = pool->row(row);
                for (std::size_t k = 0; k < n_samples; ++k)
                    sums[k] += cfg.coupling_scale * static_cast<double>(series[k]);
                shot.truth.mean_couplings.push_back(cfg.coupling_scale *
                                                    pool->row_mean_coupling(row));
                break;
            }
        }
    }

    shot.trace.resize(n_samples);
    const double tf = schedule.t_flip();
    for (std::size_t k = 0; k < n_samples; ++k) {
        const double t = schedule.sample_time(k);
        double mean = cfg.pumping.mean_response(t) * sum_f4[k];
        if (k >= n1) {
            if (cfg.pulse_between_segments)
                mean += cfg.pumping.mean_response(t - tf) * sum_f3[k];
            // without the pi pulse the F3 group is never probed
        }
        shot.trace[k] = mean + cfg.phase_shot_noise * rng.normal();
    }
    return shot;
}

std::uint64_t shot_seed(std::uint64_t master_seed, std::uint64_t shot_index) {
    std::uint64_t sm = master_seed;
    const std::uint64_t stream_base = splitmix64(sm);
    return stream_base ^ (0xda942042e4dd58b5ULL * (shot_index + 1));
}

std::vector<ShotRecord> synthesize_batch(const EnsembleConfig& cfg,
                                         const ProbeSchedule& schedule,
                                         std::uint64_t master_seed, std::uint64_t first_index,
                                         std::size_t count, const TrajectoryPool* pool) {
    std::vector<ShotRecord> shots(count);
    const unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    for (unsigned w = 0; w < n_threads; ++w) {
        workers.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += n_threads)
                shots[i] = synthesize_shot(cfg, schedule,
                                           shot_seed(master_seed, first_index + i), pool);
        });
    }
    for (auto& worker : workers) worker.join();
    return shots;
}

}  // namespace qnd
