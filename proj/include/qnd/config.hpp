#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qnd/probe.hpp"

namespace qnd {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CalibrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// All tunables of the simulate -> fit -> analyze -> filter chain. Field
// names in the JSON file carry explicit units (_us, _nm, _uk, _mrad); values
// here are SI. Defaults are the desk-scale calibration described in the
// README.
struct PipelineConfig {
    std::string schema_version;
    std::uint64_t master_seed = 20240901;
    std::size_t shot_count = 2000;
    std::string output_dir = "out";

    ProbeSchedule schedule{8e-6, 32e-6, 120e-6, 0.5e-6};
    PumpingModel pumping{1.6, 10e-6, 400e-6};

    // Trap geometry; amplitudes are derived from (r_min, depth, decays).
    double trap_minimum_radius = 105e-9;   // m
    double trap_depth = 0.0;               // J, default set from uK in ctor
    double trap_blue_decay = 42e-9;        // m
    double trap_red_decay = 420e-9;        // m

    CouplingProfile coupling{2.0e-3, 265e-9, 105e-9};
    RamseyContrastParams ramsey{0.30, 0.45, 60e-6};

    EnsembleConfig ensemble;  // assembled by finalize()

    double mean_atom_number = 750.0;
    std::string loading_model = "poisson";
    double loading_kappa = 1.0;
    double temperature = 120e-6;        // K
    double phase_shot_noise = 1.3854e-3;  // rad per sample
    std::string inhomogeneity = "motion";  // none | static | motion
    double coupling_scale = 1.0;

    double trajectory_time_step = 0.05e-6;  // s
    std::size_t trajectory_pool_size = 4096;

    // noise-scan stage (projection-noise scaling analogue)
    std::size_t scan_shots = 20000;
    long scan_atoms_min = 50;
    long scan_atoms_max = 1500;
    std::size_t scan_bin_size = 200;

    // covariance stage
    std::vector<long> covariance_group_atoms = {0, 425, 850};
    std::size_t covariance_shots_per_group = 8000;

    // qnd stage
    std::size_t qnd_calibration_shots = 3000;
    std::size_t qnd_shots = 6000;

    // calibration stage
    std::vector<long> calibration_group_atoms = {200, 600, 1200};
    std::size_t calibration_shots_per_group = 300;
    double calibration_trace_duration = 500e-6;  // s

    PipelineConfig();

    TrapPotential trap() const;
    // EnsembleConfig assembled from the scalar fields.
    EnsembleConfig make_ensemble() const;

    // Canonical JSON rendering (sorted keys, fixed float format) used for
    // hashing and persisted verbatim into run outputs.
    std::string canonical_json() const;
    std::string hash() const;

    void validate() const;

    // Parse from a JSON file, then apply QNDSIM_* environment overrides.
    static PipelineConfig load(const std::string& path, bool apply_env = true);
    static PipelineConfig from_json_text(const std::string& text, bool apply_env = true);
};

}  // namespace qnd
