#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "qnd/config.hpp"
#include "qnd/filter.hpp"
#include "qnd/noise_stats.hpp"

namespace qnd {

// Nonlinear least squares of the mean-response model against grouped,
// shot-averaged probe traces. Amplitude is free per group; the three
// pumping parameters must agree across groups within 3 sigma.
struct PumpingCalibration {
    PumpingModel model{};
    double beta_err = 0.0;
    double tau_at_err = 0.0;
    double tau_loss_err = 0.0;

    struct Group {
        double amplitude = 0.0;  // rad, fitted trace amplitude
        double beta = 0.0;
        double tau_at = 0.0;
        double tau_loss = 0.0;
        double beta_err = 0.0;
        double tau_at_err = 0.0;
        double tau_loss_err = 0.0;
        double rms_residual = 0.0;
    };
    std::vector<Group> groups;
};

// `group_traces` holds one averaged trace per atom-number group, sampled on
// a uniform grid starting at t = sample_period.
PumpingCalibration calibrate_pumping(const std::vector<std::vector<double>>& group_traces,
                                     double sample_period);

struct StageResult {
    std::string name;
    std::vector<std::string> files;  // relative to the output directory
};

struct RunManifest {
    std::string config_hash;
    std::string tool_version;
    std::string schema_version;
    std::vector<StageResult> stages;

    std::string to_json() const;
};

// Stage orchestration: each stage writes self-describing files into the
// output directory; downstream stages re-read them and reject artifacts
// whose recorded config hash differs from the live one.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig cfg);

    // stage is one of: simulate, fit, noise-scan, covariance,
    // matched-filter, qnd, calibrate, all.
    RunManifest run(const std::string& stage);

    StageResult simulate();
    StageResult fit();
    StageResult noise_scan();
    StageResult covariance();
    StageResult matched_filter();
    StageResult qnd();
    StageResult calibrate();

    const PipelineConfig& config() const { return cfg_; }

private:
    const TrajectoryPool* pool();  // built on first use

    PipelineConfig cfg_;
    std::string hash_;
    std::filesystem::path out_;
    std::unique_ptr<TrajectoryPool> pool_;
};

}  // namespace qnd
