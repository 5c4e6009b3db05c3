#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "qnd/noise_stats.hpp"
#include "qnd/probe.hpp"

namespace qnd {

// Decoherence-weighted signal model s(t) = phi_N m(t) eta(t) on the segment-1
// sample grid.
Eigen::VectorXd build_signal(double phi_n, const PumpingModel& model,
                             const RamseyContrastParams& eta_params,
                             const ProbeSchedule& schedule);

struct FilterResult {
    Eigen::VectorXd q_opt;  // unit Euclidean norm
    double snr = 0.0;
    double condition_used = 0.0;
    double regularization = 0.0;  // Tikhonov shift actually applied, rad^2
};

// Rayleigh-quotient SNR of probe mode q for signal s under noise covariance C.
double snr(const Eigen::VectorXd& q, const Eigen::VectorXd& s, const Eigen::MatrixXd& c);

// Matched filter q = C^{-1} s, Tikhonov-regularized when C is
// ill-conditioned (condition number above 1e8).
FilterResult optimal_mode(const Eigen::MatrixXd& c, const Eigen::VectorXd& s);

// Optimal linear conditioning: var(final - a * pre) with a = cov/var(pre).
double conditional_variance(std::span<const double> pre_estimates,
                            std::span<const double> final_estimates);

struct SqueezingVerdict {
    double conditional_variance = 0.0;  // rad^2
    double contrast = 0.0;              // eta
    double xi_squared = 0.0;            // Wineland parameter
    bool improves = false;              // xi^2 < 1
};

SqueezingVerdict wineland_check(double var_cond, double var_css, double eta);

struct QndPairs {
    std::vector<double> pre;    // matched-filter estimates, segment 1
    std::vector<double> final;  // model-weighted estimates, segment 2
    double eta = 0.0;           // contrast at the final measurement
    double var_css = 0.0;       // projection-noise variance of the final estimate
                                // for a coherent spin state, mean(final)^2 / N
    FilterResult filter;
    Eigen::MatrixXd covariance;  // segment-1 fluctuation covariance used
    Eigen::VectorXd signal;      // signal model used for the filter
};

// Full weak-QND protocol: calibrate the segment-1 covariance and matched
// filter on one batch, then produce (pre, final) measurement pairs on fresh
// shots. No pi pulse between the segments; both probe the same projection.
QndPairs qnd_protocol(const EnsembleConfig& cfg, const ProbeSchedule& schedule,
                      const RamseyContrastParams& eta_params, std::size_t calibration_shots,
                      std::size_t shots, std::uint64_t master_seed,
                      const TrajectoryPool* pool = nullptr);

}  // namespace qnd
