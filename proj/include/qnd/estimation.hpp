#pragma once

#include <span>
#include <vector>

#include "qnd/probe.hpp"

namespace qnd {

struct EstimatePair {
    double phi4 = 0.0;
    double phi3 = 0.0;
    double phi_n = 0.0;      // phi4 + phi3
    double phi_delta = 0.0;  // phi4 - phi3
    double fit_residual_rms = 0.0;
    double gram_condition = 0.0;
    bool condition_warning = false;  // gram_condition > 1e6
};

struct FitOptions {
    bool include_pre_gap_segment = true;
};

// Two-segment model basis evaluated on the recorded sample grid:
// b1(t) = m(t) everywhere, b2(t) = m(t - t_flip) on segment 2. Shared by the
// fit and by noise-floor predictions.
struct ModelBasis {
    std::vector<double> b1;
    std::vector<double> b2;
};

ModelBasis model_basis(const ProbeSchedule& schedule, const PumpingModel& model);

// Linear least squares of a trace against the two-segment basis via the
// closed-form 2x2 normal equations.
EstimatePair fit_shot(std::span<const double> trace, const ProbeSchedule& schedule,
                      const PumpingModel& model, const FitOptions& options = {});

// (phi_N, phi_Delta) from (phi4, phi3).
std::pair<double, double> derive_estimators(double phi4, double phi3);

// Pre-flip fluctuations: delta_phi(t) = phi(t) - (phi_N / 2) m(t), t < t_flip.
std::vector<double> segment_fluctuations(std::span<const double> trace,
                                         const ProbeSchedule& schedule,
                                         const PumpingModel& model, double phi_n);

// Predicted covariance of (phi4, phi3) for white per-sample noise sigma:
// sigma^2 * G^{-1} with G the Gram matrix. Returns {var4, var3, cov43}.
struct EstimatorNoise {
    double var_phi4;
    double var_phi3;
    double cov;
    double var_phi_n() const { return var_phi4 + var_phi3 + 2.0 * cov; }
    double var_phi_delta() const { return var_phi4 + var_phi3 - 2.0 * cov; }
};

EstimatorNoise estimator_noise(const ProbeSchedule& schedule, const PumpingModel& model,
                               double sigma_per_sample, const FitOptions& options = {});

}  // namespace qnd
