#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <vector>

#include "qnd/estimation.hpp"

namespace qnd {

struct ShotBin {
    double mean_phi_n = 0.0;
    double var_phi_delta = 0.0;
    double var_phi4 = 0.0;
    double var_phi3 = 0.0;
    double var_phi_delta_err = 0.0;  // jackknife standard error of the variance
    std::size_t count = 0;
};

// Contiguous-in-phi_N bins of roughly target_bin_size shots each.
std::vector<ShotBin> bin_shots(std::vector<EstimatePair> estimates,
                               std::size_t target_bin_size);

struct ScalingFit {
    double intercept = 0.0;   // rad^2, detection-noise estimate
    double slope = 0.0;       // rad, phi_eff,1 estimate
    double quad_coeff = 0.0;  // dimensionless
    double intercept_err = 0.0;
    double slope_err = 0.0;
    double quad_coeff_err = 0.0;
};

// Weighted least squares of var(phi_Delta) on {1, <phi_N>, <phi_N>^2}.
ScalingFit scaling_fit(std::span<const ShotBin> bins);

double effective_atom_number(double phi_n, double phi_eff1);

// 10 log10((var_delta - shot_noise) / shot_noise); nullopt when the atomic
// part is non-positive.
std::optional<double> noise_level_db(double var_delta, double shot_noise);

double noise_level_db_inverse(double db, double shot_noise);

// Unbiased sample covariance of equal-length fluctuation series.
Eigen::MatrixXd estimate_covariance(const std::vector<std::vector<double>>& series);

struct CovarianceDecomposition {
    Eigen::MatrixXd c0;  // rad^2
    Eigen::MatrixXd c1;  // rad
    double shot_noise_level = 0.0;        // rad^2, mean diagonal of C0
    double residual_quadratic_norm = 0.0; // ||quadratic part|| / ||linear part||
};

// Element-wise linear regression of covariance matrices over phi_N,
// inverse-variance weighted by each group's overall covariance level.
CovarianceDecomposition decompose_covariance(
    const std::vector<std::pair<double, Eigen::MatrixXd>>& groups);

struct DampedCosineFit {
    double amplitude = 0.0;
    double period = 0.0;        // s
    double damping_time = 0.0;  // s
    double phase = 0.0;         // rad
    double offset = 0.0;
    double rms_residual = 0.0;
};

// A exp(-t/tau) cos(2 pi t / T + theta) + B, by grid search over (T, tau)
// with the linear parameters solved exactly, followed by local refinement.
DampedCosineFit fit_damped_cosine(std::span<const double> t, std::span<const double> y,
                                  double min_period, double max_period);

struct CorrelationCurve {
    std::vector<double> lag;  // s
    std::vector<double> rho;  // correlation coefficient per lag
    DampedCosineFit oscillation;
};

// Normalize C1 by a model diagonal, average minor diagonals of the resulting
// Toeplitz-like correlation matrix, and fit the damped oscillation.
CorrelationCurve correlation_curve(const Eigen::MatrixXd& c1,
                                   std::span<const double> diag_model,
                                   double sample_period);

}  // namespace qnd
