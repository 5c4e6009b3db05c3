#include "qnd/estimation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace qnd {

ModelBasis model_basis(const ProbeSchedule& schedule, const PumpingModel& model) {
    const std::size_t n = schedule.total_samples();
    const std::size_t n1 = schedule.segment1_samples();
    const double tf = schedule.t_flip();
    ModelBasis basis;
    basis.b1.resize(n);
    basis.b2.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = schedule.sample_time(i);
        basis.b1[i] = model.mean_response(t);
        if (i >= n1) basis.b2[i] = model.mean_response(t - tf);
    }
    return basis;
}

namespace {

struct Gram {
    double g11 = 0.0, g12 = 0.0, g22 = 0.0;

    double condition() const {
        // eigenvalues of the symmetric 2x2 matrix
        const double tr = g11 + g22;
        const double disc = std::sqrt((g11 - g22) * (g11 - g22) + 4.0 * g12 * g12);
        const double lo = 0.5 * (tr - disc);
        const double hi = 0.5 * (tr + disc);
        if (lo <= 0.0) return std::numeric_limits<double>::infinity();
        return hi / lo;
    }
    double det() const { return g11 * g22 - g12 * g12; }
};

Gram gram_matrix(const ModelBasis& basis, std::size_t first) {
    Gram g;
    for (std::size_t i = first; i < basis.b1.size(); ++i) {
        g.g11 += basis.b1[i] * basis.b1[i];
        g.g12 += basis.b1[i] * basis.b2[i];
        g.g22 += basis.b2[i] * basis.b2[i];
    }
    return g;
}

}  // namespace

EstimatePair fit_shot(std::span<const double> trace, const ProbeSchedule& schedule,
                      const PumpingModel& model, const FitOptions& options) {
    const std::size_t n = schedule.total_samples();
    const std::size_t n1 = schedule.segment1_samples();
    if (trace.size() != n)
        throw std::invalid_argument("fit_shot: trace length does not match schedule");
    for (double sample : trace)
        if (!std::isfinite(sample)) throw std::invalid_argument("fit_shot: non-finite sample");

    const ModelBasis basis = model_basis(schedule, model);
    const std::size_t first = options.include_pre_gap_segment ? 0 : n1;

    const Gram g = gram_matrix(basis, first);
    const double condition = g.condition();
    if (!(g.det() > 0.0) || !std::isfinite(condition))
        throw std::runtime_error("fit_shot: singular Gram matrix (no post-flip samples?)");

    double p1 = 0.0, p2 = 0.0;  // projections b^T y
    for (std::size_t i = first; i < n; ++i) {
        p1 += basis.b1[i] * trace[i];
        p2 += basis.b2[i] * trace[i];
    }
    const double det = g.det();
    EstimatePair est;
    est.phi4 = (g.g22 * p1 - g.g12 * p2) / det;
    est.phi3 = (g.g11 * p2 - g.g12 * p1) / det;
    est.phi_n = est.phi4 + est.phi3;
    est.phi_delta = est.phi4 - est.phi3;
    est.gram_condition = condition;
    est.condition_warning = condition > 1e6;

    double ss = 0.0;
    for (std::size_t i = first; i < n; ++i) {
        const double r = trace[i] - est.phi4 * basis.b1[i] - est.phi3 * basis.b2[i];
        ss += r * r;
    }
    est.fit_residual_rms = std::sqrt(ss / static_cast<double>(n - first));
    return est;
}

std::pair<double, double> derive_estimators(double phi4, double phi3) {
    return {phi4 + phi3, phi4 - phi3};
}

std::vector<double> segment_fluctuations(std::span<const double> trace,
                                         const ProbeSchedule& schedule,
                                         const PumpingModel& model, double phi_n) {
    const std::size_t n1 = schedule.segment1_samples();
    if (trace.size() < n1)
        throw std::invalid_argument("segment_fluctuations: trace shorter than segment 1");
    std::vector<double> fluct(n1);
    for (std::size_t i = 0; i < n1; ++i) {
        const double t = schedule.sample_time(i);
        fluct[i] = trace[i] - 0.5 * phi_n * model.mean_response(t);
    }
    return fluct;
}

EstimatorNoise estimator_noise(const ProbeSchedule& schedule, const PumpingModel& model,
                               double sigma_per_sample, const FitOptions& options) {
    const ModelBasis basis = model_basis(schedule, model);
    const std::size_t first = options.include_pre_gap_segment ? 0 : schedule.segment1_samples();
    const Gram g = gram_matrix(basis, first);
    const double det = g.det();
    if (!(det > 0.0)) throw std::runtime_error("estimator_noise: singular Gram matrix");
    const double s2 = sigma_per_sample * sigma_per_sample;
    return EstimatorNoise{s2 * g.g22 / det, s2 * g.g11 / det, -s2 * g.g12 / det};
}

}  // namespace qnd
