#include "qnd/filter.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

namespace qnd {

Eigen::VectorXd build_signal(double phi_n, const PumpingModel& model,
                             const RamseyContrastParams& eta_params,
                             const ProbeSchedule& schedule) {
    const std::size_t n1 = schedule.segment1_samples();
    Eigen::VectorXd s(n1);
    for (std::size_t i = 0; i < n1; ++i) {
        const double t = schedule.sample_time(i);
        s(i) = phi_n * model.mean_response(t) * ramsey_contrast(t, eta_params);
    }
    return s;
}

double snr(const Eigen::VectorXd& q, const Eigen::VectorXd& s, const Eigen::MatrixXd& c) {
    if (q.size() != s.size() || c.rows() != q.size() || c.cols() != q.size())
        throw std::invalid_argument("snr: dimension mismatch");
    const double signal = q.dot(s);
    const double noise = q.dot(c * q);
    if (noise <= 0.0) throw std::invalid_argument("snr: q^T C q must be positive");
    return signal * signal / noise;
}

FilterResult optimal_mode(const Eigen::MatrixXd& c, const Eigen::VectorXd& s) {
    const auto n = c.rows();
    if (c.cols() != n || s.size() != n)
        throw std::invalid_argument("optimal_mode: dimension mismatch");
    if (s.norm() == 0.0) throw std::invalid_argument("optimal_mode: zero signal");
    if ((c - c.transpose()).norm() > 1e-9 * c.norm())
        throw std::invalid_argument("optimal_mode: covariance not symmetric");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(c);
    const double max_eig = eigen.eigenvalues().maxCoeff();
    const double min_eig = eigen.eigenvalues().minCoeff();
    if (max_eig <= 0.0 || min_eig < -1e-10 * max_eig)
        throw std::invalid_argument("optimal_mode: covariance not PSD");

    FilterResult result;
    result.condition_used = min_eig > 0.0 ? max_eig / min_eig
                                          : std::numeric_limits<double>::infinity();
    Eigen::MatrixXd c_reg = c;
    if (result.condition_used > 1e8) {
        result.regularization = 1e-9 * c.trace() / static_cast<double>(n);
        c_reg += result.regularization * Eigen::MatrixXd::Identity(n, n);
    }
    Eigen::VectorXd q = c_reg.ldlt().solve(s);
    q.normalize();
    result.q_opt = q;
    result.snr = snr(q, s, c_reg);
    return result;
}

double conditional_variance(std::span<const double> pre_estimates,
                            std::span<const double> final_estimates) {
    const std::size_t n = pre_estimates.size();
    if (n != final_estimates.size())
        throw std::invalid_argument("conditional_variance: unpaired lists");
    if (n < 100) throw std::invalid_argument("conditional_variance: need >= 100 pairs");

    double mean_pre = 0.0, mean_final = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_pre += pre_estimates[i];
        mean_final += final_estimates[i];
    }
    mean_pre /= static_cast<double>(n);
    mean_final /= static_cast<double>(n);

    double var_pre = 0.0, var_final = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dp = pre_estimates[i] - mean_pre;
        const double df = final_estimates[i] - mean_final;
        var_pre += dp * dp;
        var_final += df * df;
        cov += dp * df;
    }
    const double denom = static_cast<double>(n - 1);
    var_pre /= denom;
    var_final /= denom;
    cov /= denom;
    if (var_pre <= 0.0) throw std::invalid_argument("conditional_variance: var(pre) = 0");
    // var(final - a pre) with the optimal a = cov/var(pre)
    return var_final - cov * cov / var_pre;
}

SqueezingVerdict wineland_check(double var_cond, double var_css, double eta) {
    if (var_cond < 0.0 || var_css <= 0.0)
        throw std::invalid_argument("wineland_check: variances must be positive");
    if (eta <= 0.0 || eta > 1.0) throw std::invalid_argument("wineland_check: eta in (0, 1]");
    SqueezingVerdict verdict;
    verdict.conditional_variance = var_cond;
    verdict.contrast = eta;
    verdict.xi_squared = (var_cond / var_css) / (eta * eta);
    verdict.improves = verdict.xi_squared < 1.0;
    return verdict;
}

QndPairs qnd_protocol(const EnsembleConfig& cfg, const ProbeSchedule& schedule,
                      const RamseyContrastParams& eta_params, std::size_t calibration_shots,
                      std::size_t shots, std::uint64_t master_seed, const TrajectoryPool* pool) {
    if (calibration_shots < 2 || shots < 100)
        throw std::invalid_argument("qnd_protocol: too few shots");

    EnsembleConfig qnd_cfg = cfg;
    qnd_cfg.pulse_between_segments = false;  // both segments probe the same projection

    const ModelBasis basis = model_basis(schedule, qnd_cfg.pumping);
    const std::size_t n1 = schedule.segment1_samples();
    const std::size_t n = schedule.total_samples();
    double norm_all = 0.0, norm_seg2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm_all += basis.b1[i] * basis.b1[i];
    for (std::size_t i = n1; i < n; ++i) norm_seg2 += basis.b1[i] * basis.b1[i];

    // single-basis estimate of the probed-group phase over the whole trace
    auto single_fit = [&](const ShotRecord& shot) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += basis.b1[i] * shot.trace[i];
        return proj / norm_all;
    };

    // Calibration: segment-1 fluctuation covariance and mean phase.
    const std::vector<ShotRecord> cal =
        synthesize_batch(qnd_cfg, schedule, master_seed, 0, calibration_shots, pool);
    std::vector<std::vector<double>> fluctuations;
    fluctuations.reserve(cal.size());
    double phi_mean = 0.0;
    for (const auto& shot : cal) {
        const double phi_hat = single_fit(shot);
        phi_mean += phi_hat;
        std::vector<double> fluct(n1);
        for (std::size_t i = 0; i < n1; ++i)
            fluct[i] = shot.trace[i] - phi_hat * basis.b1[i];
        fluctuations.push_back(std::move(fluct));
    }
    phi_mean /= static_cast<double>(cal.size());

    const Eigen::MatrixXd cov = estimate_covariance(fluctuations);
    const Eigen::VectorXd signal =
        build_signal(2.0 * phi_mean, qnd_cfg.pumping, eta_params, schedule);

    QndPairs pairs;
    pairs.filter = optimal_mode(cov, signal);
    pairs.eta = ramsey_contrast(schedule.gap_duration, eta_params);
    pairs.covariance = cov;
    pairs.signal = signal;

    // Fresh shots: matched-filter pre-measurement vs segment-2 estimate.
    const std::vector<ShotRecord> batch =
        synthesize_batch(qnd_cfg, schedule, master_seed, calibration_shots, shots, pool);
    pairs.pre.reserve(shots);
    pairs.final.reserve(shots);
    for (const auto& shot : batch) {
        double pre = 0.0;
        for (std::size_t i = 0; i < n1; ++i) pre += pairs.filter.q_opt(i) * shot.trace[i];
        double fin = 0.0;
        for (std::size_t i = n1; i < n; ++i) fin += basis.b1[i] * shot.trace[i];
        pairs.pre.push_back(pre);
        pairs.final.push_back(fin / norm_seg2);
    }

    // CSS projection-noise reference for the Wineland criterion. The final
    // estimator averages mu per probed atom, so a coherent spin state gives
    // var(est) = mu^2 var(N4) = mu^2 N / 4 = mean(est)^2 / N. Classical
    // inhomogeneity or loading noise must not inflate this benchmark.
    double mean_final = 0.0;
    for (double f : pairs.final) mean_final += f;
    mean_final /= static_cast<double>(pairs.final.size());
    if (cfg.mean_atom_number <= 0.0)
        throw std::invalid_argument("qnd_protocol: mean atom number must be positive");
    pairs.var_css = mean_final * mean_final / cfg.mean_atom_number;
    return pairs;
}

}  // namespace qnd
