#include "qnd/noise_stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qnd/constants.hpp"

namespace qnd {

namespace {

double sample_variance(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) throw std::invalid_argument("variance: need at least two values");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(n - 1);
}

// Delete-one jackknife standard error of the sample variance.
double jackknife_variance_error(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 3) return 0.0;
    double sum = 0.0, sumsq = 0.0;
    for (double v : values) {
        sum += v;
        sumsq += v * v;
    }
    const double nd = static_cast<double>(n);
    std::vector<double> leave_one(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = sum - values[i];
        const double ss = sumsq - values[i] * values[i];
        leave_one[i] = (ss - s * s / (nd - 1.0)) / (nd - 2.0);
    }
    double mean = 0.0;
    for (double v : leave_one) mean += v;
    mean /= nd;
    double dev = 0.0;
    for (double v : leave_one) dev += (v - mean) * (v - mean);
    return std::sqrt((nd - 1.0) / nd * dev);
}

}  // namespace

std::vector<ShotBin> bin_shots(std::vector<EstimatePair> estimates,
                               std::size_t target_bin_size) {
    if (target_bin_size < 2) throw std::invalid_argument("bin_shots: bin size too small");
    if (estimates.size() < target_bin_size)
        throw std::invalid_argument("bin_shots: fewer shots than one bin");

    std::sort(estimates.begin(), estimates.end(),
              [](const EstimatePair& a, const EstimatePair& b) { return a.phi_n < b.phi_n; });

    const std::size_t n_bins = estimates.size() / target_bin_size;
    std::vector<ShotBin> bins;
    bins.reserve(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        const std::size_t lo = b * estimates.size() / n_bins;
        const std::size_t hi = (b + 1) * estimates.size() / n_bins;
        std::vector<double> phi_n, delta, phi4, phi3;
        for (std::size_t i = lo; i < hi; ++i) {
            phi_n.push_back(estimates[i].phi_n);
            delta.push_back(estimates[i].phi_delta);
            phi4.push_back(estimates[i].phi4);
            phi3.push_back(estimates[i].phi3);
        }
        ShotBin bin;
        bin.count = hi - lo;
        for (double v : phi_n) bin.mean_phi_n += v;
        bin.mean_phi_n /= static_cast<double>(bin.count);
        bin.var_phi_delta = sample_variance(delta);
        bin.var_phi4 = sample_variance(phi4);
        bin.var_phi3 = sample_variance(phi3);
        bin.var_phi_delta_err = jackknife_variance_error(delta);
        bins.push_back(bin);
    }
    return bins;
}

ScalingFit scaling_fit(std::span<const ShotBin> bins) {
    if (bins.size() < 3) throw std::invalid_argument("scaling_fit: need at least three bins");
    Eigen::MatrixXd design(bins.size(), 3);
    Eigen::VectorXd target(bins.size());
    Eigen::VectorXd weight(bins.size());
    for (std::size_t i = 0; i < bins.size(); ++i) {
        if (bins[i].var_phi_delta <= 0.0)
            throw std::invalid_argument("scaling_fit: non-positive bin variance");
        const double x = bins[i].mean_phi_n;
        design(i, 0) = 1.0;
        design(i, 1) = x;
        design(i, 2) = x * x;
        target(i) = bins[i].var_phi_delta;
        // jackknife error when available, else large-sample variance of a variance
        double sigma = bins[i].var_phi_delta_err;
        if (sigma <= 0.0)
            sigma = bins[i].var_phi_delta * std::sqrt(2.0 / static_cast<double>(bins[i].count));
        weight(i) = 1.0 / (sigma * sigma);
    }
    const Eigen::MatrixXd wd = weight.asDiagonal() * design;
    const Eigen::Matrix3d normal = design.transpose() * wd;
    const Eigen::Vector3d rhs = wd.transpose() * target;
    const Eigen::Matrix3d cov = normal.inverse();
    const Eigen::Vector3d coeff = cov * rhs;

    ScalingFit fit;
    fit.intercept = coeff(0);
    fit.slope = coeff(1);
    fit.quad_coeff = coeff(2);
    fit.intercept_err = std::sqrt(cov(0, 0));
    fit.slope_err = std::sqrt(cov(1, 1));
    fit.quad_coeff_err = std::sqrt(cov(2, 2));
    return fit;
}

double effective_atom_number(double phi_n, double phi_eff1) {
    if (phi_eff1 <= 0.0) throw std::invalid_argument("effective_atom_number: phi_eff1 <= 0");
    return phi_n / phi_eff1;
}

std::optional<double> noise_level_db(double var_delta, double shot_noise) {
    if (shot_noise <= 0.0) throw std::invalid_argument("noise_level_db: shot_noise <= 0");
    if (var_delta <= shot_noise) return std::nullopt;
    return 10.0 * std::log10((var_delta - shot_noise) / shot_noise);
}

double noise_level_db_inverse(double db, double shot_noise) {
    return shot_noise * (1.0 + std::pow(10.0, db / 10.0));
}

Eigen::MatrixXd estimate_covariance(const std::vector<std::vector<double>>& series) {
    if (series.size() < 2)
        throw std::invalid_argument("covariance: need at least two realizations");
    const std::size_t dim = series.front().size();
    for (const auto& row : series)
        if (row.size() != dim) throw std::invalid_argument("covariance: length mismatch");

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto& row : series)
        mean += Eigen::Map<const Eigen::VectorXd>(row.data(), dim);
    mean /= static_cast<double>(series.size());

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& row : series) {
        const Eigen::VectorXd centered =
            Eigen::Map<const Eigen::VectorXd>(row.data(), dim) - mean;
        cov.selfadjointView<Eigen::Lower>().rankUpdate(centered);
    }
    cov = cov.selfadjointView<Eigen::Lower>();
    return cov / static_cast<double>(series.size() - 1);
}

CovarianceDecomposition decompose_covariance(
    const std::vector<std::pair<double, Eigen::MatrixXd>>& groups) {
    if (groups.size() < 2)
        throw std::invalid_argument("decompose_covariance: need at least two phi_N groups");
    const auto dim = groups.front().second.rows();
    double x_min = groups.front().first, x_max = x_min;
    for (const auto& [x, c] : groups) {
        if (c.rows() != dim || c.cols() != dim)
            throw std::invalid_argument("decompose_covariance: matrix size mismatch");
        x_min = std::min(x_min, x);
        x_max = std::max(x_max, x);
    }
    if (x_max - x_min <= 1e-12 * std::abs(x_max))
        throw std::invalid_argument("decompose_covariance: degenerate phi_N spread");

    // Element-wise weighted least squares of C over phi_N. The sampling
    // error of an estimated covariance entry scales with the group's overall
    // variance level, so low-phi_N groups are far more informative about the
    // intercept; weight each group by 1/level^2.
    std::vector<double> weights;
    double max_level = 0.0;
    for (const auto& [x, c] : groups) max_level = std::max(max_level, c.diagonal().mean());
    for (const auto& [x, c] : groups) {
        const double level = std::max(c.diagonal().mean(), 1e-6 * max_level);
        weights.push_back(level > 0.0 ? 1.0 / (level * level) : 1.0);
    }

    double sw = 0.0, sx = 0.0, sxx = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        sw += weights[g];
        sx += weights[g] * groups[g].first;
        sxx += weights[g] * groups[g].first * groups[g].first;
    }
    const double det = sw * sxx - sx * sx;
    if (std::abs(det) <= 1e-30)
        throw std::invalid_argument("decompose_covariance: degenerate phi_N spread");
    Eigen::MatrixXd sy = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd sxy = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        sy += weights[g] * groups[g].second;
        sxy += weights[g] * groups[g].first * groups[g].second;
    }
    CovarianceDecomposition dec;
    dec.c1 = (sw * sxy - sx * sy) / det;
    dec.c0 = (sxx * sy - sx * sxy) / det;
    dec.shot_noise_level = dec.c0.diagonal().mean();

    // Quadratic-residual diagnostic: refit with an x^2 term when enough groups.
    if (groups.size() >= 3) {
        Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const double x = groups[g].first;
            Eigen::Vector3d row(1.0, x, x * x);
            normal += weights[g] * row * row.transpose();
        }
        Eigen::MatrixXd sxxy = Eigen::MatrixXd::Zero(dim, dim);
        for (std::size_t g = 0; g < groups.size(); ++g)
            sxxy += weights[g] * groups[g].first * groups[g].first * groups[g].second;
        const Eigen::Matrix3d inv = normal.inverse();
        Eigen::MatrixXd quad = inv(2, 0) * sy + inv(2, 1) * sxy + inv(2, 2) * sxxy;
        const double linear_norm = (x_max * dec.c1).norm();
        if (linear_norm > 0.0)
            dec.residual_quadratic_norm = (x_max * x_max * quad).norm() / linear_norm;
    }
    return dec;
}

DampedCosineFit fit_damped_cosine(std::span<const double> t, std::span<const double> y,
                                  double min_period, double max_period) {
    if (t.size() != y.size() || t.size() < 5)
        throw std::invalid_argument("damped cosine: need matching series, >= 5 points");
    const double span = t.back() - t.front();

    // For fixed (T, tau) the model is linear in (a, b, B) with
    // y = e^{-t/tau} (a cos wt + b sin wt) + B.
    auto solve_linear = [&](double period, double tau, DampedCosineFit& out) {
        const double omega = 2.0 * pi / period;
        Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
        Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double env = std::exp(-t[i] / tau);
            const Eigen::Vector3d row(env * std::cos(omega * t[i]),
                                      env * std::sin(omega * t[i]), 1.0);
            normal += row * row.transpose();
            rhs += row * y[i];
        }
        const Eigen::Vector3d coeff = normal.ldlt().solve(rhs);
        double ss = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double env = std::exp(-t[i] / tau);
            const double model = env * (coeff(0) * std::cos(omega * t[i]) +
                                        coeff(1) * std::sin(omega * t[i])) +
                                 coeff(2);
            ss += (y[i] - model) * (y[i] - model);
        }
        out.amplitude = std::hypot(coeff(0), coeff(1));
        out.phase = std::atan2(-coeff(1), coeff(0));
        out.offset = coeff(2);
        out.period = period;
        out.damping_time = tau;
        out.rms_residual = std::sqrt(ss / static_cast<double>(t.size()));
        return ss;
    };

    DampedCosineFit best;
    double best_ss = std::numeric_limits<double>::infinity();
    const double tau_lo = 0.1 * span, tau_hi = 10.0 * span;
    for (int ip = 0; ip <= 80; ++ip) {
        const double period = min_period + (max_period - min_period) * ip / 80.0;
        for (int it = 0; it <= 40; ++it) {
            const double tau = tau_lo * std::pow(tau_hi / tau_lo, it / 40.0);
            DampedCosineFit candidate;
            const double ss = solve_linear(period, tau, candidate);
            if (ss < best_ss) {
                best_ss = ss;
                best = candidate;
            }
        }
    }
    // local refinement by shrinking coordinate search
    double period_step = (max_period - min_period) / 80.0;
    double tau_factor = std::pow(tau_hi / tau_lo, 1.0 / 40.0);
    for (int iter = 0; iter < 60; ++iter) {
        bool improved = false;
        for (double period : {best.period - period_step, best.period + period_step}) {
            if (period < min_period || period > max_period) continue;
            DampedCosineFit candidate;
            const double ss = solve_linear(period, best.damping_time, candidate);
            if (ss < best_ss) {
                best_ss = ss;
                best = candidate;
                improved = true;
            }
        }
        for (double tau : {best.damping_time / tau_factor, best.damping_time * tau_factor}) {
            if (tau < tau_lo || tau > tau_hi) continue;
            DampedCosineFit candidate;
            const double ss = solve_linear(best.period, tau, candidate);
            if (ss < best_ss) {
                best_ss = ss;
                best = candidate;
                improved = true;
            }
        }
        if (!improved) {
            period_step *= 0.5;
            tau_factor = std::sqrt(tau_factor);
            if (period_step < 1e-6 * best.period) break;
        }
    }
    return best;
}

CorrelationCurve correlation_curve(const Eigen::MatrixXd& c1,
                                   std::span<const double> diag_model,
                                   double sample_period) {
    const auto dim = c1.rows();
    if (c1.cols() != dim) throw std::invalid_argument("correlation_curve: matrix not square");
    if (static_cast<Eigen::Index>(diag_model.size()) != dim)
        throw std::invalid_argument("correlation_curve: diagonal model size mismatch");
    for (double d : diag_model)
        if (d <= 0.0) throw std::invalid_argument("correlation_curve: non-positive diagonal");

    CorrelationCurve curve;
    curve.lag.resize(dim);
    curve.rho.resize(dim);
    for (Eigen::Index lag = 0; lag < dim; ++lag) {
        double sum = 0.0;
        for (Eigen::Index i = 0; i + lag < dim; ++i)
            sum += c1(i, i + lag) / std::sqrt(diag_model[i] * diag_model[i + lag]);
        curve.lag[lag] = static_cast<double>(lag) * sample_period;
        curve.rho[lag] = sum / static_cast<double>(dim - lag);
    }
    // pin rho(0) = 1 exactly; the model diagonal only matches statistically
    if (curve.rho[0] != 0.0) {
        const double scale = 1.0 / curve.rho[0];
        for (double& r : curve.rho) r *= scale;
    }
    const double window = curve.lag.back();
    if (dim >= 5)
        curve.oscillation = fit_damped_cosine(curve.lag, curve.rho,
                                              0.5 * window, 4.0 * window);
    return curve;
}

}  // namespace qnd
