#include "qnd/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <thread>

#include "qnd/constants.hpp"
#include "qnd/estimation.hpp"
#include "qnd/io.hpp"
#include "qnd/version.hpp"

namespace qnd {

using nlohmann::json;

namespace {

// Stage-specific seed derivation so stages are reproducible in isolation.
std::uint64_t derived_seed(std::uint64_t master, std::uint64_t tag) {
    std::uint64_t sm = master ^ tag;
    return splitmix64(sm);
}

constexpr std::uint64_t kPoolTag = 0x706f6f6cULL;       // "pool"
constexpr std::uint64_t kSimTag = 0x73696d75ULL;        // "simu"
constexpr std::uint64_t kScanTag = 0x7363616eULL;       // "scan"
constexpr std::uint64_t kScanAtomsTag = 0x7363414eULL;  // "scAN"
constexpr std::uint64_t kCovTag = 0x636f7661ULL;        // "cova"
constexpr std::uint64_t kQndTag = 0x716e6470ULL;        // "qndp"
constexpr std::uint64_t kCalTag = 0x63616c69ULL;        // "cali"

double pump_eval(double t, double amplitude, double beta, double tau_at, double tau_loss) {
    return amplitude * (beta - (beta - 1.0) * std::exp(-t / tau_at)) *
           std::exp(-t / tau_loss);
}

struct PumpFit {
    Eigen::Vector4d p;    // amplitude, beta, log(tau_at), log(tau_loss)
    Eigen::Matrix4d cov;  // parameter covariance in the same coordinates
    double rms = 0.0;
    bool converged = false;
};

double pump_cost(const std::vector<double>& y, double dt, const Eigen::Vector4d& p) {
    double cost = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const double t = static_cast<double>(k + 1) * dt;
        const double r = y[k] - pump_eval(t, p(0), p(1), std::exp(p(2)), std::exp(p(3)));
        cost += r * r;
    }
    return cost;
}

// Levenberg-Marquardt with a numeric Jacobian. The time constants are fit in
// log space to keep them positive; beta and the amplitude are unconstrained.
PumpFit fit_pump_trace(const std::vector<double>& y, double dt) {
    const std::size_t n = y.size();
    if (n < 16) throw std::invalid_argument("fit_pump_trace: trace too short");
    const double duration = static_cast<double>(n) * dt;

    // coarse grid with the amplitude solved linearly per (beta, tau) node
    Eigen::Vector4d best = Eigen::Vector4d::Zero();
    double best_cost = std::numeric_limits<double>::infinity();
    for (double beta : {1.0, 1.2, 1.5, 1.8, 2.2, 2.8}) {
        for (double fat : {0.005, 0.01, 0.02, 0.05, 0.1}) {
            for (double floss : {0.3, 0.6, 1.0, 2.0, 4.0}) {
                const double tau_at = fat * duration;
                const double tau_loss = floss * duration;
                double num = 0.0, den = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double t = static_cast<double>(k + 1) * dt;
                    const double m = pump_eval(t, 1.0, beta, tau_at, tau_loss);
                    num += y[k] * m;
                    den += m * m;
                }
                const double amplitude = den > 0.0 ? num / den : 0.0;
                Eigen::Vector4d p(amplitude, beta, std::log(tau_at), std::log(tau_loss));
                const double cost = pump_cost(y, dt, p);
                if (cost < best_cost) {
                    best_cost = cost;
                    best = p;
                }
            }
        }
    }

    Eigen::Vector4d p = best;
    double cost = best_cost;
    double lambda = 1e-3;
    Eigen::MatrixXd jac(n, 4);
    Eigen::VectorXd resid(n);
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    bool converged = false;
    for (int iter = 0; iter < 400; ++iter) {
        for (std::size_t k = 0; k < n; ++k) {
            const double t = static_cast<double>(k + 1) * dt;
            resid(k) = y[k] - pump_eval(t, p(0), p(1), std::exp(p(2)), std::exp(p(3)));
            for (int j = 0; j < 4; ++j) {
                const double step = 1e-6 * (std::abs(p(j)) + 1e-6);
                Eigen::Vector4d ph = p, pl = p;
                ph(j) += step;
                pl(j) -= step;
                const double fh = pump_eval(t, ph(0), ph(1), std::exp(ph(2)), std::exp(ph(3)));
                const double fl = pump_eval(t, pl(0), pl(1), std::exp(pl(2)), std::exp(pl(3)));
                jac(k, j) = (fh - fl) / (2.0 * step);
            }
        }
        jtj = jac.transpose() * jac;
        const Eigen::Vector4d g = jac.transpose() * resid;
        bool improved = false;
        for (int attempt = 0; attempt < 12; ++attempt) {
            Eigen::Matrix4d damped = jtj;
            for (int j = 0; j < 4; ++j) damped(j, j) += lambda * (jtj(j, j) + 1e-30);
            const Eigen::Vector4d delta = damped.ldlt().solve(g);
            const Eigen::Vector4d trial = p + delta;
            const double trial_cost = pump_cost(y, dt, trial);
            if (std::isfinite(trial_cost) && trial_cost < cost) {
                // flat directions (e.g. tau_at when beta ~ 1) shrink the cost
                // forever in tiny steps; stop once progress is negligible
                if (cost - trial_cost < 1e-10 * (cost + 1e-300)) converged = true;
                p = trial;
                cost = trial_cost;
                lambda = std::max(lambda * 0.3, 1e-12);
                improved = true;
                break;
            }
            lambda *= 5.0;
        }
        if (!improved || converged) {
            converged = true;
            break;
        }
    }

    PumpFit fit;
    fit.p = p;
    fit.converged = converged;
    const double dof = static_cast<double>(n) - 4.0;
    const double sigma2 = dof > 0.0 ? cost / dof : 0.0;
    fit.cov = sigma2 * jtj.inverse();
    fit.rms = std::sqrt(cost / static_cast<double>(n));
    return fit;
}

Eigen::MatrixXd matrix_from_csv(const CsvFile& file) {
    const std::size_t rows = file.rows.size();
    if (rows == 0) throw ConfigError("artifact: empty matrix file");
    const std::size_t cols = file.rows.front().size();
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (file.rows[i].size() != cols) throw ConfigError("artifact: ragged matrix file");
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = file.rows[i][j];
    }
    return m;
}

}  // namespace

PumpingCalibration calibrate_pumping(const std::vector<std::vector<double>>& group_traces,
                                     double sample_period) {
    if (group_traces.size() < 3)
        throw std::invalid_argument("calibrate_pumping: need at least 3 atom-number groups");
    if (sample_period <= 0.0)
        throw std::invalid_argument("calibrate_pumping: sample period must be positive");

    PumpingCalibration result;
    std::vector<PumpFit> fits;
    for (const auto& trace : group_traces) {
        PumpFit fit = fit_pump_trace(trace, sample_period);
        if (!fit.converged || !fit.p.allFinite())
            throw CalibrationError("calibration: model fit did not converge");
        fits.push_back(fit);

        PumpingCalibration::Group group;
        group.amplitude = fit.p(0);
        group.beta = fit.p(1);
        group.tau_at = std::exp(fit.p(2));
        group.tau_loss = std::exp(fit.p(3));
        group.beta_err = std::sqrt(std::max(0.0, fit.cov(1, 1)));
        group.tau_at_err = group.tau_at * std::sqrt(std::max(0.0, fit.cov(2, 2)));
        group.tau_loss_err = group.tau_loss * std::sqrt(std::max(0.0, fit.cov(3, 3)));
        group.rms_residual = fit.rms;
        result.groups.push_back(group);
    }

    // inverse-variance weighted mean per parameter, then the 3-sigma
    // cross-group consistency gate
    const auto pool = [&](auto value, auto error, double& mean_out, double& err_out) {
        double wsum = 0.0, vsum = 0.0;
        for (const auto& g : result.groups) {
            const double e = std::max(error(g), 1e-30);
            const double w = 1.0 / (e * e);
            wsum += w;
            vsum += w * value(g);
        }
        mean_out = vsum / wsum;
        err_out = 1.0 / std::sqrt(wsum);
    };
    double beta_mean, beta_err, tat_mean, tat_err, tloss_mean, tloss_err;
    pool([](const auto& g) { return g.beta; }, [](const auto& g) { return g.beta_err; },
         beta_mean, beta_err);
    pool([](const auto& g) { return g.tau_at; }, [](const auto& g) { return g.tau_at_err; },
         tat_mean, tat_err);
    pool([](const auto& g) { return g.tau_loss; },
         [](const auto& g) { return g.tau_loss_err; }, tloss_mean, tloss_err);

    for (const auto& g : result.groups) {
        const bool consistent =
            std::abs(g.beta - beta_mean) <= 3.0 * std::max(g.beta_err, 1e-12) &&
            std::abs(g.tau_at - tat_mean) <= 3.0 * std::max(g.tau_at_err, 1e-12) &&
            std::abs(g.tau_loss - tloss_mean) <= 3.0 * std::max(g.tau_loss_err, 1e-12);
        if (!consistent)
            throw CalibrationError(
                "calibration: pumping parameters disagree across atom-number groups "
                "beyond 3 sigma");
    }

    result.model.beta = std::max(1.0, beta_mean);
    result.model.tau_at = tat_mean;
    result.model.tau_loss = tloss_mean;
    result.model.validate();
    result.beta_err = beta_err;
    result.tau_at_err = tat_err;
    result.tau_loss_err = tloss_err;
    return result;
}

std::string RunManifest::to_json() const {
    json doc;
    doc["config"] = config_hash;
    doc["tool_version"] = tool_version;
    doc["schema"] = schema_version;
    json stage_list = json::array();
    for (const auto& stage : stages) {
        json entry;
        entry["name"] = stage.name;
        entry["files"] = stage.files;
        stage_list.push_back(entry);
    }
    doc["stages"] = stage_list;
    return doc.dump(2) + "\n";
}

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    hash_ = cfg_.hash();
    out_ = cfg_.output_dir;
    std::filesystem::create_directories(out_);
}

const TrajectoryPool* Pipeline::pool() {
    if (!pool_)
        pool_ = std::make_unique<TrajectoryPool>(
            cfg_.trap(), cfg_.coupling, cfg_.schedule, cesium_mass, cfg_.temperature,
            cfg_.trajectory_time_step, cfg_.trajectory_pool_size,
            derived_seed(cfg_.master_seed, kPoolTag));
    return pool_.get();
}

StageResult Pipeline::simulate() {
    const EnsembleConfig ens = cfg_.make_ensemble();
    const TrajectoryPool* traj = ens.coupling_mode == CouplingMode::motion ? pool() : nullptr;
    const auto shots = synthesize_batch(ens, cfg_.schedule, derived_seed(cfg_.master_seed, kSimTag),
                                        0, cfg_.shot_count, traj);

    const std::size_t n = cfg_.schedule.total_samples();
    std::vector<std::string> columns;
    columns.reserve(n + 1);
    columns.emplace_back("shot");
    for (std::size_t k = 0; k < n; ++k) columns.push_back("t" + std::to_string(k));
    CsvWriter traces(out_ / "traces.csv", hash_, "simulate", columns);
    std::vector<double> row(n + 1);
    for (std::size_t i = 0; i < shots.size(); ++i) {
        row[0] = static_cast<double>(i);
        std::copy(shots[i].trace.begin(), shots[i].trace.end(), row.begin() + 1);
        traces.row(row);
    }
    traces.close();

    std::string lines;
    {
        json head;
        head["config"] = hash_;
        head["schema"] = schema_version;
        lines += head.dump() + "\n";
    }
    for (std::size_t i = 0; i < shots.size(); ++i) {
        json rec;
        rec["shot"] = i;
        rec["seed"] = shots[i].seed;
        rec["atoms"] = shots[i].truth.total_atoms;
        rec["f4"] = shots[i].truth.atoms_f4;
        rec["f3"] = shots[i].truth.atoms_f3;
        lines += rec.dump() + "\n";
    }
    write_text_file(out_ / "shots.jsonl", lines);

    return {"simulate", {"traces.csv", "shots.jsonl"}};
}

StageResult Pipeline::fit() {
    const auto path = out_ / "traces.csv";
    if (!std::filesystem::exists(path))
        throw ConfigError("fit: missing upstream artifact traces.csv (run simulate first)");
    const CsvFile traces = read_csv(path);
    if (csv_config_hash(traces) != hash_)
        throw ConfigError("fit: traces.csv was produced with a different config (stale input)");
    const std::size_t n = cfg_.schedule.total_samples();
    if (traces.columns.size() != n + 1)
        throw ConfigError("fit: traces.csv sample grid does not match the config schedule");

    CsvWriter est(out_ / "estimates.csv", hash_, "fit",
                  {"shot", "phi4", "phi3", "phi_n", "phi_delta", "residual_rms",
                   "gram_condition"});
    for (const auto& row : traces.rows) {
        const std::span<const double> trace(row.data() + 1, n);
        const EstimatePair e = fit_shot(trace, cfg_.schedule, cfg_.pumping);
        est.row({row[0], e.phi4, e.phi3, e.phi_n, e.phi_delta, e.fit_residual_rms,
                 e.gram_condition});
    }
    est.close();
    return {"fit", {"estimates.csv"}};
}

StageResult Pipeline::noise_scan() {
    // projection-noise scaling is probed with motion off: couplings
    // homogeneous, the atom number swept uniformly across the scan range
    EnsembleConfig base = cfg_.make_ensemble();
    base.coupling_mode = CouplingMode::homogeneous;
    base.loading = LoadingModel::fixed;

    const std::uint64_t atom_seed = derived_seed(cfg_.master_seed, kScanAtomsTag);
    const std::uint64_t trace_seed = derived_seed(cfg_.master_seed, kScanTag);
    const long span = cfg_.scan_atoms_max - cfg_.scan_atoms_min + 1;
    const std::size_t count = cfg_.scan_shots;

    std::vector<EstimatePair> estimates(count);
    const unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < n_threads; ++w) {
        workers.emplace_back([&, w] {
            EnsembleConfig ens = base;
            for (std::size_t i = w; i < count; i += n_threads) {
                RandomStream atoms = RandomStream::substream(atom_seed, i);
                ens.mean_atom_number = static_cast<double>(
                    cfg_.scan_atoms_min + static_cast<long>(atoms.next_u64() %
                                                            static_cast<std::uint64_t>(span)));
                const ShotRecord shot =
                    synthesize_shot(ens, cfg_.schedule, shot_seed(trace_seed, i));
                estimates[i] = fit_shot(shot.trace, cfg_.schedule, cfg_.pumping);
            }
        });
    }
    for (auto& worker : workers) worker.join();

    const auto bins = bin_shots(estimates, cfg_.scan_bin_size);
    CsvWriter table(out_ / "scaling_bins.csv", hash_, "noise-scan",
                    {"mean_phi_n", "var_phi_delta", "var_phi_delta_err", "var_phi4",
                     "var_phi3", "count"});
    for (const auto& bin : bins)
        table.row({bin.mean_phi_n, bin.var_phi_delta, bin.var_phi_delta_err, bin.var_phi4,
                   bin.var_phi3, static_cast<double>(bin.count)});
    table.close();

    const ScalingFit fit = scaling_fit(bins);
    const double floor =
        estimator_noise(cfg_.schedule, cfg_.pumping, cfg_.phase_shot_noise).var_phi_delta();
    json doc;
    doc["config"] = hash_;
    doc["schema"] = schema_version;
    doc["intercept"] = fit.intercept;
    doc["intercept_err"] = fit.intercept_err;
    doc["slope"] = fit.slope;
    doc["slope_err"] = fit.slope_err;
    doc["quad_coeff"] = fit.quad_coeff;
    doc["quad_coeff_err"] = fit.quad_coeff_err;
    doc["predicted_floor"] = floor;
    const auto top_db = noise_level_db(bins.back().var_phi_delta, floor);
    if (top_db) doc["top_bin_db"] = *top_db;
    write_text_file(out_ / "scaling_fit.json", doc.dump(2) + "\n");

    return {"noise-scan", {"scaling_bins.csv", "scaling_fit.json"}};
}

StageResult Pipeline::covariance() {
    // the covariance analysis targets motion-induced correlations, so this
    // stage always runs trajectory-resolved couplings with fixed loading
    EnsembleConfig base = cfg_.make_ensemble();
    base.coupling_mode = CouplingMode::motion;
    base.loading = LoadingModel::fixed;

    const std::size_t n1 = cfg_.schedule.segment1_samples();
    std::vector<std::pair<double, Eigen::MatrixXd>> groups;
    json group_info = json::array();
    for (std::size_t g = 0; g < cfg_.covariance_group_atoms.size(); ++g) {
        EnsembleConfig ens = base;
        ens.mean_atom_number = static_cast<double>(cfg_.covariance_group_atoms[g]);
        const auto shots =
            synthesize_batch(ens, cfg_.schedule, derived_seed(cfg_.master_seed, kCovTag + g),
                             0, cfg_.covariance_shots_per_group, pool());

        std::vector<std::vector<double>> series(shots.size());
        double phi_n_sum = 0.0;
        for (std::size_t i = 0; i < shots.size(); ++i) {
            const EstimatePair e = fit_shot(shots[i].trace, cfg_.schedule, cfg_.pumping);
            phi_n_sum += e.phi_n;
            series[i] =
                segment_fluctuations(shots[i].trace, cfg_.schedule, cfg_.pumping, e.phi_n);
        }
        const double mean_phi_n = phi_n_sum / static_cast<double>(shots.size());
        groups.emplace_back(mean_phi_n, estimate_covariance(series));
        json info;
        info["atoms"] = cfg_.covariance_group_atoms[g];
        info["mean_phi_n"] = mean_phi_n;
        group_info.push_back(info);
    }

    const CovarianceDecomposition dec = decompose_covariance(groups);
    write_matrix_csv(out_ / "c0.csv", hash_, "covariance", dec.c0);
    write_matrix_binary(out_ / "c0.bin", dec.c0);
    write_matrix_csv(out_ / "c1.csv", hash_, "covariance", dec.c1);
    write_matrix_binary(out_ / "c1.bin", dec.c1);

    std::vector<double> diag_model(n1);
    for (std::size_t i = 0; i < n1; ++i) {
        const double m = cfg_.pumping.mean_response(cfg_.schedule.sample_time(i));
        diag_model[i] = 0.25 * m * m;
    }
    const CorrelationCurve curve =
        correlation_curve(dec.c1, diag_model, cfg_.schedule.sample_period);
    CsvWriter corr(out_ / "correlation.csv", hash_, "covariance", {"lag", "rho"});
    for (std::size_t i = 0; i < curve.lag.size(); ++i) corr.row({curve.lag[i], curve.rho[i]});
    corr.close();

    double operating = 0.0;
    for (const auto& [phi_n, c] : groups) operating = std::max(operating, phi_n);
    json doc;
    doc["config"] = hash_;
    doc["schema"] = schema_version;
    doc["groups"] = group_info;
    doc["operating_phi_n"] = operating;
    doc["shot_noise_level"] = dec.shot_noise_level;
    doc["residual_quadratic_norm"] = dec.residual_quadratic_norm;
    json osc;
    osc["amplitude"] = curve.oscillation.amplitude;
    osc["period"] = curve.oscillation.period;
    osc["damping_time"] = curve.oscillation.damping_time;
    osc["phase"] = curve.oscillation.phase;
    osc["offset"] = curve.oscillation.offset;
    osc["rms_residual"] = curve.oscillation.rms_residual;
    doc["oscillation"] = osc;
    write_text_file(out_ / "decomposition.json", doc.dump(2) + "\n");

    return {"covariance",
            {"c0.csv", "c0.bin", "c1.csv", "c1.bin", "correlation.csv", "decomposition.json"}};
}

StageResult Pipeline::matched_filter() {
    for (const char* name : {"c0.csv", "c1.csv", "decomposition.json"})
        if (!std::filesystem::exists(out_ / name))
            throw ConfigError(std::string("matched-filter: missing upstream artifact ") + name +
                              " (run covariance first)");
    const CsvFile c0_file = read_csv(out_ / "c0.csv");
    const CsvFile c1_file = read_csv(out_ / "c1.csv");
    if (csv_config_hash(c0_file) != hash_ || csv_config_hash(c1_file) != hash_)
        throw ConfigError("matched-filter: covariance artifacts are stale");
    const Eigen::MatrixXd c0 = matrix_from_csv(c0_file);
    const Eigen::MatrixXd c1 = matrix_from_csv(c1_file);

    std::ifstream dec_in(out_ / "decomposition.json");
    json dec = json::parse(dec_in, nullptr, false);
    if (dec.is_discarded() || dec.value("config", std::string()) != hash_)
        throw ConfigError("matched-filter: decomposition.json is stale or unreadable");
    const double phi_n = dec.at("operating_phi_n").get<double>();

    const Eigen::MatrixXd cov = c0 + phi_n * c1;
    const Eigen::VectorXd signal =
        build_signal(phi_n, cfg_.pumping, cfg_.ramsey, cfg_.schedule);
    const FilterResult filter = optimal_mode(cov, signal);

    CsvWriter table(out_ / "qopt.csv", hash_, "matched-filter", {"t", "q", "s"});
    for (Eigen::Index i = 0; i < filter.q_opt.size(); ++i)
        table.row({cfg_.schedule.sample_time(static_cast<std::size_t>(i)), filter.q_opt(i),
                   signal(i)});
    table.close();

    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(signal.size(), 1.0);
    uniform /= uniform.norm();
    json doc;
    doc["config"] = hash_;
    doc["schema"] = schema_version;
    doc["operating_phi_n"] = phi_n;
    doc["snr"] = filter.snr;
    doc["snr_uniform"] = snr(uniform, signal, cov);
    doc["condition_used"] = filter.condition_used;
    doc["regularization"] = filter.regularization;
    write_text_file(out_ / "filter.json", doc.dump(2) + "\n");

    return {"matched-filter", {"qopt.csv", "filter.json"}};
}

StageResult Pipeline::qnd() {
    EnsembleConfig ens = cfg_.make_ensemble();
    const TrajectoryPool* traj = ens.coupling_mode == CouplingMode::motion ? pool() : nullptr;
    const QndPairs pairs =
        qnd_protocol(ens, cfg_.schedule, cfg_.ramsey, cfg_.qnd_calibration_shots,
                     cfg_.qnd_shots, derived_seed(cfg_.master_seed, kQndTag), traj);

    CsvWriter table(out_ / "qnd_pairs.csv", hash_, "qnd", {"pre", "final"});
    for (std::size_t i = 0; i < pairs.pre.size(); ++i)
        table.row({pairs.pre[i], pairs.final[i]});
    table.close();

    const double var_cond = conditional_variance(pairs.pre, pairs.final);
    const SqueezingVerdict verdict = wineland_check(var_cond, pairs.var_css, pairs.eta);
    json doc;
    doc["config"] = hash_;
    doc["schema"] = schema_version;
    doc["eta"] = verdict.contrast;
    doc["var_css"] = pairs.var_css;
    doc["conditional_variance"] = verdict.conditional_variance;
    doc["xi_squared"] = verdict.xi_squared;
    doc["improves"] = verdict.improves;
    doc["filter_snr"] = pairs.filter.snr;
    write_text_file(out_ / "verdict.json", doc.dump(2) + "\n");

    return {"qnd", {"qnd_pairs.csv", "verdict.json"}};
}

StageResult Pipeline::calibrate() {
    const double dt = cfg_.schedule.sample_period;
    const std::size_t n =
        static_cast<std::size_t>(std::llround(cfg_.calibration_trace_duration / dt));
    if (n < 16) throw ConfigError("calibrate: calibration trace too short");

    // population traces: every atom contributes, no interrogation pulse, so
    // the mean is N * phi_1 * m(t) with per-sample detection noise on top
    std::vector<std::vector<double>> averaged;
    for (std::size_t g = 0; g < cfg_.calibration_group_atoms.size(); ++g) {
        std::vector<double> mean(n, 0.0);
        for (std::size_t s = 0; s < cfg_.calibration_shots_per_group; ++s) {
            RandomStream rng = RandomStream::substream(
                derived_seed(cfg_.master_seed, kCalTag + g), s);
            const double amplitude =
                static_cast<double>(cfg_.calibration_group_atoms[g]) *
                cfg_.coupling.peak_phase_per_atom;
            for (std::size_t k = 0; k < n; ++k) {
                const double t = static_cast<double>(k + 1) * dt;
                mean[k] += amplitude * cfg_.pumping.mean_response(t) +
                           cfg_.phase_shot_noise * rng.normal();
            }
        }
        for (double& v : mean) v /= static_cast<double>(cfg_.calibration_shots_per_group);
        averaged.push_back(std::move(mean));
    }

    const PumpingCalibration cal = calibrate_pumping(averaged, dt);
    json doc;
    doc["config"] = hash_;
    doc["schema"] = schema_version;
    doc["beta"] = cal.model.beta;
    doc["beta_err"] = cal.beta_err;
    doc["tau_at_us"] = cal.model.tau_at * 1e6;
    doc["tau_at_err_us"] = cal.tau_at_err * 1e6;
    doc["tau_loss_us"] = cal.model.tau_loss * 1e6;
    doc["tau_loss_err_us"] = cal.tau_loss_err * 1e6;
    json group_list = json::array();
    for (std::size_t g = 0; g < cal.groups.size(); ++g) {
        const auto& grp = cal.groups[g];
        json entry;
        entry["atoms"] = cfg_.calibration_group_atoms[g];
        entry["amplitude"] = grp.amplitude;
        entry["beta"] = grp.beta;
        entry["tau_at_us"] = grp.tau_at * 1e6;
        entry["tau_loss_us"] = grp.tau_loss * 1e6;
        entry["rms_residual"] = grp.rms_residual;
        group_list.push_back(entry);
    }
    doc["groups"] = group_list;
    write_text_file(out_ / "pumping_model.json", doc.dump(2) + "\n");

    return {"calibrate", {"pumping_model.json"}};
}

RunManifest Pipeline::run(const std::string& stage) {
    RunManifest manifest;
    manifest.config_hash = hash_;
    manifest.tool_version = tool_version;
    manifest.schema_version = schema_version;

    write_text_file(out_ / "config.json", cfg_.canonical_json() + "\n");

    const auto run_one = [&](const std::string& name) {
        const auto start = std::chrono::steady_clock::now();
        StageResult result;
        if (name == "simulate")
            result = simulate();
        else if (name == "fit")
            result = fit();
        else if (name == "noise-scan")
            result = noise_scan();
        else if (name == "covariance")
            result = covariance();
        else if (name == "matched-filter")
            result = matched_filter();
        else if (name == "qnd")
            result = qnd();
        else if (name == "calibrate")
            result = calibrate();
        else
            throw ConfigError("run: unknown stage '" + name + "'");
        const double seconds = std::chrono::duration<double>(
                                   std::chrono::steady_clock::now() - start)
                                   .count();
        // timings go to stderr only; the manifest must be byte-identical
        // across reruns
        std::fprintf(stderr, "[qndsim] stage %-14s %8.2f s\n", name.c_str(), seconds);
        manifest.stages.push_back(result);
    };

    if (stage == "all") {
        for (const char* name : {"calibrate", "simulate", "fit", "noise-scan", "covariance",
                                 "matched-filter", "qnd"})
            run_one(name);
    } else {
        run_one(stage);
    }

    write_text_file(out_ / "manifest.json", manifest.to_json());
    return manifest;
}

}  // namespace qnd
