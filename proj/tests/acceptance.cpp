// Acceptance harness: one pass/fail line per criterion, nonzero exit when
// any criterion fails. Each check recomputes its inputs from the library at
// the default calibration; nothing here depends on the unit-test suite.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qnd/config.hpp"
#include "qnd/constants.hpp"
#include "qnd/estimation.hpp"
#include "qnd/filter.hpp"
#include "qnd/io.hpp"
#include "qnd/noise_stats.hpp"
#include "qnd/pipeline.hpp"
#include "qnd/probe.hpp"
#include "qnd/rng.hpp"
#include "qnd/trap.hpp"

namespace fs = std::filesystem;
using namespace qnd;

namespace {

int g_failures = 0;
std::map<int, std::string> g_lines;

void report(int id, bool pass, const std::string& detail) {
    g_lines[id] = std::string(pass ? "PASS" : "FAIL") + " - " + detail;
    std::fprintf(stderr, "criterion %d done: %s\n", id, pass ? "pass" : "FAIL");
    if (!pass) ++g_failures;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("qndsim_acceptance_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

// ---------------------------------------------------------------------------
// 1. Projection-noise scaling: 20k synthetic shots with the atom number swept
// uniformly across [50, 1500], binned variance of phi_Delta linear in
// <phi_N> with slope phi_eff,1 (5%), no significant quadratic term, and an
// intercept matching the predicted detection floor (10%). Under 60 s.
void criterion1(const PipelineConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();

    EnsembleConfig base = cfg.make_ensemble();
    base.coupling_mode = CouplingMode::homogeneous;
    base.loading = LoadingModel::fixed;

    const std::size_t count = 20000;
    const long lo = 50, hi = 1500;
    std::vector<EstimatePair> estimates(count);
    const unsigned n_threads = std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::thread> workers;
    for (unsigned w = 0; w < n_threads; ++w)
        workers.emplace_back([&, w] {
            EnsembleConfig ens = base;
            for (std::size_t i = w; i < count; i += n_threads) {
                RandomStream atoms = RandomStream::substream(cfg.master_seed ^ 0xa11ce, i);
                ens.mean_atom_number = static_cast<double>(
                    lo + static_cast<long>(atoms.next_u64() %
                                           static_cast<std::uint64_t>(hi - lo + 1)));
                const ShotRecord shot =
                    synthesize_shot(ens, cfg.schedule, shot_seed(cfg.master_seed, i));
                estimates[i] = fit_shot(shot.trace, cfg.schedule, cfg.pumping);
            }
        });
    for (auto& worker : workers) worker.join();

    const auto bins = bin_shots(estimates, 200);
    const ScalingFit fit = scaling_fit(bins);
    const double floor =
        estimator_noise(cfg.schedule, cfg.pumping, cfg.phase_shot_noise).var_phi_delta();
    const double phi1 = cfg.coupling.peak_phase_per_atom;

    const double elapsed = seconds_since(t0);
    const bool slope_ok = std::abs(fit.slope - phi1) <= 0.05 * phi1;
    const bool quad_ok = std::abs(fit.quad_coeff) <= 3.0 * fit.quad_coeff_err;
    const bool intercept_ok = std::abs(fit.intercept - floor) <= 0.10 * floor;
    const bool time_ok = elapsed < 60.0;
    report(1, slope_ok && quad_ok && intercept_ok && time_ok,
           fmt("slope=%.4g rad (target %.4g, 5%%), quad=%.2g +- %.2g, "
               "intercept=%.3g +- %.2g rad^2 (floor %.3g, 10%% demanded; tolerance is "
               "below the statistical bound of this scan design), %.1f s (< 60 s)",
               fit.slope, phi1, fit.quad_coeff, fit.quad_coeff_err, fit.intercept,
               fit.intercept_err, floor, elapsed));
}

// ---------------------------------------------------------------------------
// 2/3. At the operating point (750 atoms): atomic noise 40 +- 1 dB above the
// detection floor, and the noise-subtracted var(phi_Delta)/var(phi_4) ratio
// equal to 4 within 0.3.
void criteria2and3(const PipelineConfig& cfg) {
    EnsembleConfig ens = cfg.make_ensemble();
    ens.coupling_mode = CouplingMode::homogeneous;
    ens.loading = LoadingModel::fixed;
    ens.mean_atom_number = 750.0;

    const auto shots = synthesize_batch(ens, cfg.schedule, cfg.master_seed ^ 0x0b5, 0, 10000);
    std::vector<double> phi_delta(shots.size()), phi4(shots.size());
    for (std::size_t i = 0; i < shots.size(); ++i) {
        const EstimatePair e = fit_shot(shots[i].trace, cfg.schedule, cfg.pumping);
        phi_delta[i] = e.phi_delta;
        phi4[i] = e.phi4;
    }
    const EstimatorNoise noise =
        estimator_noise(cfg.schedule, cfg.pumping, cfg.phase_shot_noise);

    const double var_delta = variance(phi_delta);
    const auto db = noise_level_db(var_delta, noise.var_phi_delta());
    const bool db_ok = db.has_value() && *db >= 39.0 && *db <= 41.0;
    report(2, db_ok,
           fmt("var(phi_Delta)=%.4g rad^2 over floor %.3g rad^2 -> %.2f dB (39..41)",
               var_delta, noise.var_phi_delta(), db ? *db : -1.0));

    const double atomic_delta = var_delta - noise.var_phi_delta();
    const double atomic_4 = variance(phi4) - noise.var_phi4;
    const double ratio = atomic_delta / atomic_4;
    report(3, std::abs(ratio - 4.0) <= 0.3,
           fmt("noise-subtracted var(phi_Delta)/var(phi_4) = %.3f (4 +- 0.3)", ratio));
}

// ---------------------------------------------------------------------------
// 4. Thermal motion in the calibrated trap: time-averaged couplings over a
// 150 us window give Upsilon >= 1.5 at 90, 120 and 150 uK. Under 120 s.
void criterion4(const PipelineConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrapPotential trap = cfg.trap();
    const double window = 150e-6;
    const std::size_t n_atoms = 1000;

    bool all_ok = true;
    std::string detail;
    for (double t_uk : {90.0, 120.0, 150.0}) {
        const double temperature = t_uk * 1e-6;
        std::vector<double> couplings;
        couplings.reserve(n_atoms);
        RandomStream rng(cfg.master_seed ^ static_cast<std::uint64_t>(t_uk));
        for (std::size_t i = 0; i < n_atoms; ++i) {
            const AtomState init = sample_thermal_state(trap, temperature, cesium_mass, rng);
            const Trajectory traj = simulate_trajectory(init, trap, cesium_mass,
                                                        cfg.trajectory_time_step, window);
            if (traj.escaped) continue;
            couplings.push_back(time_averaged_coupling(traj, cfg.coupling, window));
        }
        const double upsilon = inhomogeneity_factor(couplings);
        if (upsilon < 1.5) all_ok = false;
        detail += fmt("Upsilon(%g uK)=%.3f ", t_uk, upsilon);
    }
    const double elapsed = seconds_since(t0);
    if (elapsed >= 120.0) all_ok = false;
    report(4, all_ok, detail + fmt("(each >= 1.5), %.1f s (< 120 s)", elapsed));
}

// ---------------------------------------------------------------------------
// 5. Covariance decomposition at the default group sizes: C0 consistent with
// white detection noise, C1 diagonal matching the projection-noise model
// within 10%, off-diagonal oscillation period within 20% of 11 us, and the
// correlation decaying to about half by the end of the first segment.
void criterion5(const PipelineConfig& defaults) {
    PipelineConfig cfg = defaults;
    cfg.output_dir = fresh_dir("covariance").string();
    Pipeline pipeline(cfg);
    pipeline.run("covariance");
    const fs::path out(cfg.output_dir);

    const Eigen::MatrixXd c0 = read_matrix_binary(out / "c0.bin");
    const Eigen::MatrixXd c1 = read_matrix_binary(out / "c1.bin");
    const auto doc = nlohmann::json::parse(slurp(out / "decomposition.json"));

    const double sn = cfg.phase_shot_noise * cfg.phase_shot_noise;
    const bool level_ok = std::abs(doc["shot_noise_level"].get<double>() - sn) <= 0.05 * sn;
    double off_sum = 0.0;
    int off_count = 0;
    for (Eigen::Index i = 0; i < c0.rows(); ++i)
        for (Eigen::Index j = 0; j < c0.cols(); ++j)
            if (i != j) {
                off_sum += std::abs(c0(i, j)) / sn;
                ++off_count;
            }
    const double off_mean = off_sum / off_count;
    const bool white_ok = level_ok && off_mean < 0.02;

    // C = C0 + phi_N C1 with atomic variance phi_1^2 (N/4) m_i^2 implies
    // C1_ii = phi_1 m_i^2 / 4 for homogeneous coupling; motion keeps the
    // average within 10% at this calibration.
    double ratio_sum = 0.0;
    for (Eigen::Index i = 0; i < c1.rows(); ++i) {
        const double m = cfg.pumping.mean_response(
            cfg.schedule.sample_time(static_cast<std::size_t>(i)));
        ratio_sum += c1(i, i) / (cfg.coupling.peak_phase_per_atom * m * m / 4.0);
    }
    const double diag_ratio = ratio_sum / static_cast<double>(c1.rows());
    const bool diag_ok = diag_ratio >= 0.9 && diag_ratio <= 1.1;

    const double period = doc["oscillation"]["period"].get<double>();
    const bool period_ok = std::abs(period - 11e-6) <= 0.2 * 11e-6;

    const CsvFile corr = read_csv(out / "correlation.csv");
    double tail = 0.0;
    const std::size_t n = corr.rows.size();
    for (std::size_t i = n - 4; i < n; ++i) tail += corr.rows[i][1];
    tail /= 4.0;
    const bool tail_ok = tail >= 0.35 && tail <= 0.65;

    report(5, white_ok && diag_ok && period_ok && tail_ok,
           fmt("C0 level %.3g rad^2 (target %.3g), mean |offdiag|/sn=%.3g (< 0.02), "
               "C1 diag ratio %.3f (0.9..1.1), period %.2f us (11 +- 20%%), "
               "tail rho %.2f (0.35..0.65)",
               doc["shot_noise_level"].get<double>(), sn, off_mean, diag_ratio, period / 1e-6,
               tail));
}

// ---------------------------------------------------------------------------
// 6. Matched-filter optimality on the measured segment-1 covariance: no
// random probe mode beats q_opt, and a 3-dimensional brute-force sphere
// search agrees with the closed-form optimum to 1e-3.
void criterion6(const Eigen::MatrixXd& c, const Eigen::VectorXd& s) {
    const FilterResult opt = optimal_mode(c, s);
    RandomStream rng(90210);
    bool dominated = true;
    double best_random = 0.0;
    for (int k = 0; k < 1000; ++k) {
        Eigen::VectorXd q(s.size());
        for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = rng.normal();
        const double val = snr(q, s, c);
        best_random = std::max(best_random, val);
        if (val > opt.snr * (1.0 + 1e-9)) dominated = false;
    }

    const Eigen::MatrixXd c3 = c.topLeftCorner(3, 3);
    const Eigen::VectorXd s3 = s.head(3);
    const FilterResult opt3 = optimal_mode(c3, s3);
    double grid_best = 0.0;
    const int n_theta = 600, n_phi = 1200;
    for (int a = 0; a <= n_theta; ++a) {
        const double theta = pi * a / n_theta;
        for (int b = 0; b < n_phi; ++b) {
            const double phi = 2.0 * pi * b / n_phi;
            Eigen::Vector3d q(std::sin(theta) * std::cos(phi),
                              std::sin(theta) * std::sin(phi), std::cos(theta));
            grid_best = std::max(grid_best, snr(q, s3, c3));
        }
    }
    const bool brute_ok = std::abs(opt3.snr - grid_best) <= 1e-3 * opt3.snr;

    report(6, dominated && brute_ok,
           fmt("best of 1000 random modes %.4g <= SNR(q_opt) %.4g; 3-dim sphere search "
               "%.6g vs closed form %.6g (rel diff %.1e)",
               best_random, opt.snr, grid_best, opt3.snr,
               std::abs(opt3.snr - grid_best) / opt3.snr));
}

// ---------------------------------------------------------------------------
// 7. Wineland verdicts: at the default calibration the destructive probe
// yields no metrological gain (xi^2 >= 1); with a 3x coupling and motional
// inhomogeneity removed the conditional measurement wins (xi^2 < 1).
// Returns the baseline-regime (C, s) for criterion 6.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> criterion7(const PipelineConfig& cfg) {
    const EnsembleConfig ens = cfg.make_ensemble();
    const TrajectoryPool pool(ens.trap, ens.coupling, cfg.schedule, ens.atom_mass,
                              ens.temperature, cfg.trajectory_time_step,
                              cfg.trajectory_pool_size, cfg.master_seed ^ 0x9001);

    const QndPairs baseline = qnd_protocol(ens, cfg.schedule, cfg.ramsey,
                                        cfg.qnd_calibration_shots, cfg.qnd_shots,
                                        cfg.master_seed ^ 0x71, &pool);
    const double var_cond_base = conditional_variance(baseline.pre, baseline.final);
    const SqueezingVerdict base_verdict =
        wineland_check(var_cond_base, baseline.var_css, baseline.eta);

    EnsembleConfig enhanced = ens;
    enhanced.coupling_mode = CouplingMode::homogeneous;
    enhanced.coupling_scale = 3.0;
    const QndPairs boosted = qnd_protocol(enhanced, cfg.schedule, cfg.ramsey,
                                          cfg.qnd_calibration_shots, cfg.qnd_shots,
                                          cfg.master_seed ^ 0x72);
    const double var_cond_boost = conditional_variance(boosted.pre, boosted.final);
    const SqueezingVerdict boost_verdict =
        wineland_check(var_cond_boost, boosted.var_css, boosted.eta);

    report(7, !base_verdict.improves && boost_verdict.improves,
           fmt("default calibration xi^2=%.3g (expected >= 1); 3x coupling, motion off "
               "xi^2=%.3g (expected < 1)",
               base_verdict.xi_squared, boost_verdict.xi_squared));
    return {baseline.covariance, baseline.signal};
}

// ---------------------------------------------------------------------------
// 8. Population estimator: exact on noiseless traces, unbiased under white
// noise, and with a Monte Carlo covariance matching the Gram-matrix
// prediction within 10%.
void criterion8(const PipelineConfig& cfg) {
    const ModelBasis basis = model_basis(cfg.schedule, cfg.pumping);
    const double phi4_true = 0.9, phi3_true = 0.4;

    std::vector<double> clean(basis.b1.size());
    for (std::size_t k = 0; k < clean.size(); ++k)
        clean[k] = phi4_true * basis.b1[k] + phi3_true * basis.b2[k];
    const EstimatePair exact = fit_shot(clean, cfg.schedule, cfg.pumping);
    const bool exact_ok = std::abs(exact.phi4 - phi4_true) < 1e-12 &&
                          std::abs(exact.phi3 - phi3_true) < 1e-12;

    const double sigma = cfg.phase_shot_noise;
    const std::size_t n_shots = 10000;
    std::vector<double> e4(n_shots), e3(n_shots);
    RandomStream rng(515253);
    std::vector<double> trace(clean.size());
    double cov_sum = 0.0;
    for (std::size_t i = 0; i < n_shots; ++i) {
        for (std::size_t k = 0; k < trace.size(); ++k)
            trace[k] = clean[k] + sigma * rng.normal();
        const EstimatePair e = fit_shot(trace, cfg.schedule, cfg.pumping);
        e4[i] = e.phi4;
        e3[i] = e.phi3;
    }
    const double m4 = mean(e4), m3 = mean(e3);
    const double v4 = variance(e4), v3 = variance(e3);
    for (std::size_t i = 0; i < n_shots; ++i) cov_sum += (e4[i] - m4) * (e3[i] - m3);
    const double cov = cov_sum / static_cast<double>(n_shots - 1);

    const EstimatorNoise pred = estimator_noise(cfg.schedule, cfg.pumping, sigma);
    const double se4 = std::sqrt(pred.var_phi4 / n_shots);
    const double se3 = std::sqrt(pred.var_phi3 / n_shots);
    const bool unbiased = std::abs(m4 - phi4_true) < 5.0 * se4 &&
                          std::abs(m3 - phi3_true) < 5.0 * se3;
    const bool cov_ok = std::abs(v4 - pred.var_phi4) <= 0.10 * pred.var_phi4 &&
                        std::abs(v3 - pred.var_phi3) <= 0.10 * pred.var_phi3 &&
                        std::abs(cov - pred.cov) <= 0.15 * std::abs(pred.cov);

    report(8, exact_ok && unbiased && cov_ok,
           fmt("noiseless recovery exact; bias (%.1e, %.1e) rad; var ratios %.3f / %.3f, "
               "cov ratio %.3f (within 10/15%%)",
               m4 - phi4_true, m3 - phi3_true, v4 / pred.var_phi4, v3 / pred.var_phi3,
               cov / pred.cov));
}

// ---------------------------------------------------------------------------
// 9. Reproducibility: rerunning every stage with the same config writes
// byte-identical artifacts.
void criterion9() {
    const fs::path dir = fresh_dir("rerun");
    const std::string text = std::string("{\"shot_count\": 40, \"output_dir\": \"") +
                             dir.string() +
                             "\","
                             "\"noise_scan\": {\"shots\": 1000, \"bin_size\": 200},"
                             "\"covariance\": {\"shots_per_group\": 400},"
                             "\"qnd\": {\"calibration_shots\": 300, \"shots\": 300},"
                             "\"calibration\": {\"shots_per_group\": 60},"
                             "\"trajectory\": {\"pool_size\": 256}}";
    const PipelineConfig cfg = PipelineConfig::from_json_text(text, false);

    Pipeline(cfg).run("all");
    std::map<std::string, std::string> snapshot;
    for (const auto& entry : fs::directory_iterator(dir))
        snapshot[entry.path().filename().string()] = slurp(entry.path());

    Pipeline(cfg).run("all");
    std::size_t mismatches = 0;
    for (const auto& [name, content] : snapshot)
        if (slurp(dir / name) != content) ++mismatches;

    report(9, !snapshot.empty() && mismatches == 0,
           fmt("%zu artifacts re-generated byte-identically (%zu mismatches)",
               snapshot.size(), mismatches));
}

}  // namespace

int main() {
    const PipelineConfig cfg = PipelineConfig::from_json_text("{}", false);

    criterion1(cfg);
    criteria2and3(cfg);
    criterion4(cfg);
    criterion5(cfg);
    const auto [c, s] = criterion7(cfg);
    criterion6(c, s);
    criterion8(cfg);
    criterion9();

    for (const auto& [id, line] : g_lines)
        std::printf("CRITERION %d: %s\n", id, line.c_str());
    std::printf("%s\n", g_failures == 0 ? "ALL CRITERIA PASSED"
                                        : "SOME CRITERIA FAILED");
    return g_failures == 0 ? 0 : 1;
}
