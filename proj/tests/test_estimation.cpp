#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "qnd/estimation.hpp"
#include "qnd/rng.hpp"

using namespace qnd;
using testutil::default_pumping;
using testutil::default_schedule;

namespace {

// trace built directly from the basis, independent of the shot synthesizer
std::vector<double> model_trace(const ProbeSchedule& sched, const PumpingModel& model,
                                double phi4, double phi3, double sigma, RandomStream* rng) {
    const ModelBasis basis = model_basis(sched, model);
    std::vector<double> trace(sched.total_samples());
    for (std::size_t i = 0; i < trace.size(); ++i) {
        trace[i] = phi4 * basis.b1[i] + phi3 * basis.b2[i];
        if (rng != nullptr) trace[i] += sigma * rng->normal();
    }
    return trace;
}

}  // namespace

TEST_CASE("model basis matches the two-segment mean on the sample grid") {
    const ProbeSchedule sched = default_schedule();
    const PumpingModel model = default_pumping();
    const ModelBasis basis = model_basis(sched, model);
    const std::size_t n1 = sched.segment1_samples();
    REQUIRE(basis.b1.size() == sched.total_samples());
    for (std::size_t i = 0; i < basis.b1.size(); ++i) {
        const double t = sched.sample_time(i);
        CHECK(basis.b1[i] == doctest::Approx(model.mean_response(t)).epsilon(1e-12));
        if (i < n1)
            CHECK(basis.b2[i] == 0.0);
        else
            CHECK(basis.b2[i] ==
                  doctest::Approx(model.mean_response(t - sched.t_flip())).epsilon(1e-12));
    }
}

TEST_CASE("fit: exact recovery of noiseless traces to machine precision") {
    const ProbeSchedule sched = default_schedule();
    const PumpingModel model = default_pumping();
    const std::vector<double> trace = model_trace(sched, model, 0.3, 0.5, 0.0, nullptr);
    const EstimatePair est = fit_shot(trace, sched, model);
    CHECK(std::abs(est.phi4 - 0.3) < 1e-12 * 0.3);
    CHECK(std::abs(est.phi3 - 0.5) < 1e-12 * 0.5);
    CHECK(est.phi_n == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(est.phi_delta == doctest::Approx(-0.2).epsilon(1e-10));
    CHECK(est.fit_residual_rms < 1e-14);
    CHECK_FALSE(est.condition_warning);
    CHECK(est.gram_condition >= 1.0);

    // linearity: scaling the trace scales the estimates
    std::vector<double> scaled = trace;
    for (double& v : scaled) v *= 3.5;
    const EstimatePair est3 = fit_shot(scaled, sched, model);
    CHECK(est3.phi4 == doctest::Approx(3.5 * est.phi4).epsilon(1e-12));
    CHECK(est3.phi3 == doctest::Approx(3.5 * est.phi3).epsilon(1e-12));
}

TEST_CASE("fit: pre-gap segment can be excluded without breaking recovery") {
    const ProbeSchedule sched = default_schedule();
    const PumpingModel model = default_pumping();
    const std::vector<double> trace = model_trace(sched, model, 0.3, 0.5, 0.0, nullptr);
    FitOptions opts;
    opts.include_pre_gap_segment = false;
    const EstimatePair est = fit_shot(trace, sched, model, opts);
    CHECK(est.phi4 == doctest::Approx(0.3).epsilon(1e-10));
    CHECK(est.phi3 == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("fit: rejects NaN samples and truncated traces") {
    const ProbeSchedule sched = default_schedule();
    const PumpingModel model = default_pumping();
    std::vector<double> trace = model_trace(sched, model, 0.1, 0.1, 0.0, nullptr);
    trace[10] = std::nan("");
    CHECK_THROWS_AS(fit_shot(trace, sched, model), std::invalid_argument);
    trace.resize(sched.segment1_samples());
    CHECK_THROWS_AS(fit_shot(trace, sched, model), std::invalid_argument);
}

TEST_CASE("fit: Monte Carlo covariance matches the Gram prediction within 10%") {
    const ProbeSchedule sched = default_schedule();
    const PumpingModel model = default_pumping();
    const double sigma = 1.5e-3;
    RandomStream rng(808);

    const std::size_t shots = 10000;
    std::vector<double> phi4(shots), phi3(shots);
    for (std::size_t i = 0; i < shots; ++i) {
        const std::vector<double> trace = model_trace(sched, model, 0.3, 0.5, sigma, &rng);
        const EstimatePair est = fit_shot(trace, sched, model);
        phi4[i] = est.phi4;
        phi3[i] = est.phi3;
    }

    // independent oracle: build the 2x2 Gram matrix with plain sums and invert
    const ModelBasis basis = model_basis(sched, model);
    double g11 = 0.0, g22 = 0.0, g12 = 0.0;
    for (std::size_t i = 0; i < basis.b1.size(); ++i) {
        g11 += basis.b1[i] * basis.b1[i];
        g22 += basis.b2[i] * basis.b2[i];
        g12 += basis.b1[i] * basis.b2[i];
    }
    const double det = g11 * g22 - g12 * g12;
    const double var4_pred = sigma * sigma * g22 / det;
    const double var3_pred = sigma * sigma * g11 / det;
    const double cov_pred = -sigma * sigma * g12 / det;

    CHECK(testutil::variance(phi4) == doctest::Approx(var4_pred).epsilon(0.10));
    CHECK(testutil::variance(phi3) == doctest::Approx(var3_pred).epsilon(0.10));

    double cov = 0.0;
    const double m4 = testutil::mean(phi4), m3 = testutil::mean(phi3);
    for (std::size_t i = 0; i < shots; ++i) cov += (phi4[i] - m4) * (phi3[i] - m3);
    cov /= static_cast<double>(shots - 1);
    CHECK(cov == doctest::Approx(cov_pred).epsilon(0.15));

    // unbiasedness within 5 standard errors of the mean
    CHECK(std::abs(m4 - 0.3) < 5.0 * std::sqrt(var4_pred / shots));
    CHECK(std::abs(m3 - 0.5) < 5.0 * std::sqrt(var3_pred / shots));

    // the library's own prediction agrees with the manual Gram inverse
    const EstimatorNoise noise = estimator_noise(sched, model, sigma);
    CHECK(noise.var_phi4 == doctest::Approx(var4_pred).epsilon(1e-9));
    CHECK(noise.var_phi3 == doctest::Approx(var3_pred).epsilon(1e-9));
    CHECK(noise.cov == doctest::Approx(cov_pred).epsilon(1e-9));
}

TEST_CASE("fit: all-noise traces are consistent with zero") {
    const ProbeSchedule sched = default_schedule();
    const PumpingModel model = default_pumping();
    const double sigma = 1.0e-3;
    const EstimatorNoise noise = estimator_noise(sched, model, sigma);
    RandomStream rng(91);
    int outliers = 0;
    const int shots = 200;
    for (int i = 0; i < shots; ++i) {
        const std::vector<double> trace = model_trace(sched, model, 0.0, 0.0, sigma, &rng);
        const EstimatePair est = fit_shot(trace, sched, model);
        if (std::abs(est.phi4) > 3.0 * std::sqrt(noise.var_phi4)) ++outliers;
        if (std::abs(est.phi3) > 3.0 * std::sqrt(noise.var_phi3)) ++outliers;
    }
    // 3-sigma outliers occur at ~0.27% per estimate; allow generous slack
    CHECK(outliers <= 8);
}

TEST_CASE("derived estimators: linear bijection") {
    CHECK(derive_estimators(1.0, 1.0) == std::pair<double, double>{2.0, 0.0});
    CHECK(derive_estimators(1.0, 0.0) == std::pair<double, double>{1.0, 1.0});
    const auto [phi_n, phi_delta] = derive_estimators(0.37, -0.12);
    CHECK((phi_n + phi_delta) / 2.0 == doctest::Approx(0.37).epsilon(1e-12));
    CHECK((phi_n - phi_delta) / 2.0 == doctest::Approx(-0.12).epsilon(1e-12));
}

TEST_CASE("segment fluctuations") {
    const ProbeSchedule sched = default_schedule();
    const PumpingModel model = default_pumping();
    const std::size_t n1 = sched.segment1_samples();

    // balanced noiseless shot: subtraction is exact
    const std::vector<double> balanced = model_trace(sched, model, 0.2, 0.2, 0.0, nullptr);
    const std::vector<double> zero = segment_fluctuations(balanced, sched, model, 0.4);
    REQUIRE(zero.size() == n1);
    for (double v : zero) CHECK(std::abs(v) < 1e-15);

    // zero atoms: fluctuations are the raw noise samples
    RandomStream rng(5);
    const std::vector<double> noise_trace = model_trace(sched, model, 0.0, 0.0, 1e-3, &rng);
    const std::vector<double> raw = segment_fluctuations(noise_trace, sched, model, 0.0);
    for (std::size_t i = 0; i < n1; ++i) CHECK(raw[i] == noise_trace[i]);

    // ensemble mean of fluctuations vanishes sample by sample
    std::vector<double> acc(n1, 0.0);
    const std::size_t shots = 2000;
    for (std::size_t s = 0; s < shots; ++s) {
        const std::vector<double> trace = model_trace(sched, model, 0.25, 0.25, 1e-3, &rng);
        const EstimatePair est = fit_shot(trace, sched, model);
        const std::vector<double> fl = segment_fluctuations(trace, sched, model, est.phi_n);
        for (std::size_t i = 0; i < n1; ++i) acc[i] += fl[i];
    }
    for (std::size_t i = 0; i < n1; ++i)
        CHECK(std::abs(acc[i] / shots) < 5.0 * 1e-3 / std::sqrt(static_cast<double>(shots)));
}
