// Command-line front end: load config, apply flag overrides, run a stage.
#include <CLI11.hpp>
#include <cstdio>
#include <string>

#include "qnd/pipeline.hpp"
#include "qnd/version.hpp"

int main(int argc, char** argv) {
    CLI::App app{"qndsim: dispersive probe simulation and analysis chain"};
    app.set_version_flag("--version", std::string(qnd::tool_version));

    std::string config_path;
    std::string stage = "all";
    std::string out_dir;
    std::string motion;
    std::uint64_t seed = 0;
    std::size_t shots = 0;
    bool have_seed = false, have_shots = false;

    app.add_option("--config", config_path, "JSON config file (defaults used when omitted)");
    app.add_option("--stage", stage,
                   "simulate | fit | noise-scan | covariance | matched-filter | qnd | "
                   "calibrate | all")
        ->capture_default_str();
    app.add_option("--out", out_dir, "output directory override");
    app.add_option("--seed", seed, "master seed override")->trigger_on_parse();
    app.add_option("--shots", shots, "shot count override (simulate stage)");
    app.add_option("--motion", motion, "trajectory-resolved couplings: on | off")
        ->check(CLI::IsMember({"on", "off"}));

    try {
        app.parse(argc, argv);
        have_seed = app.count("--seed") > 0;
        have_shots = app.count("--shots") > 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        qnd::PipelineConfig cfg = config_path.empty()
                                      ? qnd::PipelineConfig{}
                                      : qnd::PipelineConfig::load(config_path);
        if (have_seed) cfg.master_seed = seed;
        if (have_shots) cfg.shot_count = shots;
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (motion == "on") cfg.inhomogeneity = "motion";
        if (motion == "off") cfg.inhomogeneity = "none";

        qnd::Pipeline pipeline(cfg);
        pipeline.run(stage);
    } catch (const qnd::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const qnd::CalibrationError& e) {
        std::fprintf(stderr, "calibration failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    }
    return 0;
}
