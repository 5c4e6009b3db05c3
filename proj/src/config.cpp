#include "qnd/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "qnd/constants.hpp"
#include "qnd/version.hpp"

namespace qnd {

using nlohmann::json;

namespace {

constexpr double us = 1e-6;
constexpr double nm = 1e-9;
constexpr double uk = 1e-6;
constexpr double mrad = 1e-3;

json to_json(const PipelineConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    j["master_seed"] = c.master_seed;
    j["shot_count"] = c.shot_count;
    j["output_dir"] = c.output_dir;
    j["schedule"] = {{"segment1_us", c.schedule.segment1_duration / us},
                     {"gap_us", c.schedule.gap_duration / us},
                     {"segment2_us", c.schedule.segment2_duration / us},
                     {"sample_period_us", c.schedule.sample_period / us}};
    j["pumping"] = {{"beta", c.pumping.beta},
                    {"tau_at_us", c.pumping.tau_at / us},
                    {"tau_loss_us", c.pumping.tau_loss / us}};
    j["trap"] = {{"minimum_radius_nm", c.trap_minimum_radius / nm},
                 {"depth_uk", c.trap_depth / (k_boltzmann * uk)},
                 {"blue_decay_nm", c.trap_blue_decay / nm},
                 {"red_decay_nm", c.trap_red_decay / nm}};
    j["coupling"] = {{"peak_phase_per_atom_mrad", c.coupling.peak_phase_per_atom / mrad},
                     {"probe_decay_length_nm", c.coupling.probe_decay_length / nm}};
    j["ramsey"] = {{"eta0", c.ramsey.eta0},
                   {"eta_inf", c.ramsey.eta_inf},
                   {"tau_recovery_us", c.ramsey.tau_recovery / us}};
    j["ensemble"] = {{"mean_atom_number", c.mean_atom_number},
                     {"loading", c.loading_model},
                     {"loading_kappa", c.loading_kappa},
                     {"temperature_uk", c.temperature / uk},
                     {"phase_shot_noise_mrad", c.phase_shot_noise / mrad},
                     {"inhomogeneity", c.inhomogeneity},
                     {"coupling_scale", c.coupling_scale}};
    j["trajectory"] = {{"time_step_us", c.trajectory_time_step / us},
                       {"pool_size", c.trajectory_pool_size}};
    j["noise_scan"] = {{"shots", c.scan_shots},
                       {"atoms_min", c.scan_atoms_min},
                       {"atoms_max", c.scan_atoms_max},
                       {"bin_size", c.scan_bin_size}};
    j["covariance"] = {{"group_atoms", c.covariance_group_atoms},
                       {"shots_per_group", c.covariance_shots_per_group}};
    j["qnd"] = {{"calibration_shots", c.qnd_calibration_shots}, {"shots", c.qnd_shots}};
    j["calibration"] = {{"group_atoms", c.calibration_group_atoms},
                        {"shots_per_group", c.calibration_shots_per_group},
                        {"trace_duration_us", c.calibration_trace_duration / us}};
    return j;
}

void from_json(const json& j, PipelineConfig& c) {
    try {
        c.schema_version = j.at("schema_version").get<std::string>();
        if (c.schema_version != qnd::schema_version)
            throw ConfigError("config: schema_version mismatch, expected " +
                              std::string(qnd::schema_version));
        c.master_seed = j.at("master_seed").get<std::uint64_t>();
        c.shot_count = j.at("shot_count").get<std::size_t>();
        c.output_dir = j.at("output_dir").get<std::string>();

        const auto& sch = j.at("schedule");
        c.schedule = ProbeSchedule{sch.at("segment1_us").get<double>() * us,
                                   sch.at("gap_us").get<double>() * us,
                                   sch.at("segment2_us").get<double>() * us,
                                   sch.at("sample_period_us").get<double>() * us};
        const auto& pump = j.at("pumping");
        c.pumping = PumpingModel{pump.at("beta").get<double>(),
                                 pump.at("tau_at_us").get<double>() * us,
                                 pump.at("tau_loss_us").get<double>() * us};
        const auto& trap = j.at("trap");
        c.trap_minimum_radius = trap.at("minimum_radius_nm").get<double>() * nm;
        c.trap_depth = trap.at("depth_uk").get<double>() * k_boltzmann * uk;
        c.trap_blue_decay = trap.at("blue_decay_nm").get<double>() * nm;
        c.trap_red_decay = trap.at("red_decay_nm").get<double>() * nm;

        const auto& coup = j.at("coupling");
        c.coupling =
            CouplingProfile{coup.at("peak_phase_per_atom_mrad").get<double>() * mrad,
                            coup.at("probe_decay_length_nm").get<double>() * nm,
                            c.trap_minimum_radius};
        const auto& ram = j.at("ramsey");
        c.ramsey = RamseyContrastParams{ram.at("eta0").get<double>(),
                                        ram.at("eta_inf").get<double>(),
                                        ram.at("tau_recovery_us").get<double>() * us};
        const auto& ens = j.at("ensemble");
        c.mean_atom_number = ens.at("mean_atom_number").get<double>();
        c.loading_model = ens.at("loading").get<std::string>();
        c.loading_kappa = ens.at("loading_kappa").get<double>();
        c.temperature = ens.at("temperature_uk").get<double>() * uk;
        c.phase_shot_noise = ens.at("phase_shot_noise_mrad").get<double>() * mrad;
        c.inhomogeneity = ens.at("inhomogeneity").get<std::string>();
        c.coupling_scale = ens.at("coupling_scale").get<double>();

        const auto& traj = j.at("trajectory");
        c.trajectory_time_step = traj.at("time_step_us").get<double>() * us;
        c.trajectory_pool_size = traj.at("pool_size").get<std::size_t>();

        const auto& scan = j.at("noise_scan");
        c.scan_shots = scan.at("shots").get<std::size_t>();
        c.scan_atoms_min = scan.at("atoms_min").get<long>();
        c.scan_atoms_max = scan.at("atoms_max").get<long>();
        c.scan_bin_size = scan.at("bin_size").get<std::size_t>();

        const auto& cov = j.at("covariance");
        c.covariance_group_atoms = cov.at("group_atoms").get<std::vector<long>>();
        c.covariance_shots_per_group = cov.at("shots_per_group").get<std::size_t>();

        const auto& qnd_j = j.at("qnd");
        c.qnd_calibration_shots = qnd_j.at("calibration_shots").get<std::size_t>();
        c.qnd_shots = qnd_j.at("shots").get<std::size_t>();

        const auto& cal = j.at("calibration");
        c.calibration_group_atoms = cal.at("group_atoms").get<std::vector<long>>();
        c.calibration_shots_per_group = cal.at("shots_per_group").get<std::size_t>();
        c.calibration_trace_duration = cal.at("trace_duration_us").get<double>() * us;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

// Environment overrides: QNDSIM_<SECTION>_<KEY> (upper case) replaces the
// corresponding leaf; values are parsed as JSON (so arrays work too).
void apply_env_overrides(json& j, const std::string& prefix) {
    for (auto& [key, value] : j.items()) {
        std::string name = prefix + "_" + key;
        for (char& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (value.is_object()) {
            apply_env_overrides(value, prefix + "_" + key);
            continue;
        }
        if (const char* env = std::getenv(name.c_str())) {
            json parsed = json::parse(env, nullptr, false);
            if (parsed.is_discarded())
                value = std::string(env);
            else
                value = parsed;
        }
    }
}

}  // namespace

PipelineConfig::PipelineConfig() {
    schema_version = qnd::schema_version;
    trap_depth = 70.0 * k_boltzmann * uk;  // 70 uK
}

TrapPotential PipelineConfig::trap() const {
    return TrapPotential::from_geometry(trap_minimum_radius, trap_depth, trap_blue_decay,
                                        trap_red_decay);
}

EnsembleConfig PipelineConfig::make_ensemble() const {
    EnsembleConfig ens;
    ens.mean_atom_number = mean_atom_number;
    if (loading_model == "fixed")
        ens.loading = LoadingModel::fixed;
    else if (loading_model == "poisson")
        ens.loading = LoadingModel::poisson;
    else if (loading_model == "scaled")
        ens.loading = LoadingModel::scaled;
    else
        throw ConfigError("config: unknown loading model '" + loading_model + "'");
    ens.loading_kappa = loading_kappa;
    ens.temperature = temperature;
    ens.phase_shot_noise = phase_shot_noise;
    if (inhomogeneity == "none")
        ens.coupling_mode = CouplingMode::homogeneous;
    else if (inhomogeneity == "static")
        ens.coupling_mode = CouplingMode::thermal_static;
    else if (inhomogeneity == "motion")
        ens.coupling_mode = CouplingMode::motion;
    else
        throw ConfigError("config: unknown inhomogeneity mode '" + inhomogeneity + "'");
    ens.coupling_scale = coupling_scale;
    ens.atom_mass = cesium_mass;
    ens.trap = trap();
    ens.coupling = coupling;
    ens.coupling.reference_radius = trap_minimum_radius;
    ens.pumping = pumping;
    return ens;
}

std::string PipelineConfig::canonical_json() const {
    return to_json(*this).dump(2);  // nlohmann objects keep keys sorted
}

std::string PipelineConfig::hash() const {
    const std::string text = canonical_json();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void PipelineConfig::validate() const {
    try {
        schedule.validate();
        pumping.validate();
        trap().validate();
        CouplingProfile c = coupling;
        c.reference_radius = trap_minimum_radius;
        c.validate();
        make_ensemble();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (mean_atom_number < 0.0 || phase_shot_noise <= 0.0)
        throw ConfigError("config: atom number must be >= 0 and shot noise > 0");
    if (scan_atoms_min < 0 || scan_atoms_max <= scan_atoms_min)
        throw ConfigError("config: invalid noise-scan atom range");
    if (trajectory_pool_size == 0) throw ConfigError("config: pool_size must be positive");
}

PipelineConfig PipelineConfig::load(const std::string& path, bool apply_env) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return from_json_text(text.str(), apply_env);
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text, bool apply_env) {
    json merged = to_json(PipelineConfig{});  // defaults
    json given = json::parse(text, nullptr, false);
    if (given.is_discarded()) throw ConfigError("config: invalid JSON");
    merged.merge_patch(given);
    if (apply_env) apply_env_overrides(merged, "QNDSIM");
    PipelineConfig cfg;
    from_json(merged, cfg);
    cfg.validate();
    return cfg;
}

}  // namespace qnd
