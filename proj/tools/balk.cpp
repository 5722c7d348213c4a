#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "balk/errors.hpp"
#include "balk/experiment.hpp"
#include "balk/reconstruct.hpp"
#include "balk/sim.hpp"
#include "balk/trace_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitExperiment = 3;

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw balk::ValidationError("cannot open config " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw balk::ValidationError(path + ": " + e.what());
    }
}

std::ofstream open_in(const fs::path& dir, const std::string& name) {
    fs::create_directories(dir);
    std::ofstream out(dir / name);
    if (!out) throw balk::ValidationError("cannot write " + (dir / name).string());
    return out;
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
    std::string out = "out";
};

int cmd_simulate(const Common& c) {
    balk::SimConfig cfg = balk::sim_config_from_json(load_json(c.config));
    if (c.seed) cfg.seed = *c.seed;
    const balk::SimResult r = balk::simulate(cfg);
    auto trace = open_in(c.out, "trace.csv");
    balk::write_trace_csv(trace, r.trace);
    auto obs = open_in(c.out, "observations.csv");
    balk::write_observations_csv(obs, r.truth.obs);
    json summary{{"seed", cfg.seed},
                 {"effective", r.truth.effective_count},
                 {"potential", r.truth.potential_count},
                 {"balked", r.truth.balked_count},
                 {"loss_fraction", r.truth.loss_fraction}};
    open_in(c.out, "truth.json") << summary.dump(2) << "\n";
    std::cout << fmt::format("{} effective arrivals, loss fraction {:.4f}\n", r.truth.effective_count,
                             r.truth.loss_fraction);
    return 0;
}

int cmd_reconstruct(const Common& c, const std::string& trace_path) {
    const balk::QueueTrace trace = balk::import_trace(trace_path);
    const balk::ObservationSeq obs = balk::reconstruct(trace);
    auto out = open_in(c.out, "observations.csv");
    balk::write_observations_csv(out, obs);
    std::cout << fmt::format("{} observations\n", obs.size());
    return 0;
}

int cmd_fit(const Common& c, const std::string& trace_path, const std::string& estimator,
            std::optional<double> lambda) {
    balk::check_estimator_name(estimator);
    const balk::QueueTrace trace = balk::import_trace(trace_path);
    json j;
    if (estimator == "idle") {
        const balk::RateEstimate r = balk::lambda_idle(balk::idle_periods(trace));
        j = {{"family", "idle"}, {"lambda_tilde", r.value}, {"events", r.events}, {"exposure", r.exposure}};
        json ci = json::array();
        for (const auto& i : r.ci) ci.push_back({{"level", i.level}, {"lower", i.lower}, {"upper", i.upper}});
        j["ci"] = ci;
    } else {
        std::optional<balk::ServiceModel> service;
        if (!c.config.empty()) {
            const json cfg = load_json(c.config);
            if (cfg.contains("service")) service = balk::service_from_json(cfg.at("service"));
        }
        const balk::ObservationSeq obs = balk::reconstruct(trace);
        const balk::FitResult f = balk::fit_by_name(estimator, obs, service, c.seed.value_or(2024), lambda);
        j = balk::to_json(f);
    }
    open_in(c.out, "fit.json") << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_experiment(const Common& c) {
    balk::ExperimentSpec spec = balk::experiment_spec_from_json(load_json(c.config));
    if (c.seed) spec.master_seed = *c.seed;
    if (c.jobs > 0) spec.jobs = c.jobs;
    const std::string dir = c.out.empty() ? spec.out : c.out;
    const balk::ExperimentResult r = balk::run_experiment(spec);
    balk::write_experiment(r, dir);
    std::cout << fmt::format("{}: {} estimates, {} failures of {} fits, written to {}\n", spec.scenario,
                             r.estimates.size(), r.failures.size(), r.attempted, dir);
    if (r.failure_fraction() > 0.05) {
        std::cerr << fmt::format("failure fraction {:.3f} exceeds 0.05; see {}/failures.csv\n", r.failure_fraction(),
                                 dir);
        for (std::size_t i = 0; i < r.failures.size() && i < 5; ++i)
            std::cerr << "  " << r.failures[i].estimator << ": " << r.failures[i].message << "\n";
        return kExitExperiment;
    }
    return 0;
}

int cmd_curves(const Common& c) {
    balk::CurveSpec spec = balk::curve_spec_from_json(load_json(c.config));
    if (c.seed) spec.sim.seed = *c.seed;
    const auto results = balk::run_curves(spec);
    json distances = json::array();
    for (const auto& [fit, curve] : results) {
        std::string file = curve.name;
        for (char& ch : file)
            if (ch == ':') ch = '_';
        auto out = open_in(c.out, "curve_" + file + ".csv");
        balk::write_curve_csv(out, curve);
        distances.push_back({{"fit", curve.name}, {"sup_norm", curve.sup_norm}, {"aic", fit.aic}, {"model", balk::to_json(fit.model)}});
        std::cout << fmt::format("{:<12} sup-norm {:.4f}  AIC {:.2f}\n", curve.name, curve.sup_norm, fit.aic);
    }
    open_in(c.out, "distances.json") << distances.dump(2) << "\n";
    return 0;
}

int cmd_import(const Common& c, const std::string& path) {
    const balk::QueueTrace trace = balk::import_trace(path);
    balk::reconstruct(trace);
    balk::export_trace((fs::path(c.out) / "trace.json").string(), trace);
    std::cout << fmt::format("{} arrivals, {} departures, {} servers, {} initially present\n", trace.arrivals.size(),
                             trace.departures.size(), trace.s, trace.initial_in_system);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulation and estimation for queues with unobserved balking"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", common.config, "JSON configuration");
        if (needs_config) opt->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "master seed");
        sub->add_option("--jobs", common.jobs, "parallel replications");
        sub->add_option("--out", common.out, "output directory");
    };

    auto* simulate = app.add_subcommand("simulate", "simulate a trace");
    add_common(simulate, true);

    std::string trace_path;
    auto* reconstruct = app.add_subcommand("reconstruct", "rebuild (A, W, X) from a trace");
    reconstruct->add_option("trace", trace_path, "trace file (CSV or JSON)")->required();
    add_common(reconstruct, false);

    std::string estimator = "exponential";
    std::optional<double> lambda;
    auto* fit = app.add_subcommand("fit", "fit a patience model to a trace");
    fit->add_option("trace", trace_path, "trace file (CSV or JSON)")->required();
    fit->add_option("--estimator", estimator, "exponential, exponential_known, constant, idle, ghe:<p>, he:<p>, heuristic");
    fit->add_option("--lambda", lambda, "known arrival rate");
    add_common(fit, false);

    auto* experiment = app.add_subcommand("experiment", "run a replication experiment");
    add_common(experiment, true);
    common.out.clear();

    auto* curves = app.add_subcommand("curves", "fit curves against the true patience law");
    add_common(curves, true);

    std::string import_path;
    auto* import = app.add_subcommand("import", "validate an external trace");
    import->add_option("path", import_path, "trace file (CSV or JSON)")->required();
    add_common(import, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }
    if (common.out.empty() && !experiment->parsed()) common.out = "out";

    try {
        if (simulate->parsed()) return cmd_simulate(common);
        if (reconstruct->parsed()) return cmd_reconstruct(common, trace_path);
        if (fit->parsed()) return cmd_fit(common, trace_path, estimator, lambda);
        if (experiment->parsed()) return cmd_experiment(common);
        if (curves->parsed()) return cmd_curves(common);
        if (import->parsed()) return cmd_import(common, import_path);
    } catch (const balk::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const balk::ParameterError& e) {
        std::cerr << "invalid parameter: " << e.what() << "\n";
        return kExitValidation;
    } catch (const balk::TraceIntegrityError& e) {
        std::cerr << "trace integrity: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
