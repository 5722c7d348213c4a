#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "balk/estimate.hpp"
#include "balk/sim.hpp"

namespace balk {

SimConfig sim_config_from_json(const nlohmann::json& j, const SimConfig& base = {});

/// Estimator names: exponential, exponential_known, constant, idle, ghe:<p>,
/// he:<p>, heuristic. Throws ValidationError for anything else.
void check_estimator_name(const std::string& name);

/// Fits one named estimator to an observation sequence. `service` enables the
/// limit-law interval of the constant-patience estimator.
FitResult fit_by_name(const std::string& name, const ObservationSeq& obs, std::optional<ServiceModel> service,
                      std::uint64_t seed, std::optional<double> lambda);

struct ExperimentCase {
    std::string label;
    SimConfig config;
};

struct ExperimentSpec {
    std::string scenario = "custom";
    std::vector<ExperimentCase> cases;
    // exponential, exponential_known, constant, idle, ghe:<p>, he:<p>, heuristic
    std::vector<std::string> estimators{"exponential", "idle"};
    int replications = 1;
    std::vector<double> levels = kDefaultLevels;
    int jobs = 1;
    std::uint64_t master_seed = 1;
    std::string out = "results";
};

/// Accepts {"scenario", "sim": {...}, "cases": [{"label", ...overrides}],
/// "estimators", "replications", "levels", "jobs", "seed", "out"}.
ExperimentSpec experiment_spec_from_json(const nlohmann::json& j);

/// One estimate of one parameter in one replication.
struct EstimateRow {
    std::size_t case_index = 0;
    int replication = 0;
    std::uint64_t seed = 0;
    std::string estimator;
    std::string param;
    double value = 0.0;
    double std_error = 0.0;
};

struct FailureRow {
    std::size_t case_index = 0;
    int replication = 0;
    std::string estimator;
    std::string message;
};

struct SummaryRow {
    std::size_t case_index = 0;
    std::string estimator;
    std::string param;
    double level = 0.95;
    double lower = 0.0;
    double upper = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double truth = 0.0;     // NaN when the configuration does not pin the parameter
    double coverage = 0.0;  // normal-approximation rows only
    long count = 0;
};

struct ExperimentResult {
    ExperimentSpec spec;
    std::vector<EstimateRow> estimates;  // sorted by (case, replication, estimator order)
    std::vector<FailureRow> failures;
    std::vector<SummaryRow> percentile;  // empirical percentiles of the replication estimates
    std::vector<SummaryRow> normal;      // averaged per-replication normal intervals
    long attempted = 0;

    double failure_fraction() const;
};

inline std::uint64_t replication_seed(std::uint64_t master, int k) {
    return master ^ static_cast<std::uint64_t>(k);
}

/// Runs every (case, replication) pipeline simulate -> reconstruct -> fit.
/// Replication failures are recorded, not thrown.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// Writes estimates.csv, percentile_ci.csv, normal_ci.csv and failures.csv.
void write_experiment(const ExperimentResult& result, const std::string& dir);

/// Evenly spaced grid containing both endpoints once.
std::vector<double> make_grid(double lo, double hi, int points);

struct FitCurve {
    std::string name;
    std::vector<double> x;
    std::vector<double> truth;
    std::vector<double> fit;
    double sup_norm = 0.0;
};

FitCurve emit_fit_curves(const PatienceModel& fit, const PatienceModel& truth, const std::vector<double>& grid);
void write_curve_csv(std::ostream& out, const FitCurve& curve);

struct CurveSpec {
    SimConfig sim;
    std::vector<std::string> fits{"ghe:1", "ghe:2", "ghe:4", "heuristic"};
    double lo = 0.0;
    double hi = 20.0;
    int points = 401;
    bool lambda_known = false;
};

CurveSpec curve_spec_from_json(const nlohmann::json& j);

/// Simulates once and fits every requested model to the same observations.
std::vector<std::pair<FitResult, FitCurve>> run_curves(const CurveSpec& spec);

}  // namespace balk
