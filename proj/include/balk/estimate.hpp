#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "balk/dist.hpp"
#include "balk/sim.hpp"
#include "balk/types.hpp"

namespace balk {

inline const std::vector<double> kDefaultLevels{0.80, 0.90, 0.95, 0.99};

struct Interval {
    double level = 0.95;
    double lower = 0.0;
    double upper = 0.0;
};

struct ParamEstimate {
    std::string name;
    double value = 0.0;
    double std_error = 0.0;  // 0 when not available
    std::vector<Interval> ci;
};

struct FitResult {
    std::string family;
    PatienceModel model;
    double lambda = 0.0;
    bool lambda_estimated = false;
    std::vector<ParamEstimate> params;  // lambda first when estimated
    double loglik = 0.0;
    long n = 0;
    Eigen::MatrixXd fisher;          // (1/n) sum of score outer products
    Eigen::MatrixXd fisher_hessian;  // -(1/n) Hessian where available
    int k = 0;                       // free parameters in the AIC
    double aic = 0.0;
    int iterations = 0;
    bool converged = false;
    bool boundary = false;
    int restarts = 0;
    double asymptotic_variance = 0.0;  // constant patience: variance of the n-scaled error
    double error_rate = 0.0;           // constant patience: rate of the exponential limit law
    std::vector<std::string> warnings;

    const ParamEstimate& param(const std::string& name) const;
};

nlohmann::json to_json(const FitResult& fit);

struct FisherSummary {
    Eigen::MatrixXd info;        // (1/n) sum g g^T
    Eigen::MatrixXd covariance;  // (info)^{-1} / n
    bool singular = false;
};

/// Empirical Fisher information from per-observation score rows. Falls back to
/// the pseudo-inverse (with `singular` set) when the matrix is not invertible.
FisherSummary fisher_info(const Eigen::MatrixXd& rows);

/// Symmetric normal intervals value +- z * se at each level.
std::vector<Interval> normal_intervals(double value, double se, const std::vector<double>& levels = kDefaultLevels);

struct ConstantFitOptions {
    std::optional<ServiceModel> service;  // enables the limit-law interval when s = 1
    double h = 1e-3;
};

/// theta = max W_i; lambda from the profile likelihood at theta.
FitResult fit_constant(const ObservationSeq& obs, const ConstantFitOptions& options = {});

struct ExponentialFitOptions {
    std::optional<double> lambda;  // known rate; joint estimation otherwise
    double theta_lo = 1e-6;
    double theta_hi = 1e3;
    double tol = 1e-9;
};

FitResult fit_exponential(const ObservationSeq& obs, const ExponentialFitOptions& options = {});

struct GheFitOptions {
    std::optional<double> lambda;
    int starts = 8;
    std::uint64_t seed = 2024;
    bool hyperexponential = false;  // require positive weights
    double inner_tol = 1e-8;
    int max_sweeps = 200;
    int outer_iterations = 100;
};

/// Nested maximization: coordinate ascent over log(beta) given alpha, L-BFGS
/// over the free weights, several deterministic starts.
FitResult fit_ghe(const ObservationSeq& obs, int p, const GheFitOptions& options = {});

struct HeuristicOptions {
    std::optional<double> lambda;
    int trials = 50;
    int p_min = 1;
    int p_max = 10;
    std::uint64_t seed = 2024;
    int forced_p = 0;  // > 0 fixes p
};

struct HeuristicTrial {
    int p = 0;
    bool feasible = false;
    double aic = 0.0;
    double loglik = 0.0;
};

struct HeuristicResult {
    FitResult best;
    std::vector<HeuristicTrial> trials;
};

/// Random weight vectors, beta optimized for each, model with the smallest AIC kept.
HeuristicResult fit_ghe_heuristic(const ObservationSeq& obs, const HeuristicOptions& options = {});

struct RateEstimate {
    double value = 0.0;
    long events = 0;
    double exposure = 0.0;
    std::vector<Interval> ci;
};

/// lambda = sum E / sum I with exact Poisson (gamma quantile) intervals.
RateEstimate lambda_idle(const std::vector<IdlePeriod>& idle, const std::vector<double>& levels = kDefaultLevels);

struct DiscreteFit {
    std::vector<double> lambda_q;  // NaN for unvisited states
    std::vector<double> time_in;
    std::vector<long> up;
    double theta = 0.0;
    std::vector<std::string> warnings;
};

/// Per-state arrival rates (up-transitions / time) and a least-squares fit of
/// the joining survival lambda_q / lambda against the one-parameter family.
DiscreteFit fit_discrete(const DiscreteTrace& trace, double lambda, DiscreteFamily family);

struct ScaledStepFit {
    FitResult fit;
    long exceed = 0;      // K: observations with W_i > w
    double exposure = 0;  // M: sum of min(A_i, (v_i - w)^+)
};

ScaledStepFit fit_scaled_step(const ObservationSeq& obs, double lambda, double w);

struct PricingFit {
    double r = 0.0;
    double c = 0.0;
    std::vector<Interval> r_ci;
    std::vector<Interval> c_ci;
};

struct PricingInput {
    double theta = 0.0;
    double price = 0.0;
    long n = 0;           // sample size behind theta (0: no interval)
    double rate = 0.0;    // limit-law rate v(theta)/(1 - P_loss)
};

/// Invert theta(p) = (r - p) / c from two prices.
PricingFit fit_pricing(const PricingInput& first, const PricingInput& second, std::uint64_t seed = 7,
                       int draws = 20000);

/// One-dimensional MLE of the threshold of a noisy family with known noise.
FitResult fit_noisy(const ObservationSeq& obs, double lambda, const PatienceModel& noise);

}  // namespace balk
