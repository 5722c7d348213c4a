#pragma once

#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "balk/rng.hpp"

namespace balk {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Patience families. All parameters are rates unless noted.
struct Deterministic {
    double theta = kInf;  // patience level, may be +inf
};
struct Exponential {
    double theta = 1.0;  // rate
};
struct Ghe {
    std::vector<double> alpha;  // weights summing to one, may be negative
    std::vector<double> beta;   // positive rates
};
/// Proportion theta has patience w, the rest never balk.
struct ScaledStep {
    double theta = 0.5;
    double w = 1.0;
};
/// Joins when theta - v + eps >= 0 with eps ~ N(0, sigma^2).
struct NoisyAdditive {
    double theta = 1.0;
    double sigma = 1.0;
};
enum class NoiseFactor { Lognormal, Gamma };
/// Joins when v * G <= theta, G a positive unit-mean factor. For the
/// lognormal factor `spread` is the log-sd; for gamma it is the sd of G.
struct NoisyMultiplicative {
    double theta = 1.0;
    double spread = 0.5;
    NoiseFactor factor = NoiseFactor::Lognormal;
};
struct LognormalPatience {
    double mu = 0.0;
    double sigma = 1.0;
};
struct GammaPatience {
    double shape = 1.0;
    double rate = 1.0;
};

using PatienceModel = std::variant<Deterministic, Exponential, Ghe, ScaledStep, NoisyAdditive, NoisyMultiplicative,
                                   LognormalPatience, GammaPatience>;

struct GammaService {
    double shape = 1.0;
    double rate = 1.0;
};
struct ExponentialService {
    double rate = 1.0;
};
struct DeterministicService {
    double value = 1.0;
};

using ServiceModel = std::variant<GammaService, ExponentialService, DeterministicService>;

// --- patience ------------------------------------------------------------

void validate(const PatienceModel& model);
std::string family_name(const PatienceModel& model);

/// P(Y >= x); exactly 1 for x <= 0.
double joining_prob(const PatienceModel& model, double x);

/// log P(Y >= x), -inf where the probability vanishes.
double log_joining_prob(const PatienceModel& model, double x);

/// S(x) = integral of joining_prob over [0, x], x >= 0.
double cumulative_joining(const PatienceModel& model, double x);

/// Integral of joining_prob(v - u) for u in [0, a].
double partial_integral(const PatienceModel& model, double v, double a);

bool ghe_feasible(const std::vector<double>& alpha, const std::vector<double>& beta);

/// P(Y = +inf).
double infinite_patience_mass(const PatienceModel& model);

/// Draw a latent patience level. Noisy families have none; use sample_join.
double sample_patience(const PatienceModel& model, Rng& rng);

/// Decide whether an arrival facing virtual waiting time v joins.
bool sample_join(const PatienceModel& model, double v, Rng& rng);

/// True for families whose joining decision is a Bernoulli draw at v.
bool is_noisy(const PatienceModel& model);

// --- service -------------------------------------------------------------

void validate(const ServiceModel& model);
double mean_service(const ServiceModel& model);
/// P(B > x).
double service_survival(const ServiceModel& model, double x);
/// Equilibrium (residual-life) density P(B > x) / E[B].
double equilibrium_density(const ServiceModel& model, double x);
double sample_service(const ServiceModel& model, Rng& rng);

// --- serialization -------------------------------------------------------

nlohmann::json to_json(const PatienceModel& model);
nlohmann::json to_json(const ServiceModel& model);
PatienceModel patience_from_json(const nlohmann::json& j);
ServiceModel service_from_json(const nlohmann::json& j);

}  // namespace balk
