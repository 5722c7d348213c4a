#include "balk/dist.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "balk/errors.hpp"
#include "balk/numerics.hpp"

namespace balk {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const char* what) {
    if (!ok) throw ParameterError(what);
}

// Checks that do not need a grid scan; run on every evaluation.
void check_cheap(const PatienceModel& model) {
    std::visit(Overloaded{
                   [](const Deterministic& m) { require(m.theta >= 0.0, "deterministic patience must be >= 0"); },
                   [](const Exponential& m) {
                       require(m.theta > 0.0 && std::isfinite(m.theta), "exponential rate must be positive");
                   },
                   [](const Ghe& m) {
                       require(!m.alpha.empty() && m.alpha.size() == m.beta.size(), "GHE alpha/beta size mismatch");
                       for (double b : m.beta) require(b > 0.0 && std::isfinite(b), "GHE rates must be positive");
                       for (double a : m.alpha) require(std::isfinite(a), "GHE weights must be finite");
                   },
                   [](const ScaledStep& m) {
                       require(m.theta >= 0.0 && m.theta <= 1.0, "scaled-step proportion must lie in [0,1]");
                       require(m.w > 0.0 && std::isfinite(m.w), "scaled-step threshold must be positive");
                   },
                   [](const NoisyAdditive& m) {
                       require(std::isfinite(m.theta), "noisy threshold must be finite");
                       require(m.sigma > 0.0, "noise sigma must be positive");
                   },
                   [](const NoisyMultiplicative& m) {
                       require(m.theta > 0.0 && std::isfinite(m.theta), "noisy threshold must be positive");
                       require(m.spread > 0.0, "noise spread must be positive");
                   },
                   [](const LognormalPatience& m) { require(m.sigma > 0.0, "lognormal sigma must be positive"); },
                   [](const GammaPatience& m) {
                       require(m.shape > 0.0 && m.rate > 0.0, "gamma patience parameters must be positive");
                   },
               },
               model);
}

double ghe_survival(const Ghe& m, double x) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.alpha.size(); ++k) s += m.alpha[k] * std::exp(-m.beta[k] * x);
    return s;
}

// psi(z) = z Phi(z) + phi(z), an antiderivative of Phi.
double psi(double z) {
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return z * normal_cdf(z) + phi;
}

// Joining probability for x > 0 (callers handle x <= 0).
double survival_positive(const PatienceModel& model, double x) {
    return std::visit(Overloaded{
                          [x](const Deterministic& m) { return x <= m.theta ? 1.0 : 0.0; },
                          [x](const Exponential& m) { return std::exp(-m.theta * x); },
                          [x](const Ghe& m) { return std::clamp(ghe_survival(m, x), 0.0, 1.0); },
                          [x](const ScaledStep& m) { return x <= m.w ? 1.0 : 1.0 - m.theta; },
                          [x](const NoisyAdditive& m) { return normal_cdf((m.theta - x) / m.sigma); },
                          [x](const NoisyMultiplicative& m) {
                              if (m.factor == NoiseFactor::Lognormal) {
                                  const double s = m.spread;
                                  return normal_cdf((std::log(m.theta / x) + 0.5 * s * s) / s);
                              }
                              const double k = 1.0 / (m.spread * m.spread);
                              return boost::math::gamma_p(k, k * m.theta / x);
                          },
                          [x](const LognormalPatience& m) { return normal_cdf(-(std::log(x) - m.mu) / m.sigma); },
                          [x](const GammaPatience& m) { return boost::math::gamma_q(m.shape, m.rate * x); },
                      },
                      model);
}

// E[min(Y, x)] for patience laws with a closed form; NaN otherwise.
double limited_mean(const PatienceModel& model, double x) {
    if (x <= 0.0) return 0.0;
    const auto lognormal = [x](double c, double s) {
        const double lx = std::log(x);
        return std::exp(c + 0.5 * s * s) * normal_cdf((lx - c - s * s) / s) + x * normal_cdf((c - lx) / s);
    };
    return std::visit(Overloaded{
                          [&](const NoisyMultiplicative& m) {
                              const double s = m.spread;
                              if (m.factor == NoiseFactor::Lognormal) return lognormal(std::log(m.theta) + 0.5 * s * s, s);
                              const double k = 1.0 / (s * s);
                              if (!(k > 1.0)) return std::nan("");
                              const double scale = k * m.theta;
                              return scale / (k - 1.0) * boost::math::gamma_q(k - 1.0, scale / x) +
                                     x * boost::math::gamma_p(k, scale / x);
                          },
                          [&](const LognormalPatience& m) { return lognormal(m.mu, m.sigma); },
                          [&](const GammaPatience& m) {
                              return m.shape / m.rate * boost::math::gamma_p(m.shape + 1.0, m.rate * x) +
                                     x * boost::math::gamma_q(m.shape, m.rate * x);
                          },
                          [](const auto&) { return std::nan(""); },
                      },
                      model);
}

// Integral of the joining probability over [x0, x1], 0 <= x0 <= x1.
double segment_integral(const PatienceModel& model, double x0, double x1) {
    if (!(x1 > x0)) return 0.0;
    return std::visit(
        Overloaded{
            [&](const Deterministic& m) { return std::max(0.0, std::min(x1, m.theta) - x0); },
            [&](const Exponential& m) { return std::exp(-m.theta * x0) * -std::expm1(-m.theta * (x1 - x0)) / m.theta; },
            [&](const Ghe& m) {
                double s = 0.0;
                for (std::size_t k = 0; k < m.alpha.size(); ++k) {
                    const double b = m.beta[k];
                    s += m.alpha[k] * std::exp(-b * x0) * -std::expm1(-b * (x1 - x0)) / b;
                }
                return s;
            },
            [&](const ScaledStep& m) {
                const double above = std::max(0.0, x1 - std::max(x0, m.w));
                return (x1 - x0) - m.theta * above;
            },
            [&](const NoisyAdditive& m) {
                return m.sigma * (psi((m.theta - x0) / m.sigma) - psi((m.theta - x1) / m.sigma));
            },
            [&](const auto&) {
                const double hi = limited_mean(model, x1);
                if (!std::isnan(hi)) return std::max(0.0, hi - limited_mean(model, x0));
                return adaptive_integrate([&](double y) { return survival_positive(model, y); }, x0, x1, 1e-12);
            },
        },
        model);
}

}  // namespace

void validate(const PatienceModel& model) {
    check_cheap(model);
    if (const auto* g = std::get_if<Ghe>(&model)) {
        double sum = 0.0;
        double scale = 1.0;
        for (double a : g->alpha) {
            sum += a;
            scale += std::abs(a);
        }
        require(std::abs(sum - 1.0) <= 1e-12 * scale, "GHE weights must sum to one");
        require(ghe_feasible(g->alpha, g->beta), "GHE parameters do not define a survival function");
    }
}

std::string family_name(const PatienceModel& model) {
    return std::visit(Overloaded{
                          [](const Deterministic&) { return std::string("deterministic"); },
                          [](const Exponential&) { return std::string("exponential"); },
                          [](const Ghe&) { return std::string("ghe"); },
                          [](const ScaledStep&) { return std::string("scaled_step"); },
                          [](const NoisyAdditive&) { return std::string("noisy_additive"); },
                          [](const NoisyMultiplicative&) { return std::string("noisy_multiplicative"); },
                          [](const LognormalPatience&) { return std::string("lognormal"); },
                          [](const GammaPatience&) { return std::string("gamma"); },
                      },
                      model);
}

double joining_prob(const PatienceModel& model, double x) {
    check_cheap(model);
    if (x <= 0.0) return 1.0;
    return survival_positive(model, x);
}

double log_joining_prob(const PatienceModel& model, double x) {
    check_cheap(model);
    if (x <= 0.0) return 0.0;
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    return std::visit(Overloaded{
                          [x](const Deterministic& m) { return x <= m.theta ? 0.0 : ninf; },
                          [x](const Exponential& m) { return -m.theta * x; },
                          [x](const Ghe& m) {
                              const double bmin = *std::min_element(m.beta.begin(), m.beta.end());
                              double inner = 0.0;
                              for (std::size_t k = 0; k < m.alpha.size(); ++k)
                                  inner += m.alpha[k] * std::exp(-(m.beta[k] - bmin) * x);
                              if (!(inner > 0.0)) return ninf;
                              return -bmin * x + std::log(inner);
                          },
                          [x](const ScaledStep& m) { return x <= m.w ? 0.0 : std::log1p(-m.theta); },
                          [x](const NoisyAdditive& m) { return log_normal_cdf((m.theta - x) / m.sigma); },
                          [x](const NoisyMultiplicative& m) {
                              if (m.factor == NoiseFactor::Lognormal) {
                                  const double s = m.spread;
                                  return log_normal_cdf((std::log(m.theta / x) + 0.5 * s * s) / s);
                              }
                              const double k = 1.0 / (m.spread * m.spread);
                              return std::log(boost::math::gamma_p(k, k * m.theta / x));
                          },
                          [x](const LognormalPatience& m) { return log_normal_cdf(-(std::log(x) - m.mu) / m.sigma); },
                          [x](const GammaPatience& m) { return std::log(boost::math::gamma_q(m.shape, m.rate * x)); },
                      },
                      model);
}

double cumulative_joining(const PatienceModel& model, double x) {
    check_cheap(model);
    if (x <= 0.0) return 0.0;
    return segment_integral(model, 0.0, x);
}

double partial_integral(const PatienceModel& model, double v, double a) {
    check_cheap(model);
    require(a >= 0.0, "partial_integral needs a >= 0");
    if (a == 0.0) return 0.0;
    if (v <= 0.0) return a;
    const double lo = v - a;
    if (lo >= 0.0) return segment_integral(model, lo, v);
    return -lo + segment_integral(model, 0.0, v);
}

bool ghe_feasible(const std::vector<double>& alpha, const std::vector<double>& beta) {
    if (alpha.size() != beta.size() || alpha.empty()) throw ParameterError("ghe_feasible: dimension mismatch");
    double amax = -kInf;
    double mean_rate = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k) {
        if (!(beta[k] > 0.0)) return false;
        amax = std::max(amax, alpha[k]);
        mean_rate += alpha[k] * beta[k];
    }
    if (!(amax > 0.0) || !(mean_rate > 0.0)) return false;
    if (std::all_of(alpha.begin(), alpha.end(), [](double a) { return a >= 0.0; })) return true;

    const double bmin = *std::min_element(beta.begin(), beta.end());
    const double bmax = *std::max_element(beta.begin(), beta.end());
    double lead = 0.0;
    for (std::size_t k = 0; k < alpha.size(); ++k)
        if (beta[k] == bmin) lead += alpha[k];
    if (!(lead > 0.0)) return false;

    // Survival and density scaled by exp(bmin x) so the tail is checked in relative terms.
    const double hi = 20.0 / bmin;
    const double lo = 1e-4 / bmax;
    constexpr int points = 400;
    auto ok_at = [&](double x) {
        double s = 0.0;
        double d = 0.0;
        for (std::size_t k = 0; k < alpha.size(); ++k) {
            const double e = std::exp(-(beta[k] - bmin) * x);
            s += alpha[k] * e;
            d += alpha[k] * beta[k] * e;
        }
        return s >= -1e-12 && d >= -1e-12;
    };
    if (!ok_at(0.0)) return false;
    const double ratio = std::pow(hi / lo, 1.0 / (points - 1));
    double x = lo;
    for (int i = 0; i < points; ++i, x *= ratio)
        if (!ok_at(x)) return false;
    return true;
}

double infinite_patience_mass(const PatienceModel& model) {
    return std::visit(Overloaded{
                          [](const Deterministic& m) { return std::isinf(m.theta) ? 1.0 : 0.0; },
                          [](const ScaledStep& m) { return 1.0 - m.theta; },
                          [](const auto&) { return 0.0; },
                      },
                      model);
}

bool is_noisy(const PatienceModel& model) {
    return std::holds_alternative<NoisyAdditive>(model) || std::holds_alternative<NoisyMultiplicative>(model);
}

double sample_patience(const PatienceModel& model, Rng& rng) {
    check_cheap(model);
    return std::visit(
        Overloaded{
            [](const Deterministic& m) { return m.theta; },
            [&](const Exponential& m) { return -std::log(uniform01(rng)) / m.theta; },
            [&](const Ghe& m) {
                const double u = uniform01(rng);
                const bool mixture = std::all_of(m.alpha.begin(), m.alpha.end(), [](double a) { return a >= 0.0; });
                if (mixture) {
                    double acc = 0.0;
                    std::size_t k = 0;
                    for (; k + 1 < m.alpha.size(); ++k) {
                        acc += m.alpha[k];
                        if (u <= acc) break;
                    }
                    return -std::log(uniform01(rng)) / m.beta[k];
                }
                // Invert the survival function by bisection.
                double lo = 0.0;
                double hi = 1.0 / *std::min_element(m.beta.begin(), m.beta.end());
                while (ghe_survival(m, hi) > u) hi *= 2.0;
                for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
                    const double mid = 0.5 * (lo + hi);
                    (ghe_survival(m, mid) > u ? lo : hi) = mid;
                }
                return 0.5 * (lo + hi);
            },
            [&](const ScaledStep& m) { return uniform01(rng) < m.theta ? m.w : kInf; },
            [](const NoisyAdditive&) -> double {
                throw ParameterError("noisy patience has no latent level; use sample_join");
            },
            [](const NoisyMultiplicative&) -> double {
                throw ParameterError("noisy patience has no latent level; use sample_join");
            },
            [&](const LognormalPatience& m) {
                std::normal_distribution<double> z(0.0, 1.0);
                return std::exp(m.mu + m.sigma * z(rng));
            },
            [&](const GammaPatience& m) {
                std::gamma_distribution<double> g(m.shape, 1.0 / m.rate);
                return g(rng);
            },
        },
        model);
}

bool sample_join(const PatienceModel& model, double v, Rng& rng) {
    if (is_noisy(model)) return uniform01(rng) <= joining_prob(model, v);
    return sample_patience(model, rng) >= v;
}

void validate(const ServiceModel& model) {
    std::visit(Overloaded{
                   [](const GammaService& m) {
                       require(m.shape > 0.0 && m.rate > 0.0, "gamma service parameters must be positive");
                   },
                   [](const ExponentialService& m) { require(m.rate > 0.0, "service rate must be positive"); },
                   [](const DeterministicService& m) {
                       require(m.value > 0.0 && std::isfinite(m.value), "deterministic service must be positive");
                   },
               },
               model);
}

double mean_service(const ServiceModel& model) {
    return std::visit(Overloaded{
                          [](const GammaService& m) { return m.shape / m.rate; },
                          [](const ExponentialService& m) { return 1.0 / m.rate; },
                          [](const DeterministicService& m) { return m.value; },
                      },
                      model);
}

double service_survival(const ServiceModel& model, double x) {
    if (x < 0.0) return 1.0;
    return std::visit(Overloaded{
                          [x](const GammaService& m) { return boost::math::gamma_q(m.shape, m.rate * x); },
                          [x](const ExponentialService& m) { return std::exp(-m.rate * x); },
                          [x](const DeterministicService& m) { return x < m.value ? 1.0 : 0.0; },
                      },
                      model);
}

double equilibrium_density(const ServiceModel& model, double x) {
    if (x < 0.0) return 0.0;
    return service_survival(model, x) / mean_service(model);
}

double sample_service(const ServiceModel& model, Rng& rng) {
    return std::visit(Overloaded{
                          [&](const GammaService& m) {
                              std::gamma_distribution<double> g(m.shape, 1.0 / m.rate);
                              return g(rng);
                          },
                          [&](const ExponentialService& m) { return -std::log(uniform01(rng)) / m.rate; },
                          [](const DeterministicService& m) { return m.value; },
                      },
                      model);
}

namespace {

nlohmann::json number(double x) {
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return x;
}

double read_number(const nlohmann::json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "Infinity") return kInf;
        if (s == "-inf" || s == "-Infinity") return -kInf;
        throw ValidationError("expected a number, got '" + s + "'");
    }
    if (!j.is_number()) throw ValidationError("expected a number");
    return j.get<double>();
}

std::vector<double> read_params(const nlohmann::json& j, std::size_t min_count) {
    if (!j.contains("params") || !j["params"].is_array()) throw ValidationError("model needs a 'params' array");
    std::vector<double> p;
    for (const auto& e : j["params"]) p.push_back(read_number(e));
    if (p.size() < min_count) throw ValidationError("too few params for family");
    return p;
}

}  // namespace

nlohmann::json to_json(const PatienceModel& model) {
    nlohmann::json j;
    j["family"] = family_name(model);
    std::visit(Overloaded{
                   [&](const Deterministic& m) { j["params"] = {number(m.theta)}; },
                   [&](const Exponential& m) { j["params"] = {m.theta}; },
                   [&](const Ghe& m) {
                       nlohmann::json p = nlohmann::json::array();
                       for (double a : m.alpha) p.push_back(a);
                       for (double b : m.beta) p.push_back(b);
                       j["params"] = p;
                   },
                   [&](const ScaledStep& m) { j["params"] = {m.theta, m.w}; },
                   [&](const NoisyAdditive& m) { j["params"] = {m.theta, m.sigma}; },
                   [&](const NoisyMultiplicative& m) {
                       j["params"] = {m.theta, m.spread};
                       j["factor"] = m.factor == NoiseFactor::Lognormal ? "lognormal" : "gamma";
                   },
                   [&](const LognormalPatience& m) { j["params"] = {m.mu, m.sigma}; },
                   [&](const GammaPatience& m) { j["params"] = {m.shape, m.rate}; },
               },
               model);
    return j;
}

nlohmann::json to_json(const ServiceModel& model) {
    nlohmann::json j;
    std::visit(Overloaded{
                   [&](const GammaService& m) {
                       j["family"] = "gamma";
                       j["params"] = {m.shape, m.rate};
                   },
                   [&](const ExponentialService& m) {
                       j["family"] = "exponential";
                       j["params"] = {m.rate};
                   },
                   [&](const DeterministicService& m) {
                       j["family"] = "deterministic";
                       j["params"] = {m.value};
                   },
               },
               model);
    return j;
}

PatienceModel patience_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("family")) throw ValidationError("patience model needs a 'family'");
    const auto family = j["family"].get<std::string>();
    PatienceModel model;
    if (family == "deterministic") {
        model = Deterministic{read_params(j, 1)[0]};
    } else if (family == "exponential") {
        model = Exponential{read_params(j, 1)[0]};
    } else if (family == "ghe" || family == "hyperexponential") {
        const auto p = read_params(j, 2);
        if (p.size() % 2 != 0) throw ValidationError("ghe params must be alpha..., beta...");
        const auto half = static_cast<std::ptrdiff_t>(p.size() / 2);
        model = Ghe{{p.begin(), p.begin() + half}, {p.begin() + half, p.end()}};
    } else if (family == "scaled_step") {
        const auto p = read_params(j, 2);
        model = ScaledStep{p[0], p[1]};
    } else if (family == "noisy_additive") {
        const auto p = read_params(j, 2);
        model = NoisyAdditive{p[0], p[1]};
    } else if (family == "noisy_multiplicative") {
        const auto p = read_params(j, 2);
        NoiseFactor f = NoiseFactor::Lognormal;
        if (j.contains("factor")) {
            const auto name = j["factor"].get<std::string>();
            if (name == "gamma")
                f = NoiseFactor::Gamma;
            else if (name != "lognormal")
                throw ValidationError("unknown noise factor '" + name + "'");
        }
        model = NoisyMultiplicative{p[0], p[1], f};
    } else if (family == "lognormal") {
        const auto p = read_params(j, 2);
        model = LognormalPatience{p[0], p[1]};
    } else if (family == "gamma") {
        const auto p = read_params(j, 2);
        model = GammaPatience{p[0], p[1]};
    } else {
        throw ValidationError("unknown patience family '" + family + "'");
    }
    try {
        validate(model);
    } catch (const ParameterError& e) {
        throw ValidationError(e.what());
    }
    return model;
}

ServiceModel service_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("family")) throw ValidationError("service model needs a 'family'");
    const auto family = j["family"].get<std::string>();
    ServiceModel model;
    if (family == "gamma") {
        const auto p = read_params(j, 2);
        model = GammaService{p[0], p[1]};
    } else if (family == "exponential") {
        model = ExponentialService{read_params(j, 1)[0]};
    } else if (family == "deterministic") {
        model = DeterministicService{read_params(j, 1)[0]};
    } else {
        throw ValidationError("unknown service family '" + family + "'");
    }
    try {
        validate(model);
    } catch (const ParameterError& e) {
        throw ValidationError(e.what());
    }
    return model;
}

}  // namespace balk
