#include "balk/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "balk/errors.hpp"
#include "balk/numerics.hpp"

namespace balk {

namespace {

constexpr double kLogTiny = -690.7755278982137;  // log(1e-300)

// Families whose log joining probability is a log of a directly computed value.
bool needs_clamp(const PatienceModel& m) {
    if (const auto* nm = std::get_if<NoisyMultiplicative>(&m)) return nm->factor == NoiseFactor::Gamma;
    return std::holds_alternative<LognormalPatience>(m) || std::holds_alternative<GammaPatience>(m);
}

bool dropped(const PatienceModel& m, double log_h) {
    if (!(log_h > -std::numeric_limits<double>::infinity())) return true;
    return needs_clamp(m) && log_h < kLogTiny;
}

struct Moments {
    double m0;  // int_u^v e^{-b y} dy
    double m1;  // int_u^v y e^{-b y} dy
    double m2;  // int_u^v y^2 e^{-b y} dy
};

Moments exp_moments(double b, double u, double v, bool second) {
    const double delta = v - u;
    if (!(delta > 0.0)) return {0.0, 0.0, 0.0};
    const double x = b * delta;
    const double eu = std::exp(-b * u);
    const double e0 = poisson_tail(0, x);
    const double e1 = poisson_tail(1, x);
    Moments m;
    m.m0 = eu * e0 / b;
    m.m1 = eu * (u * e0 / b + e1 / (b * b));
    m.m2 = second ? eu * (u * u * e0 / b + 2.0 * u * e1 / (b * b) + 2.0 * poisson_tail(2, x) / (b * b * b)) : 0.0;
    return m;
}

void require_obs(const ObservationSeq& obs) {
    if (obs.size() == 0) throw ParameterError("likelihood needs at least one observation");
    if (obs.w.size() != obs.a.size() + 1 || obs.x.size() != obs.w.size())
        throw ParameterError("observation sequence has inconsistent lengths");
}

}  // namespace

std::vector<double> observation_terms(double lambda, const PatienceModel& model, const ObservationSeq& obs) {
    if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
    require_obs(obs);
    const std::size_t n = obs.size();
    const double log_lambda = std::log(lambda);
    std::vector<double> terms(n, log_lambda);
    long used = 0;
    for (std::size_t i = 1; i <= n; ++i) {
        const double log_h = log_joining_prob(model, obs.w[i]);
        if (dropped(model, log_h)) continue;
        ++used;
        const double v = obs.w[i - 1] + obs.x[i - 1];
        terms[i - 1] += log_h - lambda * partial_integral(model, v, obs.a[i - 1]);
    }
    if (used == 0) throw DegenerateLikelihoodError("every observation has zero joining probability");
    return terms;
}

double loglik(double lambda, const PatienceModel& model, const ObservationSeq& obs) {
    const auto terms = observation_terms(lambda, model, obs);
    return pairwise_sum(terms);
}

double profile_lambda(const PatienceModel& model, const ObservationSeq& obs) {
    require_obs(obs);
    const std::size_t n = obs.size();
    std::vector<double> integrals;
    integrals.reserve(n);
    for (std::size_t i = 1; i <= n; ++i) {
        if (dropped(model, log_joining_prob(model, obs.w[i]))) continue;
        integrals.push_back(partial_integral(model, obs.w[i - 1] + obs.x[i - 1], obs.a[i - 1]));
    }
    if (integrals.empty()) throw DegenerateLikelihoodError("every observation has zero joining probability");
    const double total = pairwise_sum(integrals);
    if (!(total > 0.0)) throw DegenerateLikelihoodError("integrated joining probability is zero");
    return static_cast<double>(n) / total;
}

LikelihoodReport grad_exponential(double lambda, double theta, const ObservationSeq& obs) {
    if (!(theta > 0.0) || !std::isfinite(theta)) throw ParameterError("exponential rate must be positive");
    if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
    require_obs(obs);
    const std::size_t n = obs.size();
    LikelihoodReport r;
    r.rows.resize(static_cast<Eigen::Index>(n), 2);
    std::vector<double> terms(n);
    std::vector<double> h_lt(n);
    std::vector<double> h_tt(n);
    const double log_lambda = std::log(lambda);
    for (std::size_t i = 1; i <= n; ++i) {
        const double v = obs.w[i - 1] + obs.x[i - 1];
        const double a = obs.a[i - 1];
        const double w = obs.w[i];
        const double u = std::max(v - a, 0.0);
        const Moments m = v > 0.0 ? exp_moments(theta, u, v, true) : Moments{0.0, 0.0, 0.0};
        const double integral = m.m0 + std::max(a - v, 0.0);
        const auto k = static_cast<Eigen::Index>(i - 1);
        terms[i - 1] = log_lambda - theta * w - lambda * integral;
        r.rows(k, 0) = 1.0 / lambda - integral;
        r.rows(k, 1) = -w + lambda * m.m1;
        h_lt[i - 1] = m.m1;
        h_tt[i - 1] = -lambda * m.m2;
    }
    r.used = static_cast<long>(n);
    r.loglik = pairwise_sum(terms);
    r.gradient.resize(2);
    for (int c = 0; c < 2; ++c) {
        std::vector<double> col(r.rows.col(c).data(), r.rows.col(c).data() + n);
        r.gradient(c) = pairwise_sum(col);
    }
    r.hessian.resize(2, 2);
    r.hessian(0, 0) = -static_cast<double>(n) / (lambda * lambda);
    r.hessian(0, 1) = r.hessian(1, 0) = pairwise_sum(h_lt);
    r.hessian(1, 1) = pairwise_sum(h_tt);
    return r;
}

LikelihoodReport grad_ghe(double lambda, const Ghe& model, const ObservationSeq& obs) {
    if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
    if (model.alpha.size() != model.beta.size() || model.alpha.empty())
        throw ParameterError("GHE alpha/beta size mismatch");
    if (!ghe_feasible(model.alpha, model.beta)) throw ParameterError("GHE parameters are infeasible");
    require_obs(obs);
    const std::size_t n = obs.size();
    const std::size_t p = model.alpha.size();
    const auto dim = static_cast<Eigen::Index>(1 + 2 * p);
    const double bmin = *std::min_element(model.beta.begin(), model.beta.end());
    const double log_lambda = std::log(lambda);

    LikelihoodReport r;
    r.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), dim);
    std::vector<double> terms(n, log_lambda);
    std::vector<double> ratio(p);
    for (std::size_t i = 1; i <= n; ++i) {
        const auto row = static_cast<Eigen::Index>(i - 1);
        const double w = obs.w[i];
        double inner = 0.0;
        for (std::size_t k = 0; k < p; ++k) {
            ratio[k] = w > 0.0 ? std::exp(-(model.beta[k] - bmin) * w) : 1.0;
            inner += model.alpha[k] * ratio[k];
        }
        if (!(inner > 0.0)) {
            r.rows(row, 0) = 1.0 / lambda;
            continue;
        }
        ++r.used;
        const double log_h = w > 0.0 ? -bmin * w + std::log(inner) : 0.0;
        const double v = obs.w[i - 1] + obs.x[i - 1];
        const double a = obs.a[i - 1];
        const double u = std::max(v - a, 0.0);
        double integral = std::max(a - v, 0.0);
        for (std::size_t k = 0; k < p; ++k) {
            const Moments m = v > 0.0 ? exp_moments(model.beta[k], u, v, false) : Moments{0.0, 0.0, 0.0};
            integral += model.alpha[k] * m.m0;
            const double share = ratio[k] / inner;  // e^{-beta_k W} / H(W)
            r.rows(row, static_cast<Eigen::Index>(1 + k)) = share - lambda * m.m0;
            r.rows(row, static_cast<Eigen::Index>(1 + p + k)) =
                -w * model.alpha[k] * share + lambda * model.alpha[k] * m.m1;
        }
        r.rows(row, 0) = 1.0 / lambda - integral;
        terms[i - 1] += log_h - lambda * integral;
    }
    if (r.used == 0) throw DegenerateLikelihoodError("every observation has zero joining probability");
    r.loglik = pairwise_sum(terms);
    r.gradient.resize(dim);
    std::vector<double> col(n);
    for (Eigen::Index c = 0; c < dim; ++c) {
        for (std::size_t i = 0; i < n; ++i) col[i] = r.rows(static_cast<Eigen::Index>(i), c);
        r.gradient(c) = pairwise_sum(col);
    }
    return r;
}

}  // namespace balk
