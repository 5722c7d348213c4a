#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"

#include "balk/errors.hpp"
#include "balk/estimate.hpp"
#include "balk/likelihood.hpp"
#include "balk/numerics.hpp"
#include "balk/stationary.hpp"
#include "balk/stats.hpp"
#include "oracles.hpp"

using namespace balk;

namespace {

ObservationSeq simulate_obs(double lambda, ServiceModel service, PatienceModel patience, long n, std::uint64_t seed,
                            int s = 1) {
    SimConfig c;
    c.lambda = lambda;
    c.s = s;
    c.service = service;
    c.patience = patience;
    c.n_effective = n;
    c.seed = seed;
    return simulate(c).truth.obs;
}

// P(Poisson(m) <= k) by direct summation.
double poisson_cdf(long k, double m) {
    double term = std::exp(-m);
    double s = term;
    for (long j = 1; j <= k; ++j) {
        term *= m / static_cast<double>(j);
        s += term;
    }
    return s;
}

// Exact Poisson-rate bounds by bisection on the Poisson cdf.
std::pair<double, double> poisson_rate_bounds(long e, double exposure, double level) {
    const double tail = 0.5 * (1.0 - level);
    auto solve = [](auto f) {
        double lo = 0.0;
        double hi = 1e3;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (lo + hi);
            (f(mid) ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    };
    const double lower = e == 0 ? 0.0 : solve([&](double m) { return 1.0 - poisson_cdf(e - 1, m) < tail; });
    const double upper = solve([&](double m) { return poisson_cdf(e, m) > tail; });
    return {lower / exposure, upper / exposure};
}

}  // namespace

TEST_CASE("constant patience estimate is the sample maximum") {
    ObservationSeq obs;
    obs.w = {0.2, 1.7, 0.9};
    obs.x = {1.0, 0.5, 0.4};
    obs.a = {0.3, 1.3};
    const FitResult f = fit_constant(obs);
    CHECK(f.param("theta").value == 1.7);
    CHECK(std::get<Deterministic>(f.model).theta == 1.7);
    CHECK(f.loglik == loglik(f.lambda, f.model, obs));
    CHECK_FALSE(f.warnings.empty());
}

TEST_CASE("constant patience limit law") {
    const StationaryProfile prof = constant_patience_closed_form(1.0, ExponentialService{1.0}, 3.0);
    const double rate = prof.limit_rate(3.0);
    CHECK(rate == doctest::Approx(0.25).epsilon(1e-4));
    CHECK(1.0 / (rate * rate) == doctest::Approx(16.0).epsilon(1e-3));

    const ObservationSeq obs = simulate_obs(1.0, ExponentialService{1.0}, Deterministic{3.0}, 20000, 3);
    ConstantFitOptions opt;
    opt.service = ExponentialService{1.0};
    const FitResult f = fit_constant(obs, opt);
    const double theta = f.param("theta").value;
    CHECK(theta <= 3.0);
    CHECK(theta > 2.99);
    CHECK(f.error_rate == doctest::Approx(0.25).epsilon(0.05));
    CHECK(f.asymptotic_variance == doctest::Approx(16.0).epsilon(0.1));
    for (const auto& ci : f.param("theta").ci) {
        CHECK(ci.lower == theta);
        CHECK(ci.upper == doctest::Approx(theta - std::log1p(-ci.level) / (20000.0 * f.error_rate)));
    }
    CHECK(f.param("lambda").value == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("constant patience estimate is non-decreasing in the sample size") {
    const ObservationSeq obs = simulate_obs(1.0, ExponentialService{1.0}, Deterministic{2.0}, 3000, 5);
    double prev = 0.0;
    for (std::size_t n = 2; n <= 3000; n += 97) {
        ObservationSeq head;
        head.a.assign(obs.a.begin(), obs.a.begin() + static_cast<long>(n));
        head.w.assign(obs.w.begin(), obs.w.begin() + static_cast<long>(n) + 1);
        head.x.assign(obs.x.begin(), obs.x.begin() + static_cast<long>(n) + 1);
        const double theta = fit_constant(head).param("theta").value;
        CHECK(theta >= prev);
        prev = theta;
    }
}

TEST_CASE("profile lambda for a single exponential observation") {
    ObservationSeq obs;
    obs.a = {1.0};
    obs.w = {0.5, 1.0};
    obs.x = {1.5, 0.3};
    const double lh = profile_lambda(Exponential{1.0}, obs);
    const double integral = oracle::integrate([](double u) { return std::exp(-(2.0 - u)); }, 0.0, 1.0);
    CHECK(lh == doctest::Approx(1.0 / integral).epsilon(1e-10));
    CHECK(lh == doctest::Approx(4.30026).epsilon(1e-5));
}

TEST_CASE("exponential fit recovers the truth and reports consistent results") {
    const ObservationSeq obs = simulate_obs(1.0, GammaService{1.0, 1.0}, Exponential{0.5}, 20000, 7);
    const FitResult f = fit_exponential(obs);
    const double theta = std::get<Exponential>(f.model).theta;
    CHECK(std::abs(theta - 0.5) <= 4.0 * f.param("theta").std_error);
    CHECK(std::abs(f.lambda - 1.0) <= 4.0 * f.param("lambda").std_error);
    CHECK(f.converged);
    CHECK_FALSE(f.boundary);
    CHECK(f.loglik == loglik(f.lambda, f.model, obs));
    CHECK(f.aic == doctest::Approx(2.0 * 2 - 2.0 * f.loglik));
    CHECK(f.fisher.rows() == 2);
    CHECK((f.fisher - f.fisher.transpose()).norm() == 0.0);
    CHECK(f.fisher.ldlt().isPositive());
    for (const auto& p : f.params)
        for (const auto& ci : p.ci) CHECK(ci.lower <= ci.upper);

    // The profiled maximum beats nearby theta values.
    for (double t : {theta * 0.98, theta * 1.02}) {
        const PatienceModel m = Exponential{t};
        CHECK(loglik(profile_lambda(m, obs), m, obs) < f.loglik);
    }

    ExponentialFitOptions known;
    known.lambda = 1.0;
    const FitResult g = fit_exponential(obs, known);
    CHECK(g.k == 1);
    CHECK_FALSE(g.lambda_estimated);
    CHECK(std::abs(std::get<Exponential>(g.model).theta - 0.5) <= 4.0 * g.param("theta").std_error);
}

TEST_CASE("exponential fit without balking lands on the lower boundary") {
    const ObservationSeq obs = simulate_obs(1.0, ExponentialService{2.0}, Deterministic{kInf}, 2000, 9);
    const FitResult f = fit_exponential(obs);
    CHECK(f.boundary);
    CHECK_FALSE(f.converged);
    CHECK(std::get<Exponential>(f.model).theta == doctest::Approx(1e-6).epsilon(1e-3));
    CHECK_FALSE(f.warnings.empty());
}

TEST_CASE("empirical Fisher information agrees with the Hessian") {
    const ObservationSeq obs = simulate_obs(1.0, GammaService{1.0, 1.0}, Exponential{0.5}, 100000, 11);
    const LikelihoodReport r = grad_exponential(1.0, 0.5, obs);
    const auto n = r.rows.rows();
    const FisherSummary fi = fisher_info(r.rows);
    const Eigen::MatrixXd hess = -r.hessian / static_cast<double>(n);
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            std::vector<double> prod(static_cast<std::size_t>(n));
            for (Eigen::Index i = 0; i < n; ++i) prod[static_cast<std::size_t>(i)] = r.rows(i, a) * r.rows(i, b);
            const double se = batch_means_se(prod);
            CHECK(std::abs(fi.info(a, b) - hess(a, b)) <= 3.0 * se);
        }
    }
}

TEST_CASE("one-parameter interval from gradients of variance four") {
    constexpr int n = 400;
    Eigen::MatrixXd rows(n, 1);
    for (int i = 0; i < n; ++i) rows(i, 0) = i % 2 == 0 ? 2.0 : -2.0;
    const FisherSummary fi = fisher_info(rows);
    CHECK(fi.info(0, 0) == doctest::Approx(4.0));
    const double se = std::sqrt(fi.covariance(0, 0));
    const auto ci = normal_intervals(1.0, se, {0.95});
    CHECK(0.5 * (ci[0].upper - ci[0].lower) == doctest::Approx(1.959963984540054 / (2.0 * std::sqrt(n))).epsilon(1e-12));
}

TEST_CASE("singular information falls back to the pseudo-inverse") {
    Eigen::MatrixXd rows(10, 2);
    for (int i = 0; i < 10; ++i) rows(i, 0) = rows(i, 1) = i - 4.5;
    const FisherSummary fi = fisher_info(rows);
    CHECK(fi.singular);
    CHECK(fi.covariance.allFinite());
    CHECK((fi.info * fi.covariance * 10.0 * fi.info - fi.info).norm() <= 1e-9 * fi.info.norm());
}

TEST_CASE("normal intervals cover the truth at the nominal rate") {
    int covered = 0;
    constexpr int reps = 500;
    for (int k = 0; k < reps; ++k) {
        const ObservationSeq obs =
            simulate_obs(1.0, GammaService{1.0, 1.0}, Exponential{0.5}, 1000, 5000 + static_cast<std::uint64_t>(k));
        const FitResult f = fit_exponential(obs);
        for (const auto& ci : f.param("theta").ci)
            if (ci.level == 0.95 && ci.lower <= 0.5 && 0.5 <= ci.upper) ++covered;
    }
    CHECK(std::abs(static_cast<double>(covered) / reps - 0.95) <= 0.02);
}

TEST_CASE("idle-period rate estimator") {
    const RateEstimate r = lambda_idle({{1, 0.5}, {1, 1.0}, {2, 0.5}});
    CHECK(r.value == 2.0);
    CHECK(r.events == 4);
    CHECK(r.exposure == 2.0);
    for (const auto& ci : r.ci) {
        const auto [lo, hi] = poisson_rate_bounds(4, 2.0, ci.level);
        CHECK(ci.lower == doctest::Approx(lo).epsilon(1e-9));
        CHECK(ci.upper == doctest::Approx(hi).epsilon(1e-9));
    }
    CHECK_THROWS_AS(lambda_idle({}), ParameterError);

    SimConfig c;
    c.lambda = 1.0;
    c.service = ExponentialService{2.0};
    c.patience = Deterministic{kInf};
    c.n_effective = 200000;
    c.seed = 13;
    const auto idle = idle_periods(simulate(c).truth);
    REQUIRE(idle.size() >= 100000);
    CHECK(std::abs(lambda_idle(idle).value - 1.0) <= 0.01);
}

TEST_CASE("discrete estimator rates") {
    DiscreteTrace t;
    t.q = {0, 1, 0, 1, 0, 1, 0, 1, 0};
    t.hold = {0.5, 0.2, 0.5, 0.2, 0.5, 0.2, 0.5, 0.2};
    const DiscreteFit f = fit_discrete(t, 2.0, DiscreteFamily::Geometric);
    REQUIRE(f.lambda_q.size() == 1);
    CHECK(f.lambda_q[0] == 2.0);
    CHECK(f.time_in[0] == 2.0);
    CHECK(f.up[0] == 4);

    DiscreteTrace high;
    high.q = {2, 3, 2, 3};
    high.hold = {1.0, 1.0, 1.0};
    const DiscreteFit g = fit_discrete(high, 1.0, DiscreteFamily::Geometric);
    CHECK(g.warnings.size() >= 2);
    CHECK(std::isnan(g.lambda_q[0]));

    DiscreteTrace bad;
    bad.q = {0, 2};
    bad.hold = {1.0};
    CHECK_THROWS_AS(fit_discrete(bad, 1.0, DiscreteFamily::Geometric), ParameterError);
}

TEST_CASE("discrete estimator recovers geometric thinning") {
    const double lambda = 1.5;
    const double theta = 0.2;
    const DiscreteTrace t = simulate_birth_death(lambda, DiscreteFamily::Geometric, theta, 2000000, 17);
    const DiscreteFit f = fit_discrete(t, lambda, DiscreteFamily::Geometric);
    REQUIRE(f.lambda_q.size() > 5);
    for (long q = 0; q <= 5; ++q) {
        const double truth = lambda * std::pow(1.0 - theta, static_cast<double>(q));
        CHECK(std::abs(f.lambda_q[static_cast<std::size_t>(q)] / truth - 1.0) <= 0.05);
    }
    CHECK(std::abs(f.theta - theta) <= 0.02);

    const DiscreteTrace patient = simulate_birth_death(0.6, DiscreteFamily::Geometric, 0.0, 2000000, 19);
    const DiscreteFit p = fit_discrete(patient, 0.6, DiscreteFamily::Geometric);
    for (long q = 0; q <= 5; ++q) CHECK(std::abs(p.lambda_q[static_cast<std::size_t>(q)] / 0.6 - 1.0) <= 0.05);
    CHECK(p.theta <= 0.01);
}

TEST_CASE("scaled-step proportion") {
    const ObservationSeq obs = simulate_obs(1.0, ExponentialService{1.0}, ScaledStep{0.4, 1.0}, 10000, 23);
    const ScaledStepFit f = fit_scaled_step(obs, 1.0, 1.0);
    const double theta = std::get<ScaledStep>(f.fit.model).theta;
    CHECK(std::abs(theta - 0.4) <= 0.03);
    CHECK(f.fit.loglik == loglik(1.0, f.fit.model, obs));
    // First-order condition K / (1 - theta) = lambda M.
    CHECK(static_cast<double>(f.exceed) / (1.0 - theta) == doctest::Approx(f.exposure).epsilon(1e-8));

    const ObservationSeq patient = simulate_obs(1.0, ExponentialService{1.5}, ScaledStep{0.0, 1.0}, 10000, 29);
    const ScaledStepFit z = fit_scaled_step(patient, 1.0, 1.0);
    CHECK(std::get<ScaledStep>(z.fit.model).theta <= 0.03);

    ObservationSeq low;
    low.a = {1.0, 1.0};
    low.w = {0.0, 0.0, 0.0};
    low.x = {0.5, 0.4, 0.2};
    CHECK_THROWS_AS(fit_scaled_step(low, 1.0, 1.0), FitError);
}

TEST_CASE("pricing inversion") {
    const PricingFit f = fit_pricing({2.0, 1.0}, {1.0, 3.0});
    CHECK(f.r == doctest::Approx(5.0));
    CHECK(f.c == doctest::Approx(2.0));
    CHECK((5.0 - 1.0) / 2.0 == 2.0);
    CHECK((5.0 - 3.0) / 2.0 == 1.0);

    const double r = 5.0;
    const double c = 2.0;
    const PricingFit exact = fit_pricing({(r - 0.5) / c, 0.5}, {(r - 2.0) / c, 2.0});
    CHECK(exact.r == doctest::Approx(r).epsilon(1e-14));
    CHECK(exact.c == doctest::Approx(c).epsilon(1e-14));

    CHECK_THROWS_AS(fit_pricing({2.0, 1.0}, {2.0, 3.0}), FitError);
    CHECK_THROWS_AS(fit_pricing({2.0, 1.0}, {1.0, 1.0}), ParameterError);
}

TEST_CASE("pricing from simulated constant-patience data") {
    ConstantFitOptions opt;
    opt.service = ExponentialService{1.0};
    const FitResult a =
        fit_constant(simulate_obs(1.0, ExponentialService{1.0}, Deterministic{2.0}, 10000, 31), opt);
    const FitResult b =
        fit_constant(simulate_obs(1.0, ExponentialService{1.0}, Deterministic{1.0}, 10000, 37), opt);
    const PricingFit f = fit_pricing({a.param("theta").value, 1.0, a.n, a.error_rate},
                                     {b.param("theta").value, 3.0, b.n, b.error_rate});
    CHECK(std::abs(f.r - 5.0) <= 0.05);
    CHECK(std::abs(f.c - 2.0) <= 0.05);
    REQUIRE(f.r_ci.size() == 4);
    CHECK(f.r_ci.back().lower <= 5.0);
    CHECK(f.r_ci.back().upper >= 5.0);
}

TEST_CASE("noisy threshold estimates") {
    const ObservationSeq det = simulate_obs(1.0, ExponentialService{1.0}, Deterministic{3.0}, 5000, 41);
    const FitResult sharp = fit_noisy(det, 1.0, NoisyAdditive{1.0, 1e-6});
    CHECK(std::abs(std::get<NoisyAdditive>(sharp.model).theta - fit_constant(det).param("theta").value) <= 1e-3);

    const ObservationSeq obs = simulate_obs(1.0, ExponentialService{1.0}, NoisyAdditive{3.0, 0.5}, 10000, 43);
    const FitResult f = fit_noisy(obs, 1.0, NoisyAdditive{1.0, 0.5});
    CHECK(std::abs(std::get<NoisyAdditive>(f.model).theta - 3.0) <= 0.05);
    CHECK(f.param("theta").std_error > 0.0);
    CHECK(f.loglik == loglik(1.0, f.model, obs));
    CHECK(joining_prob(f.model, std::get<NoisyAdditive>(f.model).theta) == 0.5);

    const ObservationSeq mobs =
        simulate_obs(1.0, ExponentialService{1.0}, NoisyMultiplicative{2.0, 0.3}, 10000, 47);
    const FitResult m = fit_noisy(mobs, 1.0, NoisyMultiplicative{1.0, 0.3});
    CHECK(std::abs(std::get<NoisyMultiplicative>(m.model).theta - 2.0) <= 4.0 * m.param("theta").std_error);

    CHECK_THROWS_AS(fit_noisy(obs, 1.0, Exponential{1.0}), ParameterError);
}

TEST_CASE("fit result JSON") {
    const ObservationSeq obs = simulate_obs(1.0, GammaService{1.0, 1.0}, Exponential{0.5}, 500, 53);
    const nlohmann::json j = to_json(fit_exponential(obs));
    CHECK(j.at("family") == "exponential");
    CHECK(j.at("params").size() == 2);
    CHECK(j.at("params")[0].at("ci").size() == 4);
    CHECK(j.at("fisher").size() == 2);
}
