#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"

#include "balk/errors.hpp"
#include "balk/numerics.hpp"
#include "balk/optimize.hpp"
#include "balk/stats.hpp"
#include "oracles.hpp"

using namespace balk;

TEST_CASE("adaptive integration") {
    CHECK(adaptive_integrate([](double x) { return std::exp(-x); }, 0.0, 1.0) ==
          doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));
    CHECK(adaptive_integrate([](double x) { return std::exp(-x * x); }, 0.0, std::numeric_limits<double>::infinity()) ==
          doctest::Approx(0.5 * std::sqrt(std::numbers::pi)).epsilon(1e-10));
    const auto f = [](double x) { return std::sqrt(x) * std::cos(3.0 * x); };
    CHECK(std::abs(adaptive_integrate(f, 0.0, 4.0, 1e-11) - oracle::integrate(f, 0.0, 4.0, 1e-13)) <= 1e-9);
    CHECK_THROWS_AS(adaptive_integrate([](double) { return std::nan(""); }, 0.0, 1.0), DivergenceError);
}

TEST_CASE("Poisson tail") {
    for (int k : {0, 1, 2, 5}) {
        for (double x : {1e-8, 1e-3, 0.4, 2.0, 15.0}) {
            long double cdf = 0.0L;
            long double term = std::exp(-static_cast<long double>(x));
            for (int j = 0; j <= k; ++j) {
                cdf += term;
                term *= static_cast<long double>(x) / (j + 1);
            }
            // Direct series of the tail for small x avoids cancellation in the oracle.
            long double tail = 0.0L;
            long double t = std::exp(-static_cast<long double>(x));
            for (int j = 1; j <= k; ++j) t *= static_cast<long double>(x) / j;
            for (int j = k + 1; j < k + 200; ++j) {
                t *= static_cast<long double>(x) / j;
                tail += t;
            }
            const double ref = x < 1.0 ? static_cast<double>(tail) : static_cast<double>(1.0L - cdf);
            CHECK(poisson_tail(k, x) == doctest::Approx(ref).epsilon(1e-12));
        }
    }
}

TEST_CASE("normal and gamma quantiles") {
    for (double p : {1e-10, 0.01, 0.3, 0.5, 0.975}) CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
    CHECK(log_normal_cdf(-40.0) == doctest::Approx(-804.6084420137538).epsilon(1e-10));
    CHECK(gamma_quantile(1.0, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("summation and interpolation") {
    std::vector<double> v(1000, 0.1);
    CHECK(pairwise_sum(v) == doctest::Approx(100.0).epsilon(1e-14));
    const std::vector<double> g{0.0, 1.0, 4.0};
    CHECK(interpolate_uniform(g, 0.5, 0.25) == doctest::Approx(0.5));
    CHECK(interpolate_uniform(g, 0.5, 0.75) == doctest::Approx(2.5));
}

TEST_CASE("one-dimensional searches") {
    const auto f = [](double x) { return -(x - 1.3) * (x - 1.3); };
    CHECK(golden_maximize(f, 0.0, 5.0, 1e-10).x == doctest::Approx(1.3).epsilon(1e-8));
    CHECK(scan_maximize(f, 1e-3, 100.0, 41, true, 1e-10).x == doctest::Approx(1.3).epsilon(1e-8));
    CHECK(scan_maximize([](double x) { return -x; }, 0.5, 2.0, 11, false, 1e-10).x == doctest::Approx(0.5));
    const Search1D r = safeguarded_newton([](double x) { return std::make_pair(2.0 - x * x, -2.0 * x); }, 0.0, 5.0, 1e-14);
    CHECK(r.x == doctest::Approx(std::sqrt(2.0)).epsilon(1e-13));
    CHECK(r.converged);
}

TEST_CASE("limited-memory BFGS on the Rosenbrock function") {
    const auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const double a = 1.0 - x(0);
        const double b = x(1) - x(0) * x(0);
        g.resize(2);
        g(0) = -2.0 * a - 400.0 * x(0) * b;
        g(1) = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    LbfgsOptions opt;
    opt.max_iter = 500;
    opt.grad_tol = 1e-10;
    const LbfgsResult r = lbfgs_minimize(f, Eigen::Vector2d(-1.2, 1.0), opt);
    CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("Kolmogorov-Smirnov tests") {
    CHECK(kolmogorov_survival(1.36) == doctest::Approx(0.0494).epsilon(1e-2));
    std::vector<double> grid;
    for (int i = 0; i < 100; ++i) grid.push_back((i + 0.5) / 100.0);
    const KsResult u = ks_one_sample(grid, [](double x) { return x; });
    CHECK(u.statistic == doctest::Approx(0.005).epsilon(1e-9));
    CHECK(u.p_value > 0.99);
    std::mt19937_64 gen(1);
    std::exponential_distribution<double> e(1.0);
    std::vector<double> a;
    std::vector<double> b;
    for (int i = 0; i < 2000; ++i) {
        a.push_back(e(gen));
        b.push_back(e(gen) * 1.5);
    }
    CHECK(ks_two_sample(a, b).p_value < 1e-6);
    CHECK(ks_one_sample(a, [](double x) { return 1.0 - std::exp(-x); }).p_value > 0.01);
}

TEST_CASE("sample statistics") {
    const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
    CHECK(mean(x) == 2.5);
    CHECK(variance(x) == doctest::Approx(5.0 / 3.0));
    CHECK(quantile(x, 0.5) == doctest::Approx(2.5));
    CHECK(quantile(x, 0.0) == 1.0);
    CHECK(quantile(x, 1.0) == 4.0);
    std::mt19937_64 gen(2);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> iid(100000);
    for (double& v : iid) v = n(gen);
    CHECK(batch_means_se(iid) == doctest::Approx(1.0 / std::sqrt(100000.0)).epsilon(0.3));
}
