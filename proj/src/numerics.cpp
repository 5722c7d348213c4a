#include "balk/numerics.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <numbers>

#include "balk/errors.hpp"

namespace balk {

namespace {

double integrate_split(const std::function<double(double)>& f, double a, double b, double abs_tol, int splits) {
    using Rule = boost::math::quadrature::gauss_kronrod<double, 15>;
    // Boost's tolerance is relative to the running estimate; ask for a little
    // more than the absolute target needs and cap the depth, since roundoff
    // keeps the error estimate from shrinking below ~1e-15 |I|.
    const double scale = std::max(std::abs(b - a), 1.0);
    double error = 0.0;
    const double value = Rule::integrate(f, a, b, 15, std::max(1e-12, 0.1 * abs_tol / scale), &error);
    if (!std::isfinite(value)) throw DivergenceError("adaptive_integrate: non-finite integral");
    if (error > abs_tol && splits > 0 && std::isfinite(b)) {
        // Kinks the first pass straddled: split at the midpoint and retry.
        const double mid = 0.5 * (a + b);
        return integrate_split(f, a, mid, 0.5 * abs_tol, splits - 1) +
               integrate_split(f, mid, b, 0.5 * abs_tol, splits - 1);
    }
    return value;
}

}  // namespace

double adaptive_integrate(const std::function<double(double)>& f, double a, double b, double abs_tol) {
    if (!(b > a)) return 0.0;
    return integrate_split(f, a, b, abs_tol, 6);
}

double pairwise_sum(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n <= 16) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

double log_normal_cdf(double z) {
    if (z > -30.0) return std::log(normal_cdf(z));
    // Asymptotic expansion of the Mills ratio.
    const double z2 = z * z;
    const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    return -0.5 * z2 - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

double normal_quantile(double p) {
    static const boost::math::normal_distribution<double> standard;
    return boost::math::quantile(standard, p);
}

double gamma_quantile(double shape, double p) {
    return boost::math::gamma_p_inv(shape, p);
}

double poisson_tail(int k, double x) {
    if (x <= 0.0) return 0.0;
    if (k == 0) return -std::expm1(-x);
    if (x < 0.5) {
        // e^{-x} sum_{j>k} x^j / j!
        double term = 1.0;
        for (int j = 1; j <= k + 1; ++j) term *= x / j;
        double sum = 0.0;
        for (int j = k + 1; j < k + 40 && term > 1e-18 * sum; ++j) {
            sum += term;
            term *= x / (j + 1);
        }
        return std::exp(-x) * sum;
    }
    double partial = 1.0;
    double term = 1.0;
    for (int j = 1; j <= k; ++j) {
        term *= x / j;
        partial += term;
    }
    return -std::expm1(-x) - std::exp(-x) * (partial - 1.0);
}

double interpolate_uniform(std::span<const double> values, double h, double x) {
    if (values.empty()) return 0.0;
    if (x <= 0.0) return values.front();
    const double pos = x / h;
    const auto k = static_cast<std::size_t>(pos);
    if (k + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(k);
    return values[k] + frac * (values[k + 1] - values[k]);
}

}  // namespace balk
