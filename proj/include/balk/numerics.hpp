#pragma once

#include <functional>
#include <span>
#include <vector>

namespace balk {

/// Adaptive Gauss-Kronrod (15-point) integral of f over [a, b] to the given
/// absolute tolerance. Infinite upper limit is allowed.
double adaptive_integrate(const std::function<double(double)>& f, double a, double b, double abs_tol = 1e-10);

/// Pairwise (cascade) summation; result depends only on the input order.
double pairwise_sum(std::span<const double> values);

double normal_cdf(double z);
/// log(Phi(z)), accurate far into the lower tail where Phi underflows.
double log_normal_cdf(double z);
double normal_quantile(double p);

/// Quantile of Gamma(shape, rate = 1).
double gamma_quantile(double shape, double p);

/// P(Poisson(x) > k) = 1 - e^{-x} sum_{j<=k} x^j / j!, accurate for small x.
double poisson_tail(int k, double x);

/// Linear interpolation of samples on the uniform grid x_k = k * h.
double interpolate_uniform(std::span<const double> values, double h, double x);

}  // namespace balk
