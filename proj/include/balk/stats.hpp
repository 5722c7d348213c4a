#pragma once

#include <functional>
#include <span>
#include <vector>

namespace balk {

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// P(K > t) for the Kolmogorov limit distribution.
double kolmogorov_survival(double t);

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
KsResult ks_one_sample(std::vector<double> sample, const std::function<double(double)>& cdf);
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

double mean(std::span<const double> x);
/// Unbiased sample variance.
double variance(std::span<const double> x);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> x, double p);

/// Standard error of the mean of a correlated series via non-overlapping batch means.
double batch_means_se(std::span<const double> series, int batches = 50);

}  // namespace balk
