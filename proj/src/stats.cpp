#include "balk/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "balk/errors.hpp"
#include "balk/numerics.hpp"

namespace balk {

double kolmogorov_survival(double t) {
    if (t <= 0.0) return 1.0;
    if (t < 1.0) {
        // Small-t form: P(K <= t) = sqrt(2 pi)/t * sum exp(-(2k-1)^2 pi^2 / (8 t^2)).
        const double c = std::numbers::pi * std::numbers::pi / (8.0 * t * t);
        double cdf = 0.0;
        for (int k = 1; k <= 20; ++k) {
            const double m = 2.0 * k - 1.0;
            cdf += std::exp(-m * m * c);
        }
        cdf *= std::sqrt(2.0 * std::numbers::pi) / t;
        return std::clamp(1.0 - cdf, 0.0, 1.0);
    }
    double s = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * t * t);
        s += (k % 2 == 1 ? term : -term);
        if (term < 1e-18) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

KsResult ks_one_sample(std::vector<double> sample, const std::function<double(double)>& cdf) {
    if (sample.empty()) throw ParameterError("ks_one_sample: empty sample");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    const double rn = std::sqrt(n);
    return {d, kolmogorov_survival(d * (rn + 0.12 + 0.11 / rn))};
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw ParameterError("ks_two_sample: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    const double ne = std::sqrt(na * nb / (na + nb));
    return {d, kolmogorov_survival(d * (ne + 0.12 + 0.11 / ne))};
}

double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return pairwise_sum(x) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

double quantile(std::vector<double> x, double p) {
    if (x.empty()) throw ParameterError("quantile of empty sample");
    std::sort(x.begin(), x.end());
    const double pos = p * static_cast<double>(x.size() - 1);
    const auto k = static_cast<std::size_t>(std::floor(pos));
    if (k + 1 >= x.size()) return x.back();
    const double frac = pos - static_cast<double>(k);
    return x[k] + frac * (x[k + 1] - x[k]);
}

double batch_means_se(std::span<const double> series, int batches) {
    const std::size_t per = series.size() / static_cast<std::size_t>(batches);
    if (per == 0) throw ParameterError("batch_means_se: series shorter than batch count");
    std::vector<double> means;
    for (int b = 0; b < batches; ++b) means.push_back(mean(series.subspan(b * per, per)));
    return std::sqrt(variance(means) / static_cast<double>(batches));
}

}  // namespace balk
