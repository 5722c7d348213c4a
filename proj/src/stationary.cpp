#include "balk/stationary.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <ostream>

#include <fftw3.h>
#include <fmt/format.h>

#include "balk/errors.hpp"
#include "balk/numerics.hpp"

namespace balk {

namespace {

constexpr double kTermTol = 1e-10;
constexpr int kMaxTerms = 10000;
constexpr double kTailTol = 1e-10;
constexpr double kStartRange = 50.0;
constexpr double kMaxRange = 200.0;

std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
}

// Trapezoid convolution against a fixed kernel on a uniform grid:
// (f * g)(x_k) ~ h [sum_j f_j g_{k-j} - (f_0 g_k + f_k g_0) / 2].
class Convolver {
public:
    Convolver(const std::vector<double>& kernel, double h) : n_(kernel.size()), h_(h), g_(kernel) {
        len_ = 1;
        while (len_ < 2 * n_) len_ <<= 1;
        const std::size_t nc = len_ / 2 + 1;
        real_ = fftw_alloc_real(len_);
        spec_ = fftw_alloc_complex(nc);
        kernel_spec_.resize(nc);
        {
            std::lock_guard<std::mutex> lock(plan_mutex());
            fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(len_), real_, spec_, FFTW_ESTIMATE);
            bwd_ = fftw_plan_dft_c2r_1d(static_cast<int>(len_), spec_, real_, FFTW_ESTIMATE);
        }
        load(kernel);
        fftw_execute(fwd_);
        for (std::size_t k = 0; k < nc; ++k) kernel_spec_[k] = {spec_[k][0], spec_[k][1]};
    }
    Convolver(const Convolver&) = delete;
    Convolver& operator=(const Convolver&) = delete;
    ~Convolver() {
        std::lock_guard<std::mutex> lock(plan_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(bwd_);
        fftw_free(real_);
        fftw_free(spec_);
    }

    std::vector<double> apply(const std::vector<double>& f) {
        load(f);
        fftw_execute(fwd_);
        const std::size_t nc = len_ / 2 + 1;
        for (std::size_t k = 0; k < nc; ++k) {
            const std::complex<double> z = std::complex<double>(spec_[k][0], spec_[k][1]) * kernel_spec_[k];
            spec_[k][0] = z.real();
            spec_[k][1] = z.imag();
        }
        fftw_execute(bwd_);
        std::vector<double> out(n_);
        const double scale = h_ / static_cast<double>(len_);
        for (std::size_t k = 0; k < n_; ++k)
            out[k] = scale * real_[k] - 0.5 * h_ * (f[0] * g_[k] + f[k] * g_[0]);
        return out;
    }

private:
    void load(const std::vector<double>& f) {
        std::copy(f.begin(), f.end(), real_);
        std::fill(real_ + n_, real_ + len_, 0.0);
    }

    std::size_t n_;
    std::size_t len_ = 1;
    double h_;
    std::vector<double> g_;
    std::vector<std::complex<double>> kernel_spec_;
    double* real_ = nullptr;
    fftw_complex* spec_ = nullptr;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

double trapezoid(const std::vector<double>& f, double h, std::size_t upto) {
    if (upto == 0) return 0.0;
    double s = 0.5 * (f[0] + f[upto]);
    for (std::size_t k = 1; k < upto; ++k) s += f[k];
    return s * h;
}

double trapezoid(const std::vector<double>& f, double h) {
    return trapezoid(f, h, f.size() - 1);
}

// Node values with jumps replaced by the mean of the one-sided limits.
template <class F>
std::vector<double> nodes(F&& f, std::size_t n, double h) {
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double x = h * static_cast<double>(k);
        const double right = f(std::nextafter(x, kInf));
        const double left = k == 0 ? right : f(x);
        out[k] = 0.5 * (left + right);
    }
    return out;
}

std::vector<double> joining_nodes(const PatienceModel& patience, std::size_t n, double h) {
    auto out = nodes([&](double x) { return joining_prob(patience, x); }, n, h);
    out[0] = 1.0;
    return out;
}

std::vector<double> service_nodes(const ServiceModel& service, std::size_t n, double h) {
    return nodes([&](double x) { return equilibrium_density(service, x); }, n, h);
}

// Mass beyond the last node for a density with a roughly exponential tail.
double tail_mass(const std::vector<double>& v, double h) {
    const std::size_t last = v.size() - 1;
    if (!(v[last] > 0.0)) return 0.0;
    const auto back = std::min<std::size_t>(last, static_cast<std::size_t>(std::lround(1.0 / h)));
    const double earlier = v[last - back];
    if (!(earlier > v[last])) return kInf;
    const double rate = std::log(earlier / v[last]) / (h * static_cast<double>(back));
    return v[last] / rate;
}

std::size_t grid_size(double x_max, double h) {
    if (!(h > 0.0)) throw ParameterError("grid step must be positive");
    const auto n = static_cast<std::size_t>(std::llround(x_max / h));
    if (n < 2) throw ParameterError("grid needs at least two intervals");
    return n + 1;
}

void finish(StationaryProfile& p, const std::vector<double>& hn) {
    for (double& x : p.v) x = std::max(x, 0.0);
    std::vector<double> lost(p.v.size());
    for (std::size_t k = 0; k < p.v.size(); ++k) lost[k] = p.v[k] * (1.0 - hn[k]);
    p.p_loss = std::clamp(trapezoid(lost, p.h), 0.0, 1.0);
    p.w.resize(p.v.size());
    for (std::size_t k = 0; k < p.v.size(); ++k) p.w[k] = p.v[k] * hn[k] / (1.0 - p.p_loss);
}

void check_single_server_inputs(double lambda, const ServiceModel& service, const PatienceModel& patience) {
    if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
    validate(service);
    validate(patience);
}

StationaryProfile volterra_on(double lambda, const ServiceModel& service, const PatienceModel& patience, double h,
                              double x_max) {
    const std::size_t n = grid_size(x_max, h);
    StationaryProfile p;
    p.h = h;
    p.rho = lambda * mean_service(service);
    const std::vector<double> ge = service_nodes(service, n, h);
    const std::vector<double> hn = joining_nodes(patience, n, h);
    Convolver conv(ge, h);

    std::vector<double> u(n);
    for (std::size_t k = 0; k < n; ++k) u[k] = p.rho * ge[k];
    std::vector<double> sum = u;
    double total = trapezoid(u, h);
    std::vector<double> f(n);
    int terms = 1;
    while (true) {
        if (terms >= kMaxTerms)
            throw DivergenceError(fmt::format("Volterra series did not converge within {} terms", kMaxTerms));
        for (std::size_t k = 0; k < n; ++k) f[k] = u[k] * hn[k];
        u = conv.apply(f);
        for (double& x : u) x *= p.rho;
        ++terms;
        const double mass = trapezoid(u, h);
        if (!std::isfinite(mass) || mass > 1e200)
            throw DivergenceError(fmt::format("Volterra series blew up at term {}", terms));
        for (std::size_t k = 0; k < n; ++k) sum[k] += u[k];
        total += mass;
        if (std::abs(mass) < kTermTol) break;
    }
    p.terms = terms;
    p.pi0 = 1.0 / (1.0 + total);
    p.v.resize(n);
    for (std::size_t k = 0; k < n; ++k) p.v[k] = p.pi0 * sum[k];
    finish(p, hn);
    return p;
}

template <class Solve>
StationaryProfile with_auto_range(Solve&& solve, double x_max) {
    if (x_max > 0.0) return solve(x_max);
    for (double range = kStartRange;; range *= 2.0) {
        const double r = std::min(range, kMaxRange);
        StationaryProfile p = solve(r);
        if (tail_mass(p.v, p.h) < kTailTol || r >= kMaxRange) return p;
    }
}

}  // namespace

double StationaryProfile::density(double x) const {
    if (x < 0.0 || x > x_max()) return 0.0;
    return interpolate_uniform(v, h, x);
}

double StationaryProfile::limit_rate(double theta0) const {
    return density(theta0) / (1.0 - p_loss);
}

StationaryProfile solve_volterra(double lambda, const ServiceModel& service, const PatienceModel& patience, double h,
                                 double x_max) {
    check_single_server_inputs(lambda, service, patience);
    const double rho = lambda * mean_service(service);
    if (rho * infinite_patience_mass(patience) >= 1.0)
        throw DivergenceError(fmt::format("no stationary law: rho * P(Y = inf) = {}", rho * infinite_patience_mass(patience)));
    return with_auto_range([&](double r) { return volterra_on(lambda, service, patience, h, r); }, x_max);
}

StationaryProfile exp_service_closed_form(double lambda, double mu, const PatienceModel& patience, double h,
                                          double x_max) {
    if (!(mu > 0.0)) throw ParameterError("service rate must be positive");
    check_single_server_inputs(lambda, ExponentialService{mu}, patience);
    if (lambda * infinite_patience_mass(patience) >= mu)
        throw InstabilityError("normalization integral diverges: lambda P(Y = inf) >= mu");

    auto log_kernel = [&](double x) { return -mu * x + lambda * cumulative_joining(patience, x); };
    auto kernel = [&](double x) { return std::exp(log_kernel(x)); };

    // Break points where the joining probability has a kink or jump.
    double split = 0.0;
    if (const auto* d = std::get_if<Deterministic>(&patience)) split = std::isfinite(d->theta) ? d->theta : 0.0;
    if (const auto* s = std::get_if<ScaledStep>(&patience)) split = s->w;

    auto integral_from = [&](double a) {
        double total = 0.0;
        double lo = a;
        if (split > lo) {
            total += adaptive_integrate(kernel, lo, split, 1e-14);
            lo = split;
        }
        const double chunk = 10.0 / mu;
        for (int i = 0; i < 100000; ++i) {
            const double piece = adaptive_integrate(kernel, lo, lo + chunk, 1e-15);
            if (!std::isfinite(piece)) break;
            total += piece;
            lo += chunk;
            if (piece <= 1e-16 * total) return total;
        }
        throw InstabilityError("normalization integral for the exponential-service density diverges");
    };

    const double mass = integral_from(0.0);
    const double pi0 = 1.0 / (1.0 + lambda * mass);

    auto build = [&](double r) {
        const std::size_t n = grid_size(r, h);
        StationaryProfile p;
        p.h = h;
        p.rho = lambda / mu;
        p.pi0 = pi0;
        p.terms = 0;
        p.v.resize(n);
        for (std::size_t k = 0; k < n; ++k) p.v[k] = pi0 * lambda * kernel(h * static_cast<double>(k));
        finish(p, joining_nodes(patience, n, h));
        return p;
    };
    if (x_max > 0.0) return build(x_max);
    double range = kStartRange;
    while (range < kMaxRange && pi0 * lambda * integral_from(range) >= kTailTol) range *= 2.0;
    return build(std::min(range, kMaxRange));
}

StationaryProfile constant_patience_closed_form(double lambda, const ServiceModel& service, double theta0, double h,
                                                double x_max) {
    check_single_server_inputs(lambda, service, Deterministic{theta0});
    if (!(theta0 > 0.0) || !std::isfinite(theta0)) throw ParameterError("theta0 must be positive and finite");
    if (!(h > 0.0)) throw ParameterError("grid step must be positive");
    const auto kt = static_cast<std::size_t>(std::max(1L, std::lround(theta0 / h)));
    const double step = theta0 / static_cast<double>(kt);
    const double rho = lambda * mean_service(service);

    auto solve = [&](double r) {
        const std::size_t n = grid_size(std::max(r, theta0 + step), step);
        const std::vector<double> ge = service_nodes(service, n, step);
        Convolver conv(ge, step);

        // Sle(x) = sum_m rho^m g_e^(m)(x) on [0, theta0]; the tail beyond theta0 is never needed.
        std::vector<double> gm = ge;
        std::vector<double> sle(n, 0.0);
        double cdf_sum = 0.0;  // sum_m rho^m G_e^(m)(theta0)
        double weight = rho;
        int terms = 0;
        while (true) {
            if (terms >= kMaxTerms)
                throw DivergenceError(fmt::format("convolution-power series did not converge within {} terms", kMaxTerms));
            ++terms;
            const double cdf = trapezoid(gm, step, kt);
            const double mass = weight * cdf;
            if (!std::isfinite(mass) || mass > 1e200) throw DivergenceError("convolution-power series blew up");
            for (std::size_t k = 0; k <= kt; ++k) sle[k] += weight * gm[k];
            cdf_sum += mass;
            if (mass < kTermTol) break;
            std::fill(gm.begin() + static_cast<std::ptrdiff_t>(kt) + 1, gm.end(), 0.0);
            gm = conv.apply(gm);
            weight *= rho;
        }
        StationaryProfile p;
        p.h = step;
        p.rho = rho;
        p.terms = terms;
        p.pi0 = 1.0 / (1.0 + rho + rho * cdf_sum);

        // Right branch: pi0 rho [g_e + (Sle 1{<= theta0}) * g_e]; the truncation
        // jump sits on the node theta0 and enters with half weight.
        std::vector<double> cut(n, 0.0);
        for (std::size_t k = 0; k < kt; ++k) cut[k] = sle[k];
        cut[kt] = 0.5 * sle[kt];
        const std::vector<double> tail = conv.apply(cut);
        p.v.resize(n);
        for (std::size_t k = 0; k < n; ++k)
            p.v[k] = k <= kt ? p.pi0 * sle[k] : p.pi0 * rho * (ge[k] + tail[k]);
        finish(p, joining_nodes(Deterministic{theta0}, n, step));
        return p;
    };
    return with_auto_range(solve, x_max);
}

void write_profile_csv(std::ostream& out, const StationaryProfile& profile) {
    out << "x,v,w\n";
    for (std::size_t k = 0; k < profile.v.size(); ++k)
        out << fmt::format("{:.10g},{:.12g},{:.12g}\n", profile.h * static_cast<double>(k), profile.v[k], profile.w[k]);
}

}  // namespace balk
