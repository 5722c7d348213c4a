#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "balk/dist.hpp"
#include "balk/estimate.hpp"
#include "balk/experiment.hpp"
#include "balk/likelihood.hpp"
#include "balk/reconstruct.hpp"
#include "balk/sim.hpp"
#include "balk/stationary.hpp"
#include "balk/stats.hpp"
#include "oracles.hpp"

using namespace balk;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    fmt::print("criterion {:>2} {}: {}  {}\n", id, pass ? "PASS" : "FAIL", name, detail);
    std::fflush(stdout);
}

bool within(double value, double target, double tol) {
    return std::abs(value - target) <= tol;
}

const SummaryRow& find_row(const std::vector<SummaryRow>& rows, const std::string& estimator, const std::string& param,
                           double level) {
    for (const auto& r : rows)
        if (r.estimator == estimator && r.param == param && std::abs(r.level - level) < 1e-12) return r;
    throw std::runtime_error("missing summary row " + estimator + "/" + param);
}

std::vector<double> values_of(const ExperimentResult& r, const std::string& estimator, const std::string& param) {
    std::vector<double> out;
    for (const auto& e : r.estimates)
        if (e.estimator == estimator && e.param == param) out.push_back(e.value);
    return out;
}

ExperimentSpec single_case(const SimConfig& c, std::vector<std::string> estimators, int m, std::uint64_t seed) {
    ExperimentSpec s;
    s.cases = {{"case", c}};
    s.estimators = std::move(estimators);
    s.replications = m;
    s.jobs = 0;
    s.master_seed = seed;
    return s;
}

void single_server_intervals() {
    SimConfig c;
    c.lambda = 1.0;
    c.service = GammaService{1.0, 1.0};
    c.patience = Exponential{0.5};
    c.n_effective = 1000;
    const ExperimentResult r = run_experiment(single_case(c, {"exponential", "idle"}, 500, 12345));
    const auto& th = find_row(r.percentile, "exponential", "theta", 0.95);
    const auto& la = find_row(r.percentile, "exponential", "lambda", 0.95);
    const auto& lt = find_row(r.percentile, "idle", "lambda_tilde", 0.95);
    const bool pass = r.failures.empty() && within(th.lower, 0.431, 0.05) && within(th.upper, 0.586, 0.05) &&
                      within(la.lower, 0.933, 0.03) && within(la.upper, 1.081, 0.03) && within(lt.lower, 0.915, 0.03) &&
                      within(lt.upper, 1.101, 0.03);
    report(1, "single-server percentile intervals", pass,
           fmt::format("theta [{:.3f}, {:.3f}] lambda [{:.3f}, {:.3f}] lambda_tilde [{:.3f}, {:.3f}] failures {}", th.lower,
                       th.upper, la.lower, la.upper, lt.lower, lt.upper, r.failures.size()));
}

void multi_server_interval() {
    SimConfig c;
    c.lambda = 1.0;
    c.s = 5;
    c.service = GammaService{8.0, 0.8};
    c.patience = Exponential{0.4};
    c.n_effective = 2000;
    const ExperimentResult r = run_experiment(single_case(c, {"exponential"}, 300, 54321));
    const auto& th = find_row(r.percentile, "exponential", "theta", 0.95);
    const bool pass = r.failures.empty() && within(th.lower, 0.371, 0.02) && within(th.upper, 0.432, 0.02);
    report(2, "five-server percentile interval", pass,
           fmt::format("theta [{:.4f}, {:.4f}] failures {}", th.lower, th.upper, r.failures.size()));
}

void constant_law() {
    SimConfig c;
    c.lambda = 1.0;
    c.service = ExponentialService{1.0};
    c.patience = Deterministic{3.0};
    c.n_effective = 20000;
    const ExperimentResult r = run_experiment(single_case(c, {"constant"}, 500, 777));
    const double rate = constant_patience_closed_form(1.0, ExponentialService{1.0}, 3.0).limit_rate(3.0);
    std::vector<double> scaled;
    for (double t : values_of(r, "constant", "theta")) scaled.push_back(static_cast<double>(c.n_effective) * (3.0 - t));
    const double m = mean(scaled);
    const KsResult ks = ks_one_sample(scaled, [rate](double x) { return x <= 0.0 ? 0.0 : 1.0 - std::exp(-rate * x); });
    const bool pass = scaled.size() == 500 && std::abs(m / 4.0 - 1.0) <= 0.10 && ks.statistic <= 0.08;
    report(3, "constant-patience limit law", pass,
           fmt::format("oracle rate {:.5f} mean {:.4f} KS distance {:.4f} replications {}", rate, m, ks.statistic,
                       scaled.size()));
}

PatienceModel random_patience(std::mt19937_64& gen, int family) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    switch (family) {
        case 0:
            return Exponential{0.05 + 3.0 * u(gen)};
        case 1: {
            const int p = 2 + static_cast<int>(u(gen) * 3.0);
            while (true) {
                Ghe g;
                double rest = 1.0;
                for (int k = 0; k + 1 < p; ++k) {
                    g.alpha.push_back(-0.3 + 1.3 * u(gen));
                    rest -= g.alpha.back();
                }
                g.alpha.push_back(rest);
                for (int k = 0; k < p; ++k) g.beta.push_back(0.1 + 3.0 * u(gen));
                if (ghe_feasible(g.alpha, g.beta)) return g;
            }
        }
        case 2:
            return Deterministic{0.1 + 5.0 * u(gen)};
        case 3:
            return ScaledStep{u(gen), 0.1 + 4.0 * u(gen)};
        case 4:
            return NoisyAdditive{0.1 + 4.0 * u(gen), 0.1 + 2.0 * u(gen)};
        default:
            return NoisyMultiplicative{0.1 + 4.0 * u(gen), 0.1 + 1.5 * u(gen), NoiseFactor::Lognormal};
    }
}

void oracle_equivalence() {
    std::mt19937_64 gen(404);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_partial = 0.0;
    double worst_term = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const PatienceModel m = random_patience(gen, k % 6);
        const double v = u(gen) < 0.2 ? 0.0 : 6.0 * u(gen);
        const double a = 0.01 + 5.0 * u(gen);
        worst_partial = std::max(worst_partial, std::abs(partial_integral(m, v, a) - oracle::partial_ref(m, v, a)));

        // First-observation log-likelihood term; a trailing idle arrival keeps the sequence non-degenerate.
        ObservationSeq obs;
        obs.w = {u(gen) < 0.3 ? 0.0 : 3.0 * u(gen)};
        obs.x = {0.01 + 3.0 * u(gen)};
        obs.a = {a};
        obs.w.push_back(std::max(obs.w[0] + obs.x[0] - a, 0.0));
        obs.x.push_back(1.0);
        obs.a.push_back(obs.w[1] + 2.0);
        obs.w.push_back(0.0);
        obs.x.push_back(1.0);
        const double lambda = 0.2 + 2.0 * u(gen);
        const double h = oracle::survival_ref(m, obs.w[1]);
        const double vv = obs.w[0] + obs.x[0];
        const double ref = std::log(lambda) + (h > 0.0 ? std::log(h) - lambda * oracle::partial_ref(m, vv, a) : 0.0);
        worst_term = std::max(worst_term, std::abs(observation_terms(lambda, m, obs)[0] - ref));
    }
    report(4, "closed forms against quadrature", worst_partial <= 1e-8 && worst_term <= 1e-8,
           fmt::format("worst partial integral {:.2e} worst one-observation term {:.2e} over 1000 tuples", worst_partial,
                       worst_term));
}

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

double ghe_ll(const Ghe& m, double l, const ObservationSeq& obs) {
    double total = 0.0;
    for (std::size_t i = 1; i <= obs.size(); ++i) {
        const double v = obs.w[i - 1] + obs.x[i - 1];
        const double a = obs.a[i - 1];
        double integral = std::max(a - v, 0.0);
        const double lo = std::max(v - a, 0.0);
        for (std::size_t k = 0; k < m.alpha.size(); ++k)
            if (v > 0.0) integral += m.alpha[k] * (std::exp(-m.beta[k] * lo) - std::exp(-m.beta[k] * v)) / m.beta[k];
        double s = 0.0;
        for (std::size_t k = 0; k < m.alpha.size(); ++k) s += m.alpha[k] * std::exp(-m.beta[k] * obs.w[i]);
        total += std::log(l) + std::log(s) - l * integral;
    }
    return total;
}

void gradients() {
    std::mt19937_64 gen(505);
    std::uniform_real_distribution<double> u(0.1, 3.0);
    double worst = 0.0;
    bool hessian_exact = true;
    for (int r = 0; r < 1000; ++r) {
        const int n = 5 + r % 20;
        const ObservationSeq obs = oracle::random_observations(gen, n);
        const double lambda = u(gen);
        if (r % 2 == 0) {
            const double theta = u(gen);
            const LikelihoodReport rep = grad_exponential(lambda, theta, obs);
            hessian_exact = hessian_exact && rep.hessian(0, 0) == -static_cast<double>(n) / (lambda * lambda);
            worst = std::max(worst, rel_err(rep.gradient(0), oracle::derivative(
                                                                 [&](double l) { return loglik(l, Exponential{theta}, obs); }, lambda)));
            worst = std::max(worst, rel_err(rep.gradient(1), oracle::derivative(
                                                                 [&](double t) { return loglik(lambda, Exponential{t}, obs); }, theta)));
        } else {
            const int p = 1 + (r / 2) % 3;
            Ghe g = std::get<Ghe>(random_patience(gen, 1));
            if (p == 1) g = Ghe{{1.0}, {u(gen)}};
            const LikelihoodReport rep = grad_ghe(lambda, g, obs);
            const auto np = static_cast<int>(g.alpha.size());
            worst = std::max(worst, rel_err(rep.gradient(0),
                                            oracle::derivative([&](double l) { return ghe_ll(g, l, obs); }, lambda)));
            for (int k = 0; k < np; ++k) {
                const auto ks = static_cast<std::size_t>(k);
                const auto da = [&](double x) {
                    Ghe m = g;
                    m.alpha[ks] = x;
                    return ghe_ll(m, lambda, obs);
                };
                const auto db = [&](double x) {
                    Ghe m = g;
                    m.beta[ks] = x;
                    return ghe_ll(m, lambda, obs);
                };
                worst = std::max(worst, rel_err(rep.gradient(1 + k), oracle::derivative(da, g.alpha[ks])));
                worst = std::max(worst, rel_err(rep.gradient(1 + np + k), oracle::derivative(db, g.beta[ks])));
            }
        }
    }
    report(5, "analytic gradients", worst <= 1e-6 && hessian_exact,
           fmt::format("worst relative error {:.2e} over 1000 points, lambda-lambda Hessian exact: {}", worst,
                       hessian_exact ? "yes" : "no"));
}

double sup_diff(const StationaryProfile& a, const StationaryProfile& b) {
    double d = 0.0;
    const std::size_t n = std::min(a.v.size(), b.v.size());
    for (std::size_t k = 0; k < n; ++k) d = std::max(d, std::abs(a.v[k] - b.v[k]));
    return d;
}

void stationary() {
    std::mt19937_64 gen(606);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst_sup = 0.0;
    double worst_z = 0.0;
    std::string detail;
    for (int k = 0; k < 5; ++k) {
        const double lambda = 0.5 + 1.5 * u(gen);
        const double mu = 0.5 + 1.5 * u(gen);
        PatienceModel patience = random_patience(gen, k % 2 == 0 ? 0 : 1);
        if (k == 4) patience = NoisyAdditive{1.0 + 3.0 * u(gen), 0.2 + u(gen)};
        worst_sup = std::max(worst_sup, sup_diff(solve_volterra(lambda, ExponentialService{mu}, patience),
                                                 exp_service_closed_form(lambda, mu, patience)));

        SimConfig c;
        c.lambda = lambda;
        c.service = GammaService{0.5 + 3.0 * u(gen), 0.5 + 2.0 * u(gen)};
        c.patience = patience;
        c.n_effective = 1000000;
        c.record_potential = true;
        c.seed = 6000 + static_cast<std::uint64_t>(k);
        const SimResult r = simulate(c);
        const StationaryProfile p = solve_volterra(c.lambda, c.service, c.patience);
        const std::vector<double> zero(r.truth.potential_saw_zero.begin(), r.truth.potential_saw_zero.end());
        const std::vector<double> balked(r.truth.potential_balked.begin(), r.truth.potential_balked.end());
        const double z0 = std::abs(mean(zero) - p.pi0) / batch_means_se(zero);
        const double zl = std::abs(mean(balked) - p.p_loss) / batch_means_se(balked);
        worst_z = std::max({worst_z, z0, zl});
        detail += fmt::format(" [pi0 {:.4f}/{:.4f} loss {:.4f}/{:.4f}]", mean(zero), p.pi0, mean(balked), p.p_loss);
    }
    report(6, "stationary oracle cross-validation", worst_sup <= 1e-4 && worst_z <= 3.0,
           fmt::format("worst sup-norm {:.2e} worst |z| {:.2f}{}", worst_sup, worst_z, detail));
}

void round_trip() {
    std::mt19937_64 gen(707);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    bool sizes = true;
    for (int k = 0; k < 100; ++k) {
        SimConfig c;
        c.s = std::vector<int>{1, 2, 5}[static_cast<std::size_t>(k % 3)];
        c.lambda = 0.3 + 2.0 * u(gen);
        c.service = GammaService{0.5 + 4.0 * u(gen), static_cast<double>(c.s) * (0.4 + u(gen))};
        c.patience = random_patience(gen, k % 2 == 0 ? 0 : 1);
        c.n_effective = 500 + static_cast<long>(2000.0 * u(gen));
        c.seed = 7000 + static_cast<std::uint64_t>(k);
        const SimResult r = simulate(c);
        const ObservationSeq a = reconstruct(r.trace);
        const ObservationSeq& b = r.truth.obs;
        if (a.w.size() != b.w.size() || a.a.size() != b.a.size()) {
            sizes = false;
            continue;
        }
        for (std::size_t i = 0; i < a.w.size(); ++i)
            worst = std::max({worst, std::abs(a.w[i] - b.w[i]), std::abs(a.x[i] - b.x[i])});
        for (std::size_t i = 0; i < a.a.size(); ++i) worst = std::max(worst, std::abs(a.a[i] - b.a[i]));
    }
    report(7, "reconstruction round trip", sizes && worst <= 1e-12,
           fmt::format("worst difference {:.2e}, lengths agree: {}", worst, sizes ? "yes" : "no"));
}

void misspecification() {
    CurveSpec spec;
    spec.sim.lambda = 1.0;
    spec.sim.service = GammaService{3.0, 2.0};
    spec.sim.patience = LognormalPatience{0.5, 1.0};
    spec.sim.n_effective = 10000;
    spec.sim.seed = 808;
    spec.fits = {"he:1", "he:2"};
    spec.lo = 0.0;
    spec.hi = 20.0;
    spec.points = 401;
    const auto out = run_curves(spec);
    const double sup1 = out[0].second.sup_norm;
    const double sup2 = out[1].second.sup_norm;
    report(8, "lognormal patience fitted by hyperexponentials", sup2 <= 0.05 && sup1 > sup2,
           fmt::format("sup-norm p=1 {:.4f} p=2 {:.4f} loglik p=1 {:.3f} p=2 {:.3f}", sup1, sup2, out[0].first.loglik,
                       out[1].first.loglik));
}

void discrete() {
    const double lambda = 1.5;
    const double theta = 0.2;
    const DiscreteFit f = fit_discrete(simulate_birth_death(lambda, DiscreteFamily::Geometric, theta, 2000000, 909),
                                       lambda, DiscreteFamily::Geometric);
    double worst = 0.0;
    for (std::size_t q = 0; q <= 5 && q < f.lambda_q.size(); ++q) {
        const double truth = lambda * std::pow(1.0 - theta, static_cast<double>(q));
        worst = std::max(worst, std::abs(f.lambda_q[q] / truth - 1.0));
    }
    const DiscreteFit p =
        fit_discrete(simulate_birth_death(0.6, DiscreteFamily::Geometric, 0.0, 2000000, 910), 0.6, DiscreteFamily::Geometric);
    double worst_inf = 0.0;
    for (std::size_t q = 0; q <= 5 && q < p.lambda_q.size(); ++q) worst_inf = std::max(worst_inf, std::abs(p.lambda_q[q] / 0.6 - 1.0));
    const bool pass = f.lambda_q.size() > 5 && p.lambda_q.size() > 5 && worst <= 0.05 && worst_inf <= 0.05;
    report(9, "state-dependent arrival rates", pass,
           fmt::format("worst relative error {:.4f} (thinning) {:.4f} (infinite patience)", worst, worst_inf));
}

void normality() {
    SimConfig c;
    c.lambda = 1.0;
    c.service = GammaService{2.0, 1.0};
    c.patience = Exponential{0.5};
    c.n_effective = 4000;
    const ExperimentResult r = run_experiment(single_case(c, {"exponential"}, 500, 1010));
    std::vector<double> z;
    for (const auto& e : r.estimates)
        if (e.param == "theta" && e.std_error > 0.0) z.push_back((e.value - 0.5) / e.std_error);
    const KsResult ks = ks_one_sample(z, [](double x) { return oracle::phi_cdf(x); });
    report(10, "standardized errors are normal", z.size() == 500 && ks.p_value > 0.01,
           fmt::format("KS p-value {:.4f} statistic {:.4f} mean {:.3f} sd {:.3f} replications {}", ks.p_value,
                       ks.statistic, mean(z), std::sqrt(variance(z)), z.size()));
}

}  // namespace

int main() {
    const std::vector<std::function<void()>> criteria{
        single_server_intervals, multi_server_interval, constant_law, oracle_equivalence, gradients,
        stationary,              round_trip,            misspecification, discrete,        normality};
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[k]();
        } catch (const std::exception& e) {
            report(static_cast<int>(k + 1), "error", false, e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        fmt::print("             ({:.1f} s)\n", secs);
    }
    fmt::print("{} of {} criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
