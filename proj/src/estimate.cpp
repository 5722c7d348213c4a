#include "balk/estimate.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "balk/errors.hpp"
#include "balk/likelihood.hpp"
#include "balk/numerics.hpp"
#include "balk/optimize.hpp"
#include "balk/stationary.hpp"
#include "balk/stats.hpp"

namespace balk {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void finish_aic(FitResult& f) {
    f.aic = 2.0 * f.k - 2.0 * f.loglik;
}

ParamEstimate make_param(const std::string& name, double value, double se) {
    ParamEstimate p{name, value, se, {}};
    if (se > 0.0 && std::isfinite(se)) p.ci = normal_intervals(value, se);
    return p;
}

}  // namespace

const ParamEstimate& FitResult::param(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p;
    throw ParameterError("fit has no parameter '" + name + "'");
}

nlohmann::json to_json(const FitResult& fit) {
    nlohmann::json j;
    j["family"] = fit.family;
    j["model"] = to_json(fit.model);
    j["lambda"] = fit.lambda;
    j["lambda_estimated"] = fit.lambda_estimated;
    j["loglik"] = fit.loglik;
    j["n"] = fit.n;
    j["k"] = fit.k;
    j["aic"] = fit.aic;
    j["iterations"] = fit.iterations;
    j["converged"] = fit.converged;
    j["boundary"] = fit.boundary;
    j["restarts"] = fit.restarts;
    auto params = nlohmann::json::array();
    for (const auto& p : fit.params) {
        nlohmann::json e{{"name", p.name}, {"value", p.value}, {"std_error", p.std_error}};
        auto cis = nlohmann::json::array();
        for (const auto& c : p.ci) cis.push_back({{"level", c.level}, {"lower", c.lower}, {"upper", c.upper}});
        e["ci"] = cis;
        params.push_back(e);
    }
    j["params"] = params;
    auto matrix = [](const Eigen::MatrixXd& m) {
        auto rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            auto row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(row);
        }
        return rows;
    };
    j["fisher"] = matrix(fit.fisher);
    if (fit.fisher_hessian.size() > 0) j["fisher_hessian"] = matrix(fit.fisher_hessian);
    if (fit.error_rate > 0.0) {
        j["error_rate"] = fit.error_rate;
        j["asymptotic_variance"] = fit.asymptotic_variance;
    }
    j["warnings"] = fit.warnings;
    return j;
}

FisherSummary fisher_info(const Eigen::MatrixXd& rows) {
    const auto n = rows.rows();
    if (n == 0) throw ParameterError("fisher_info needs at least one score row");
    FisherSummary out;
    out.info = (rows.transpose() * rows) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.info);
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double top = ev.cwiseAbs().maxCoeff();
    const double cutoff = 1e-12 * std::max(top, 1e-300);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) > cutoff)
            inv(i) = 1.0 / ev(i);
        else
            out.singular = true;
    }
    out.covariance = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose() / static_cast<double>(n);
    return out;
}

std::vector<Interval> normal_intervals(double value, double se, const std::vector<double>& levels) {
    std::vector<Interval> out;
    for (double level : levels) {
        const double z = normal_quantile(0.5 + 0.5 * level);
        out.push_back({level, value - z * se, value + z * se});
    }
    return out;
}

FitResult fit_constant(const ObservationSeq& obs, const ConstantFitOptions& options) {
    if (obs.size() == 0) throw ParameterError("fit_constant needs at least one observation");
    FitResult f;
    f.family = "deterministic";
    f.n = static_cast<long>(obs.size());
    const double theta = *std::max_element(obs.w.begin() + 1, obs.w.end());
    f.model = Deterministic{theta};
    f.lambda = profile_lambda(f.model, obs);
    f.lambda_estimated = true;
    f.loglik = loglik(f.lambda, f.model, obs);
    f.k = 2;
    f.converged = true;
    finish_aic(f);

    // Score of lambda alone.
    Eigen::MatrixXd rows(f.n, 1);
    for (long i = 1; i <= f.n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        rows(i - 1, 0) = 1.0 / f.lambda - partial_integral(f.model, obs.w[k - 1] + obs.x[k - 1], obs.a[k - 1]);
    }
    const FisherSummary fi = fisher_info(rows);
    f.fisher = fi.info;
    f.params.push_back(make_param("lambda", f.lambda, std::sqrt(fi.covariance(0, 0))));

    ParamEstimate th{"theta", theta, 0.0, {}};
    if (obs.s != 1) {
        f.warnings.push_back("limit-law interval for theta needs s = 1; point estimate only");
    } else if (!options.service) {
        f.warnings.push_back("no service model given; theta interval not computed");
    } else if (theta > 0.0) {
        const StationaryProfile prof = constant_patience_closed_form(f.lambda, *options.service, theta, options.h);
        f.error_rate = prof.limit_rate(theta);
        f.asymptotic_variance = 1.0 / (f.error_rate * f.error_rate);
        th.std_error = 1.0 / (f.error_rate * static_cast<double>(f.n));
        for (double level : kDefaultLevels)
            th.ci.push_back({level, theta, theta - std::log1p(-level) / (static_cast<double>(f.n) * f.error_rate)});
    }
    f.params.push_back(th);
    return f;
}

FitResult fit_exponential(const ObservationSeq& obs, const ExponentialFitOptions& options) {
    const std::size_t n = obs.size();
    if (n < 2) throw ParameterError("fit_exponential needs at least two observations");
    if (!(options.theta_lo > 0.0 && options.theta_hi > options.theta_lo))
        throw ParameterError("invalid search interval for theta");

    std::vector<double> u(n), delta(n), base(n);
    double sum_w = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        const double v = obs.w[i - 1] + obs.x[i - 1];
        const double a = obs.a[i - 1];
        u[i - 1] = std::max(v - a, 0.0);
        delta[i - 1] = v > 0.0 ? v - u[i - 1] : 0.0;
        base[i - 1] = v > 0.0 ? std::max(a - v, 0.0) : a;
        sum_w += obs.w[i];
    }
    std::vector<double> integrals(n);
    auto total_integral = [&](double theta) {
        for (std::size_t i = 0; i < n; ++i)
            integrals[i] = base[i] + std::exp(-theta * u[i]) * -std::expm1(-theta * delta[i]) / theta;
        return pairwise_sum(integrals);
    };
    const double dn = static_cast<double>(n);
    auto objective = [&](double theta) {
        const double t = total_integral(theta);
        if (options.lambda) return dn * std::log(*options.lambda) - theta * sum_w - *options.lambda * t;
        return dn * std::log(dn / t) - theta * sum_w - dn;
    };

    const Search1D s = scan_maximize(objective, options.theta_lo, options.theta_hi, 61, true, options.tol);
    FitResult f;
    f.family = "exponential";
    f.n = static_cast<long>(n);
    const double theta = s.x;
    f.model = Exponential{theta};
    f.iterations = s.iterations;
    f.converged = s.converged;
    const double span = options.tol * 10.0;
    if (theta <= options.theta_lo + span || theta >= options.theta_hi * (1.0 - 1e-9) - span) {
        f.boundary = true;
        f.converged = false;
        f.warnings.push_back(fmt::format("theta estimate {} is on the boundary of [{}, {}]", theta, options.theta_lo,
                                         options.theta_hi));
    }
    f.lambda_estimated = !options.lambda;
    f.lambda = options.lambda ? *options.lambda : profile_lambda(f.model, obs);
    f.loglik = loglik(f.lambda, f.model, obs);
    f.k = f.lambda_estimated ? 2 : 1;
    finish_aic(f);

    const LikelihoodReport rep = grad_exponential(f.lambda, theta, obs);
    if (f.lambda_estimated) {
        const FisherSummary fi = fisher_info(rep.rows);
        f.fisher = fi.info;
        f.fisher_hessian = -rep.hessian / dn;
        if (fi.singular) f.warnings.push_back("empirical Fisher information is singular; pseudo-inverse used");
        f.params.push_back(make_param("lambda", f.lambda, std::sqrt(fi.covariance(0, 0))));
        f.params.push_back(make_param("theta", theta, std::sqrt(fi.covariance(1, 1))));
    } else {
        const FisherSummary fi = fisher_info(rep.rows.col(1));
        f.fisher = fi.info;
        f.fisher_hessian = Eigen::MatrixXd::Constant(1, 1, -rep.hessian(1, 1) / dn);
        if (fi.singular) f.warnings.push_back("empirical Fisher information is singular; pseudo-inverse used");
        f.params.push_back(make_param("theta", theta, std::sqrt(fi.covariance(0, 0))));
    }
    return f;
}

RateEstimate lambda_idle(const std::vector<IdlePeriod>& idle, const std::vector<double>& levels) {
    if (idle.empty()) throw ParameterError("lambda_idle needs at least one idle period");
    RateEstimate r;
    std::vector<double> lengths;
    for (const auto& p : idle) {
        r.events += p.e;
        lengths.push_back(p.i);
    }
    r.exposure = pairwise_sum(lengths);
    if (!(r.exposure > 0.0)) throw ParameterError("total idle time must be positive");
    r.value = static_cast<double>(r.events) / r.exposure;
    for (double level : levels) {
        const double tail = 0.5 * (1.0 - level);
        const double lo = r.events > 0 ? boost::math::gamma_p_inv(static_cast<double>(r.events), tail) : 0.0;
        const double hi = boost::math::gamma_p_inv(static_cast<double>(r.events + 1), 1.0 - tail);
        r.ci.push_back({level, lo / r.exposure, hi / r.exposure});
    }
    return r;
}

DiscreteFit fit_discrete(const DiscreteTrace& trace, double lambda, DiscreteFamily family) {
    if (!(lambda > 0.0)) throw ParameterError("lambda must be positive");
    if (trace.q.size() != trace.hold.size() + 1 || trace.hold.empty())
        throw ParameterError("discrete trace needs n + 1 states and n holding times");
    long qmax = 0;
    for (std::size_t i = 0; i < trace.q.size(); ++i) {
        if (trace.q[i] < 0) throw ParameterError("negative queue length in discrete trace");
        qmax = std::max(qmax, trace.q[i]);
        if (i > 0 && std::abs(trace.q[i] - trace.q[i - 1]) != 1)
            throw ParameterError(fmt::format("transition {} is not a unit step", i));
    }
    for (double j : trace.hold)
        if (!(j > 0.0)) throw ParameterError("holding times must be positive");

    DiscreteFit out;
    const auto states = static_cast<std::size_t>(qmax);
    out.time_in.assign(states, 0.0);
    out.up.assign(states, 0);
    out.lambda_q.assign(states, kNaN);
    for (std::size_t i = 1; i < trace.q.size(); ++i) {
        const long from = trace.q[i - 1];
        if (from >= qmax) continue;
        out.time_in[static_cast<std::size_t>(from)] += trace.hold[i - 1];
        if (trace.q[i] > from) ++out.up[static_cast<std::size_t>(from)];
    }
    std::vector<std::pair<long, double>> targets;
    for (std::size_t q = 0; q < states; ++q) {
        if (out.time_in[q] > 0.0) {
            out.lambda_q[q] = static_cast<double>(out.up[q]) / out.time_in[q];
            targets.emplace_back(static_cast<long>(q), out.lambda_q[q] / lambda);
        } else {
            out.warnings.push_back(fmt::format("state {} never visited; equation dropped", q));
        }
    }
    if (targets.empty()) {
        out.warnings.push_back("no usable states; theta not estimated");
        out.theta = kNaN;
        return out;
    }
    auto sse = [&](double theta) {
        double s = 0.0;
        for (const auto& [q, y] : targets) {
            const double r = y - discrete_survival(family, theta, q);
            s += r * r;
        }
        return -s;
    };
    const double hi = family == DiscreteFamily::Geometric ? 1.0 - 1e-12 : 50.0;
    out.theta = scan_maximize(sse, 0.0, hi, 401, false, 1e-10).x;
    return out;
}

ScaledStepFit fit_scaled_step(const ObservationSeq& obs, double lambda, double w) {
    if (!(lambda > 0.0) || !(w > 0.0)) throw ParameterError("lambda and w must be positive");
    const std::size_t n = obs.size();
    if (n == 0) throw ParameterError("fit_scaled_step needs observations");
    ScaledStepFit out;
    std::vector<double> m(n);
    for (std::size_t i = 1; i <= n; ++i) {
        const double v = obs.w[i - 1] + obs.x[i - 1];
        m[i - 1] = std::min(obs.a[i - 1], std::max(v - w, 0.0));
        if (obs.w[i] > w) ++out.exceed;
    }
    out.exposure = pairwise_sum(m);
    if (!(out.exposure > 0.0)) throw FitError("no virtual waiting time above w: proportion is not identified");

    const double k = static_cast<double>(out.exceed);
    const double lm = lambda * out.exposure;
    FitResult& f = out.fit;
    f.family = "scaled_step";
    f.n = static_cast<long>(n);
    double theta;
    if (lm - k <= 0.0) {
        theta = 0.0;
        f.boundary = true;
        f.converged = true;
        f.warnings.push_back("proportion estimate on the boundary 0");
    } else if (out.exceed == 0) {
        theta = 1.0;
        f.boundary = true;
        f.converged = true;
        f.warnings.push_back("proportion estimate on the boundary 1");
    } else {
        const auto fd = [&](double t) {
            const double r = 1.0 - t;
            return std::make_pair(-k / r + lm, -k / (r * r));
        };
        const Search1D s = safeguarded_newton(fd, 0.0, 1.0, 1e-10);
        theta = s.x;
        f.iterations = s.iterations;
        f.converged = s.converged;
    }
    f.model = ScaledStep{theta, w};
    f.lambda = lambda;
    f.loglik = loglik(lambda, f.model, obs);
    f.k = 1;
    finish_aic(f);

    Eigen::MatrixXd rows(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 1; i <= n; ++i)
        rows(static_cast<Eigen::Index>(i - 1), 0) = (obs.w[i] > w ? -1.0 / (1.0 - theta) : 0.0) + lambda * m[i - 1];
    double se = 0.0;
    if (theta < 1.0) {
        const FisherSummary fi = fisher_info(rows);
        f.fisher = fi.info;
        se = std::sqrt(fi.covariance(0, 0));
    }
    ParamEstimate p = make_param("theta", theta, se);
    for (auto& c : p.ci) {
        c.lower = std::max(c.lower, 0.0);
        c.upper = std::min(c.upper, 1.0);
    }
    f.params.push_back(p);
    return out;
}

PricingFit fit_pricing(const PricingInput& first, const PricingInput& second, std::uint64_t seed, int draws) {
    if (first.price == second.price) throw ParameterError("prices must differ");
    auto invert = [&](double t1, double t2) {
        const double r = (t1 * second.price - t2 * first.price) / (t1 - t2);
        return std::make_pair(r, (r - first.price) / t1);
    };
    if (first.theta == second.theta) throw FitError("equal thresholds at both prices: (r, c) not identified");
    PricingFit out;
    std::tie(out.r, out.c) = invert(first.theta, second.theta);
    if (first.n > 0 && second.n > 0 && first.rate > 0.0 && second.rate > 0.0 && draws > 1) {
        Rng rng = make_stream(seed, StreamId::Misc);
        std::vector<double> rs;
        std::vector<double> cs;
        for (int d = 0; d < draws; ++d) {
            const double t1 = first.theta - std::log(uniform01(rng)) / (static_cast<double>(first.n) * first.rate);
            const double t2 = second.theta - std::log(uniform01(rng)) / (static_cast<double>(second.n) * second.rate);
            if (t1 == t2) continue;
            const auto [r, c] = invert(t1, t2);
            rs.push_back(r);
            cs.push_back(c);
        }
        for (double level : kDefaultLevels) {
            const double tail = 0.5 * (1.0 - level);
            out.r_ci.push_back({level, quantile(rs, tail), quantile(rs, 1.0 - tail)});
            out.c_ci.push_back({level, quantile(cs, tail), quantile(cs, 1.0 - tail)});
        }
    }
    return out;
}

FitResult fit_noisy(const ObservationSeq& obs, double lambda, const PatienceModel& noise) {
    if (!is_noisy(noise)) throw ParameterError("fit_noisy needs a noisy patience family");
    const std::size_t n = obs.size();
    if (n == 0) throw ParameterError("fit_noisy needs observations");
    auto with_theta = [&](double theta) {
        PatienceModel m = noise;
        std::visit(
            [theta](auto& x) {
                if constexpr (requires { x.theta; }) x.theta = theta;
            },
            m);
        return m;
    };
    double vmax = 0.0;
    for (std::size_t i = 0; i <= n; ++i) vmax = std::max(vmax, obs.w[i] + obs.x[i]);
    double lo;
    double hi;
    double step;
    if (const auto* a = std::get_if<NoisyAdditive>(&noise)) {
        lo = 0.0;
        hi = vmax + 10.0 * a->sigma + 1.0;
        step = std::min(1e-5, 1e-3 * a->sigma);
    } else {
        const auto& m = std::get<NoisyMultiplicative>(noise);
        lo = 1e-6;
        hi = vmax * std::exp(6.0 * m.spread) + 1.0;
        step = 1e-6;
    }
    auto objective = [&](double theta) {
        try {
            return loglik(lambda, with_theta(theta), obs);
        } catch (const DegenerateLikelihoodError&) {
            return -std::numeric_limits<double>::infinity();
        }
    };
    const Search1D s = scan_maximize(objective, lo, hi, 201, false, 1e-9);
    const double theta = s.x;

    FitResult f;
    f.family = family_name(noise);
    f.model = with_theta(theta);
    f.lambda = lambda;
    f.n = static_cast<long>(n);
    f.loglik = loglik(lambda, f.model, obs);
    f.k = 1;
    f.iterations = s.iterations;
    f.converged = s.converged;
    if (theta <= lo + 1e-8 || theta >= hi - 1e-8) {
        f.boundary = true;
        f.warnings.push_back("threshold estimate on the search boundary");
    }
    finish_aic(f);

    const double h = step * std::max(1.0, std::abs(theta));
    const auto up = observation_terms(lambda, with_theta(theta + h), obs);
    const auto down = observation_terms(lambda, with_theta(std::max(theta - h, 1e-300)), obs);
    const double width = theta + h - std::max(theta - h, 1e-300);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(n), 1);
    for (std::size_t i = 0; i < n; ++i) rows(static_cast<Eigen::Index>(i), 0) = (up[i] - down[i]) / width;
    const FisherSummary fi = fisher_info(rows);
    f.fisher = fi.info;
    f.params.push_back(make_param("theta", theta, std::sqrt(fi.covariance(0, 0))));
    return f;
}

}  // namespace balk
