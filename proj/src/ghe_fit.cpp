#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "balk/errors.hpp"
#include "balk/estimate.hpp"
#include "balk/likelihood.hpp"
#include "balk/numerics.hpp"
#include "balk/optimize.hpp"

namespace balk {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::array<double, 3> kSpreads{4.0, 1.5, 20.0};
const double kLogBetaMin = std::log(1e-6);
const double kLogBetaMax = std::log(1e4);

struct Data {
    std::vector<double> w;      // W_i
    std::vector<double> u;      // (v_i - A_i)^+
    std::vector<double> delta;  // v_i - u_i, zero when v_i <= 0
    double base = 0.0;          // sum of the parts of the integrals over nonpositive arguments
    double n = 0.0;
};

Data prepare(const ObservationSeq& obs) {
    Data d;
    const std::size_t n = obs.size();
    d.n = static_cast<double>(n);
    std::vector<double> base(n);
    for (std::size_t i = 1; i <= n; ++i) {
        const double v = obs.w[i - 1] + obs.x[i - 1];
        const double a = obs.a[i - 1];
        const double u = std::max(v - a, 0.0);
        d.w.push_back(obs.w[i]);
        d.u.push_back(u);
        d.delta.push_back(v > 0.0 ? v - u : 0.0);
        base[i - 1] = v > 0.0 ? std::max(a - v, 0.0) : a;
    }
    d.base = pairwise_sum(base);
    return d;
}

struct Moment3 {
    double m0, m1, m2;
};

// One exponential for the whole interval, a series where cancellation would bite.
inline Moment3 moments(double b, double u, double delta) {
    if (!(delta > 0.0)) return {0.0, 0.0, 0.0};
    const double x = b * delta;
    const double eu = std::exp(-b * u);
    const double ex = std::exp(-x);
    double e0;
    double e1;
    double e2;
    if (x < 0.5) {
        double term = x * x * x / 6.0;
        double s3 = 0.0;
        for (int j = 4; term > 1e-18 * s3 || j < 6; ++j) {
            s3 += term;
            term *= x / j;
        }
        e0 = -std::expm1(-x);
        e1 = ex * (0.5 * x * x + s3);
        e2 = ex * s3;
    } else {
        e0 = 1.0 - ex;
        e1 = e0 - x * ex;
        e2 = e1 - 0.5 * x * x * ex;
    }
    const double b2 = b * b;
    return {eu * e0 / b, eu * (u * e0 / b + e1 / b2), eu * (u * u * e0 / b + 2.0 * u * e1 / b2 + 2.0 * e2 / (b2 * b))};
}

// Coordinate ascent over log(beta) for fixed weights. Caches one column of
// scaled survival terms and integrals per component so an update is O(n).
class InnerSolver {
public:
    InnerSolver(const Data& d, std::optional<double> lambda, double tol, int max_sweeps)
        : d_(d), lambda_(lambda), tol_(tol), max_sweeps_(max_sweeps) {}

    // Returns the maximized log-likelihood (profiled over lambda when it is
    // unknown), or -inf when the weights admit no feasible rates from `beta`.
    double solve(const std::vector<double>& alpha, std::vector<double>& beta, int* sweeps_used = nullptr) {
        const std::size_t p = alpha.size();
        const std::size_t n = d_.w.size();
        alpha_ = alpha;
        p_negative_ = std::any_of(alpha.begin(), alpha.end(), [](double a) { return a < 0.0; });
        e_.assign(p, std::vector<double>(n));
        m0_.assign(p, 0.0);
        c_.assign(n, 0.0);
        h_.assign(n, 0.0);
        if (!rebuild(beta)) return kNegInf;
        double value = objective_now();
        std::vector<double> y(p);
        std::vector<double> start(p);
        int sweep = 0;
        while (sweep < max_sweeps_) {
            ++sweep;
            for (std::size_t j = 0; j < p; ++j) start[j] = y[j] = std::log(beta[j]);
            double max_step = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                const double yj = coordinate(j, y[j]);
                if (yj != y[j]) {
                    beta[j] = std::exp(yj);
                    commit(j, beta[j]);
                }
                max_step = std::max(max_step, std::abs(yj - y[j]));
                y[j] = yj;
            }
            value = objective_now();
            if (max_step < tol_) break;
            if (p > 1) max_step = std::max(max_step, pattern_move(start, y, beta, value));
            if (!rebuild(beta)) return kNegInf;
            value = objective_now();
        }
        if (sweeps_used) *sweeps_used = sweep;
        if (!rebuild(beta)) return kNegInf;
        return objective_now();
    }

    double total_integral() const { return total_; }

private:
    bool rebuild(const std::vector<double>& beta) {
        if (!ghe_feasible(alpha_, beta)) return false;
        beta_ = beta;
        const std::size_t p = alpha_.size();
        const std::size_t n = d_.w.size();
        for (std::size_t i = 0; i < n; ++i) {
            double c = kNegInf;
            for (std::size_t k = 0; k < p; ++k) c = std::max(c, -beta[k] * d_.w[i]);
            c_[i] = -c;  // scale so the largest term is 1
        }
        std::fill(h_.begin(), h_.end(), 0.0);
        total_ = d_.base;
        for (std::size_t k = 0; k < p; ++k) {
            double s0 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                e_[k][i] = alpha_[k] * std::exp(-beta[k] * d_.w[i] + c_[i]);
                h_[i] += e_[k][i];
                s0 += moments(beta[k], d_.u[i], d_.delta[i]).m0;
            }
            m0_[k] = s0;
            total_ += alpha_[k] * s0;
        }
        for (double h : h_)
            if (!(h > 0.0)) return false;
        return total_ > 0.0;
    }

    // Extrapolate along the displacement of the last sweep while that helps.
    double pattern_move(const std::vector<double>& from, const std::vector<double>& to, std::vector<double>& beta,
                        double& value) {
        const std::size_t p = to.size();
        std::vector<double> trial(p);
        double moved = 0.0;
        for (double t = 1.0; t <= 64.0; t *= 2.0) {
            double step = 0.0;
            for (std::size_t j = 0; j < p; ++j) {
                const double yj = std::clamp(to[j] + t * (to[j] - from[j]), kLogBetaMin, kLogBetaMax);
                trial[j] = std::exp(yj);
                step = std::max(step, std::abs(yj - to[j]));
            }
            if (!rebuild(trial)) break;
            const double v = objective_now();
            if (!(v > value)) break;
            value = v;
            beta = trial;
            moved = step;
        }
        return moved;
    }

    double objective_now() const {
        double s = 0.0;
        for (std::size_t i = 0; i < h_.size(); ++i) s += std::log(h_[i]) - c_[i];
        if (lambda_) return d_.n * std::log(*lambda_) - *lambda_ * total_ + s;
        return d_.n * std::log(d_.n / total_) - d_.n + s;
    }

    struct Eval {
        bool feasible = false;
        double f = 0.0;
        double g = 0.0;  // d/dy
        double h = 0.0;  // d^2/dy^2
        double s0 = 0.0;
    };

    Eval evaluate(std::size_t j, double y) const {
        Eval r;
        const double b = std::exp(y);
        const double a = alpha_[j];
        if (p_negative_) {
            std::vector<double> beta = beta_;
            beta[j] = b;
            if (!ghe_feasible(alpha_, beta)) return r;
        }
        double logs = 0.0;
        double d1 = 0.0;
        double d2 = 0.0;
        double s0 = 0.0;
        double s1 = 0.0;
        double s2 = 0.0;
        const std::size_t n = d_.w.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double wi = d_.w[i];
            const double e = a * std::exp(-b * wi + c_[i]);
            const double h = h_[i] - e_[j][i] + e;
            if (!(h > 0.0) || !std::isfinite(h)) return r;
            logs += std::log(h);
            const double share = wi * e / h;
            d1 -= share;
            d2 += wi * share - share * share;
            const Moment3 m = moments(b, d_.u[i], d_.delta[i]);
            s0 += m.m0;
            s1 += m.m1;
            s2 += m.m2;
        }
        const double total = total_ - a * m0_[j] + a * s0;
        if (!(total > 0.0)) return r;
        double fb;
        double fbb;
        if (lambda_) {
            const double lam = *lambda_;
            r.f = logs - lam * total;
            fb = d1 + lam * a * s1;
            fbb = d2 - lam * a * s2;
        } else {
            r.f = logs - d_.n * std::log(total);
            fb = d1 + d_.n * a * s1 / total;
            fbb = d2 - d_.n * a * s2 / total + d_.n * a * a * s1 * s1 / (total * total);
        }
        r.g = b * fb;
        r.h = b * fb + b * b * fbb;
        r.s0 = s0;
        r.feasible = true;
        return r;
    }

    // Safeguarded Newton in y = log(beta_j); bisection when the step leaves the bracket.
    double coordinate(std::size_t j, double y0) const {
        Eval cur = evaluate(j, y0);
        if (!cur.feasible) return y0;
        double y = y0;
        double lo = kLogBetaMin;
        double hi = kLogBetaMax;
        for (int it = 0; it < 100; ++it) {
            if (cur.g > 0.0)
                lo = y;
            else
                hi = y;
            if (hi - lo < tol_) break;
            double step = cur.h < 0.0 ? -cur.g / cur.h : (cur.g > 0.0 ? 1.0 : -1.0);
            step = std::clamp(step, -2.0, 2.0);
            double trial = y + step;
            if (!(trial > lo && trial < hi)) trial = 0.5 * (lo + hi);
            const Eval next = evaluate(j, trial);
            if (!next.feasible || next.f < cur.f - 1e-12 * std::abs(cur.f)) {
                // Overshot: the maximizer lies between y and trial.
                (trial > y ? hi : lo) = trial;
                if (hi - lo < tol_) break;
                continue;
            }
            const double moved = std::abs(trial - y);
            y = trial;
            cur = next;
            if (moved < tol_) break;
        }
        return y;
    }

    void commit(std::size_t j, double b) {
        const std::size_t n = d_.w.size();
        double s0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = alpha_[j] * std::exp(-b * d_.w[i] + c_[i]);
            h_[i] += e - e_[j][i];
            e_[j][i] = e;
            s0 += moments(b, d_.u[i], d_.delta[i]).m0;
        }
        total_ += alpha_[j] * (s0 - m0_[j]);
        m0_[j] = s0;
        beta_[j] = b;
    }

    const Data& d_;
    std::optional<double> lambda_;
    double tol_;
    int max_sweeps_;
    std::vector<double> alpha_;
    std::vector<double> beta_;
    bool p_negative_ = false;
    std::vector<std::vector<double>> e_;
    std::vector<double> m0_;
    std::vector<double> c_;
    std::vector<double> h_;
    double total_ = 0.0;
};

std::vector<double> initial_beta(std::size_t p, double theta, double spread) {
    std::vector<double> beta(p);
    for (std::size_t k = 0; k < p; ++k)
        beta[k] = theta * std::pow(spread, static_cast<double>(k) - 0.5 * static_cast<double>(p - 1));
    return beta;
}

// Sort components by descending weight.
void order_components(std::vector<double>& alpha, std::vector<double>& beta) {
    std::vector<std::size_t> idx(alpha.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return alpha[a] > alpha[b] || (alpha[a] == alpha[b] && beta[a] < beta[b]);
    });
    std::vector<double> a2;
    std::vector<double> b2;
    for (std::size_t i : idx) {
        a2.push_back(alpha[i]);
        b2.push_back(beta[i]);
    }
    alpha = a2;
    beta = b2;
}

std::vector<double> close_simplex(const Eigen::VectorXd& free) {
    std::vector<double> alpha(free.data(), free.data() + free.size());
    double s = 0.0;
    for (double a : alpha) s += a;
    alpha.push_back(1.0 - s);
    return alpha;
}

FitResult assemble(const ObservationSeq& obs, std::vector<double> alpha, std::vector<double> beta,
                   std::optional<double> lambda) {
    order_components(alpha, beta);
    const std::size_t p = alpha.size();
    FitResult f;
    f.family = p == 1 ? "exponential" : "ghe";
    Ghe model{alpha, beta};
    f.model = model;
    f.n = static_cast<long>(obs.size());
    f.lambda_estimated = !lambda;
    f.lambda = lambda ? *lambda : profile_lambda(f.model, obs);
    f.loglik = loglik(f.lambda, f.model, obs);
    f.k = static_cast<int>(2 * p - 1) + (f.lambda_estimated ? 1 : 0);
    f.aic = 2.0 * f.k - 2.0 * f.loglik;

    const LikelihoodReport rep = grad_ghe(f.lambda, model, obs);
    // Reduced coordinates: [lambda], alpha_1..alpha_{p-1} (alpha_p = 1 - sum), beta_1..beta_p.
    const Eigen::Index off = f.lambda_estimated ? 1 : 0;
    const auto pp = static_cast<Eigen::Index>(p);
    Eigen::MatrixXd rows(rep.rows.rows(), off + 2 * pp - 1);
    if (off) rows.col(0) = rep.rows.col(0);
    for (Eigen::Index j = 0; j + 1 < pp; ++j) rows.col(off + j) = rep.rows.col(1 + j) - rep.rows.col(pp);
    for (Eigen::Index j = 0; j < pp; ++j) rows.col(off + pp - 1 + j) = rep.rows.col(1 + pp + j);
    const FisherSummary fi = fisher_info(rows);
    f.fisher = fi.info;
    if (fi.singular) f.warnings.push_back("empirical Fisher information is singular; pseudo-inverse used");
    auto se = [&](Eigen::Index i) { return std::sqrt(std::max(fi.covariance(i, i), 0.0)); };
    auto add = [&](const std::string& name, double value, double s) {
        ParamEstimate e{name, value, s, {}};
        if (s > 0.0 && std::isfinite(s)) e.ci = normal_intervals(value, s);
        f.params.push_back(e);
    };
    if (off) add("lambda", f.lambda, se(0));
    double var_last = 0.0;
    for (Eigen::Index j = 0; j + 1 < pp; ++j) {
        add(fmt::format("alpha{}", j + 1), alpha[static_cast<std::size_t>(j)], se(off + j));
        for (Eigen::Index l = 0; l + 1 < pp; ++l) var_last += fi.covariance(off + j, off + l);
    }
    add(fmt::format("alpha{}", p), alpha[p - 1], p > 1 ? std::sqrt(std::max(var_last, 0.0)) : 0.0);
    for (Eigen::Index j = 0; j < pp; ++j)
        add(fmt::format("beta{}", j + 1), beta[static_cast<std::size_t>(j)], se(off + pp - 1 + j));
    return f;
}

double exponential_guess(const ObservationSeq& obs, std::optional<double> lambda) {
    ExponentialFitOptions eo;
    eo.lambda = lambda;
    try {
        const FitResult f = fit_exponential(obs, eo);
        if (const auto* e = std::get_if<Exponential>(&f.model)) return e->theta;
        return 1.0;
    } catch (const std::exception&) {
        return 1.0;
    }
}

bool admissible(const std::vector<double>& alpha, const std::vector<double>& beta, bool positive) {
    if (positive && std::any_of(alpha.begin(), alpha.end(), [](double a) { return !(a > 0.0); })) return false;
    return ghe_feasible(alpha, beta);
}

}  // namespace

FitResult fit_ghe(const ObservationSeq& obs, int p, const GheFitOptions& options) {
    if (p < 1) throw ParameterError("fit_ghe needs p >= 1");
    if (static_cast<long>(obs.size()) < 2L * p) throw ParameterError("fit_ghe needs n >= 2p observations");
    if (options.lambda && !(*options.lambda > 0.0)) throw ParameterError("lambda must be positive");
    const Data data = prepare(obs);
    const double theta0 = exponential_guess(obs, options.lambda);
    InnerSolver inner(data, options.lambda, options.inner_tol, options.max_sweeps);
    const auto up = static_cast<std::size_t>(p);

    if (p == 1) {
        std::vector<double> alpha{1.0};
        std::vector<double> beta{theta0};
        const double val = inner.solve(alpha, beta);
        if (!std::isfinite(val)) throw FitError("exponential inner fit failed");
        FitResult f = assemble(obs, alpha, beta, options.lambda);
        f.converged = true;
        f.restarts = 1;
        return f;
    }

    Rng rng = make_stream(options.seed, StreamId::Misc);
    std::vector<std::vector<double>> starts;
    starts.push_back(std::vector<double>(up, 1.0 / p));
    // Distinct descending weights for the equal-weight start.
    for (std::size_t k = 0; k < up; ++k) starts[0][k] += 0.01 * (static_cast<double>(up - 1) / 2.0 - k) / p;
    while (static_cast<int>(starts.size()) < options.starts) {
        std::vector<double> a(up);
        const bool simplex = options.hyperexponential || starts.size() % 2 == 1;
        if (simplex) {
            double s = 0.0;
            for (auto& x : a) {
                x = -std::log(uniform01(rng));
                s += x;
            }
            for (auto& x : a) x /= s;
        } else {
            double s = 0.0;
            for (std::size_t k = 0; k + 1 < up; ++k) {
                a[k] = -1.0 + 3.0 * uniform01(rng);
                s += a[k];
            }
            a[up - 1] = 1.0 - s;
        }
        std::sort(a.begin(), a.end(), std::greater<>());
        starts.push_back(a);
    }

    double best_val = kNegInf;
    std::vector<double> best_alpha;
    std::vector<double> best_beta;
    int best_iters = 0;
    bool best_conv = false;
    int feasible_starts = 0;

    for (const auto& a0 : starts) {
        std::vector<double> warm = initial_beta(up, theta0, 4.0);
        std::vector<double> alpha0 = a0;
        {
            double v0 = kNegInf;
            for (double spread : kSpreads) {
                std::vector<double> b = initial_beta(up, theta0, spread);
                const double v = inner.solve(alpha0, b);
                if (v > v0) {
                    v0 = v;
                    warm = b;
                }
            }
            if (!std::isfinite(v0)) continue;
        }
        auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) -> double {
            const std::vector<double> alpha = close_simplex(x);
            if (options.hyperexponential &&
                std::any_of(alpha.begin(), alpha.end(), [](double a) { return !(a > 0.0); }))
                return std::numeric_limits<double>::infinity();
            std::vector<double> beta = warm;
            const double val = inner.solve(alpha, beta);
            if (!std::isfinite(val) || !admissible(alpha, beta, options.hyperexponential))
                return std::numeric_limits<double>::infinity();
            warm = beta;
            const double lam = options.lambda ? *options.lambda : data.n / inner.total_integral();
            const LikelihoodReport rep = grad_ghe(lam, Ghe{alpha, beta}, obs);
            grad.resize(x.size());
            for (Eigen::Index j = 0; j < x.size(); ++j)
                grad(j) = -(rep.gradient(1 + j) - rep.gradient(static_cast<Eigen::Index>(up))) / data.n;
            return -val / data.n;
        };
        Eigen::VectorXd x0(static_cast<Eigen::Index>(up - 1));
        for (std::size_t k = 0; k + 1 < up; ++k) x0(static_cast<Eigen::Index>(k)) = alpha0[k];
        Eigen::VectorXd g0;
        if (!std::isfinite(objective(x0, g0))) continue;
        LbfgsOptions lo;
        lo.max_iter = options.outer_iterations;
        lo.grad_tol = 1e-7;
        const LbfgsResult res = lbfgs_minimize(objective, x0, lo);
        if (!std::isfinite(res.f)) continue;
        std::vector<double> alpha = close_simplex(res.x);
        std::vector<double> beta = warm;
        const double val = inner.solve(alpha, beta);
        if (!std::isfinite(val) || !admissible(alpha, beta, options.hyperexponential)) continue;
        ++feasible_starts;
        if (val > best_val) {
            best_val = val;
            best_alpha = alpha;
            best_beta = beta;
            best_iters = res.iterations;
            best_conv = res.converged;
        }
    }
    if (best_alpha.empty())
        throw FitError(fmt::format("fit_ghe: no feasible candidate among {} starts (p = {})", starts.size(), p));
    FitResult f = assemble(obs, best_alpha, best_beta, options.lambda);
    f.iterations = best_iters;
    f.converged = best_conv;
    f.restarts = static_cast<int>(starts.size());
    if (feasible_starts < static_cast<int>(starts.size()))
        f.warnings.push_back(fmt::format("{} of {} starts ended infeasible", static_cast<int>(starts.size()) - feasible_starts,
                                         starts.size()));
    return f;
}

HeuristicResult fit_ghe_heuristic(const ObservationSeq& obs, const HeuristicOptions& options) {
    if (options.trials < 1) throw ParameterError("heuristic needs at least one trial");
    const int p_lo = options.forced_p > 0 ? options.forced_p : options.p_min;
    const int p_hi = options.forced_p > 0 ? options.forced_p : options.p_max;
    if (p_lo < 1 || p_hi < p_lo) throw ParameterError("invalid p range");
    const Data data = prepare(obs);
    const double theta0 = exponential_guess(obs, options.lambda);
    InnerSolver inner(data, options.lambda, 1e-8, 200);
    Rng rng = make_stream(options.seed, StreamId::Misc);
    std::uniform_int_distribution<int> pick(p_lo, p_hi);

    HeuristicResult out;
    double best_aic = std::numeric_limits<double>::infinity();
    std::vector<double> best_alpha;
    std::vector<double> best_beta;
    for (int t = 0; t < options.trials; ++t) {
        const int p = pick(rng);
        const auto up = static_cast<std::size_t>(p);
        std::vector<double> alpha(up);
        double s = 0.0;
        for (std::size_t k = 0; k + 1 < up; ++k) {
            alpha[k] = -1.0 + 3.0 * uniform01(rng);
            s += alpha[k];
        }
        alpha[up - 1] = 1.0 - s;
        std::sort(alpha.begin(), alpha.end(), std::greater<>());

        HeuristicTrial trial{p, false, std::numeric_limits<double>::infinity(), kNegInf};
        std::vector<double> beta;
        double val = kNegInf;
        for (double spread : kSpreads) {
            std::vector<double> b = initial_beta(up, theta0, spread);
            const double v = inner.solve(alpha, b);
            if (v > val) {
                val = v;
                beta = b;
            }
        }
        if (std::isfinite(val) && ghe_feasible(alpha, beta)) {
            const int k = 2 * p - 1 + (options.lambda ? 0 : 1);
            trial.feasible = true;
            trial.loglik = val;
            trial.aic = 2.0 * k - 2.0 * val;
            if (trial.aic < best_aic) {
                best_aic = trial.aic;
                best_alpha = alpha;
                best_beta = beta;
            }
        }
        out.trials.push_back(trial);
    }
    if (best_alpha.empty())
        throw FitError(fmt::format("heuristic: all {} trials infeasible (p in [{}, {}])", options.trials, p_lo, p_hi));
    out.best = assemble(obs, best_alpha, best_beta, options.lambda);
    out.best.converged = true;
    out.best.restarts = options.trials;
    return out;
}

}  // namespace balk
