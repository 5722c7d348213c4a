#include "balk/optimize.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace balk {

Search1D golden_maximize(const std::function<double(double)>& f, double a, double b, double tol, int max_iter) {
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c);
    double fd = f(d);
    int it = 0;
    while (std::abs(b - a) > tol && it < max_iter) {
        ++it;
        if (fc >= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Search1D r;
    r.x = fc >= fd ? c : d;
    r.f = std::max(fc, fd);
    r.iterations = it;
    r.converged = std::abs(b - a) <= tol;
    return r;
}

Search1D scan_maximize(const std::function<double(double)>& f, double lo, double hi, int points, bool log_scale,
                       double tol) {
    std::vector<double> xs(points);
    for (int i = 0; i < points; ++i) {
        const double t = static_cast<double>(i) / (points - 1);
        xs[i] = log_scale ? lo * std::pow(hi / lo, t) : lo + t * (hi - lo);
    }
    xs.front() = lo;
    xs.back() = hi;
    int best = 0;
    double fbest = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < points; ++i) {
        const double v = f(xs[i]);
        if (v > fbest) {
            fbest = v;
            best = i;
        }
    }
    const double a = xs[std::max(best - 1, 0)];
    const double b = xs[std::min(best + 1, points - 1)];
    Search1D r = golden_maximize(f, a, b, tol);
    r.iterations += points;
    if (fbest > r.f) {
        r.x = xs[best];
        r.f = fbest;
    }
    return r;
}

Search1D safeguarded_newton(const std::function<std::pair<double, double>(double)>& fd, double lo, double hi,
                            double tol, int max_iter) {
    double x = 0.5 * (lo + hi);
    Search1D r;
    for (int it = 1; it <= max_iter; ++it) {
        const auto [g, gp] = fd(x);
        r.iterations = it;
        if (g > 0.0)
            lo = x;
        else
            hi = x;
        double next = x - g / gp;
        if (!(gp < 0.0) || !(next > lo && next < hi)) next = 0.5 * (lo + hi);
        const double step = std::abs(next - x);
        x = next;
        if (step <= tol * std::max(1.0, std::abs(x)) || hi - lo <= tol) {
            r.converged = true;
            break;
        }
    }
    r.x = x;
    r.f = fd(x).first;
    return r;
}

LbfgsResult lbfgs_minimize(const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& f,
                           Eigen::VectorXd x0, const LbfgsOptions& options) {
    const auto n = x0.size();
    LbfgsResult res;
    Eigen::VectorXd x = std::move(x0);
    Eigen::VectorXd g(n);
    double fx = f(x, g);
    std::deque<Eigen::VectorXd> s_hist;
    std::deque<Eigen::VectorXd> y_hist;
    std::deque<double> rho_hist;

    res.x = x;
    res.f = fx;
    if (!std::isfinite(fx)) return res;

    for (int it = 0; it < options.max_iter; ++it) {
        res.iterations = it + 1;
        if (g.lpNorm<Eigen::Infinity>() <= options.grad_tol) {
            res.converged = true;
            break;
        }
        // Two-loop recursion.
        Eigen::VectorXd q = g;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[i] = rho_hist[i] * s_hist[i].dot(q);
            q -= alpha[i] * y_hist[i];
        }
        double gamma = 1.0;
        if (!s_hist.empty()) gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        Eigen::VectorXd dir = gamma * q;
        for (std::size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(dir);
            dir += s_hist[i] * (alpha[i] - beta);
        }
        dir = -dir;
        double slope = g.dot(dir);
        if (!(slope < 0.0)) {
            dir = -g;
            slope = -g.squaredNorm();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        double step = 1.0;
        if (s_hist.empty()) step = std::min(1.0, 1.0 / std::max(g.lpNorm<Eigen::Infinity>(), 1e-12));
        Eigen::VectorXd x_new(n);
        Eigen::VectorXd g_new(n);
        double f_new = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = x + step * dir;
            f_new = f(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const Eigen::VectorXd s = x_new - x;
        const Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        const double f_change = fx - f_new;
        x = x_new;
        g = g_new;
        fx = f_new;
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > options.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        if (f_change <= options.f_tol * std::max(1.0, std::abs(fx))) {
            res.converged = true;
            break;
        }
    }
    res.x = x;
    res.f = fx;
    return res;
}

}  // namespace balk
