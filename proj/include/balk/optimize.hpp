#pragma once

#include <functional>

#include <Eigen/Dense>

namespace balk {

struct Search1D {
    double x = 0.0;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Golden-section maximization of a unimodal f on [a, b].
Search1D golden_maximize(const std::function<double(double)>& f, double a, double b, double tol, int max_iter = 500);

/// Scan `points` grid nodes (log-spaced when `log_scale`), then refine around the
/// best node by golden section. Handles boundary maxima.
Search1D scan_maximize(const std::function<double(double)>& f, double lo, double hi, int points, bool log_scale,
                       double tol);

/// Root of a decreasing function on [lo, hi] by Newton steps kept inside a
/// shrinking bisection bracket. `fd` returns (g, g').
Search1D safeguarded_newton(const std::function<std::pair<double, double>(double)>& fd, double lo, double hi,
                            double tol, int max_iter = 200);

struct LbfgsOptions {
    int memory = 8;
    int max_iter = 200;
    double grad_tol = 1e-7;
    double f_tol = 1e-12;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Minimize f with limited-memory BFGS and a backtracking Armijo line search.
/// f may return +inf to mark infeasible points; the line search backs off.
LbfgsResult lbfgs_minimize(const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& f,
                           Eigen::VectorXd x0, const LbfgsOptions& options = {});

}  // namespace balk
