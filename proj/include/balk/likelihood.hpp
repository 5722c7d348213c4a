#pragma once

#include <vector>

#include <Eigen/Dense>

#include "balk/dist.hpp"
#include "balk/types.hpp"

namespace balk {

struct LikelihoodReport {
    double loglik = 0.0;
    Eigen::VectorXd gradient;  // (lambda, theta...)
    Eigen::MatrixXd hessian;   // exponential family only
    Eigen::MatrixXd rows;      // per-observation scores, one row per observation
    long used = 0;             // observations not removed by the indicator
};

/// Conditional log-likelihood
///   n log(lambda) + sum_i [log H(W_i) - lambda * int_0^{A_i} H(W_{i-1} + X_{i-1} - u) du] 1{H(W_i) > 0}.
double loglik(double lambda, const PatienceModel& model, const ObservationSeq& obs);

/// Per-observation contributions log(lambda) + [...] 1{...}; they sum to loglik.
std::vector<double> observation_terms(double lambda, const PatienceModel& model, const ObservationSeq& obs);

/// lambda maximizing loglik for fixed patience parameters: n / sum of used integrals.
double profile_lambda(const PatienceModel& model, const ObservationSeq& obs);

/// Gradient, Hessian and score rows in (lambda, theta) with theta the exponential rate.
LikelihoodReport grad_exponential(double lambda, double theta, const ObservationSeq& obs);

/// Gradient and score rows in (lambda, alpha_1..alpha_p, beta_1..beta_p),
/// alpha treated as unconstrained.
LikelihoodReport grad_ghe(double lambda, const Ghe& model, const ObservationSeq& obs);

}  // namespace balk
