#pragma once

#include <iosfwd>
#include <vector>

#include "balk/dist.hpp"

namespace balk {

/// Single-server stationary law of the virtual waiting time on x_k = k h.
struct StationaryProfile {
    double h = 1e-3;
    std::vector<double> v;  // density
    std::vector<double> w;  // waiting-time density of joining customers
    double pi0 = 0.0;
    double p_loss = 0.0;
    double rho = 0.0;
    int terms = 0;  // series terms used

    double x_max() const { return h * static_cast<double>(v.size() - 1); }
    /// Linear interpolation of v.
    double density(double x) const;
    /// Rate of the exponential law of n (theta0 - theta_hat): v(theta0) / (1 - P_loss).
    double limit_rate(double theta0) const;
};

/// Neumann series v = pi0 sum u_n with u_1 = rho g_e and
/// u_n = rho (u_{n-1} H) * g_e, convolutions by FFT on a trapezoid grid.
/// x_max <= 0 picks the range automatically (tail below 1e-10, capped at 200).
StationaryProfile solve_volterra(double lambda, const ServiceModel& service, const PatienceModel& patience,
                                 double h = 1e-3, double x_max = 0.0);

/// Exponential service: v(x) = pi0 lambda exp(-mu x + lambda S(x)).
StationaryProfile exp_service_closed_form(double lambda, double mu, const PatienceModel& patience, double h = 1e-3,
                                          double x_max = 0.0);

/// Constant patience theta0 via the convolution powers of g_e. The grid step is
/// adjusted so that theta0 is a node.
StationaryProfile constant_patience_closed_form(double lambda, const ServiceModel& service, double theta0,
                                                double h = 1e-3, double x_max = 0.0);

void write_profile_csv(std::ostream& out, const StationaryProfile& profile);

}  // namespace balk
