#pragma once

#include <cstdint>
#include <vector>

#include "balk/dist.hpp"
#include "balk/types.hpp"

namespace balk {

struct SimConfig {
    double lambda = 1.0;
    int s = 1;
    ServiceModel service = ExponentialService{1.0};
    PatienceModel patience = Deterministic{};
    long n_effective = 1000;  // observations; n + 1 arrivals are generated
    long burn_in = 10000;
    std::uint64_t seed = 1;
    double event_cap = 1e8;
    bool record_potential = false;  // per-potential-arrival flags for standard errors
    int probe_spacing = 0;          // > 0: collect V samples for the PASTA check
};

struct SimTruth {
    long balked_count = 0;
    long potential_count = 0;
    long effective_count = 0;
    ObservationSeq obs;
    std::vector<IdlePeriod> idle;
    double loss_fraction = 0.0;
    std::vector<double> service_times;
    long zero_wait_count = 0;  // potential arrivals that found V = 0

    std::vector<std::uint8_t> potential_saw_zero;
    std::vector<std::uint8_t> potential_balked;
    std::vector<double> v_at_arrivals;  // every probe_spacing-th potential arrival
    std::vector<double> v_at_probes;    // independent Poisson probe epochs
};

struct SimResult {
    QueueTrace trace;
    SimTruth truth;
};

/// Event-driven FCFS M/G/s simulation with balking. Departures precede
/// arrivals at equal epochs.
SimResult simulate(const SimConfig& config);

std::vector<IdlePeriod> idle_periods(const SimTruth& truth);

/// Queue-length path of a birth-death chain observed at its transitions.
struct DiscreteTrace {
    std::vector<long> q;       // Q_0..Q_n
    std::vector<double> hold;  // J_1..J_n, time spent in Q_{i-1}
};

enum class DiscreteFamily { Exponential, Geometric };

/// Joining probability at queue length q: exp(-theta q) or (1 - theta)^q.
double discrete_survival(DiscreteFamily family, double theta, long q);

/// M/M/1 with state-dependent thinning: arrivals at rate lambda * survival(q),
/// unit-mean exponential services unless `mu` says otherwise.
DiscreteTrace simulate_birth_death(double lambda, DiscreteFamily family, double theta, long transitions,
                                   std::uint64_t seed, double mu = 1.0);

/// Same periods, recovered from the observable trace over (0, last arrival].
std::vector<IdlePeriod> idle_periods(const QueueTrace& trace);

}  // namespace balk
