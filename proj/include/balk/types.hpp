#pragma once

#include <vector>

namespace balk {

/// Observable event log of the non-balking customers. Time zero is an
/// effective arrival; `initial_in_system` customers were present just before it.
struct QueueTrace {
    int s = 1;
    long initial_in_system = 0;
    std::vector<double> arrivals;
    std::vector<double> departures;
};

/// Effective interarrival times A_1..A_n, waiting times W_0..W_n and upward
/// jumps X_0..X_n.
struct ObservationSeq {
    int s = 1;
    std::vector<double> a;
    std::vector<double> w;
    std::vector<double> x;

    std::size_t size() const { return a.size(); }
};

/// One period with at least one free server: number of arrivals E during it
/// and its length I.
struct IdlePeriod {
    long e = 0;
    double i = 0.0;
};

}  // namespace balk
