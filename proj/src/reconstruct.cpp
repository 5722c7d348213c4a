#include "balk/reconstruct.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "balk/errors.hpp"

namespace balk {

void check_trace(const QueueTrace& trace) {
    if (trace.s < 1) throw TraceIntegrityError("server count must be >= 1");
    if (trace.initial_in_system < 0) throw TraceIntegrityError("initial queue length is negative");
    for (std::size_t i = 1; i < trace.arrivals.size(); ++i)
        if (!(trace.arrivals[i] > trace.arrivals[i - 1]))
            throw TraceIntegrityError(fmt::format("arrival {} is not after arrival {}", i, i - 1));
    for (std::size_t j = 1; j < trace.departures.size(); ++j)
        if (!(trace.departures[j] > trace.departures[j - 1]))
            throw TraceIntegrityError(fmt::format("departure {} is not after departure {}", j, j - 1));
    // Departures win ties, so only arrivals strictly before a departure count.
    std::size_t ia = 0;
    for (std::size_t j = 0; j < trace.departures.size(); ++j) {
        while (ia < trace.arrivals.size() && trace.arrivals[ia] < trace.departures[j]) ++ia;
        const long q = trace.initial_in_system + static_cast<long>(ia) - static_cast<long>(j + 1);
        if (q < 0)
            throw TraceIntegrityError(
                fmt::format("departure {} at {} leaves a negative queue length", j, trace.departures[j]));
    }
}

ObservationSeq reconstruct(const QueueTrace& trace) {
    check_trace(trace);
    ObservationSeq obs;
    obs.s = trace.s;
    const auto& arr = trace.arrivals;
    const auto& dep = trace.departures;
    const long s = trace.s;
    const auto m = static_cast<long>(dep.size());

    long d = 0;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const double t = arr[i];
        while (d < m && dep[static_cast<std::size_t>(d)] <= t) ++d;
        const long q_after = trace.initial_in_system + static_cast<long>(i) + 1 - d;
        double v_after = 0.0;
        if (q_after >= s) {
            const long idx = d + q_after - s;
            if (idx >= m) break;
            v_after = dep[static_cast<std::size_t>(idx)] - t;
        }
        double w;
        if (i == 0) {
            const long q_before = q_after - 1;
            w = q_before >= s ? dep[static_cast<std::size_t>(d + q_before - s)] - t : 0.0;
        } else {
            const double a = t - arr[i - 1];
            obs.a.push_back(a);
            w = std::max(obs.w.back() + obs.x.back() - a, 0.0);
        }
        obs.w.push_back(w);
        obs.x.push_back(std::max(v_after - w, 0.0));
    }
    return obs;
}

}  // namespace balk
