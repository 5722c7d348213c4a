#include "balk/sim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>

#include <fmt/format.h>

#include "balk/errors.hpp"

namespace balk {

namespace {

using MinHeap = std::priority_queue<double, std::vector<double>, std::greater<>>;

double exp_draw(Rng& rng, double rate) {
    return -std::log(uniform01(rng)) / rate;
}

void check_config(const SimConfig& c) {
    if (!(c.lambda > 0.0)) throw ParameterError("lambda must be positive");
    if (c.s < 1) throw ParameterError("server count must be >= 1");
    if (c.n_effective < 1) throw ParameterError("n_effective must be >= 1");
    if (c.burn_in < 0) throw ParameterError("burn_in must be >= 0");
    validate(c.service);
    validate(c.patience);
    const double rho = c.lambda * mean_service(c.service) / c.s;
    const double patient = infinite_patience_mass(c.patience);
    if (rho * patient >= 1.0)
        throw InstabilityError(fmt::format("unstable configuration: rho * P(Y = inf) = {} >= 1", rho * patient));
}

}  // namespace

SimResult simulate(const SimConfig& c) {
    check_config(c);
    Rng arrivals_rng = make_stream(c.seed, StreamId::Arrivals);
    Rng service_rng = make_stream(c.seed, StreamId::Services);
    Rng patience_rng = make_stream(c.seed, StreamId::Patience);
    Rng probe_rng = make_stream(c.seed, StreamId::Probe);

    const auto s = static_cast<std::size_t>(c.s);
    std::vector<double> free_at(s, 0.0);
    MinHeap completions;

    SimResult out;
    QueueTrace& trace = out.trace;
    SimTruth& truth = out.truth;
    trace.s = c.s;
    ObservationSeq& obs = truth.obs;
    obs.s = c.s;

    const auto n_arrivals = c.n_effective + 1;
    trace.arrivals.reserve(static_cast<std::size_t>(n_arrivals));
    obs.a.reserve(static_cast<std::size_t>(c.n_effective));
    obs.w.reserve(static_cast<std::size_t>(n_arrivals));
    obs.x.reserve(static_cast<std::size_t>(n_arrivals));

    double t = 0.0;
    double events = 0.0;
    long effective_before = 0;
    bool observing = false;

    bool idle_open = false;
    double idle_start = 0.0;
    long idle_e = 0;

    const double probe_rate = c.probe_spacing > 0 ? c.lambda / c.probe_spacing : 0.0;
    double next_probe = kInf;
    long potential_seen = 0;

    auto min_free = [&] { return *std::min_element(free_at.begin(), free_at.end()); };

    while (true) {
        t += exp_draw(arrivals_rng, c.lambda);
        events += 1.0;
        if (events > c.event_cap)
            throw InstabilityError(fmt::format("event cap {} reached with {} customers in system", c.event_cap,
                                               completions.size()));

        while (!completions.empty() && completions.top() <= t) {
            const double d = completions.top();
            const bool was_full = completions.size() == s;
            completions.pop();
            events += 1.0;
            if (observing) {
                trace.departures.push_back(d);
                if (was_full) {
                    idle_open = true;
                    idle_start = d;
                    idle_e = 0;
                }
            }
        }

        if (observing) {
            while (next_probe < t) {
                truth.v_at_probes.push_back(std::max(0.0, min_free() - next_probe));
                next_probe += exp_draw(probe_rng, probe_rate);
            }
        }

        const double v_minus = std::max(0.0, min_free() - t);
        const bool joins = sample_join(c.patience, v_minus, patience_rng);

        if (observing) {
            ++truth.potential_count;
            if (v_minus == 0.0) ++truth.zero_wait_count;
            if (!joins) ++truth.balked_count;
            if (c.record_potential) {
                truth.potential_saw_zero.push_back(v_minus == 0.0 ? 1 : 0);
                truth.potential_balked.push_back(joins ? 0 : 1);
            }
            if (c.probe_spacing > 0 && potential_seen++ % c.probe_spacing == 0) truth.v_at_arrivals.push_back(v_minus);
        }
        if (!joins) continue;

        if (!observing) {
            if (effective_before < c.burn_in) {
                ++effective_before;
                const auto k = static_cast<std::size_t>(std::min_element(free_at.begin(), free_at.end()) - free_at.begin());
                const double done = std::max(t, free_at[k]) + sample_service(c.service, service_rng);
                free_at[k] = done;
                completions.push(done);
                if (completions.size() > 50'000'000)
                    throw InstabilityError("queue length exceeded 5e7 during burn-in");
                continue;
            }
            // Re-base the clock at this arrival.
            const double t0 = t;
            for (double& f : free_at) f -= t0;
            std::vector<double> pending;
            pending.reserve(completions.size());
            while (!completions.empty()) {
                pending.push_back(completions.top() - t0);
                completions.pop();
            }
            for (double p : pending) completions.push(p);
            t = 0.0;
            trace.initial_in_system = static_cast<long>(completions.size());
            observing = true;
            if (probe_rate > 0.0) next_probe = exp_draw(probe_rng, probe_rate);
        }

        const bool idle_before = completions.size() < s;
        const double w = std::max(0.0, min_free() - t);
        const auto k = static_cast<std::size_t>(std::min_element(free_at.begin(), free_at.end()) - free_at.begin());
        const double b = sample_service(c.service, service_rng);
        const double done = std::max(t, free_at[k]) + b;
        free_at[k] = done;
        completions.push(done);
        const double v_after = std::max(0.0, min_free() - t);

        const bool first = trace.arrivals.empty();
        if (!first) obs.a.push_back(t - trace.arrivals.back());
        trace.arrivals.push_back(t);
        obs.w.push_back(w);
        obs.x.push_back(v_after - w);
        truth.service_times.push_back(b);

        if (first) {
            if (completions.size() < s) {
                idle_open = true;
                idle_start = 0.0;
                idle_e = 0;
            }
        } else if (idle_before && idle_open) {
            ++idle_e;
            if (completions.size() == s) {
                truth.idle.push_back({idle_e, t - idle_start});
                idle_open = false;
            }
        }

        if (static_cast<long>(trace.arrivals.size()) == n_arrivals) break;
    }

    if (idle_open) truth.idle.push_back({idle_e, t - idle_start});
    while (!completions.empty()) {
        trace.departures.push_back(completions.top());
        completions.pop();
    }

    truth.effective_count = c.n_effective;
    truth.loss_fraction =
        truth.potential_count > 0 ? static_cast<double>(truth.balked_count) / static_cast<double>(truth.potential_count)
                                  : 0.0;
    return out;
}

std::vector<IdlePeriod> idle_periods(const SimTruth& truth) {
    return truth.idle;
}

std::vector<IdlePeriod> idle_periods(const QueueTrace& trace) {
    std::vector<IdlePeriod> out;
    if (trace.arrivals.empty()) return out;
    const double horizon = trace.arrivals.back();
    const auto s = static_cast<long>(trace.s);
    const double t0 = trace.arrivals.front();
    long q = trace.initial_in_system + 1;  // after the first arrival
    std::size_t ia = 1;
    std::size_t id = 0;
    while (id < trace.departures.size() && trace.departures[id] <= t0) {
        ++id;
        --q;
    }
    bool open = q < s;
    double start = t0;
    long e = 0;
    while (ia < trace.arrivals.size()) {
        const double ta = trace.arrivals[ia];
        if (id < trace.departures.size() && trace.departures[id] <= ta) {
            if (q == s) {
                open = true;
                start = trace.departures[id];
                e = 0;
            }
            --q;
            ++id;
            continue;
        }
        if (q < s && open) {
            ++e;
            if (q + 1 == s) {
                out.push_back({e, ta - start});
                open = false;
            }
        }
        ++q;
        ++ia;
    }
    if (open) out.push_back({e, horizon - start});
    return out;
}

double discrete_survival(DiscreteFamily family, double theta, long q) {
    if (q <= 0) return 1.0;
    if (family == DiscreteFamily::Exponential) return std::exp(-theta * static_cast<double>(q));
    return std::pow(1.0 - theta, static_cast<double>(q));
}

DiscreteTrace simulate_birth_death(double lambda, DiscreteFamily family, double theta, long transitions,
                                   std::uint64_t seed, double mu) {
    if (!(lambda > 0.0) || !(mu > 0.0)) throw ParameterError("rates must be positive");
    if (family == DiscreteFamily::Geometric && !(theta >= 0.0 && theta < 1.0))
        throw ParameterError("geometric theta must lie in [0, 1)");
    if (family == DiscreteFamily::Exponential && !(theta >= 0.0)) throw ParameterError("theta must be >= 0");
    if (transitions < 1) throw ParameterError("need at least one transition");
    Rng rng = make_stream(seed, StreamId::Arrivals);
    DiscreteTrace out;
    out.q.reserve(static_cast<std::size_t>(transitions) + 1);
    out.hold.reserve(static_cast<std::size_t>(transitions));
    long q = 0;
    out.q.push_back(q);
    for (long k = 0; k < transitions; ++k) {
        const double up = lambda * discrete_survival(family, theta, q);
        const double down = q > 0 ? mu : 0.0;
        const double total = up + down;
        if (!(total > 0.0)) throw InstabilityError("birth-death chain is absorbed");
        out.hold.push_back(exp_draw(rng, total));
        q += uniform01(rng) * total < up ? 1 : -1;
        out.q.push_back(q);
    }
    return out;
}

}  // namespace balk
