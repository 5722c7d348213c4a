#pragma once

#include "balk/types.hpp"

namespace balk {

/// Throws TraceIntegrityError for unsorted epochs or a negative queue length.
void check_trace(const QueueTrace& trace);

/// Rebuild (A, W, X) from the event log. W_0 is read off the departure list;
/// later W follow the Lindley recursion. Arrivals whose post-arrival virtual
/// waiting time needs departures beyond the log are dropped.
ObservationSeq reconstruct(const QueueTrace& trace);

}  // namespace balk
