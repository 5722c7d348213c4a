#pragma once

#include <iosfwd>
#include <string>

#include "json.hpp"

#include "balk/types.hpp"

namespace balk {

/// CSV with `# servers=` / `# initial_queue=` comment headers and rows
/// `event_type,epoch` (A or D), merged in time order, departures first on ties.
void write_trace_csv(std::ostream& out, const QueueTrace& trace);
QueueTrace read_trace_csv(std::istream& in);

nlohmann::json trace_to_json(const QueueTrace& trace);
QueueTrace trace_from_json(const nlohmann::json& j);

/// Load by extension (.json, otherwise CSV). Errors carry line numbers.
QueueTrace import_trace(const std::string& path);
void export_trace(const std::string& path, const QueueTrace& trace);

void write_observations_csv(std::ostream& out, const ObservationSeq& obs);

}  // namespace balk
