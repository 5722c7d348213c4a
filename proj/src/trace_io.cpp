#include "balk/trace_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "balk/errors.hpp"

namespace balk {

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& text, long line) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v))
        throw ValidationError(fmt::format("malformed epoch '{}'", text), line);
    return v;
}

long parse_long(const std::string& text, long line) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw ValidationError(fmt::format("malformed integer '{}'", text), line);
    return v;
}

// Negative-queue check with the offending line reported.
void check_queue(const QueueTrace& t, const std::vector<long>& dep_lines) {
    std::size_t ia = 0;
    for (std::size_t j = 0; j < t.departures.size(); ++j) {
        while (ia < t.arrivals.size() && t.arrivals[ia] < t.departures[j]) ++ia;
        if (t.initial_in_system + static_cast<long>(ia) - static_cast<long>(j + 1) < 0) {
            const long line = j < dep_lines.size() ? dep_lines[j] : -1;
            throw TraceIntegrityError(
                (line >= 0 ? fmt::format("line {}: ", line) : std::string()) +
                fmt::format("departure at {} with no customer in system", t.departures[j]));
        }
    }
}

}  // namespace

void write_trace_csv(std::ostream& out, const QueueTrace& trace) {
    fmt::print(out, "# servers={}\n# initial_queue={}\nevent_type,epoch\n", trace.s, trace.initial_in_system);
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < trace.arrivals.size() || j < trace.departures.size()) {
        const bool take_dep =
            j < trace.departures.size() && (i == trace.arrivals.size() || trace.departures[j] <= trace.arrivals[i]);
        if (take_dep)
            fmt::print(out, "D,{:.17g}\n", trace.departures[j++]);
        else
            fmt::print(out, "A,{:.17g}\n", trace.arrivals[i++]);
    }
}

QueueTrace read_trace_csv(std::istream& in) {
    QueueTrace t;
    std::vector<long> dep_lines;
    std::string raw;
    long line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string row = trim(raw);
        if (row.empty()) continue;
        if (row[0] == '#') {
            const std::string body = trim(row.substr(1));
            const auto eq = body.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = trim(body.substr(0, eq));
            const std::string value = trim(body.substr(eq + 1));
            if (key == "servers") {
                const long s = parse_long(value, line);
                if (s < 1) throw ValidationError("servers must be >= 1", line);
                t.s = static_cast<int>(s);
            } else if (key == "initial_queue") {
                t.initial_in_system = parse_long(value, line);
                if (t.initial_in_system < 0) throw ValidationError("initial_queue must be >= 0", line);
            }
            continue;
        }
        if (row.rfind("event_type", 0) == 0) continue;
        const auto comma = row.find(',');
        if (comma == std::string::npos) throw ValidationError("expected 'event_type,epoch'", line);
        const std::string kind = trim(row.substr(0, comma));
        const double epoch = parse_double(trim(row.substr(comma + 1)), line);
        if (kind == "A") {
            if (!t.arrivals.empty() && !(epoch > t.arrivals.back()))
                throw ValidationError(fmt::format("arrival epoch {} is not increasing", epoch), line);
            t.arrivals.push_back(epoch);
        } else if (kind == "D") {
            if (!t.departures.empty() && !(epoch > t.departures.back()))
                throw ValidationError(fmt::format("departure epoch {} is not increasing", epoch), line);
            t.departures.push_back(epoch);
            dep_lines.push_back(line);
        } else {
            throw ValidationError(fmt::format("unknown event type '{}'", kind), line);
        }
    }
    check_queue(t, dep_lines);
    return t;
}

nlohmann::json trace_to_json(const QueueTrace& trace) {
    return {{"servers", trace.s},
            {"initial_queue", trace.initial_in_system},
            {"arrivals", trace.arrivals},
            {"departures", trace.departures}};
}

QueueTrace trace_from_json(const nlohmann::json& j) {
    QueueTrace t;
    try {
        t.s = j.value("servers", 1);
        t.initial_in_system = j.value("initial_queue", 0L);
        t.arrivals = j.at("arrivals").get<std::vector<double>>();
        t.departures = j.at("departures").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed trace JSON: ") + e.what());
    }
    if (t.s < 1) throw ValidationError("servers must be >= 1");
    for (std::size_t i = 1; i < t.arrivals.size(); ++i)
        if (!(t.arrivals[i] > t.arrivals[i - 1]))
            throw ValidationError(fmt::format("arrivals[{}] is not increasing", i));
    for (std::size_t i = 1; i < t.departures.size(); ++i)
        if (!(t.departures[i] > t.departures[i - 1]))
            throw ValidationError(fmt::format("departures[{}] is not increasing", i));
    check_queue(t, {});
    return t;
}

QueueTrace import_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(std::string("invalid JSON: ") + e.what());
        }
        return trace_from_json(j);
    }
    return read_trace_csv(in);
}

void export_trace(const std::string& path, const QueueTrace& trace) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
        out << trace_to_json(trace).dump() << '\n';
    else
        write_trace_csv(out, trace);
}

void write_observations_csv(std::ostream& out, const ObservationSeq& obs) {
    fmt::print(out, "i,A,W,X\n");
    for (std::size_t i = 0; i < obs.w.size(); ++i) {
        if (i == 0)
            fmt::print(out, "0,,{:.17g},{:.17g}\n", obs.w[0], obs.x[0]);
        else
            fmt::print(out, "{},{:.17g},{:.17g},{:.17g}\n", i, obs.a[i - 1], obs.w[i], obs.x[i]);
    }
}

}  // namespace balk
