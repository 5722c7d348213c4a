#include "balk/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "balk/errors.hpp"
#include "balk/numerics.hpp"
#include "balk/reconstruct.hpp"
#include "balk/stats.hpp"

namespace balk {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct EstimatorName {
    std::string kind;
    int p = 0;
};

EstimatorName parse_estimator(const std::string& name) {
    const auto colon = name.find(':');
    if (colon == std::string::npos) {
        static const std::vector<std::string> known{"exponential", "exponential_known", "constant", "idle", "heuristic"};
        if (std::find(known.begin(), known.end(), name) == known.end())
            throw ValidationError("unknown estimator '" + name + "'");
        return {name, 0};
    }
    EstimatorName e{name.substr(0, colon), 0};
    if (e.kind != "ghe" && e.kind != "he") throw ValidationError("unknown estimator '" + name + "'");
    try {
        e.p = std::stoi(name.substr(colon + 1));
    } catch (const std::exception&) {
        throw ValidationError("bad component count in '" + name + "'");
    }
    if (e.p < 1) throw ValidationError("component count must be >= 1 in '" + name + "'");
    return e;
}

double truth_of(const SimConfig& c, const std::string& param) {
    if (param == "lambda" || param == "lambda_tilde") return c.lambda;
    if (param == "theta") {
        if (const auto* e = std::get_if<Exponential>(&c.patience)) return e->theta;
        if (const auto* d = std::get_if<Deterministic>(&c.patience)) return d->theta;
        return kNaN;
    }
    if (const auto* g = std::get_if<Ghe>(&c.patience)) {
        const bool a = param.rfind("alpha", 0) == 0;
        const bool b = param.rfind("beta", 0) == 0;
        if (!a && !b) return kNaN;
        const std::size_t k = std::stoul(param.substr(a ? 5 : 4)) - 1;
        const auto& v = a ? g->alpha : g->beta;
        return k < v.size() ? v[k] : kNaN;
    }
    return kNaN;
}

struct Replication {
    std::vector<EstimateRow> rows;
    std::vector<FailureRow> failures;
};

Replication run_one(const ExperimentSpec& spec, std::size_t ci, int rep) {
    Replication out;
    SimConfig config = spec.cases[ci].config;
    config.seed = replication_seed(spec.master_seed, rep);
    ObservationSeq obs;
    QueueTrace trace;
    try {
        SimResult sim = simulate(config);
        trace = std::move(sim.trace);
        obs = reconstruct(trace);
    } catch (const std::exception& ex) {
        for (const auto& e : spec.estimators) out.failures.push_back({ci, rep, e, ex.what()});
        return out;
    }
    for (const auto& name : spec.estimators) {
        try {
            if (name == "idle") {
                const RateEstimate r = lambda_idle(idle_periods(trace), spec.levels);
                const double se = r.events > 0 ? r.value / std::sqrt(static_cast<double>(r.events)) : 0.0;
                out.rows.push_back({ci, rep, config.seed, name, "lambda_tilde", r.value, se});
                continue;
            }
            const FitResult f = fit_by_name(name, obs, config.s == 1 ? std::optional<ServiceModel>(config.service) : std::nullopt,
                                            config.seed, name == "exponential_known" ? std::optional<double>(config.lambda) : std::nullopt);
            for (const auto& p : f.params) out.rows.push_back({ci, rep, config.seed, name, p.name, p.value, p.std_error});
        } catch (const std::exception& ex) {
            out.failures.push_back({ci, rep, name, ex.what()});
        }
    }
    return out;
}

void summarize(ExperimentResult& r) {
    // Group values by (case, estimator, param) keeping first-appearance order.
    struct Group {
        std::size_t ci;
        std::string estimator;
        std::string param;
        std::vector<double> values;
        std::vector<double> ses;
    };
    std::vector<Group> groups;
    std::map<std::tuple<std::size_t, std::string, std::string>, std::size_t> index;
    for (const auto& row : r.estimates) {
        const auto key = std::make_tuple(row.case_index, row.estimator, row.param);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, groups.size()).first;
            groups.push_back({row.case_index, row.estimator, row.param, {}, {}});
        }
        groups[it->second].values.push_back(row.value);
        groups[it->second].ses.push_back(row.std_error);
    }
    for (const auto& g : groups) {
        const double truth = truth_of(r.spec.cases[g.ci].config, g.param);
        const double m = mean(g.values);
        const double sd = g.values.size() > 1 ? std::sqrt(variance(g.values)) : 0.0;
        for (double level : r.spec.levels) {
            SummaryRow p{g.ci, g.estimator, g.param, level, quantile(g.values, 0.5 * (1.0 - level)),
                         quantile(g.values, 0.5 * (1.0 + level)), m, sd, truth, kNaN,
                         static_cast<long>(g.values.size())};
            r.percentile.push_back(p);

            const double z = normal_quantile(0.5 * (1.0 + level));
            double lo = 0.0;
            double hi = 0.0;
            long covered = 0;
            for (std::size_t i = 0; i < g.values.size(); ++i) {
                const double a = g.values[i] - z * g.ses[i];
                const double b = g.values[i] + z * g.ses[i];
                lo += a;
                hi += b;
                if (a <= truth && truth <= b) ++covered;
            }
            const double cnt = static_cast<double>(g.values.size());
            SummaryRow nrow{g.ci, g.estimator, g.param, level, lo / cnt, hi / cnt, m, sd, truth,
                            std::isnan(truth) ? kNaN : static_cast<double>(covered) / cnt,
                            static_cast<long>(g.values.size())};
            r.normal.push_back(nrow);
        }
    }
}

std::string num(double x) {
    if (std::isnan(x)) return "";
    return fmt::format("{:.10g}", x);
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream f(p);
    if (!f) throw ValidationError("cannot write " + p.string());
    return f;
}

void write_summary(std::ostream& out, const ExperimentResult& r, const std::vector<SummaryRow>& rows,
                   const std::string& method) {
    out << "case,estimator,param,level,lower,upper,mean,sd,truth,coverage,count,method\n";
    for (const auto& s : rows)
        out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}\n", r.spec.cases[s.case_index].label, s.estimator,
                           s.param, num(s.level), num(s.lower), num(s.upper), num(s.mean), num(s.sd), num(s.truth),
                           num(s.coverage), s.count, method);
}

}  // namespace

FitResult fit_by_name(const std::string& name, const ObservationSeq& obs, std::optional<ServiceModel> service,
                      std::uint64_t seed, std::optional<double> lambda) {
    const EstimatorName e = parse_estimator(name);
    if (e.kind == "idle") throw ValidationError("'idle' needs the event trace, not observations");
    if (e.kind == "exponential" || e.kind == "exponential_known") {
        if (e.kind == "exponential_known" && !lambda) throw ValidationError("exponential_known needs lambda");
        ExponentialFitOptions o;
        o.lambda = lambda;
        return fit_exponential(obs, o);
    }
    if (e.kind == "constant") {
        ConstantFitOptions o;
        if (obs.s == 1) o.service = service;
        return fit_constant(obs, o);
    }
    if (e.kind == "heuristic") {
        HeuristicOptions o;
        o.seed = seed;
        o.lambda = lambda;
        return fit_ghe_heuristic(obs, o).best;
    }
    GheFitOptions o;
    o.seed = seed;
    o.lambda = lambda;
    o.hyperexponential = e.kind == "he";
    return fit_ghe(obs, e.p, o);
}

void check_estimator_name(const std::string& name) {
    parse_estimator(name);
}

SimConfig sim_config_from_json(const nlohmann::json& j, const SimConfig& base) {
    if (!j.is_object()) throw ValidationError("simulation config must be an object");
    SimConfig c = base;
    try {
        if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
        if (j.contains("servers")) c.s = j.at("servers").get<int>();
        if (j.contains("service")) c.service = service_from_json(j.at("service"));
        if (j.contains("patience")) c.patience = patience_from_json(j.at("patience"));
        if (j.contains("n")) c.n_effective = j.at("n").get<long>();
        if (j.contains("burn_in")) c.burn_in = j.at("burn_in").get<long>();
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("event_cap")) c.event_cap = j.at("event_cap").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(e.what());
    }
    if (!(c.lambda > 0.0)) throw ValidationError("lambda must be positive");
    if (c.s < 1) throw ValidationError("servers must be >= 1");
    if (c.n_effective < 1) throw ValidationError("n must be >= 1");
    if (c.burn_in < 0) throw ValidationError("burn_in must be >= 0");
    return c;
}

ExperimentSpec experiment_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
    ExperimentSpec s;
    try {
        s.scenario = j.value("scenario", s.scenario);
        const SimConfig base = sim_config_from_json(j.value("sim", nlohmann::json::object()));
        if (j.contains("cases")) {
            for (const auto& c : j.at("cases")) {
                ExperimentCase ec;
                ec.label = c.value("label", fmt::format("case{}", s.cases.size() + 1));
                ec.config = sim_config_from_json(c, base);
                s.cases.push_back(ec);
            }
        } else {
            s.cases.push_back({"base", base});
        }
        if (j.contains("estimators")) s.estimators = j.at("estimators").get<std::vector<std::string>>();
        s.replications = j.value("replications", s.replications);
        if (j.contains("levels")) s.levels = j.at("levels").get<std::vector<double>>();
        s.jobs = j.value("jobs", s.jobs);
        s.master_seed = j.value("seed", s.master_seed);
        s.out = j.value("out", s.out);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(e.what());
    }
    if (s.cases.empty()) throw ValidationError("experiment needs at least one case");
    if (s.replications < 1) throw ValidationError("replications must be >= 1");
    if (s.estimators.empty()) throw ValidationError("no estimators selected");
    for (const auto& e : s.estimators) parse_estimator(e);
    for (double l : s.levels)
        if (!(l > 0.0 && l < 1.0)) throw ValidationError("confidence levels must lie in (0, 1)");
    return s;
}

double ExperimentResult::failure_fraction() const {
    return attempted > 0 ? static_cast<double>(failures.size()) / static_cast<double>(attempted) : 0.0;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    for (const auto& e : spec.estimators) parse_estimator(e);
    const std::size_t total = spec.cases.size() * static_cast<std::size_t>(spec.replications);
    std::vector<Replication> reps(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < total; t = next++) {
            const std::size_t ci = t / static_cast<std::size_t>(spec.replications);
            const int rep = static_cast<int>(t % static_cast<std::size_t>(spec.replications));
            reps[t] = run_one(spec, ci, rep);
        }
    };
    unsigned jobs = spec.jobs > 0 ? static_cast<unsigned>(spec.jobs) : std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min<unsigned>(jobs, static_cast<unsigned>(total));
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < jobs; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    ExperimentResult r;
    r.spec = spec;
    r.attempted = static_cast<long>(total * spec.estimators.size());
    for (auto& rep : reps) {
        r.estimates.insert(r.estimates.end(), rep.rows.begin(), rep.rows.end());
        r.failures.insert(r.failures.end(), rep.failures.begin(), rep.failures.end());
    }
    summarize(r);
    return r;
}

void write_experiment(const ExperimentResult& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        auto f = open_out(fs::path(dir) / "estimates.csv");
        f << "case,replication,seed,estimator,param,value,std_error\n";
        for (const auto& e : r.estimates)
            f << fmt::format("{},{},{},{},{},{},{}\n", r.spec.cases[e.case_index].label, e.replication, e.seed,
                             e.estimator, e.param, num(e.value), num(e.std_error));
    }
    {
        auto f = open_out(fs::path(dir) / "percentile_ci.csv");
        write_summary(f, r, r.percentile, "empirical_percentile");
    }
    {
        auto f = open_out(fs::path(dir) / "normal_ci.csv");
        write_summary(f, r, r.normal, "normal_approximation");
    }
    {
        auto f = open_out(fs::path(dir) / "failures.csv");
        f << "case,replication,estimator,message\n";
        for (const auto& e : r.failures) {
            std::string msg = e.message;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            f << fmt::format("{},{},{},{}\n", r.spec.cases[e.case_index].label, e.replication, e.estimator, msg);
        }
    }
}

std::vector<double> make_grid(double lo, double hi, int points) {
    if (points < 2 || !(hi > lo)) throw ParameterError("grid needs hi > lo and at least two points");
    std::vector<double> g(static_cast<std::size_t>(points));
    const double step = (hi - lo) / (points - 1);
    for (int i = 0; i < points; ++i) g[static_cast<std::size_t>(i)] = lo + step * i;
    g.back() = hi;
    return g;
}

FitCurve emit_fit_curves(const PatienceModel& fit, const PatienceModel& truth, const std::vector<double>& grid) {
    FitCurve c;
    c.name = family_name(fit);
    c.x = grid;
    for (double x : grid) {
        c.truth.push_back(joining_prob(truth, x));
        c.fit.push_back(joining_prob(fit, x));
        c.sup_norm = std::max(c.sup_norm, std::abs(c.truth.back() - c.fit.back()));
    }
    return c;
}

void write_curve_csv(std::ostream& out, const FitCurve& curve) {
    out << "x,truth,fit\n";
    for (std::size_t i = 0; i < curve.x.size(); ++i)
        out << fmt::format("{},{},{}\n", num(curve.x[i]), num(curve.truth[i]), num(curve.fit[i]));
}

CurveSpec curve_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("curve config must be a JSON object");
    CurveSpec s;
    try {
        s.sim = sim_config_from_json(j.value("sim", nlohmann::json::object()));
        if (j.contains("fits")) s.fits = j.at("fits").get<std::vector<std::string>>();
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            s.lo = g.value("lo", s.lo);
            s.hi = g.value("hi", s.hi);
            s.points = g.value("points", s.points);
        }
        s.lambda_known = j.value("lambda_known", s.lambda_known);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(e.what());
    }
    for (const auto& f : s.fits) parse_estimator(f);
    if (s.points < 2 || !(s.hi > s.lo)) throw ValidationError("curve grid needs hi > lo and points >= 2");
    return s;
}

std::vector<std::pair<FitResult, FitCurve>> run_curves(const CurveSpec& spec) {
    const SimResult sim = simulate(spec.sim);
    const ObservationSeq obs = reconstruct(sim.trace);
    const auto grid = make_grid(spec.lo, spec.hi, spec.points);
    std::vector<std::pair<FitResult, FitCurve>> out;
    for (const auto& name : spec.fits) {
        const std::optional<double> lambda = spec.lambda_known ? std::optional<double>(spec.sim.lambda) : std::nullopt;
        FitResult f = fit_by_name(name, obs, std::nullopt, spec.sim.seed, lambda);
        FitCurve c = emit_fit_curves(f.model, spec.sim.patience, grid);
        c.name = name;
        out.emplace_back(std::move(f), std::move(c));
    }
    return out;
}

}  // namespace balk
