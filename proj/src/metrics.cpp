#include "ecvl/metrics.hpp"

#include <map>

#include "ecvl/error.hpp"

namespace ecvl {

std::string_view route_name(Route r) { return r == Route::Edge ? "edge" : "cloud"; }

Decision realize(const PairRecord& pair, Route chosen, std::optional<double> p) {
    const ModelOutcome& o = chosen == Route::Edge ? pair.edge : pair.cloud;
    return {pair.query_id(), chosen, p, o.score, o.latency_s};
}

std::vector<Decision> route_by_threshold(std::span<const double> p, std::span<const PairRecord> pairs, double tau) {
    if (p.size() != pairs.size()) throw RangeError("probabilities must align with pairs");
    std::vector<Decision> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) out.push_back(realize(pairs[i], threshold_route(p[i], tau), p[i]));
    return out;
}

std::optional<double> MetricsReport::rcs_for(std::string_view scenario) const {
    for (const auto& r : rcs)
        if (r.scenario == scenario) return r.value;
    return std::nullopt;
}

double rcs_combine(double apsp, double ca, double ail, double alpha, double beta, double gamma) {
    return alpha * apsp + beta * ca - gamma * ail;
}

MetricsReport compute_metrics(std::span<const Decision> decisions, std::span<const RoutingLabel> labels, double mes,
                              std::span<const ScenarioConfig> scenarios) {
    if (decisions.empty()) throw DataError("cannot compute metrics over zero decisions");
    std::size_t satisfied = 0, edge = 0;
    double latency = 0.0;
    for (const auto& d : decisions) {
        satisfied += d.realized_score >= mes ? 1 : 0;
        edge += d.chosen == Route::Edge ? 1 : 0;
        latency += d.realized_latency;
    }
    const double n = static_cast<double>(decisions.size());
    MetricsReport r;
    r.n = decisions.size();
    r.apsp = static_cast<double>(satisfied) / n;
    r.ca = static_cast<double>(edge) / n;
    r.ail = latency / n;
    for (const auto& s : scenarios) r.rcs.push_back({s.name, rcs_combine(r.apsp, r.ca, r.ail, s)});

    if (!labels.empty()) {
        std::map<std::string_view, uint8_t> by_id;
        for (const auto& l : labels) by_id.emplace(l.query_id, l.label);
        std::size_t correct = 0;
        for (const auto& d : decisions) {
            auto it = by_id.find(d.query_id);
            if (it == by_id.end()) throw DataError("no label for query_id " + d.query_id);
            correct += ((d.chosen == Route::Edge) == (it->second == 1)) ? 1 : 0;
        }
        r.acc = static_cast<double>(correct) / n;
    }
    return r;
}

std::optional<double> pgr(double router, double small, double large) {
    if (large == small) return std::nullopt;
    return (router - small) / (large - small);
}

Savings savings(std::span<const Decision> decisions, std::span<const PairRecord> pairs) {
    std::map<std::string_view, const PairRecord*> by_id;
    bool tokens_known = true;
    for (const auto& p : pairs) {
        by_id.emplace(p.query_id(), &p);
        tokens_known = tokens_known && p.edge.tokens_out && p.cloud.tokens_out;
    }
    Savings s;
    double tokens = 0.0;
    for (const auto& d : decisions) {
        if (d.chosen != Route::Edge) continue;
        auto it = by_id.find(d.query_id);
        if (it == by_id.end()) throw DataError("no pair record for query_id " + d.query_id);
        const PairRecord& p = *it->second;
        s.time_s += p.cloud.latency_s - p.edge.latency_s;
        if (tokens_known) tokens += static_cast<double>(*p.cloud.tokens_out - *p.edge.tokens_out);
    }
    if (tokens_known) s.tokens = tokens;
    return s;
}

void attach_pair_metrics(MetricsReport& report, std::span<const Decision> decisions, std::span<const PairRecord> pairs) {
    if (pairs.empty()) return;
    double q_router = 0.0, q_small = 0.0, q_large = 0.0;
    for (const auto& d : decisions) q_router += d.realized_score;
    for (const auto& p : pairs) {
        q_small += p.edge.score;
        q_large += p.cloud.score;
    }
    q_router /= static_cast<double>(decisions.size());
    q_small /= static_cast<double>(pairs.size());
    q_large /= static_cast<double>(pairs.size());
    report.pgr = pgr(q_router, q_small, q_large);
    const Savings s = savings(decisions, pairs);
    report.token_saving = s.tokens;
    report.time_saving = s.time_s;
}

std::vector<double> tau_grid() {
    std::vector<double> g;
    g.reserve(21);
    for (int i = 0; i <= 20; ++i) g.push_back(i / 20.0);
    return g;
}

TauChoice grid_search_tau(std::span<const double> p, std::span<const PairRecord> pairs, const ScenarioConfig& scenario) {
    if (pairs.empty()) throw DataError("grid search needs a non-empty validation set");
    const ScenarioConfig only[1] = {scenario};
    TauChoice best{};
    bool have = false;
    for (double tau : tau_grid()) {
        const auto decisions = route_by_threshold(p, pairs, tau);
        const double rcs = compute_metrics(decisions, {}, scenario.mes, only).rcs.front().value;
        // ascending grid: >= hands ties to the larger tau
        if (!have || rcs >= best.rcs) {
            best = {tau, rcs};
            have = true;
        }
    }
    return best;
}

}  // namespace ecvl
