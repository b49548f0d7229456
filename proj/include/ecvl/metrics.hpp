#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecvl/labeling.hpp"
#include "ecvl/rsd.hpp"

namespace ecvl {

enum class Route : uint8_t { Edge = 0, Cloud = 1 };

std::string_view route_name(Route r);

struct Decision {
    std::string query_id;
    Route chosen = Route::Cloud;
    std::optional<double> p;  // absent for non-classifier policies
    double realized_score = 0.0;
    double realized_latency = 0.0;
};

Decision realize(const PairRecord& pair, Route chosen, std::optional<double> p = std::nullopt);

/// Edge iff p >= tau.
inline Route threshold_route(double p, double tau) { return p >= tau ? Route::Edge : Route::Cloud; }

std::vector<Decision> route_by_threshold(std::span<const double> p, std::span<const PairRecord> pairs, double tau);

struct RcsValue {
    std::string scenario;
    double value = 0.0;
};

struct MetricsReport {
    std::string policy;
    double apsp = 0.0;
    double ca = 0.0;
    double ail = 0.0;  // seconds
    std::vector<RcsValue> rcs;
    std::optional<double> acc;
    std::optional<double> pgr;
    std::optional<double> token_saving;
    std::optional<double> time_saving;  // seconds
    std::size_t n = 0;

    std::optional<double> rcs_for(std::string_view scenario) const;
};

/// alpha * APSP + beta * CA - gamma * AIL, no clamping.
double rcs_combine(double apsp, double ca, double ail, double alpha, double beta, double gamma);
inline double rcs_combine(double apsp, double ca, double ail, const ScenarioConfig& s) {
    return rcs_combine(apsp, ca, ail, s.alpha, s.beta, s.gamma);
}

/// APSP/CA/AIL against `mes`, RCS for each scenario, and ACC when labels are given
/// (matched by query_id; an unlabeled decision is a DataError).
MetricsReport compute_metrics(std::span<const Decision> decisions, std::span<const RoutingLabel> labels, double mes,
                              std::span<const ScenarioConfig> scenarios);

/// (router - small) / (large - small); absent when large == small.
std::optional<double> pgr(double avg_quality_router, double avg_quality_small, double avg_quality_large);

struct Savings {
    std::optional<double> tokens;  // absent unless every pair carries tokens_out on both sides
    double time_s = 0.0;
};

/// Sums of cloud-minus-edge tokens and latency over edge-routed decisions.
Savings savings(std::span<const Decision> decisions, std::span<const PairRecord> pairs);

/// Adds PGR and savings, which need the full pair outcomes.
void attach_pair_metrics(MetricsReport& report, std::span<const Decision> decisions, std::span<const PairRecord> pairs);

/// tau in {0.00, 0.05, ..., 1.00}.
std::vector<double> tau_grid();

struct TauChoice {
    double tau = 0.0;
    double rcs = 0.0;
};

/// Maximizes RCS over the 21-point grid; ties go to the larger tau.
TauChoice grid_search_tau(std::span<const double> p, std::span<const PairRecord> pairs, const ScenarioConfig& scenario);

}  // namespace ecvl
