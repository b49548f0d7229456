#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ecvl/features.hpp"
#include "ecvl/labeling.hpp"
#include "ecvl/metrics.hpp"
#include "ecvl/training.hpp"

namespace ecvl {

struct RouterPolicy {
    std::shared_ptr<const RouterState> state;
    unsigned threads = 1;
};
struct AllLargePolicy {};
struct AllSmallPolicy {};
struct RandomPolicy {
    double p_edge = 0.5;
    uint64_t seed = 0;
};

using RoutingPolicy = std::variant<RouterPolicy, AllLargePolicy, AllSmallPolicy, RandomPolicy>;

/// "all-large", "all-small", "random:p=0.5" (the router policy needs a model and is built directly).
RoutingPolicy parse_baseline_policy(std::string_view text, uint64_t seed = 0);
std::string policy_name(const RoutingPolicy& policy);

/// Routes every pair. Router policies need a bundle per pair (matched by query_id).
std::vector<Decision> route_dataset(const RoutingPolicy& policy, std::span<const PairRecord> pairs,
                                    std::span<const FeatureBundle> bundles = {});

std::vector<FeatureBundle> build_bundles(std::span<const PairRecord> pairs, const EmbeddingTables& tables,
                                         const Normalizer& normalizer, ModalityMask mask,
                                         AssemblyCounters* counters = nullptr);

/// route_dataset + compute_metrics + PGR/savings, RCS for the three presets at `mes`.
MetricsReport evaluate_policy(const RoutingPolicy& policy, std::span<const PairRecord> pairs,
                              std::span<const FeatureBundle> bundles, std::span<const RoutingLabel> labels, double mes);

// ---------------------------------------------------------------------------
// MES sweep

struct SweepRow {
    double mes = 0.0;
    double failure_rate = 0.0;
    double ca = 0.0;
    double apsp = 0.0;
    double tau_star = 0.0;
    double rcs_star = 0.0;
};

struct PolicyOutcome {
    std::vector<Decision> decisions;
    double tau_star = 0.0;
    double rcs_star = 0.0;
};

/// Builds and calibrates a policy for freshly relabeled data; `labels` align with the swept pairs.
using PolicyBuilder = std::function<PolicyOutcome(std::span<const uint8_t> labels, const ScenarioConfig& scenario)>;

/// Fraction of pairs where neither model reaches `mes`.
double failure_rate(std::span<const PairRecord> pairs, double mes);

std::vector<SweepRow> mes_sweep(std::span<const PairRecord> pairs,
                                const std::function<LabelStrategy(double mes)>& strategy_family,
                                std::span<const double> mes_values, const ScenarioConfig& base_scenario,
                                const PolicyBuilder& build_policy);

std::string format_sweep_csv(std::span<const SweepRow> rows);

// ---------------------------------------------------------------------------
// Modality ablation

struct ExperimentData {
    std::vector<PairRecord> train, valid, test;
    std::vector<uint8_t> train_labels;
    std::vector<RoutingLabel> test_labels;
    EmbeddingTables tables;
    Normalizer normalizer;  // fit on train
};

/// One router row per mask (same seed and config), then random / all-large / all-small rows.
std::vector<MetricsReport> ablation_run(const ExperimentData& data, std::span<const ModalityMask> masks,
                                        const Architecture& arch, const TrainConfig& config,
                                        const ScenarioConfig& scenario);

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { Csv, Json };

ReportFormat parse_report_format(std::string_view text);
std::string format_report(std::span<const MetricsReport> reports, ReportFormat format);
void emit_report(std::span<const MetricsReport> reports, const std::string& path, ReportFormat format);
/// Reads a JSON report written by emit_report.
std::vector<MetricsReport> load_report(const std::string& path);

}  // namespace ecvl
