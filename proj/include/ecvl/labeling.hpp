#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ecvl/rsd.hpp"

namespace ecvl {

struct ProposedRule {
    double mes = 6.0;
    bool operator==(const ProposedRule&) const = default;
};
struct WinHardRule {
    bool operator==(const WinHardRule&) const = default;
};
struct WinSoftRule {
    double k = 1.0;
    bool operator==(const WinSoftRule&) const = default;
};

using LabelStrategy = std::variant<ProposedRule, WinHardRule, WinSoftRule>;

/// "proposed:mes=6", "win-hard", "win-soft:k=1".
LabelStrategy parse_strategy(std::string_view descriptor);
std::string describe(const LabelStrategy& strategy);

/// Edge-competency under a minimal expectation score: the edge model either
/// reaches min(cloud, mes), or the cloud model itself misses mes.
uint8_t label_proposed(double score_edge, double score_cloud, double mes);

/// Direct comparison with the edge score offset by k (k = 0 is win-hard).
uint8_t label_win(double score_edge, double score_cloud, double k);

uint8_t apply_strategy(const LabelStrategy& strategy, double score_edge, double score_cloud);

struct RoutingLabel {
    std::string query_id;
    uint8_t label = 0;
    LabelStrategy strategy;
};

struct LabelingResult {
    std::vector<RoutingLabel> labels;
    double positive_rate = 0.0;
    bool degenerate = false;  // all labels equal
};

LabelingResult label_dataset(std::span<const PairRecord> pairs, const LabelStrategy& strategy);

/// Label bits aligned with `pairs` by query_id; throws DataError on a missing id.
std::vector<uint8_t> align_labels(std::span<const PairRecord> pairs, std::span<const RoutingLabel> labels);

void save_labels(std::span<const RoutingLabel> labels, const std::string& path);
std::vector<RoutingLabel> load_labels(const std::string& path);

}  // namespace ecvl
