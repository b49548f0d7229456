#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecvl/features.hpp"
#include "ecvl/metrics.hpp"
#include "ecvl/rsd.hpp"

namespace ecvl {

enum class SignalKind { Separable, Noisy, Adversarial };

/// Desk-scale stand-in for a response-score dataset with a planted routing signal.
struct SynthSpec {
    std::size_t n_records = 1000;
    uint32_t k_text = 16;
    uint32_t k_image = 16;
    SignalKind signal = SignalKind::Separable;
    double margin = 1.0;     // projection of each embedding onto its planted direction is +-margin
    double p_flip = 0.0;     // noisy: fraction of records whose planted sign is inverted
    double noise = 1.0;      // stddev of the orthogonal embedding noise
    double mes = 6.0;        // threshold the planted labels are computed against
    double case_b_fraction = 0.1;  // records where both models score below mes
    double image_fraction = 0.8;
    double cloud_gap = 3.0;  // max extra score the cloud model gets over the edge model
    double edge_latency_mean = 0.9, edge_latency_std = 0.2;
    double cloud_latency_mean = 4.0, cloud_latency_std = 1.5;
    bool cloud_slower = true;  // every record has cloud latency >= edge latency
    bool tokens = true;
    std::string edge_name = "edge-small";
    std::string cloud_name = "cloud-large";
    std::vector<std::string> sources{"synth-a", "synth-b"};
    uint64_t seed = 1;

    void validate() const;
    /// "n=2000,margin=1.0,signal=separable,seed=3" style overrides on top of the defaults.
    static SynthSpec parse(std::string_view overrides);
};

struct SynthData {
    Dataset dataset;
    EmbeddingTable text;
    EmbeddingTable image;
    std::vector<double> difficulty;       // per record, in [0, 1]
    std::vector<uint8_t> planted_labels;  // proposed-rule labels at spec.mes
};

SynthData generate(const SynthSpec& spec);

/// Independent exhaustive tau search: routes each record by p >= tau for every
/// grid point and keeps the best RCS, larger tau on ties.
TauChoice oracle_best_tau(std::span<const double> p, std::span<const PairRecord> pairs, const ScenarioConfig& scenario,
                          std::span<const double> grid);

}  // namespace ecvl
