#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecvl/features.hpp"
#include "ecvl/metrics.hpp"
#include "ecvl/router_net.hpp"
#include "ecvl/rsd.hpp"

namespace ecvl {

struct TrainConfig {
    uint32_t epochs = 50;
    uint32_t batch_size = 64;
    double peak_learning_rate = 1e-3;
    uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::optional<double> grad_clip;  // global L2 max-norm
    unsigned threads = 1;              // validation inference only

    void validate() const;
};

/// One-cycle schedule: linear warm-up from peak/25 to peak over the first 30%
/// of steps, then cosine decay to peak/1e4 at the final step.
double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak);

struct EpochRecord {
    uint32_t epoch = 0;
    double loss = 0.0;
    double tau = 0.0;
    double rcs = 0.0;
};

inline constexpr uint32_t kStateFormatVersion = 1;

struct RouterState {
    RouterModel model;
    double tau = 0.5;
    bool calibrated = false;
    ScenarioConfig scenario;
    std::vector<EpochRecord> history;
    uint32_t format_version = kStateFormatVersion;
    // serving context
    Normalizer normalizer;
    ModalityMask mask;
    std::string edge_model;
    std::string cloud_model;
    std::string strategy;

    explicit RouterState(RouterModel m) : model(std::move(m)) {}
};

struct LabeledSet {
    std::vector<FeatureBundle> bundles;
    std::vector<uint8_t> labels;
};

struct ValidationSet {
    std::vector<FeatureBundle> bundles;
    std::vector<PairRecord> pairs;  // aligned with bundles
};

/// Adam + one-cycle BCE training. After every epoch the validation set is
/// scored over the tau grid; the epoch with the highest RCS* is returned along
/// with its tau*. Non-fatal issues (degenerate labels) are appended to `warnings`.
RouterState train(const Architecture& arch, const LabeledSet& train_set, const ValidationSet& valid_set,
                  const TrainConfig& config, const ScenarioConfig& scenario,
                  std::vector<std::string>* warnings = nullptr);

/// Re-runs the tau grid search for `state` on `valid_set` and stores the result.
TauChoice calibrate(RouterState& state, const ValidationSet& valid_set, unsigned threads = 1);

void save_state(const RouterState& state, const std::string& path);
std::string encode_state(const RouterState& state);
RouterState load_state(const std::string& path);
RouterState decode_state(std::string_view bytes);

/// CRC-32 (IEEE) of the model payload, exposed for health reporting.
uint32_t state_checksum(const RouterState& state);

}  // namespace ecvl
