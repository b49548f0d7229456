#include "ecvl/training.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ecvl/error.hpp"
#include "ecvl/kernels.hpp"

namespace ecvl {

void TrainConfig::validate() const {
    if (epochs < 1) throw RangeError("epochs must be >= 1");
    if (batch_size < 1) throw RangeError("batch_size must be >= 1");
    if (!(peak_learning_rate > 0.0)) throw RangeError("learning rate must be > 0");
    if (grad_clip && !(*grad_clip > 0.0)) throw RangeError("grad_clip must be > 0");
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, double peak) {
    if (total_steps == 0) throw RangeError("one_cycle_lr: total_steps must be > 0");
    if (step >= total_steps) throw RangeError("one_cycle_lr: step out of range");
    const double initial = peak / 25.0;
    const double floor = peak / 1e4;
    const double warm = 3.0 * static_cast<double>(total_steps) / 10.0;
    const double s = static_cast<double>(step);
    if (s < warm) return std::lerp(initial, peak, s / warm);
    const double span = static_cast<double>(total_steps - 1) - warm;
    if (span <= 0.0) return peak;
    const double t = (s - warm) / span;
    return std::lerp(peak, floor, (1.0 - std::cos(std::numbers::pi * t)) / 2.0);
}

namespace {

std::vector<float> flatten_all(const std::vector<FeatureBundle>& bundles, const Architecture& arch) {
    const std::size_t Z = arch.input_dim();
    std::vector<float> x(bundles.size() * Z);
    for (std::size_t i = 0; i < bundles.size(); ++i)
        flatten_input<float>(bundles[i], arch, std::span<float>(x).subspan(i * Z, Z));
    return x;
}

struct AdamState {
    std::vector<std::vector<float>> m, v;
    std::size_t t = 0;
};

}  // namespace

RouterState train(const Architecture& arch, const LabeledSet& train_set, const ValidationSet& valid_set,
                  const TrainConfig& config, const ScenarioConfig& scenario, std::vector<std::string>* warnings) {
    config.validate();
    scenario.validate();
    if (train_set.bundles.empty()) throw DataError("empty training set");
    if (train_set.labels.size() != train_set.bundles.size()) throw RangeError("labels must align with bundles");
    if (valid_set.bundles.empty() || valid_set.bundles.size() != valid_set.pairs.size())
        throw DataError("validation set must be non-empty and aligned with its pairs");

    const std::size_t positives = std::accumulate(train_set.labels.begin(), train_set.labels.end(), std::size_t{0});
    if ((positives == 0 || positives == train_set.labels.size()) && warnings)
        warnings->push_back("degenerate training labels: all " + std::string(positives == 0 ? "0" : "1"));

    RouterModel model(arch, mix_seed(config.seed, 0x1417));
    const auto& k = kernels::active<float>();
    const std::size_t Z = arch.input_dim();
    const std::vector<float> x = flatten_all(train_set.bundles, arch);
    const std::size_t n = train_set.bundles.size();
    const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = batches * config.epochs;

    AdamState adam;
    for (const auto& t : model.params()) {
        adam.m.emplace_back(t.size(), 0.0f);
        adam.v.emplace_back(t.size(), 0.0f);
    }

    Rng shuffle_rng(mix_seed(config.seed, 0x5EED));
    Rng dropout_rng(mix_seed(config.seed, 0xD0D0));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<float> bx;
    std::vector<uint8_t> by;

    RouterState best(model);
    best.scenario = scenario;
    bool have_best = false;
    double best_rcs = 0.0;
    std::vector<EpochRecord> history;

    for (uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * config.batch_size;
            const std::size_t hi = std::min(n, lo + config.batch_size);
            bx.resize((hi - lo) * Z);
            by.resize(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                std::copy_n(x.data() + order[i] * Z, Z, bx.data() + (i - lo) * Z);
                by[i - lo] = train_set.labels[order[i]];
            }
            model.zero_grad();
            const double loss = model.loss_and_grad(bx, by, &dropout_rng);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "non-finite loss at epoch " << epoch << ", batch " << b;
                throw std::runtime_error(msg.str());
            }
            epoch_loss += loss * static_cast<double>(hi - lo);

            if (config.grad_clip) {
                double sq = 0.0;
                for (const auto& t : model.params())
                    for (float g : t.grad) sq += static_cast<double>(g) * g;
                const double norm = std::sqrt(sq);
                if (norm > *config.grad_clip) {
                    const float s = static_cast<float>(*config.grad_clip / norm);
                    for (auto& t : model.params())
                        for (float& g : t.grad) g *= s;
                }
            }

            ++adam.t;
            kernels::AdamParams ap;
            ap.lr = one_cycle_lr(adam.t - 1, total_steps, config.peak_learning_rate);
            ap.beta1 = config.beta1;
            ap.beta2 = config.beta2;
            ap.eps = config.eps;
            ap.bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(adam.t));
            ap.bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(adam.t));
            auto& params = model.params();
            for (std::size_t i = 0; i < params.size(); ++i)
                k.adam(params[i].value.data(), params[i].grad.data(), adam.m[i].data(), adam.v[i].data(),
                       params[i].size(), ap);
        }

        const auto p = model.predict(valid_set.bundles, config.threads);
        const TauChoice choice = grid_search_tau(p, valid_set.pairs, scenario);
        history.push_back({epoch, epoch_loss / static_cast<double>(n), choice.tau, choice.rcs});
        // earliest epoch wins ties
        if (!have_best || choice.rcs > best_rcs) {
            best.model = model;
            best.tau = choice.tau;
            best_rcs = choice.rcs;
            have_best = true;
        }
    }
    best.history = std::move(history);
    best.calibrated = true;
    return best;
}

TauChoice calibrate(RouterState& state, const ValidationSet& valid_set, unsigned threads) {
    const auto p = state.model.predict(valid_set.bundles, threads);
    const TauChoice c = grid_search_tau(p, valid_set.pairs, state.scenario);
    state.tau = c.tau;
    state.calibrated = true;
    return c;
}

}  // namespace ecvl
