#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecvl/features.hpp"
#include "ecvl/rng.hpp"

namespace ecvl {

enum class Variant : uint8_t { Transformer = 0, Mlp = 1, BilinearMF = 2 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // transformer | mlp | mf

struct Architecture {
    Variant variant = Variant::Transformer;
    uint32_t text_dim = 0;
    uint32_t image_dim = 0;
    // transformer
    uint32_t model_dim = 256;
    uint32_t layers = 2;
    uint32_t heads = 4;
    uint32_t ffn_dim = 512;
    double dropout = 0.3;
    // mlp
    std::vector<uint32_t> mlp_hidden{256, 256, 256};
    // bilinear mf
    uint32_t mf_rank = 16;

    uint32_t input_dim() const { return text_dim + image_dim + static_cast<uint32_t>(kStatsDim); }
    void validate() const;
    bool operator==(const Architecture&) const = default;
};

template <typename T>
struct Tensor {
    std::string name;
    std::vector<uint32_t> shape;
    std::vector<T> value;
    std::vector<T> grad;

    std::size_t size() const { return value.size(); }
};

/// Flat model input [text | image | stats] with masked or absent modalities as zeros.
/// Throws RangeError when an embedding length does not match the architecture.
template <typename T>
void flatten_input(const FeatureBundle& bundle, const Architecture& arch, std::span<T> out);

/// Routing classifier producing p = P(edge-competent).
///
/// The transformer variant projects each modality into a shared d-dimensional
/// space, adds a learned per-slot vector, runs the 3-token sequence through
/// post-norm encoder blocks, mean-pools, and applies a logistic head. The MLP
/// variant feeds the concatenated projections through ReLU layers. The
/// bilinear-MF variant scores sigma(u^T A B z + c) on the raw input z.
template <typename T>
class RouterNet {
public:
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from `seed`.
    RouterNet(const Architecture& arch, uint64_t seed);

    const Architecture& arch() const { return arch_; }
    std::vector<Tensor<T>>& params() { return params_; }
    const std::vector<Tensor<T>>& params() const { return params_; }
    Tensor<T>* find(std::string_view name);
    std::size_t parameter_count() const;

    /// Inference-mode logits for `rows` flattened inputs (dropout disabled).
    std::vector<double> logits(std::span<const T> inputs, std::size_t rows) const;
    double predict(const FeatureBundle& bundle) const;
    std::vector<double> predict(std::span<const FeatureBundle> bundles, unsigned threads = 1) const;

    /// Mean binary cross-entropy of the batch; accumulates parameter gradients.
    /// Dropout is applied when `dropout_rng` is non-null and the rate is > 0.
    double loss_and_grad(std::span<const T> inputs, std::span<const uint8_t> labels, Rng* dropout_rng);

    /// Mean binary cross-entropy without touching gradients (inference mode).
    double loss(std::span<const T> inputs, std::span<const uint8_t> labels) const;

    void zero_grad();

private:
    struct Workspace;

    std::size_t add(std::string name, std::vector<uint32_t> shape);
    void init(uint64_t seed);
    std::vector<T> forward(std::span<const T> inputs, std::size_t rows, Workspace* ws, Rng* rng) const;
    void backward(Workspace& ws, std::span<const T> dlogits);

    Architecture arch_;
    std::vector<Tensor<T>> params_;

    struct Proj {
        std::size_t w, b;
    };
    struct Block {
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
    };
    Proj proj_[3]{};
    std::size_t slot_ = 0;
    std::vector<Block> blocks_;
    std::vector<Proj> mlp_;
    std::size_t mf_a_ = 0, mf_b_ = 0;
    std::size_t head_w_ = 0, head_b_ = 0;
};

extern template class RouterNet<float>;
extern template class RouterNet<double>;

using RouterModel = RouterNet<float>;

/// Logistic function clamped into the open interval (0, 1).
double sigmoid(double z);

}  // namespace ecvl
