#include "ecvl/router_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "ecvl/error.hpp"
#include "ecvl/kernels.hpp"

namespace ecvl {

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::Transformer: return "transformer";
        case Variant::Mlp: return "mlp";
        case Variant::BilinearMF: return "mf";
    }
    return "?";
}

Variant parse_variant(std::string_view name) {
    if (name == "transformer") return Variant::Transformer;
    if (name == "mlp") return Variant::Mlp;
    if (name == "mf") return Variant::BilinearMF;
    throw RangeError("unknown variant '" + std::string(name) + "' (expected transformer|mlp|mf)");
}

void Architecture::validate() const {
    if (model_dim == 0) throw RangeError("model_dim must be >= 1");
    if (variant == Variant::Transformer) {
        if (layers == 0 || heads == 0 || ffn_dim == 0) throw RangeError("transformer sizes must be >= 1");
        if (model_dim % heads != 0) throw RangeError("model_dim must be divisible by heads");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw RangeError("dropout must lie in [0,1)");
    }
    if (variant == Variant::Mlp) {
        if (mlp_hidden.empty()) throw RangeError("mlp needs at least one hidden layer");
        for (auto h : mlp_hidden)
            if (h == 0) throw RangeError("mlp hidden widths must be >= 1");
    }
    if (variant == Variant::BilinearMF && mf_rank == 0) throw RangeError("mf rank must be >= 1");
}

double sigmoid(double z) {
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    const double hi = std::nextafter(1.0, 0.0);
    return std::clamp(p, lo, hi);
}

template <typename T>
void flatten_input(const FeatureBundle& b, const Architecture& arch, std::span<T> out) {
    if (out.size() != arch.input_dim()) throw RangeError("input buffer has wrong size");
    std::fill(out.begin(), out.end(), T(0));
    if (b.mask.text && b.e_text) {
        if (b.e_text->size() != arch.text_dim)
            throw RangeError("text embedding dimension mismatch: model expects " + std::to_string(arch.text_dim) +
                             ", got " + std::to_string(b.e_text->size()));
        std::copy(b.e_text->begin(), b.e_text->end(), out.begin());
    }
    if (b.mask.image && b.e_image) {
        if (b.e_image->size() != arch.image_dim)
            throw RangeError("image embedding dimension mismatch: model expects " + std::to_string(arch.image_dim) +
                             ", got " + std::to_string(b.e_image->size()));
        std::copy(b.e_image->begin(), b.e_image->end(), out.begin() + arch.text_dim);
    }
    if (b.mask.stats) {
        for (std::size_t i = 0; i < kStatsDim; ++i) out[arch.text_dim + arch.image_dim + i] = static_cast<T>(b.stats[i]);
    }
}

template void flatten_input<float>(const FeatureBundle&, const Architecture&, std::span<float>);
template void flatten_input<double>(const FeatureBundle&, const Architecture&, std::span<double>);

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr std::size_t kTokens = 3;

template <typename T>
void layer_norm(const T* x, std::size_t rows, std::size_t d, const T* g, const T* b, T* y, T* xhat, T* rstd) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * d;
        double mean = 0;
        for (std::size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<double>(d);
        double var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<double>(d);
        const T rs = static_cast<T>(1.0 / std::sqrt(var + kLayerNormEps));
        rstd[r] = rs;
        for (std::size_t i = 0; i < d; ++i) {
            const T h = static_cast<T>(xr[i] - mean) * rs;
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
}

template <typename T>
void layer_norm_backward(const T* dy, std::size_t rows, std::size_t d, const T* g, const T* xhat, const T* rstd,
                         T* dg, T* db, T* dx) {
    std::vector<T> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* dyr = dy + r * d;
        const T* hr = xhat + r * d;
        double mean_dxhat = 0, mean_dxhat_h = 0;
        for (std::size_t i = 0; i < d; ++i) {
            dxhat[i] = dyr[i] * g[i];
            dg[i] += dyr[i] * hr[i];
            db[i] += dyr[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_h += dxhat[i] * hr[i];
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_h /= static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i)
            dx[r * d + i] = rstd[r] * static_cast<T>(dxhat[i] - mean_dxhat - hr[i] * mean_dxhat_h);
    }
}

// dW += dY^T X, db += colsum(dY), dX (if non-null) = dY W.
template <typename T>
void linear_backward(const kernels::Ops<T>& k, const T* dy, const T* x, std::size_t rows, std::size_t in,
                     std::size_t out, const T* w, T* dw, T* db, T* dx) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* dyr = dy + r * out;
        const T* xr = x + r * in;
        for (std::size_t o = 0; o < out; ++o) {
            if (dyr[o] == T(0)) continue;
            k.axpy(dyr[o], xr, dw + o * in, in);
            if (db) db[o] += dyr[o];
        }
    }
    if (dx) {
        std::fill(dx, dx + rows * in, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
            const T* dyr = dy + r * out;
            for (std::size_t o = 0; o < out; ++o)
                if (dyr[o] != T(0)) k.axpy(dyr[o], w + o * in, dx + r * in, in);
        }
    }
}

template <typename T>
void make_dropout_mask(std::vector<T>& mask, std::size_t n, double rate, Rng* rng) {
    if (!rng || rate <= 0.0) {
        mask.clear();
        return;
    }
    mask.resize(n);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask) m = rng->uniform() < rate ? T(0) : keep_scale;
}

template <typename T>
void apply_mask(std::vector<T>& v, const std::vector<T>& mask) {
    if (mask.empty()) return;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
}

}  // namespace

template <typename T>
struct RouterNet<T>::Workspace {
    std::size_t rows = 0;
    std::vector<T> x[3];  // per-modality input slices
    std::vector<T> proj[3];
    struct BlockCache {
        std::vector<T> in, q, k, v, probs, o, drop_attn, xhat1, rstd1, x1, f1, drop_ffn, fd, drop_out, xhat2, rstd2;
    };
    std::vector<BlockCache> blocks;
    std::vector<T> tokens_out;  // final encoder output [3B x d]
    std::vector<std::vector<T>> mlp_act;  // post-ReLU activations, [0] = concat input
    std::vector<T> mf_r, mf_q;
    std::vector<T> pooled;  // input to head
};

template <typename T>
std::size_t RouterNet<T>::add(std::string name, std::vector<uint32_t> shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    params_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
    return params_.size() - 1;
}

template <typename T>
RouterNet<T>::RouterNet(const Architecture& arch, uint64_t seed) : arch_(arch) {
    arch_.validate();
    const uint32_t d = arch_.model_dim;
    const uint32_t in_dims[3] = {arch_.text_dim, arch_.image_dim, static_cast<uint32_t>(kStatsDim)};
    static constexpr const char* kProjNames[3] = {"proj.text", "proj.image", "proj.stats"};
    uint32_t head_in = d;
    if (arch_.variant != Variant::BilinearMF) {
        for (int m = 0; m < 3; ++m) {
            proj_[m].w = add(std::string(kProjNames[m]) + ".weight", {d, in_dims[m]});
            proj_[m].b = add(std::string(kProjNames[m]) + ".bias", {d});
        }
    }
    if (arch_.variant == Variant::Transformer) {
        slot_ = add("slot", {3, d});
        for (uint32_t l = 0; l < arch_.layers; ++l) {
            const std::string p = "encoder." + std::to_string(l) + ".";
            Block b{};
            b.wq = add(p + "attn.q.weight", {d, d});
            b.bq = add(p + "attn.q.bias", {d});
            b.wk = add(p + "attn.k.weight", {d, d});
            b.bk = add(p + "attn.k.bias", {d});
            b.wv = add(p + "attn.v.weight", {d, d});
            b.bv = add(p + "attn.v.bias", {d});
            b.wo = add(p + "attn.out.weight", {d, d});
            b.bo = add(p + "attn.out.bias", {d});
            b.ln1_g = add(p + "norm1.weight", {d});
            b.ln1_b = add(p + "norm1.bias", {d});
            b.w1 = add(p + "ffn.0.weight", {arch_.ffn_dim, d});
            b.b1 = add(p + "ffn.0.bias", {arch_.ffn_dim});
            b.w2 = add(p + "ffn.1.weight", {d, arch_.ffn_dim});
            b.b2 = add(p + "ffn.1.bias", {d});
            b.ln2_g = add(p + "norm2.weight", {d});
            b.ln2_b = add(p + "norm2.bias", {d});
            blocks_.push_back(b);
        }
    } else if (arch_.variant == Variant::Mlp) {
        uint32_t prev = 3 * d;
        for (std::size_t i = 0; i < arch_.mlp_hidden.size(); ++i) {
            const uint32_t h = arch_.mlp_hidden[i];
            const std::string p = "mlp." + std::to_string(i) + ".";
            mlp_.push_back({add(p + "weight", {h, prev}), add(p + "bias", {h})});
            prev = h;
        }
        head_in = prev;
    } else {
        mf_b_ = add("mf.b", {arch_.mf_rank, arch_.input_dim()});
        mf_a_ = add("mf.a", {d, arch_.mf_rank});
    }
    head_w_ = add("head.weight", {head_in});
    head_b_ = add("head.bias", {1});
    init(seed);
}

template <typename T>
void RouterNet<T>::init(uint64_t seed) {
    Rng rng(seed);
    auto fill = [&](std::size_t idx, double fan_in) {
        const double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
        for (auto& v : params_[idx].value) v = static_cast<T>(rng.uniform(-bound, bound));
    };
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& t = params_[i];
        const bool is_norm_gain = t.name.ends_with("norm1.weight") || t.name.ends_with("norm2.weight");
        const bool is_norm_bias = t.name.ends_with("norm1.bias") || t.name.ends_with("norm2.bias");
        if (is_norm_gain) {
            std::fill(t.value.begin(), t.value.end(), T(1));
        } else if (is_norm_bias) {
            std::fill(t.value.begin(), t.value.end(), T(0));
        } else if (i == slot_ && arch_.variant == Variant::Transformer) {
            fill(i, arch_.model_dim);
        } else if (t.shape.size() == 2) {
            fill(i, t.shape[1]);
        } else if (i == head_w_) {
            fill(i, t.shape[0]);
        } else {
            // bias: bound follows the owning weight's fan-in
            const auto& w = params_[i - 1];
            fill(i, w.shape.size() == 2 ? w.shape[1] : w.shape[0]);
        }
    }
}

template <typename T>
Tensor<T>* RouterNet<T>::find(std::string_view name) {
    for (auto& t : params_)
        if (t.name == name) return &t;
    return nullptr;
}

template <typename T>
std::size_t RouterNet<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params_) n += t.size();
    return n;
}

template <typename T>
void RouterNet<T>::zero_grad() {
    for (auto& t : params_) std::fill(t.grad.begin(), t.grad.end(), T(0));
}

template <typename T>
std::vector<T> RouterNet<T>::forward(std::span<const T> inputs, std::size_t rows, Workspace* ws, Rng* rng) const {
    const auto& k = kernels::active<T>();
    const std::size_t Z = arch_.input_dim();
    if (inputs.size() != rows * Z) throw RangeError("input size does not match rows x input_dim");
    const std::size_t d = arch_.model_dim;
    const std::size_t in_dims[3] = {arch_.text_dim, arch_.image_dim, kStatsDim};
    const std::size_t offsets[3] = {0, arch_.text_dim, static_cast<std::size_t>(arch_.text_dim) + arch_.image_dim};
    auto P = [&](std::size_t idx) { return params_[idx].value.data(); };

    Workspace local;
    Workspace& w = ws ? *ws : local;
    w.rows = rows;
    std::vector<T> head_in;
    std::size_t head_dim = 0;

    if (arch_.variant == Variant::BilinearMF) {
        const std::size_t r = arch_.mf_rank;
        w.mf_r.assign(rows * r, T(0));
        w.mf_q.assign(rows * d, T(0));
        if (ws) w.x[0].assign(inputs.begin(), inputs.end());
        k.linear(inputs.data(), rows, Z, P(mf_b_), r, nullptr, w.mf_r.data());
        k.linear(w.mf_r.data(), rows, r, P(mf_a_), d, nullptr, w.mf_q.data());
        head_in = w.mf_q;
        head_dim = d;
    } else {
        for (int m = 0; m < 3; ++m) {
            w.x[m].resize(rows * in_dims[m]);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(inputs.data() + r * Z + offsets[m], in_dims[m], w.x[m].data() + r * in_dims[m]);
            w.proj[m].resize(rows * d);
            k.linear(w.x[m].data(), rows, in_dims[m], P(proj_[m].w), d, P(proj_[m].b), w.proj[m].data());
        }

        if (arch_.variant == Variant::Mlp) {
            w.mlp_act.assign(mlp_.size() + 1, {});
            auto& cat = w.mlp_act[0];
            cat.resize(rows * 3 * d);
            for (std::size_t r = 0; r < rows; ++r)
                for (int m = 0; m < 3; ++m) std::copy_n(w.proj[m].data() + r * d, d, cat.data() + r * 3 * d + m * d);
            std::size_t prev = 3 * d;
            for (std::size_t i = 0; i < mlp_.size(); ++i) {
                const std::size_t h = arch_.mlp_hidden[i];
                auto& act = w.mlp_act[i + 1];
                act.resize(rows * h);
                k.linear(w.mlp_act[i].data(), rows, prev, P(mlp_[i].w), h, P(mlp_[i].b), act.data());
                for (auto& a : act) a = a > T(0) ? a : T(0);
                prev = h;
            }
            head_in = w.mlp_act.back();
            head_dim = prev;
        } else {
            const std::size_t n = rows * kTokens;
            const std::size_t heads = arch_.heads;
            const std::size_t dh = d / heads;
            const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
            std::vector<T> h(n * d);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t s = 0; s < kTokens; ++s) {
                    T* dst = h.data() + (r * kTokens + s) * d;
                    const T* src = w.proj[s].data() + r * d;
                    const T* slot = P(slot_) + s * d;
                    for (std::size_t i = 0; i < d; ++i) dst[i] = src[i] + slot[i];
                }
            w.blocks.resize(blocks_.size());
            for (std::size_t l = 0; l < blocks_.size(); ++l) {
                const Block& b = blocks_[l];
                auto& c = w.blocks[l];
                c.in = h;
                c.q.resize(n * d);
                c.k.resize(n * d);
                c.v.resize(n * d);
                k.linear(h.data(), n, d, P(b.wq), d, P(b.bq), c.q.data());
                k.linear(h.data(), n, d, P(b.wk), d, P(b.bk), c.k.data());
                k.linear(h.data(), n, d, P(b.wv), d, P(b.bv), c.v.data());
                c.probs.resize(rows * heads * kTokens * kTokens);
                c.o.assign(n * d, T(0));
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t hh = 0; hh < heads; ++hh) {
                        T* A = c.probs.data() + ((r * heads + hh) * kTokens) * kTokens;
                        for (std::size_t i = 0; i < kTokens; ++i) {
                            const T* qi = c.q.data() + (r * kTokens + i) * d + hh * dh;
                            T mx = -std::numeric_limits<T>::infinity();
                            for (std::size_t j = 0; j < kTokens; ++j) {
                                const T* kj = c.k.data() + (r * kTokens + j) * d + hh * dh;
                                A[i * kTokens + j] = k.dot(qi, kj, dh) * scale;
                                mx = std::max(mx, A[i * kTokens + j]);
                            }
                            T sum = 0;
                            for (std::size_t j = 0; j < kTokens; ++j) {
                                A[i * kTokens + j] = std::exp(A[i * kTokens + j] - mx);
                                sum += A[i * kTokens + j];
                            }
                            T* oi = c.o.data() + (r * kTokens + i) * d + hh * dh;
                            for (std::size_t j = 0; j < kTokens; ++j) {
                                A[i * kTokens + j] /= sum;
                                k.axpy(A[i * kTokens + j], c.v.data() + (r * kTokens + j) * d + hh * dh, oi, dh);
                            }
                        }
                    }
                std::vector<T> attn(n * d);
                k.linear(c.o.data(), n, d, P(b.wo), d, P(b.bo), attn.data());
                make_dropout_mask(c.drop_attn, n * d, arch_.dropout, rng);
                apply_mask(attn, c.drop_attn);
                for (std::size_t i = 0; i < n * d; ++i) attn[i] += h[i];
                c.xhat1.resize(n * d);
                c.rstd1.resize(n);
                c.x1.resize(n * d);
                layer_norm(attn.data(), n, d, P(b.ln1_g), P(b.ln1_b), c.x1.data(), c.xhat1.data(), c.rstd1.data());

                const std::size_t f = arch_.ffn_dim;
                c.f1.resize(n * f);
                k.linear(c.x1.data(), n, d, P(b.w1), f, P(b.b1), c.f1.data());
                c.fd.resize(n * f);
                for (std::size_t i = 0; i < n * f; ++i) c.fd[i] = c.f1[i] > T(0) ? c.f1[i] : T(0);
                make_dropout_mask(c.drop_ffn, n * f, arch_.dropout, rng);
                apply_mask(c.fd, c.drop_ffn);
                std::vector<T> f2(n * d);
                k.linear(c.fd.data(), n, f, P(b.w2), d, P(b.b2), f2.data());
                make_dropout_mask(c.drop_out, n * d, arch_.dropout, rng);
                apply_mask(f2, c.drop_out);
                for (std::size_t i = 0; i < n * d; ++i) f2[i] += c.x1[i];
                c.xhat2.resize(n * d);
                c.rstd2.resize(n);
                layer_norm(f2.data(), n, d, P(b.ln2_g), P(b.ln2_b), h.data(), c.xhat2.data(), c.rstd2.data());
            }
            head_in.assign(rows * d, T(0));
            const T third = static_cast<T>(1.0 / kTokens);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t s = 0; s < kTokens; ++s) k.axpy(third, h.data() + (r * kTokens + s) * d, head_in.data() + r * d, d);
            head_dim = d;
        }
    }

    std::vector<T> logits(rows);
    k.linear(head_in.data(), rows, head_dim, P(head_w_), 1, P(head_b_), logits.data());
    if (ws) w.pooled = std::move(head_in);
    return logits;
}

template <typename T>
void RouterNet<T>::backward(Workspace& w, std::span<const T> dlogits) {
    const auto& k = kernels::active<T>();
    const std::size_t rows = w.rows;
    const std::size_t d = arch_.model_dim;
    auto P = [&](std::size_t idx) { return params_[idx].value.data(); };
    auto G = [&](std::size_t idx) { return params_[idx].grad.data(); };
    const std::size_t head_dim = params_[head_w_].size();

    std::vector<T> dhead(rows * head_dim);
    linear_backward(k, dlogits.data(), w.pooled.data(), rows, head_dim, 1, P(head_w_), G(head_w_), G(head_b_),
                    dhead.data());

    std::vector<T> dproj[3];
    if (arch_.variant == Variant::BilinearMF) {
        const std::size_t r = arch_.mf_rank;
        std::vector<T> dr(rows * r);
        linear_backward(k, dhead.data(), w.mf_r.data(), rows, r, d, P(mf_a_), G(mf_a_), static_cast<T*>(nullptr),
                        dr.data());
        linear_backward(k, dr.data(), w.x[0].data(), rows, arch_.input_dim(), r, P(mf_b_), G(mf_b_),
                        static_cast<T*>(nullptr), static_cast<T*>(nullptr));
        return;
    }

    if (arch_.variant == Variant::Mlp) {
        std::vector<T> dact = std::move(dhead);
        for (std::size_t i = mlp_.size(); i-- > 0;) {
            const std::size_t h = arch_.mlp_hidden[i];
            const std::size_t prev = i == 0 ? 3 * d : arch_.mlp_hidden[i - 1];
            const auto& act = w.mlp_act[i + 1];
            for (std::size_t j = 0; j < rows * h; ++j)
                if (act[j] <= T(0)) dact[j] = T(0);
            std::vector<T> dprev(rows * prev);
            linear_backward(k, dact.data(), w.mlp_act[i].data(), rows, prev, h, P(mlp_[i].w), G(mlp_[i].w),
                            G(mlp_[i].b), dprev.data());
            dact = std::move(dprev);
        }
        for (int m = 0; m < 3; ++m) {
            dproj[m].resize(rows * d);
            for (std::size_t r = 0; r < rows; ++r) std::copy_n(dact.data() + r * 3 * d + m * d, d, dproj[m].data() + r * d);
        }
    } else {
        const std::size_t n = rows * kTokens;
        const std::size_t heads = arch_.heads;
        const std::size_t dh = d / heads;
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        const std::size_t f = arch_.ffn_dim;
        std::vector<T> dh_tok(n * d, T(0));
        const T third = static_cast<T>(1.0 / kTokens);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t s = 0; s < kTokens; ++s)
                k.axpy(third, dhead.data() + r * d, dh_tok.data() + (r * kTokens + s) * d, d);

        std::vector<T> dr2(n * d), dx1(n * d), dfd(n * f), dr1(n * d), dattn(n * d), d_o(n * d), dq(n * d), dk(n * d),
            dv(n * d), dtmp(n * d);
        for (std::size_t l = blocks_.size(); l-- > 0;) {
            const Block& b = blocks_[l];
            auto& c = w.blocks[l];
            layer_norm_backward(dh_tok.data(), n, d, P(b.ln2_g), c.xhat2.data(), c.rstd2.data(), G(b.ln2_g), G(b.ln2_b),
                                dr2.data());
            dx1 = dr2;
            apply_mask(dr2, c.drop_out);  // now d(f2 before dropout)
            linear_backward(k, dr2.data(), c.fd.data(), n, f, d, P(b.w2), G(b.w2), G(b.b2), dfd.data());
            apply_mask(dfd, c.drop_ffn);
            for (std::size_t i = 0; i < n * f; ++i)
                if (c.f1[i] <= T(0)) dfd[i] = T(0);
            linear_backward(k, dfd.data(), c.x1.data(), n, d, f, P(b.w1), G(b.w1), G(b.b1), dtmp.data());
            for (std::size_t i = 0; i < n * d; ++i) dx1[i] += dtmp[i];
            layer_norm_backward(dx1.data(), n, d, P(b.ln1_g), c.xhat1.data(), c.rstd1.data(), G(b.ln1_g), G(b.ln1_b),
                                dr1.data());
            dattn = dr1;
            apply_mask(dattn, c.drop_attn);
            linear_backward(k, dattn.data(), c.o.data(), n, d, d, P(b.wo), G(b.wo), G(b.bo), d_o.data());

            std::fill(dq.begin(), dq.end(), T(0));
            std::fill(dk.begin(), dk.end(), T(0));
            std::fill(dv.begin(), dv.end(), T(0));
            T dA[kTokens * kTokens];
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t hh = 0; hh < heads; ++hh) {
                    const T* A = c.probs.data() + ((r * heads + hh) * kTokens) * kTokens;
                    auto off = [&](std::size_t tok) { return (r * kTokens + tok) * d + hh * dh; };
                    for (std::size_t i = 0; i < kTokens; ++i)
                        for (std::size_t j = 0; j < kTokens; ++j) {
                            dA[i * kTokens + j] = k.dot(d_o.data() + off(i), c.v.data() + off(j), dh);
                            k.axpy(A[i * kTokens + j], d_o.data() + off(i), dv.data() + off(j), dh);
                        }
                    for (std::size_t i = 0; i < kTokens; ++i) {
                        T row_dot = 0;
                        for (std::size_t j = 0; j < kTokens; ++j) row_dot += A[i * kTokens + j] * dA[i * kTokens + j];
                        for (std::size_t j = 0; j < kTokens; ++j) {
                            const T ds = A[i * kTokens + j] * (dA[i * kTokens + j] - row_dot) * scale;
                            k.axpy(ds, c.k.data() + off(j), dq.data() + off(i), dh);
                            k.axpy(ds, c.q.data() + off(i), dk.data() + off(j), dh);
                        }
                    }
                }
            // residual path
            dh_tok = dr1;
            linear_backward(k, dq.data(), c.in.data(), n, d, d, P(b.wq), G(b.wq), G(b.bq), dtmp.data());
            for (std::size_t i = 0; i < n * d; ++i) dh_tok[i] += dtmp[i];
            linear_backward(k, dk.data(), c.in.data(), n, d, d, P(b.wk), G(b.wk), G(b.bk), dtmp.data());
            for (std::size_t i = 0; i < n * d; ++i) dh_tok[i] += dtmp[i];
            linear_backward(k, dv.data(), c.in.data(), n, d, d, P(b.wv), G(b.wv), G(b.bv), dtmp.data());
            for (std::size_t i = 0; i < n * d; ++i) dh_tok[i] += dtmp[i];
        }
        for (int m = 0; m < 3; ++m) dproj[m].resize(rows * d);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t s = 0; s < kTokens; ++s) {
                const T* src = dh_tok.data() + (r * kTokens + s) * d;
                std::copy_n(src, d, dproj[s].data() + r * d);
                T* gs = G(slot_) + s * d;
                for (std::size_t i = 0; i < d; ++i) gs[i] += src[i];
            }
    }

    const std::size_t in_dims[3] = {arch_.text_dim, arch_.image_dim, kStatsDim};
    for (int m = 0; m < 3; ++m)
        linear_backward(k, dproj[m].data(), w.x[m].data(), rows, in_dims[m], d, P(proj_[m].w), G(proj_[m].w),
                        G(proj_[m].b), static_cast<T*>(nullptr));
}

namespace {

double bce(double z, uint8_t y) {
    // log(1 + exp(-|z|)) + max(z, 0) - z*y
    return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * (y ? 1.0 : 0.0);
}

}  // namespace

template <typename T>
double RouterNet<T>::loss_and_grad(std::span<const T> inputs, std::span<const uint8_t> labels, Rng* dropout_rng) {
    const std::size_t rows = labels.size();
    if (rows == 0) throw RangeError("empty batch");
    Workspace ws;
    const std::vector<T> z = forward(inputs, rows, &ws, dropout_rng);
    std::vector<T> dz(rows);
    double loss = 0.0;
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double zi = static_cast<double>(z[i]);
        loss += bce(zi, labels[i]);
        // d/dz of BCE with logits is sigma(z) - y; unclamped sigmoid keeps it exact
        const double s = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
        dz[i] = static_cast<T>((s - (labels[i] ? 1.0 : 0.0)) * inv);
    }
    backward(ws, dz);
    return loss * inv;
}

template <typename T>
double RouterNet<T>::loss(std::span<const T> inputs, std::span<const uint8_t> labels) const {
    const auto z = logits(inputs, labels.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += bce(z[i], labels[i]);
    return s / static_cast<double>(z.size());
}

template <typename T>
std::vector<double> RouterNet<T>::logits(std::span<const T> inputs, std::size_t rows) const {
    const auto z = forward(inputs, rows, nullptr, nullptr);
    return {z.begin(), z.end()};
}

template <typename T>
double RouterNet<T>::predict(const FeatureBundle& bundle) const {
    std::vector<T> x(arch_.input_dim());
    flatten_input<T>(bundle, arch_, x);
    return sigmoid(logits(x, 1)[0]);
}

template <typename T>
std::vector<double> RouterNet<T>::predict(std::span<const FeatureBundle> bundles, unsigned threads) const {
    // Rows are independent, so chunking and threading do not change any output bit.
    constexpr std::size_t kChunk = 128;
    const std::size_t Z = arch_.input_dim();
    std::vector<double> out(bundles.size());
    const std::size_t chunks = (bundles.size() + kChunk - 1) / kChunk;
    auto run_chunk = [&](std::size_t c) {
        const std::size_t lo = c * kChunk, hi = std::min(bundles.size(), lo + kChunk);
        std::vector<T> x((hi - lo) * Z);
        for (std::size_t i = lo; i < hi; ++i) flatten_input<T>(bundles[i], arch_, std::span<T>(x).subspan((i - lo) * Z, Z));
        const auto z = logits(x, hi - lo);
        for (std::size_t i = lo; i < hi; ++i) out[i] = sigmoid(z[i - lo]);
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(chunks)));
    if (threads <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
        return out;
    }
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (std::size_t c = t; c < chunks; c += threads) run_chunk(c);
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
    return out;
}

template class RouterNet<float>;
template class RouterNet<double>;

}  // namespace ecvl
