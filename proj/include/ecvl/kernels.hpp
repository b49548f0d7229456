#pragma once

// Dense arithmetic used by the router network.
//
// Every kernel has a scalar reference implementation and an AVX2+FMA
// variant. The variant is chosen once per process (CPU detection, overridable
// with ECVL_SIMD=scalar|avx2) so results are reproducible within a process and
// across runs on the same machine. SIMD and scalar results agree to rounding,
// not bitwise: accumulation order differs.

#include <cstddef>
#include <string_view>

namespace ecvl::kernels {

enum class Impl { Scalar, Avx2 };

std::string_view impl_name(Impl impl);

struct AdamParams {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double bias1 = 1.0;  // 1 - beta1^t
    double bias2 = 1.0;  // 1 - beta2^t
};

template <typename T>
struct Ops {
    /// sum_i a[i] * b[i]
    T (*dot)(const T* a, const T* b, std::size_t n);
    /// y += alpha * x
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
    /// y[r, o] = bias[o] + dot(x[r, :], w[o, :]); x is rows x in, w is out x in, y is rows x out.
    /// bias may be null.
    void (*linear)(const T* x, std::size_t rows, std::size_t in, const T* w, std::size_t out, const T* bias, T* y);
    /// In-place Adam update of w given gradient g and moment buffers m, v.
    void (*adam)(T* w, const T* g, T* m, T* v, std::size_t n, const AdamParams& p);
};

bool available(Impl impl);

/// Table for an explicit implementation (throws std::invalid_argument if unavailable).
template <typename T>
const Ops<T>& ops(Impl impl);

/// Process-wide selection.
Impl active_impl();

template <typename T>
const Ops<T>& active() {
    return ops<T>(active_impl());
}

namespace scalar {
template <typename T>
const Ops<T>& table();
}

namespace avx2 {
bool compiled();
template <typename T>
const Ops<T>& table();
}  // namespace avx2

}  // namespace ecvl::kernels
