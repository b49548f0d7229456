#include <cmath>

#include "ecvl/kernels.hpp"

namespace ecvl::kernels::scalar {

namespace {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void linear(const T* x, std::size_t rows, std::size_t in, const T* w, std::size_t out, const T* bias, T* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * in;
        T* yr = y + r * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] = (bias ? bias[o] : T(0)) + dot(xr, w + o * in, in);
    }
}

template <typename T>
void adam(T* w, const T* g, T* m, T* v, std::size_t n, const AdamParams& p) {
    const T b1 = static_cast<T>(p.beta1), b2 = static_cast<T>(p.beta2);
    const T c1 = static_cast<T>(1.0 - p.beta1), c2 = static_cast<T>(1.0 - p.beta2);
    const T step = static_cast<T>(p.lr / p.bias1);
    const T inv_sqrt_bias2 = static_cast<T>(1.0 / std::sqrt(p.bias2));
    const T eps = static_cast<T>(p.eps);
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + c1 * g[i];
        v[i] = b2 * v[i] + c2 * g[i] * g[i];
        w[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_bias2 + eps);
    }
}

template <typename T>
const Ops<T> kTable{&dot<T>, &axpy<T>, &linear<T>, &adam<T>};

}  // namespace

template <typename T>
const Ops<T>& table() {
    return kTable<T>;
}

template const Ops<float>& table<float>();
template const Ops<double>& table<double>();

}  // namespace ecvl::kernels::scalar
