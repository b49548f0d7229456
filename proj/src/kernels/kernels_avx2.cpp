// AVX2 + FMA variants. Functions carry target attributes instead of the whole
// translation unit being built with -mavx2, so no AVX2 code can leak into
// inline functions shared with the scalar path.

#include <cmath>

#include "ecvl/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define ECVL_HAVE_AVX2_PATH 1
#include <immintrin.h>
#else
#define ECVL_HAVE_AVX2_PATH 0
#endif

namespace ecvl::kernels::avx2 {

#if ECVL_HAVE_AVX2_PATH

#define ECVL_AVX2 __attribute__((target("avx2,fma")))

namespace {

ECVL_AVX2 inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    lo = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, lo);
    lo = _mm_add_ss(lo, sh);
    return _mm_cvtss_f32(lo);
}

ECVL_AVX2 inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

ECVL_AVX2 float dot_f(const float* a, const float* b, std::size_t n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps(), s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), s1);
        s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 16), _mm256_loadu_ps(b + i + 16), s2);
        s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 24), _mm256_loadu_ps(b + i + 24), s3);
    }
    for (; i + 8 <= n; i += 8) s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    float s = hsum(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

ECVL_AVX2 double dot_d(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd(), s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

ECVL_AVX2 void axpy_f(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

ECVL_AVX2 void axpy_d(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four weight rows per pass share each load of the input row.
ECVL_AVX2 void linear_f(const float* x, std::size_t rows, std::size_t in, const float* w, std::size_t out,
                        const float* bias, float* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x + r * in;
        float* yr = y + r * out;
        std::size_t o = 0;
        for (; o + 4 <= out; o += 4) {
            const float* w0 = w + o * in;
            const float* w1 = w0 + in;
            const float* w2 = w1 + in;
            const float* w3 = w2 + in;
            __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps(), a2 = _mm256_setzero_ps(),
                   a3 = _mm256_setzero_ps();
            std::size_t i = 0;
            for (; i + 8 <= in; i += 8) {
                const __m256 xv = _mm256_loadu_ps(xr + i);
                a0 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w0 + i), a0);
                a1 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w1 + i), a1);
                a2 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w2 + i), a2);
                a3 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w3 + i), a3);
            }
            float s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
            for (; i < in; ++i) {
                s0 += xr[i] * w0[i];
                s1 += xr[i] * w1[i];
                s2 += xr[i] * w2[i];
                s3 += xr[i] * w3[i];
            }
            yr[o] = (bias ? bias[o] : 0.0f) + s0;
            yr[o + 1] = (bias ? bias[o + 1] : 0.0f) + s1;
            yr[o + 2] = (bias ? bias[o + 2] : 0.0f) + s2;
            yr[o + 3] = (bias ? bias[o + 3] : 0.0f) + s3;
        }
        for (; o < out; ++o) yr[o] = (bias ? bias[o] : 0.0f) + dot_f(xr, w + o * in, in);
    }
}

ECVL_AVX2 void linear_d(const double* x, std::size_t rows, std::size_t in, const double* w, std::size_t out,
                        const double* bias, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * in;
        double* yr = y + r * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] = (bias ? bias[o] : 0.0) + dot_d(xr, w + o * in, in);
    }
}

ECVL_AVX2 void adam_f(float* w, const float* g, float* m, float* v, std::size_t n, const AdamParams& p) {
    const float b1 = static_cast<float>(p.beta1), b2 = static_cast<float>(p.beta2);
    const float c1 = static_cast<float>(1.0 - p.beta1), c2 = static_cast<float>(1.0 - p.beta2);
    const float step = static_cast<float>(p.lr / p.bias1);
    const float isb2 = static_cast<float>(1.0 / std::sqrt(p.bias2));
    const float eps = static_cast<float>(p.eps);
    const __m256 vb1 = _mm256_set1_ps(b1), vb2 = _mm256_set1_ps(b2), vc1 = _mm256_set1_ps(c1),
                 vc2 = _mm256_set1_ps(c2), vstep = _mm256_set1_ps(step), visb2 = _mm256_set1_ps(isb2),
                 veps = _mm256_set1_ps(eps);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gv = _mm256_loadu_ps(g + i);
        const __m256 mv = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(vc1, gv));
        const __m256 vv =
            _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)), _mm256_mul_ps(_mm256_mul_ps(vc2, gv), gv));
        const __m256 denom = _mm256_add_ps(_mm256_mul_ps(_mm256_sqrt_ps(vv), visb2), veps);
        const __m256 upd = _mm256_div_ps(_mm256_mul_ps(vstep, mv), denom);
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        _mm256_storeu_ps(w + i, _mm256_sub_ps(_mm256_loadu_ps(w + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = b1 * m[i] + c1 * g[i];
        v[i] = b2 * v[i] + c2 * g[i] * g[i];
        w[i] -= step * m[i] / (std::sqrt(v[i]) * isb2 + eps);
    }
}

ECVL_AVX2 void adam_d(double* w, const double* g, double* m, double* v, std::size_t n, const AdamParams& p) {
    const double c1 = 1.0 - p.beta1, c2 = 1.0 - p.beta2;
    const double step = p.lr / p.bias1;
    const double isb2 = 1.0 / std::sqrt(p.bias2);
    const __m256d vb1 = _mm256_set1_pd(p.beta1), vb2 = _mm256_set1_pd(p.beta2), vc1 = _mm256_set1_pd(c1),
                  vc2 = _mm256_set1_pd(c2), vstep = _mm256_set1_pd(step), visb2 = _mm256_set1_pd(isb2),
                  veps = _mm256_set1_pd(p.eps);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        const __m256d mv = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(vc1, gv));
        const __m256d vv =
            _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(_mm256_mul_pd(vc2, gv), gv));
        const __m256d denom = _mm256_add_pd(_mm256_mul_pd(_mm256_sqrt_pd(vv), visb2), veps);
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), _mm256_div_pd(_mm256_mul_pd(vstep, mv), denom)));
    }
    for (; i < n; ++i) {
        m[i] = p.beta1 * m[i] + c1 * g[i];
        v[i] = p.beta2 * v[i] + c2 * g[i] * g[i];
        w[i] -= step * m[i] / (std::sqrt(v[i]) * isb2 + p.eps);
    }
}

const Ops<float> kFloat{&dot_f, &axpy_f, &linear_f, &adam_f};
const Ops<double> kDouble{&dot_d, &axpy_d, &linear_d, &adam_d};

}  // namespace

bool compiled() { return true; }

template <>
const Ops<float>& table<float>() {
    return kFloat;
}
template <>
const Ops<double>& table<double>() {
    return kDouble;
}

#else

bool compiled() { return false; }

template <>
const Ops<float>& table<float>() {
    return scalar::table<float>();
}
template <>
const Ops<double>& table<double>() {
    return scalar::table<double>();
}

#endif

}  // namespace ecvl::kernels::avx2
