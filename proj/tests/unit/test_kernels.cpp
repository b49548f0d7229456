#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "ecvl/kernels.hpp"
#include "ecvl/rng.hpp"

using namespace ecvl;
using namespace ecvl::kernels;

namespace {

template <typename T>
std::vector<T> randv(Rng& rng, std::size_t n) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
    return v;
}

template <typename T>
double tol() {
    return std::is_same_v<T, float> ? 1e-4 : 1e-11;
}

// lengths around the 8-wide float and 4-wide double lanes, plus odd tails
const std::size_t kLengths[] = {0, 1, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 33, 100, 257};

template <typename T>
void check_dot() {
    Rng rng(1);
    for (std::size_t n : kLengths) {
        const auto a = randv<T>(rng, n), b = randv<T>(rng, n);
        long double naive = 0;
        for (std::size_t i = 0; i < n; ++i) naive += static_cast<long double>(a[i]) * b[i];
        const double s = ops<T>(Impl::Scalar).dot(a.data(), b.data(), n);
        CHECK(s == doctest::Approx(static_cast<double>(naive)).epsilon(tol<T>()).scale(1.0));
        if (available(Impl::Avx2)) {
            const double v = ops<T>(Impl::Avx2).dot(a.data(), b.data(), n);
            CHECK(v == doctest::Approx(s).epsilon(tol<T>()).scale(1.0));
        }
    }
}

template <typename T>
void check_axpy() {
    Rng rng(2);
    for (std::size_t n : kLengths) {
        const auto x = randv<T>(rng, n), y0 = randv<T>(rng, n);
        const T alpha = static_cast<T>(0.37);
        auto ys = y0, yv = y0;
        ops<T>(Impl::Scalar).axpy(alpha, x.data(), ys.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(y0[i] + 0.37 * x[i]).epsilon(tol<T>()));
        if (available(Impl::Avx2)) {
            ops<T>(Impl::Avx2).axpy(alpha, x.data(), yv.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(yv[i] == doctest::Approx(ys[i]).epsilon(tol<T>()));
        }
    }
}

template <typename T>
void check_linear() {
    Rng rng(3);
    const std::array<std::size_t, 3> shapes[] = {{1, 1, 1}, {3, 7, 5}, {4, 16, 8}, {2, 33, 9}, {5, 64, 3}, {1, 7, 17}};
    for (auto [rows, in, out] : shapes) {
        const auto x = randv<T>(rng, rows * in), w = randv<T>(rng, out * in), b = randv<T>(rng, out);
        for (const T* bias : std::array<const T*, 2>{nullptr, b.data()}) {
            std::vector<T> ys(rows * out), yv(rows * out);
            ops<T>(Impl::Scalar).linear(x.data(), rows, in, w.data(), out, bias, ys.data());
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < out; ++o) {
                    double ref = bias ? bias[o] : 0.0;
                    for (std::size_t i = 0; i < in; ++i) ref += static_cast<double>(x[r * in + i]) * w[o * in + i];
                    CHECK(ys[r * out + o] == doctest::Approx(ref).epsilon(tol<T>()).scale(1.0));
                }
            if (available(Impl::Avx2)) {
                ops<T>(Impl::Avx2).linear(x.data(), rows, in, w.data(), out, bias, yv.data());
                for (std::size_t i = 0; i < ys.size(); ++i)
                    CHECK(yv[i] == doctest::Approx(ys[i]).epsilon(tol<T>()).scale(1.0));
            }
        }
    }
}

template <typename T>
void check_adam() {
    Rng rng(4);
    for (std::size_t n : kLengths) {
        auto w = randv<T>(rng, n);
        std::vector<T> m(n), v(n);
        auto wv = w, mv = m, vv = v;
        std::vector<double> wr(w.begin(), w.end()), mr(n), vr(n);
        for (int t = 1; t <= 5; ++t) {
            const auto g = randv<T>(rng, n);
            AdamParams p;
            p.lr = 0.01;
            p.bias1 = 1.0 - std::pow(p.beta1, t);
            p.bias2 = 1.0 - std::pow(p.beta2, t);
            ops<T>(Impl::Scalar).adam(w.data(), g.data(), m.data(), v.data(), n, p);
            if (available(Impl::Avx2)) ops<T>(Impl::Avx2).adam(wv.data(), g.data(), mv.data(), vv.data(), n, p);
            // textbook form with bias-corrected moments
            for (std::size_t i = 0; i < n; ++i) {
                mr[i] = p.beta1 * mr[i] + (1 - p.beta1) * g[i];
                vr[i] = p.beta2 * vr[i] + (1 - p.beta2) * g[i] * g[i];
                const double mh = mr[i] / p.bias1, vh = vr[i] / p.bias2;
                wr[i] -= p.lr * mh / (std::sqrt(vh) + p.eps);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(w[i] == doctest::Approx(wr[i]).epsilon(tol<T>()).scale(1.0));
            if (available(Impl::Avx2)) {
                CHECK(wv[i] == doctest::Approx(w[i]).epsilon(tol<T>()).scale(1.0));
                CHECK(mv[i] == doctest::Approx(m[i]).epsilon(tol<T>()).scale(1.0));
                CHECK(vv[i] == doctest::Approx(v[i]).epsilon(tol<T>()).scale(1.0));
            }
        }
    }
}

}  // namespace

TEST_CASE_TEMPLATE("dot", T, float, double) { check_dot<T>(); }
TEST_CASE_TEMPLATE("axpy", T, float, double) { check_axpy<T>(); }
TEST_CASE_TEMPLATE("linear", T, float, double) { check_linear<T>(); }
TEST_CASE_TEMPLATE("adam", T, float, double) { check_adam<T>(); }

TEST_CASE("dispatch") {
    CHECK(available(Impl::Scalar));
    CHECK(impl_name(Impl::Scalar) == "scalar");
    CHECK(impl_name(Impl::Avx2) == "avx2");
    CHECK(available(active_impl()));
    if (!available(Impl::Avx2)) CHECK_THROWS_AS(ops<float>(Impl::Avx2), std::invalid_argument);
    // the active table is one of the two explicit ones
    const auto* a = &active<double>();
    CHECK((a == &ops<double>(Impl::Scalar) || (available(Impl::Avx2) && a == &ops<double>(Impl::Avx2))));
    MESSAGE("active kernels: " << impl_name(active_impl()));
}
