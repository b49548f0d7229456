#include <cstdlib>
#include <stdexcept>
#include <string>

#include "ecvl/kernels.hpp"

namespace ecvl::kernels {

std::string_view impl_name(Impl impl) { return impl == Impl::Avx2 ? "avx2" : "scalar"; }

bool available(Impl impl) {
    if (impl == Impl::Scalar) return true;
#if defined(__x86_64__) || defined(_M_X64)
    return avx2::compiled() && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

template <typename T>
const Ops<T>& ops(Impl impl) {
    if (!available(impl)) throw std::invalid_argument("kernel implementation not available: " + std::string(impl_name(impl)));
    return impl == Impl::Avx2 ? avx2::table<T>() : scalar::table<T>();
}

template const Ops<float>& ops<float>(Impl);
template const Ops<double>& ops<double>(Impl);

Impl active_impl() {
    static const Impl selected = [] {
        if (const char* env = std::getenv("ECVL_SIMD")) {
            const std::string v(env);
            if (v == "scalar") return Impl::Scalar;
            if (v == "avx2" && available(Impl::Avx2)) return Impl::Avx2;
        }
        return available(Impl::Avx2) ? Impl::Avx2 : Impl::Scalar;
    }();
    return selected;
}

}  // namespace ecvl::kernels
