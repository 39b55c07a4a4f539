#include "r2n2/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace r2n2::kern {
namespace {

Backend pick_initial_backend() {
    if (const char* env = std::getenv("R2N2_KERNEL_BACKEND")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2() || !avx2_ops())
                throw std::runtime_error("R2N2_KERNEL_BACKEND=avx2 requested but unavailable");
            return Backend::avx2;
        }
        throw std::runtime_error("unknown R2N2_KERNEL_BACKEND value");
    }
    return (cpu_has_avx2() && avx2_ops()) ? Backend::avx2 : Backend::scalar;
}

Backend& backend_slot() {
    static Backend b = pick_initial_backend();
    return b;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() { return backend_slot(); }

void set_backend(Backend b) {
    if (b == Backend::avx2 && (!cpu_has_avx2() || !avx2_ops()))
        throw std::runtime_error("avx2 backend unavailable on this CPU/build");
    backend_slot() = b;
}

std::string_view backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

const Ops& ops() {
    return backend_slot() == Backend::avx2 ? *avx2_ops() : scalar_ops();
}

}  // namespace r2n2::kern
