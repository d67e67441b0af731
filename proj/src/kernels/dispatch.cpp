#include "nefes/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace nefes::kern {

const Kernels& active() {
    static const Kernels* chosen = [] {
        const char* env = std::getenv("NEFES_SIMD");
        if (env && std::strcmp(env, "scalar") == 0) return &scalar();
        if (env && std::strcmp(env, "avx2") == 0 && avx2_available()) return &avx2();
        return avx2_available() ? &avx2() : &scalar();
    }();
    return *chosen;
}

}  // namespace nefes::kern
