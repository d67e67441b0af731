#include "nefes/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define NEFES_X86 1
#include <immintrin.h>
#else
#define NEFES_X86 0
#endif

namespace nefes::kern {

#if NEFES_X86

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_v(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy_v(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_v(double alpha, double* x, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

double sum_v(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

// One output row: c[0..n) (+)= sum_p a[p] * B[p, 0..n)
template <bool Acc>
inline void row_nn(const double* a, const double* B, double* c,
                   std::size_t k, std::size_t n) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        __m256d c0 = Acc ? _mm256_loadu_pd(c + j) : _mm256_setzero_pd();
        __m256d c1 = Acc ? _mm256_loadu_pd(c + j + 4) : _mm256_setzero_pd();
        for (std::size_t p = 0; p < k; ++p) {
            const __m256d ap = _mm256_set1_pd(a[p]);
            const double* b = B + p * n + j;
            c0 = _mm256_fmadd_pd(ap, _mm256_loadu_pd(b), c0);
            c1 = _mm256_fmadd_pd(ap, _mm256_loadu_pd(b + 4), c1);
        }
        _mm256_storeu_pd(c + j, c0);
        _mm256_storeu_pd(c + j + 4, c1);
    }
    for (; j + 4 <= n; j += 4) {
        __m256d c0 = Acc ? _mm256_loadu_pd(c + j) : _mm256_setzero_pd();
        for (std::size_t p = 0; p < k; ++p)
            c0 = _mm256_fmadd_pd(_mm256_set1_pd(a[p]), _mm256_loadu_pd(B + p * n + j), c0);
        _mm256_storeu_pd(c + j, c0);
    }
    for (; j < n; ++j) {
        double s = Acc ? c[j] : 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p] * B[p * n + j];
        c[j] = s;
    }
}

template <bool Acc>
void gemm_nn_v(std::size_t m, std::size_t k, std::size_t n,
               const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i)
        row_nn<Acc>(A + i * k, B, C + i * n, k, n);
}

template <bool Acc>
void gemm_nt_v(std::size_t m, std::size_t k, std::size_t n,
               const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = dot_v(a, B + j * k, k);
            c[j] = Acc ? c[j] + d : d;
        }
    }
}

void gemm_tn_acc_v(std::size_t m, std::size_t k, std::size_t n,
                   const double* A, const double* B, double* C) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* a = A + p * m;
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const __m256d ai = _mm256_set1_pd(a[i]);
            double* c = C + i * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(c + j);
                vc = _mm256_fmadd_pd(ai, _mm256_loadu_pd(b + j), vc);
                _mm256_storeu_pd(c + j, vc);
            }
            for (; j < n; ++j) c[j] += a[i] * b[j];
        }
    }
}

}  // namespace

bool avx2_available() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

const Kernels& avx2() {
    static const Kernels k = {
        "avx2",  dot_v,        axpy_v,          scale_v,       sum_v,
        gemm_nn_v<false>,      gemm_nn_v<true>, gemm_nt_v<false>,
        gemm_nt_v<true>,       gemm_tn_acc_v,
    };
    return k;
}

#else

bool avx2_available() { return false; }
const Kernels& avx2() { return scalar(); }

#endif

}  // namespace nefes::kern
