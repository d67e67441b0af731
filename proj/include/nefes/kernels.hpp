#pragma once

#include <cstddef>

// Data-parallel inner loops used by the tensor/autodiff layer.
// A scalar reference implementation always exists; an AVX2+FMA variant is
// selected at runtime when the CPU supports it. Set NEFES_SIMD=scalar to
// force the reference path.

namespace nefes::kern {

struct Kernels {
    const char* name;

    // y = sum_i a[i]*b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // x[i] *= alpha
    void (*scale)(double alpha, double* x, std::size_t n);
    // sum of elements
    double (*sum)(const double* x, std::size_t n);

    // Row-major GEMM family. A is m x k, C is m x n.
    // nn: B is k x n, nt: B is n x k (used transposed), tn: A is k x m.
    void (*gemm_nn)(std::size_t m, std::size_t k, std::size_t n,
                    const double* A, const double* B, double* C);      // C  = A*B
    void (*gemm_nn_acc)(std::size_t m, std::size_t k, std::size_t n,
                        const double* A, const double* B, double* C);  // C += A*B
    void (*gemm_nt)(std::size_t m, std::size_t k, std::size_t n,
                    const double* A, const double* B, double* C);      // C  = A*B^T
    void (*gemm_nt_acc)(std::size_t m, std::size_t k, std::size_t n,
                        const double* A, const double* B, double* C);  // C += A*B^T
    void (*gemm_tn_acc)(std::size_t m, std::size_t k, std::size_t n,
                        const double* A, const double* B, double* C);  // C += A^T*B
};

const Kernels& scalar();
bool avx2_available();
const Kernels& avx2();     // valid only if avx2_available()
const Kernels& active();   // dispatched once at first use

}  // namespace nefes::kern
