#include "nefes/kernels.hpp"

namespace nefes::kern {
namespace {

double dot_s(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_s(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_s(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

double sum_s(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <bool Acc>
void gemm_nn_t(std::size_t m, std::size_t k, std::size_t n,
               const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        if (!Acc)
            for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
        const double* a = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double ap = a[p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
}

template <bool Acc>
void gemm_nt_t(std::size_t m, std::size_t k, std::size_t n,
               const double* A, const double* B, double* C) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = dot_s(a, B + j * k, k);
            c[j] = Acc ? c[j] + d : d;
        }
    }
}

// A is k x m, C += A^T * B
void gemm_tn_acc_s(std::size_t m, std::size_t k, std::size_t n,
                   const double* A, const double* B, double* C) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* a = A + p * m;
        const double* b = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double ai = a[i];
            double* c = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += ai * b[j];
        }
    }
}

}  // namespace

const Kernels& scalar() {
    static const Kernels k = {
        "scalar", dot_s,      axpy_s,          scale_s,       sum_s,
        gemm_nn_t<false>,     gemm_nn_t<true>, gemm_nt_t<false>,
        gemm_nt_t<true>,      gemm_tn_acc_s,
    };
    return k;
}

}  // namespace nefes::kern
