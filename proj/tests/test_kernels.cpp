#include <tuple>
#include <vector>

#include "doctest.h"
#include "nefes/kernels.hpp"
#include "nefes/rng.hpp"

using namespace nefes;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    return v;
}

void naive_gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
                   const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
}

}  // namespace

TEST_CASE("scalar gemm matches naive reference") {
    Rng rng(11);
    const kern::Kernels& K = kern::scalar();
    for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1},
                           {3, 5, 7},
                           {16, 33, 8},
                           {31, 17, 29}}) {
        auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
        std::vector<double> c(m * n), ref(m * n);
        K.gemm_nn(m, k, n, a.data(), b.data(), c.data());
        naive_gemm_nn(m, k, n, a.data(), b.data(), ref.data());
        for (std::size_t i = 0; i < c.size(); ++i)
            CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-13));
    }
}

TEST_CASE("dot and sum oracles") {
    const kern::Kernels& K = kern::active();
    std::vector<double> a{1, 2, 3}, b{4, 5, 6};
    CHECK(K.dot(a.data(), b.data(), 3) == doctest::Approx(32.0));
    CHECK(K.sum(a.data(), 3) == doctest::Approx(6.0));
}

TEST_CASE("avx2 kernels agree with scalar") {
    if (!kern::avx2_available()) return;
    Rng rng(7);
    const kern::Kernels& S = kern::scalar();
    const kern::Kernels& V = kern::avx2();

    for (std::size_t n : {std::size_t{1}, std::size_t{2}, std::size_t{7}, std::size_t{8},
                          std::size_t{63}, std::size_t{64}, std::size_t{1000}}) {
        auto a = random_vec(n, rng), b = random_vec(n, rng);
        CHECK(S.dot(a.data(), b.data(), n) ==
              doctest::Approx(V.dot(a.data(), b.data(), n)).epsilon(1e-12));
        CHECK(S.sum(a.data(), n) == doctest::Approx(V.sum(a.data(), n)).epsilon(1e-12));

        auto y1 = b, y2 = b;
        S.axpy(1.7, a.data(), y1.data(), n);
        V.axpy(1.7, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-13));

        auto s1 = a, s2 = a;
        S.scale(-0.3, s1.data(), n);
        V.scale(-0.3, s2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(s1[i] == s2[i]);
    }

    for (auto [m, k, n] : {std::tuple<std::size_t, std::size_t, std::size_t>{2, 3, 4},
                           {17, 9, 23},
                           {64, 64, 64},
                           {5, 100, 1}}) {
        auto a = random_vec(m * k, rng);
        auto bn = random_vec(k * n, rng);
        auto bt = random_vec(n * k, rng);
        std::vector<double> c1(m * n), c2(m * n);

        S.gemm_nn(m, k, n, a.data(), bn.data(), c1.data());
        V.gemm_nn(m, k, n, a.data(), bn.data(), c2.data());
        for (std::size_t i = 0; i < c1.size(); ++i)
            CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));

        S.gemm_nt(m, k, n, a.data(), bt.data(), c1.data());
        V.gemm_nt(m, k, n, a.data(), bt.data(), c2.data());
        for (std::size_t i = 0; i < c1.size(); ++i)
            CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));

        auto acc1 = random_vec(m * n, rng);
        auto acc2 = acc1;
        S.gemm_nn_acc(m, k, n, a.data(), bn.data(), acc1.data());
        V.gemm_nn_acc(m, k, n, a.data(), bn.data(), acc2.data());
        for (std::size_t i = 0; i < acc1.size(); ++i)
            CHECK(acc1[i] == doctest::Approx(acc2[i]).epsilon(1e-12));

        auto nt1 = random_vec(m * n, rng);
        auto nt2 = nt1;
        S.gemm_nt_acc(m, k, n, a.data(), bt.data(), nt1.data());
        V.gemm_nt_acc(m, k, n, a.data(), bt.data(), nt2.data());
        for (std::size_t i = 0; i < nt1.size(); ++i)
            CHECK(nt1[i] == doctest::Approx(nt2[i]).epsilon(1e-12));

        // C[m,n] += A^T B with A stored k x m
        auto at = random_vec(k * m, rng);
        auto bv = random_vec(k * n, rng);
        auto t1 = random_vec(m * n, rng);
        auto t2 = t1;
        S.gemm_tn_acc(m, k, n, at.data(), bv.data(), t1.data());
        V.gemm_tn_acc(m, k, n, at.data(), bv.data(), t2.data());
        for (std::size_t i = 0; i < t1.size(); ++i)
            CHECK(t1[i] == doctest::Approx(t2[i]).epsilon(1e-12));
    }
}
