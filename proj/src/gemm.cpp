// GEMM microkernel. Convolutions lower onto this (im2col), so the training
// budget is spent almost entirely here.
//
// AVX-512 path: 8x24 register tile (24 zmm accumulators), B consumed per
// 24-column panel from a contiguous aligned scratch. Panels matter: feature
// maps make N a power of two, and striding B by 8 KiB rows thrashes one cache
// set; the packed panel streams instead (~2x on the hot shapes here). Panels
// come from a PanelSource — either packed out of a dense B or generated
// directly (convolution patches) — and hold identical values either way, so
// every path produces identical bits.
//
// Accumulation order is the contract: C[i][j] is a chain of fma(a,b,acc) with
// k ascending, matching the scalar fallback bit for bit. The accumulate and
// overwrite entry points differ only in the final store.
#include "gdd/gemm.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace gdd {
namespace {

constexpr int kNr = kGemmPanel;

// Panel scratch, 64-byte aligned, grown on demand. One per thread: sweeps
// may run whole training jobs on separate threads.
thread_local std::vector<double> tl_panel;

double* panel_buffer(int K) {
    std::size_t need = (std::size_t)K * kNr + 8;
    if (tl_panel.size() < need) tl_panel.resize(need);
    auto addr = (std::uintptr_t)tl_panel.data();
    return (double*)((addr + 63) & ~(std::uintptr_t)63);
}

struct DenseB {
    const double* B;
    int N;
};

void dense_fill(const void* ctx, int K, int j0, int jn, double* panel) {
    const auto& src = *(const DenseB*)ctx;
    for (int k = 0; k < K; ++k) {
        const double* bk = src.B + (std::size_t)k * src.N + j0;
        double* d = panel + (std::size_t)k * kNr;
        int c = 0;
        for (; c < jn; ++c) d[c] = bk[c];
        for (; c < kNr; ++c) d[c] = 0.0;
    }
}

#if defined(__AVX512F__)

constexpr int kMr = 8;

template <bool kAcc>
inline void store_masked(double* p, __mmask8 m, __m512d v) {
    if constexpr (kAcc) v = _mm512_add_pd(_mm512_maskz_loadu_pd(m, p), v);
    _mm512_mask_storeu_pd(p, m, v);
}

template <bool kAcc>
void gemm_avx512(int M, int K, int N, const double* A, PanelSource src, double* C) {
    double* Bp = panel_buffer(K);
    for (int j0 = 0; j0 < N; j0 += kNr) {
        const int jn = (N - j0 < kNr) ? (N - j0) : kNr;
        __mmask8 m0 = 0xFF, m1 = 0xFF, m2 = 0xFF;
        if (jn < kNr) {
            int r = jn;
            m0 = (__mmask8)((r >= 8) ? 0xFF : ((1u << r) - 1)); r = (r > 8) ? r - 8 : 0;
            m1 = (__mmask8)((r >= 8) ? 0xFF : ((1u << r) - 1)); r = (r > 8) ? r - 8 : 0;
            m2 = (__mmask8)((r >= 8) ? 0xFF : ((1u << r) - 1));
        }
        src.fill(src.ctx, K, j0, jn, Bp);
        int i0 = 0;
        for (; i0 + kMr <= M; i0 += kMr) {
            const double* Ab = A + (std::size_t)i0 * K;
            double* Cb = C + (std::size_t)i0 * N + j0;
            __m512d c00 = _mm512_setzero_pd(), c01 = _mm512_setzero_pd(), c02 = _mm512_setzero_pd();
            __m512d c10 = _mm512_setzero_pd(), c11 = _mm512_setzero_pd(), c12 = _mm512_setzero_pd();
            __m512d c20 = _mm512_setzero_pd(), c21 = _mm512_setzero_pd(), c22 = _mm512_setzero_pd();
            __m512d c30 = _mm512_setzero_pd(), c31 = _mm512_setzero_pd(), c32 = _mm512_setzero_pd();
            __m512d c40 = _mm512_setzero_pd(), c41 = _mm512_setzero_pd(), c42 = _mm512_setzero_pd();
            __m512d c50 = _mm512_setzero_pd(), c51 = _mm512_setzero_pd(), c52 = _mm512_setzero_pd();
            __m512d c60 = _mm512_setzero_pd(), c61 = _mm512_setzero_pd(), c62 = _mm512_setzero_pd();
            __m512d c70 = _mm512_setzero_pd(), c71 = _mm512_setzero_pd(), c72 = _mm512_setzero_pd();
            for (int k = 0; k < K; ++k) {
                const double* bk = Bp + (std::size_t)k * kNr;
                __m512d b0 = _mm512_load_pd(bk);
                __m512d b1 = _mm512_load_pd(bk + 8);
                __m512d b2 = _mm512_load_pd(bk + 16);
                __m512d a;
                a = _mm512_set1_pd(Ab[0 * (std::size_t)K + k]);
                c00 = _mm512_fmadd_pd(a, b0, c00); c01 = _mm512_fmadd_pd(a, b1, c01); c02 = _mm512_fmadd_pd(a, b2, c02);
                a = _mm512_set1_pd(Ab[1 * (std::size_t)K + k]);
                c10 = _mm512_fmadd_pd(a, b0, c10); c11 = _mm512_fmadd_pd(a, b1, c11); c12 = _mm512_fmadd_pd(a, b2, c12);
                a = _mm512_set1_pd(Ab[2 * (std::size_t)K + k]);
                c20 = _mm512_fmadd_pd(a, b0, c20); c21 = _mm512_fmadd_pd(a, b1, c21); c22 = _mm512_fmadd_pd(a, b2, c22);
                a = _mm512_set1_pd(Ab[3 * (std::size_t)K + k]);
                c30 = _mm512_fmadd_pd(a, b0, c30); c31 = _mm512_fmadd_pd(a, b1, c31); c32 = _mm512_fmadd_pd(a, b2, c32);
                a = _mm512_set1_pd(Ab[4 * (std::size_t)K + k]);
                c40 = _mm512_fmadd_pd(a, b0, c40); c41 = _mm512_fmadd_pd(a, b1, c41); c42 = _mm512_fmadd_pd(a, b2, c42);
                a = _mm512_set1_pd(Ab[5 * (std::size_t)K + k]);
                c50 = _mm512_fmadd_pd(a, b0, c50); c51 = _mm512_fmadd_pd(a, b1, c51); c52 = _mm512_fmadd_pd(a, b2, c52);
                a = _mm512_set1_pd(Ab[6 * (std::size_t)K + k]);
                c60 = _mm512_fmadd_pd(a, b0, c60); c61 = _mm512_fmadd_pd(a, b1, c61); c62 = _mm512_fmadd_pd(a, b2, c62);
                a = _mm512_set1_pd(Ab[7 * (std::size_t)K + k]);
                c70 = _mm512_fmadd_pd(a, b0, c70); c71 = _mm512_fmadd_pd(a, b1, c71); c72 = _mm512_fmadd_pd(a, b2, c72);
            }
#define GDD_STORE_ROW(r, x0, x1, x2)                          \
    do {                                                      \
        double* cr = Cb + (std::size_t)(r) * N;               \
        store_masked<kAcc>(cr, m0, x0);                       \
        store_masked<kAcc>(cr + 8, m1, x1);                   \
        store_masked<kAcc>(cr + 16, m2, x2);                  \
    } while (0)
            GDD_STORE_ROW(0, c00, c01, c02);
            GDD_STORE_ROW(1, c10, c11, c12);
            GDD_STORE_ROW(2, c20, c21, c22);
            GDD_STORE_ROW(3, c30, c31, c32);
            GDD_STORE_ROW(4, c40, c41, c42);
            GDD_STORE_ROW(5, c50, c51, c52);
            GDD_STORE_ROW(6, c60, c61, c62);
            GDD_STORE_ROW(7, c70, c71, c72);
#undef GDD_STORE_ROW
        }
        // leftover rows, one at a time against the same panel
        for (; i0 < M; ++i0) {
            const double* ar = A + (std::size_t)i0 * K;
            double* cr = C + (std::size_t)i0 * N + j0;
            __m512d s0 = _mm512_setzero_pd(), s1 = _mm512_setzero_pd(), s2 = _mm512_setzero_pd();
            for (int k = 0; k < K; ++k) {
                const double* bk = Bp + (std::size_t)k * kNr;
                __m512d a = _mm512_set1_pd(ar[k]);
                s0 = _mm512_fmadd_pd(a, _mm512_load_pd(bk), s0);
                s1 = _mm512_fmadd_pd(a, _mm512_load_pd(bk + 8), s1);
                s2 = _mm512_fmadd_pd(a, _mm512_load_pd(bk + 16), s2);
            }
            store_masked<kAcc>(cr, m0, s0);
            store_masked<kAcc>(cr + 8, m1, s1);
            store_masked<kAcc>(cr + 16, m2, s2);
        }
    }
}

template <bool kAcc>
void gemm_panels(int M, int K, int N, const double* A, PanelSource src, double* C) {
    gemm_avx512<kAcc>(M, K, N, A, src, C);
}

#else  // portable fallback

// Same fma chain per C entry, k ascending, consuming the same panels, so
// results match the vector path bit for bit.
template <bool kAcc>
void gemm_panels(int M, int K, int N, const double* A, PanelSource src, double* C) {
    double* Bp = panel_buffer(K);
    for (int j0 = 0; j0 < N; j0 += kNr) {
        const int jn = (N - j0 < kNr) ? (N - j0) : kNr;
        src.fill(src.ctx, K, j0, jn, Bp);
        for (int i = 0; i < M; ++i) {
            const double* ar = A + (std::size_t)i * K;
            double* cr = C + (std::size_t)i * N + j0;
            double acc[kNr];
            for (int j = 0; j < jn; ++j) acc[j] = 0.0;
            for (int k = 0; k < K; ++k) {
                const double a = ar[k];
                const double* bk = Bp + (std::size_t)k * kNr;
                for (int j = 0; j < jn; ++j) acc[j] = std::fma(a, bk[j], acc[j]);
            }
            if constexpr (kAcc) {
                for (int j = 0; j < jn; ++j) cr[j] += acc[j];
            } else {
                for (int j = 0; j < jn; ++j) cr[j] = acc[j];
            }
        }
    }
}

#endif

}  // namespace

void gemm_acc(int M, int K, int N, const double* A, const double* B, double* C) {
    if (M <= 0 || K <= 0 || N <= 0) return;
    DenseB src{B, N};
    gemm_panels<true>(M, K, N, A, PanelSource{dense_fill, &src}, C);
}

void gemm_ovw(int M, int K, int N, const double* A, const double* B, double* C) {
    if (M <= 0 || K <= 0 || N <= 0) return;
    DenseB src{B, N};
    gemm_panels<false>(M, K, N, A, PanelSource{dense_fill, &src}, C);
}

void gemm_acc(int M, int K, int N, const double* A, PanelSource B, double* C) {
    if (M <= 0 || K <= 0 || N <= 0) return;
    gemm_panels<true>(M, K, N, A, B, C);
}

void gemm_ovw(int M, int K, int N, const double* A, PanelSource B, double* C) {
    if (M <= 0 || K <= 0 || N <= 0) return;
    gemm_panels<false>(M, K, N, A, B, C);
}

}  // namespace gdd
