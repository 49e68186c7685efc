#pragma once
// Row-major double GEMM. Per C entry the products form one fma chain from
// zero in ascending k order, finished by a single store — identical between
// the vectorized kernel and the portable fallback, and bit-reproducible run
// to run. gemm_acc adds the chain onto C (one final rounding); gemm_ovw
// overwrites C with it, which by construction produces the same bits as
// gemm_acc onto a zeroed C without touching C's prior contents.
namespace gdd {

void gemm_acc(int M, int K, int N, const double* A, const double* B, double* C);  // C += A*B
void gemm_ovw(int M, int K, int N, const double* A, const double* B, double* C);  // C  = A*B

// The kernel consumes B one kGemmPanel-column panel at a time. A PanelSource
// generates those panels on demand instead of reading a materialized B: fill
// writes rows k = 0..K-1 of columns [j0, j0+jn) at a row stride of kGemmPanel
// doubles, zeroing columns jn..kGemmPanel-1. Convolutions use this to lower
// image patches straight into panels, skipping the full col matrix. Panel
// contents equal what packing a dense B would produce, so results are
// bit-identical to the dense entry points.
constexpr int kGemmPanel = 24;

struct PanelSource {
    void (*fill)(const void* ctx, int K, int j0, int jn, double* panel);
    const void* ctx;
};

void gemm_acc(int M, int K, int N, const double* A, PanelSource B, double* C);
void gemm_ovw(int M, int K, int N, const double* A, PanelSource B, double* C);

}  // namespace gdd
