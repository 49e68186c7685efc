#include "gdd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gdd/errors.hpp"
#include "gdd/gemm.hpp"
#include "gdd/tape.hpp"

namespace gdd {
namespace {

// Dead-branch guard: an output that never received an adjoint contributes
// nothing. Backward rules bail out instead of touching an empty buffer.
bool no_adjoint(const TensorPtr& out) { return out->grad.empty(); }

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (!same_shape(*a, *b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
}

TensorPtr make_out(std::vector<int> shape, bool requires_grad) {
    return tensor_zeros(std::move(shape), requires_grad);
}

void maybe_record(const TensorPtr& out, std::function<void()> rule) {
    if (Tape* tp = Tape::active(); tp && out->requires_grad) tp->record(std::move(rule));
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    auto out = make_out(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    maybe_record(out, [a, b, out] {
        if (no_adjoint(out)) return;
        const std::size_t n = out->size();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
        }
    });
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    auto out = make_out(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] - b->data[i];
    maybe_record(out, [a, b, out] {
        if (no_adjoint(out)) return;
        const std::size_t n = out->size();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) b->grad[i] -= out->grad[i];
        }
    });
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    auto out = make_out(a->shape, a->requires_grad || b->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
    maybe_record(out, [a, b, out] {
        if (no_adjoint(out)) return;
        const std::size_t n = out->size();
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data[i];
        }
    });
    return out;
}

TensorPtr scalar_mul(double s, const TensorPtr& a) {
    auto out = make_out(a->shape, a->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = s * a->data[i];
    maybe_record(out, [s, a, out] {
        if (no_adjoint(out)) return;
        a->ensure_grad();
        const std::size_t n = out->size();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += s * out->grad[i];
    });
    return out;
}

TensorPtr exp_op(const TensorPtr& a) {
    auto out = make_out(a->shape, a->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = std::exp(a->data[i]);
    maybe_record(out, [a, out] {
        if (no_adjoint(out)) return;
        a->ensure_grad();
        const std::size_t n = out->size();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * out->data[i];
    });
    return out;
}

TensorPtr log_op(const TensorPtr& a) {
    auto out = make_out(a->shape, a->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!(a->data[i] > 0.0))
            throw NumericError("log: input must be strictly positive, got " +
                               std::to_string(a->data[i]));
        out->data[i] = std::log(a->data[i]);
    }
    maybe_record(out, [a, out] {
        if (no_adjoint(out)) return;
        a->ensure_grad();
        const std::size_t n = out->size();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] / a->data[i];
    });
    return out;
}

TensorPtr relu(const TensorPtr& a) {
    auto out = make_out(a->shape, a->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    maybe_record(out, [a, out] {
        if (no_adjoint(out)) return;
        a->ensure_grad();
        const std::size_t n = out->size();
        // subgradient 0 at the kink
        for (std::size_t i = 0; i < n; ++i)
            if (a->data[i] > 0.0) a->grad[i] += out->grad[i];
    });
    return out;
}

TensorPtr reshape(const TensorPtr& a, std::vector<int> shape) {
    if (shape_numel(shape) != a->size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a->shape) +
                                    " -> " + shape_str(shape));
    auto out = make_out(std::move(shape), a->requires_grad);
    out->data = a->data;
    maybe_record(out, [a, out] {
        if (no_adjoint(out)) return;
        a->ensure_grad();
        const std::size_t n = out->size();
        for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
    });
    return out;
}

namespace {

// Maps each input flat index to its output flat index once (reduction strides),
// then walks input in ascending flat order: the accumulation order contract.
struct ReducePlan {
    std::vector<int> out_shape;   // [1] when everything is reduced
    std::vector<std::size_t> out_index;  // per input flat index
    std::size_t count;            // elements folded into each output slot
};

ReducePlan plan_reduce(const Tensor& a, const std::vector<int>& axes) {
    const int rank = (int)a.shape.size();
    std::vector<bool> reduced(rank, false);
    for (int ax : axes) {
        if (ax < 0 || ax >= rank) throw std::invalid_argument("reduce: invalid axis");
        if (reduced[ax]) throw std::invalid_argument("reduce: duplicate axis");
        reduced[ax] = true;
    }
    ReducePlan p;
    std::size_t count = 1;
    for (int d = 0; d < rank; ++d) {
        if (reduced[d]) count *= (std::size_t)a.shape[d];
        else p.out_shape.push_back(a.shape[d]);
    }
    if (p.out_shape.empty()) p.out_shape.push_back(1);
    p.count = count;

    // out strides over kept dims
    std::vector<std::size_t> out_stride(rank, 0);
    std::size_t s = 1;
    for (int d = rank - 1; d >= 0; --d) {
        if (!reduced[d]) {
            out_stride[d] = s;
            s *= (std::size_t)a.shape[d];
        }
    }
    p.out_index.resize(a.size());
    std::vector<int> idx(rank, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        std::size_t o = 0;
        for (int d = 0; d < rank; ++d) o += out_stride[d] * (std::size_t)idx[d];
        p.out_index[i] = o;
        for (int d = rank - 1; d >= 0; --d) {
            if (++idx[d] < a.shape[d]) break;
            idx[d] = 0;
        }
    }
    return p;
}

TensorPtr reduce_impl(const TensorPtr& a, const std::vector<int>& axes, bool mean) {
    ReducePlan p = plan_reduce(*a, axes);
    auto out = make_out(p.out_shape, a->requires_grad);
    const std::size_t n = a->size();
    for (std::size_t i = 0; i < n; ++i) out->data[p.out_index[i]] += a->data[i];
    if (mean) {
        const double inv = 1.0 / (double)p.count;
        for (double& v : out->data) v *= inv;
    }
    const double gscale = mean ? 1.0 / (double)p.count : 1.0;
    maybe_record(out, [a, out, plan = std::move(p), gscale] {
        if (no_adjoint(out)) return;
        a->ensure_grad();
        const std::size_t n = a->size();
        for (std::size_t i = 0; i < n; ++i)
            a->grad[i] += gscale * out->grad[plan.out_index[i]];
    });
    return out;
}

std::vector<int> all_axes(const Tensor& a) {
    std::vector<int> axes(a.shape.size());
    for (std::size_t d = 0; d < axes.size(); ++d) axes[d] = (int)d;
    return axes;
}

}  // namespace

TensorPtr reduce_sum(const TensorPtr& a, const std::vector<int>& axes) {
    return reduce_impl(a, axes, false);
}

TensorPtr reduce_mean(const TensorPtr& a, const std::vector<int>& axes) {
    return reduce_impl(a, axes, true);
}

TensorPtr sum_all(const TensorPtr& a) { return reduce_impl(a, all_axes(*a), false); }

TensorPtr mean_all(const TensorPtr& a) { return reduce_impl(a, all_axes(*a), true); }

TensorPtr weighted_diff_sum(const TensorPtr& w, const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(w, a, "weighted_diff_sum");
    require_same_shape(w, b, "weighted_diff_sum");
    auto out = make_out({1}, w->requires_grad || a->requires_grad || b->requires_grad);
    const std::size_t n = w->size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += w->data[i] * (a->data[i] - b->data[i]);
    out->data[0] = acc;
    maybe_record(out, [w, a, b, out] {
        if (no_adjoint(out)) return;
        const double g = out->grad[0];
        const std::size_t n = w->size();
        if (w->requires_grad) {
            w->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) w->grad[i] += g * (a->data[i] - b->data[i]);
        }
        if (a->requires_grad) {
            a->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) a->grad[i] += g * w->data[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) b->grad[i] -= g * w->data[i];
        }
    });
    return out;
}

namespace {

// Shared softmax body over `outer` x `m` x `inner` lanes; both public
// entry points reduce to it, so a 4-d tensor softmaxed per spatial plane
// and its flattened [N*C, H*W] view produce the same bits.
TensorPtr softmax_lanes(const TensorPtr& x, std::size_t outer, std::size_t m, std::size_t inner,
                        double tau) {
    auto out = make_out(x->shape, x->requires_grad);
    const double inv_tau = 1.0 / tau;
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * m * inner + in;
            double mx = x->data[base];
            for (std::size_t j = 1; j < m; ++j)
                mx = std::max(mx, x->data[base + j * inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                double e = std::exp((x->data[base + j * inner] - mx) * inv_tau);
                out->data[base + j * inner] = e;
                sum += e;
            }
            const double inv_sum = 1.0 / sum;
            for (std::size_t j = 0; j < m; ++j) out->data[base + j * inner] *= inv_sum;
        }
    }
    maybe_record(out, [x, out, outer, inner, m, inv_tau] {
        if (no_adjoint(out)) return;
        x->ensure_grad();
        // dx_j = y_j * (g_j - sum_k g_k y_k) / tau, per slice
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * m * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    const std::size_t k = base + j * inner;
                    dot += out->grad[k] * out->data[k];
                }
                for (std::size_t j = 0; j < m; ++j) {
                    const std::size_t k = base + j * inner;
                    x->grad[k] += out->data[k] * (out->grad[k] - dot) * inv_tau;
                }
            }
        }
    });
    return out;
}

}  // namespace

TensorPtr softmax_wt(const TensorPtr& x, int axis, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_wt: tau must be > 0");
    const int rank = (int)x->shape.size();
    if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax_wt: invalid axis");
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= (std::size_t)x->shape[d];
    for (int d = axis + 1; d < rank; ++d) inner *= (std::size_t)x->shape[d];
    return softmax_lanes(x, outer, (std::size_t)x->shape[axis], inner, tau);
}

TensorPtr softmax_spatial(const TensorPtr& x, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_spatial: tau must be > 0");
    if (x->shape.size() != 4)
        throw std::invalid_argument("softmax_spatial: input must be 4-d");
    const std::size_t planes = (std::size_t)x->shape[0] * x->shape[1];
    return softmax_lanes(x, planes, (std::size_t)x->shape[2] * x->shape[3], 1, tau);
}

// ---- conv2d -----------------------------------------------------------------

namespace {

struct ConvDims {
    int N, Cin, H, W, Cout, kh, kw, stride, padding, Ho, Wo;
    std::size_t patch;  // Cin*kh*kw
    std::size_t hw;     // Ho*Wo
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                   int padding) {
    if (input.shape.size() != 4 || weight.shape.size() != 4)
        throw std::invalid_argument("conv2d: input and weight must be 4-d");
    if (bias.shape.size() != 1)
        throw std::invalid_argument("conv2d: bias must be 1-d");
    ConvDims d;
    d.N = input.shape[0]; d.Cin = input.shape[1]; d.H = input.shape[2]; d.W = input.shape[3];
    d.Cout = weight.shape[0]; d.kh = weight.shape[2]; d.kw = weight.shape[3];
    d.stride = stride; d.padding = padding;
    if (weight.shape[1] != d.Cin)
        throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight.shape[1]) +
                                    " input channels, got " + std::to_string(d.Cin));
    if (bias.shape[0] != d.Cout)
        throw std::invalid_argument("conv2d: bias size must equal Cout");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    if (d.H + 2 * padding < d.kh || d.W + 2 * padding < d.kw)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    d.Ho = (d.H + 2 * padding - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * padding - d.kw) / stride + 1;
    d.patch = (std::size_t)d.Cin * d.kh * d.kw;
    d.hw = (std::size_t)d.Ho * d.Wo;
    return d;
}

bool is_pointwise(const ConvDims& d) {
    return d.kh == 1 && d.kw == 1 && d.stride == 1 && d.padding == 0;
}

// The col matrix: col[(c*kh+ki)*kw+kj][oh*Wo+ow] = x[c][oh*s-p+ki][ow*s-p+kj],
// zero out of bounds. The forward never materializes it: the panel source below
// hands the kernel 24-column slices generated straight from the image. The
// weight gradient does materialize it (im2col further down), because there col
// is the A operand, which the kernel reads densely.

struct ConvPanelCtx {
    const ConvDims* d;
    const double* x;  // one image, [Cin, H, W]
};

// B = col, rows k = patch index, columns j = output position. Column runs
// split at output-row boundaries; each run is a contiguous (stride 1) or
// strided slice of one image row, zero-filled where the window pads.
void conv_panel_fill(const void* pctx, int K, int j0, int jn, double* panel) {
    const auto& ctx = *(const ConvPanelCtx*)pctx;
    const ConvDims& d = *ctx.d;
    (void)K;
    struct Run {
        int col, oh, ow0, len;
    };
    Run runs[kGemmPanel];
    int nruns = 0;
    for (int col = 0, j = j0; col < jn; ++nruns) {
        const int oh = j / d.Wo, ow0 = j % d.Wo;
        const int len = std::min(jn - col, d.Wo - ow0);
        runs[nruns] = {col, oh, ow0, len};
        col += len;
        j += len;
    }
    for (int c = 0; c < d.Cin; ++c) {
        const double* xc = ctx.x + (std::size_t)c * d.H * d.W;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                double* row = panel + ((std::size_t)(c * d.kh + ki) * d.kw + kj) * kGemmPanel;
                for (int r = 0; r < nruns; ++r) {
                    const Run& run = runs[r];
                    const int ih = run.oh * d.stride - d.padding + ki;
                    double* dst = row + run.col;
                    if (ih < 0 || ih >= d.H) {
                        std::fill(dst, dst + run.len, 0.0);
                        continue;
                    }
                    const double* src = xc + (std::size_t)ih * d.W;
                    if (d.stride == 1) {
                        const int iw0 = -d.padding + kj;  // iw for ow = 0
                        int ow_lo = std::max(0, -iw0);
                        int ow_hi = std::min(d.Wo, d.W - iw0);
                        if (ow_hi < ow_lo) ow_hi = ow_lo;
                        const int lo = std::max(ow_lo, run.ow0);
                        const int hi = std::max(lo, std::min(ow_hi, run.ow0 + run.len));
                        std::fill(dst, dst + (lo - run.ow0), 0.0);
                        std::memcpy(dst + (lo - run.ow0), src + iw0 + lo,
                                    (std::size_t)(hi - lo) * sizeof(double));
                        std::fill(dst + (hi - run.ow0), dst + run.len, 0.0);
                    } else {
                        for (int t = 0; t < run.len; ++t) {
                            const int iw = (run.ow0 + t) * d.stride - d.padding + kj;
                            dst[t] = (iw >= 0 && iw < d.W) ? src[iw] : 0.0;
                        }
                    }
                }
                std::fill(row + jn, row + kGemmPanel, 0.0);
            }
        }
    }
}

// Materialized col for the weight gradient, same layout as above. Row writes
// are contiguous, which beats generating col^T panels (panel-width-strided
// stores) for that GEMM.
void im2col(const ConvDims& d, const double* x, double* col) {
    for (int c = 0; c < d.Cin; ++c) {
        const double* xc = x + (std::size_t)c * d.H * d.W;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                double* row = col + ((std::size_t)(c * d.kh + ki) * d.kw + kj) * d.hw;
                for (int oh = 0; oh < d.Ho; ++oh) {
                    const int ih = oh * d.stride - d.padding + ki;
                    double* dst = row + (std::size_t)oh * d.Wo;
                    if (ih < 0 || ih >= d.H) {
                        std::fill(dst, dst + d.Wo, 0.0);
                        continue;
                    }
                    const double* src = xc + (std::size_t)ih * d.W;
                    if (d.stride == 1) {
                        const int iw0 = -d.padding + kj;
                        int ow_lo = std::max(0, -iw0);
                        int ow_hi = std::min(d.Wo, d.W - iw0);
                        if (ow_hi < ow_lo) ow_hi = ow_lo;
                        std::fill(dst, dst + ow_lo, 0.0);
                        std::memcpy(dst + ow_lo, src + iw0 + ow_lo,
                                    (std::size_t)(ow_hi - ow_lo) * sizeof(double));
                        std::fill(dst + ow_hi, dst + d.Wo, 0.0);
                    } else {
                        for (int ow = 0; ow < d.Wo; ++ow) {
                            const int iw = ow * d.stride - d.padding + kj;
                            dst[ow] = (iw >= 0 && iw < d.W) ? src[iw] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of a col-shaped gradient back onto the image.
void col2im_acc(const ConvDims& d, const double* col, double* gx) {
    for (int c = 0; c < d.Cin; ++c) {
        double* gc = gx + (std::size_t)c * d.H * d.W;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const double* row = col + ((std::size_t)(c * d.kh + ki) * d.kw + kj) * d.hw;
                for (int oh = 0; oh < d.Ho; ++oh) {
                    const int ih = oh * d.stride - d.padding + ki;
                    if (ih < 0 || ih >= d.H) continue;
                    const double* src = row + (std::size_t)oh * d.Wo;
                    double* dstrow = gc + (std::size_t)ih * d.W;
                    if (d.stride == 1) {
                        const int iw0 = -d.padding + kj;
                        int ow_lo = std::max(0, -iw0);
                        int ow_hi = std::min(d.Wo, d.W - iw0);
                        for (int ow = ow_lo; ow < ow_hi; ++ow) dstrow[iw0 + ow] += src[ow];
                    } else {
                        for (int ow = 0; ow < d.Wo; ++ow) {
                            const int iw = ow * d.stride - d.padding + kj;
                            if (iw >= 0 && iw < d.W) dstrow[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

// Blocked out-of-place transpose: dst[j][i] = src[i][j], src is rows x cols.
void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    constexpr std::size_t kB = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += kB) {
        const std::size_t i1 = std::min(rows, i0 + kB);
        for (std::size_t j0 = 0; j0 < cols; j0 += kB) {
            const std::size_t j1 = std::min(cols, j0 + kB);
            for (std::size_t i = i0; i < i1; ++i)
                for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
        }
    }
}

void conv_backward(const ConvDims& d, const TensorPtr& input, const TensorPtr& weight,
                   const TensorPtr& bias, const TensorPtr& out) {
    const bool pw = is_pointwise(d);
    const std::size_t in_plane = (std::size_t)d.Cin * d.H * d.W;
    const std::size_t out_plane = (std::size_t)d.Cout * d.hw;
    const std::size_t col_plane = d.patch * d.hw;

    if (bias->requires_grad) {
        bias->ensure_grad();
        for (int n = 0; n < d.N; ++n) {
            const double* go = out->grad.data() + (std::size_t)n * out_plane;
            for (int co = 0; co < d.Cout; ++co) {
                double s = 0.0;
                const double* gr = go + (std::size_t)co * d.hw;
                for (std::size_t p = 0; p < d.hw; ++p) s += gr[p];
                bias->grad[co] += s;
            }
        }
    }

    std::vector<double> wt;        // weight transposed: [patch, Cout]
    if (input->requires_grad) {
        input->ensure_grad();
        wt.resize(d.patch * (std::size_t)d.Cout);
        transpose(weight->data.data(), wt.data(), d.Cout, d.patch);
    }
    // gW^T[patch, Cout] += col * gout^T, accumulated per image in batch order.
    // Each entry is one fma chain per image over output positions in ascending
    // order — the same chains the [Cout, patch] orientation would build, since
    // the factors of every product merely swap — and the single transposed add
    // into the parameter gradient comes last. A 1x1 image serves as its own col.
    std::vector<double> col, got, gwt;
    if (weight->requires_grad) {
        if (!pw) col.resize(col_plane);
        got.resize(d.hw * (std::size_t)d.Cout);
        gwt.assign(d.patch * (std::size_t)d.Cout, 0.0);
    }

    std::vector<double> gcol;
    if (input->requires_grad && !pw) gcol.resize(col_plane);

    for (int n = 0; n < d.N; ++n) {
        const double* x = input->data.data() + (std::size_t)n * in_plane;
        const double* go = out->grad.data() + (std::size_t)n * out_plane;
        if (weight->requires_grad) {
            const double* a = x;
            if (!pw) {
                im2col(d, x, col.data());
                a = col.data();
            }
            transpose(go, got.data(), d.Cout, d.hw);
            gemm_acc((int)d.patch, (int)d.hw, d.Cout, a, got.data(), gwt.data());
        }
        if (input->requires_grad) {
            double* gx = input->grad.data() + (std::size_t)n * in_plane;
            if (pw) {
                gemm_acc((int)d.patch, d.Cout, (int)d.hw, wt.data(), go, gx);
            } else {
                gemm_ovw((int)d.patch, d.Cout, (int)d.hw, wt.data(), go, gcol.data());
                col2im_acc(d, gcol.data(), gx);
            }
        }
    }
    if (weight->requires_grad) {
        weight->ensure_grad();
        for (int co = 0; co < d.Cout; ++co) {
            double* wg = weight->grad.data() + (std::size_t)co * d.patch;
            const double* src = gwt.data() + co;
            for (std::size_t k = 0; k < d.patch; ++k) wg[k] += src[k * (std::size_t)d.Cout];
        }
    }
}

}  // namespace

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias,
                 int stride, int padding) {
    const ConvDims d = conv_dims(*input, *weight, *bias, stride, padding);
    auto out = make_out({d.N, d.Cout, d.Ho, d.Wo},
                        input->requires_grad || weight->requires_grad || bias->requires_grad);
    const bool pw = is_pointwise(d);
    const std::size_t in_plane = (std::size_t)d.Cin * d.H * d.W;
    const std::size_t out_plane = (std::size_t)d.Cout * d.hw;
    for (int n = 0; n < d.N; ++n) {
        const double* x = input->data.data() + (std::size_t)n * in_plane;
        double* o = out->data.data() + (std::size_t)n * out_plane;
        if (pw) {
            // 1x1/stride-1/no-pad: the image already is the col matrix
            gemm_ovw(d.Cout, (int)d.patch, (int)d.hw, weight->data.data(), x, o);
        } else {
            ConvPanelCtx ctx{&d, x};
            gemm_ovw(d.Cout, (int)d.patch, (int)d.hw, weight->data.data(),
                     PanelSource{conv_panel_fill, &ctx}, o);
        }
        for (int co = 0; co < d.Cout; ++co) {
            const double b = bias->data[co];
            if (b == 0.0) continue;
            double* orow = o + (std::size_t)co * d.hw;
            for (std::size_t p = 0; p < d.hw; ++p) orow[p] += b;
        }
    }
    maybe_record(out, [d, input, weight, bias, out] {
        if (no_adjoint(out)) return;
        conv_backward(d, input, weight, bias, out);
    });
    return out;
}

TensorPtr gaussian_sample(Rng& rng, std::vector<int> shape, double mu, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_sample: sigma must be >= 0");
    auto out = tensor_zeros(std::move(shape), false);
    if (sigma == 0.0) {
        std::fill(out->data.begin(), out->data.end(), mu);
        return out;
    }
    for (double& v : out->data) v = rng.normal(mu, sigma);
    return out;
}

void check_finite(const Tensor& t, const char* what) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw NumericError(std::string(what) + ": non-finite value " + std::to_string(v));
}

}  // namespace gdd
