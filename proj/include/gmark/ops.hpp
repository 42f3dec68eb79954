#pragma once

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "gmark/tensor.hpp"

namespace gmark {

namespace detail {

template <class S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode<S>>();
    long long count = shape_numel(shape);
    n->shape = std::move(shape);
    n->data.resize(static_cast<size_t>(count));
    n->requires_grad = requires_grad;
    return n;
}

// C[M,N] += A[M,K] * B[K,N], row-major contiguous. Fixed k-order per output
// element, so results are bit-stable for a given input.
template <class S>
void gemm_accum(const S* a, const S* b, S* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            if (av == S(0)) continue;
            const S* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class S>
void transpose(const S* src, S* dst, int rows, int cols) {
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            dst[static_cast<size_t>(c) * rows + r] = src[static_cast<size_t>(r) * cols + c];
}

// One image [C,H,W] -> columns [C*k*k][OH*OW] with zero padding.
template <class S>
void im2col(const S* img, int ch, int h, int w, int k, int stride, int pad, int oh, int ow,
            S* col) {
    for (int c = 0; c < ch; ++c) {
        const S* plane = img + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                S* dst = col + (static_cast<size_t>(c) * k * k + ky * k + kx) *
                                   (static_cast<size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) *dst++ = S(0);
                        continue;
                    }
                    const S* row = plane + static_cast<size_t>(iy) * w;
                    int ix = -pad + kx;
                    for (int ox = 0; ox < ow; ++ox, ix += stride)
                        *dst++ = (ix >= 0 && ix < w) ? row[ix] : S(0);
                }
            }
        }
    }
}

// Scatter-add of column gradients back into one image gradient [C,H,W].
template <class S>
void col2im_add(const S* col, int ch, int h, int w, int k, int stride, int pad, int oh, int ow,
                S* img_grad) {
    for (int c = 0; c < ch; ++c) {
        S* plane = img_grad + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const S* src = col + (static_cast<size_t>(c) * k * k + ky * k + kx) *
                                         (static_cast<size_t>(oh) * ow);
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        src += ow;
                        continue;
                    }
                    S* row = plane + static_cast<size_t>(iy) * w;
                    int ix = -pad + kx;
                    for (int ox = 0; ox < ow; ++ox, ix += stride) {
                        if (ix >= 0 && ix < w) row[ix] += src[ox];
                    }
                    src += ow;
                }
            }
        }
    }
}

template <class S, class FwdFn, class GradFn>
Tensor<S> unary_op(const Tensor<S>& x, FwdFn fwd, GradFn grad_fn) {
    auto node = make_node<S>(x.shape(), x.requires_grad());
    const auto& xd = x.data();
    for (size_t i = 0; i < xd.size(); ++i) node->data[i] = fwd(xd[i]);
    if (node->requires_grad) {
        auto px = x.node();
        node->parents = {px};
        node->backprop = [px, grad_fn](TensorNode<S>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (size_t i = 0; i < self.data.size(); ++i)
                px->grad[i] += self.grad[i] * grad_fn(px->data[i], self.data[i]);
        };
    }
    return Tensor<S>(std::move(node));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](S v) { return v > S(0) ? v : S(0); },
        [](S xv, S) { return xv > S(0) ? S(1) : S(0); });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
        [](S, S yv) { return yv * (S(1) - yv); });
}

// Subgradient 0 at the kink, matching the L1 loss convention.
template <class S>
Tensor<S> abs(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](S v) { return v < S(0) ? -v : v; },
        [](S xv, S) { return xv > S(0) ? S(1) : (xv < S(0) ? S(-1) : S(0)); });
}

template <class S>
Tensor<S> clamp01(const Tensor<S>& x) {
    return detail::unary_op(
        x, [](S v) { return v < S(0) ? S(0) : (v > S(1) ? S(1) : v); },
        [](S xv, S) { return (xv > S(0) && xv < S(1)) ? S(1) : S(0); });
}

template <class S>
Tensor<S> scalar_mul(const Tensor<S>& x, S factor) {
    return detail::unary_op(
        x, [factor](S v) { return v * factor; }, [factor](S, S) { return factor; });
}

namespace detail {

template <class S, class Combine, class GradA, class GradB>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, const char* name, Combine comb,
                    GradA ga, GradB gb) {
    if (!same_shape(a.shape(), b.shape()))
        throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto node = make_node<S>(a.shape(), a.requires_grad() || b.requires_grad());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < ad.size(); ++i) node->data[i] = comb(ad[i], bd[i]);
    if (node->requires_grad) {
        auto pa = a.node();
        auto pb = b.node();
        node->parents = {pa, pb};
        node->backprop = [pa, pb, ga, gb](TensorNode<S>& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.data.size(); ++i)
                    pa->grad[i] += self.grad[i] * ga(pa->data[i], pb->data[i]);
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.data.size(); ++i)
                    pb->grad[i] += self.grad[i] * gb(pa->data[i], pb->data[i]);
            }
        };
    }
    return Tensor<S>(std::move(node));
}

}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "add", [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
        [](S, S) { return S(1); });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "sub", [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
        [](S, S) { return S(-1); });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op(
        a, b, "mul", [](S x, S y) { return x * y; }, [](S, S y) { return y; },
        [](S x, S) { return x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

// Flat index remap input -> output when `axes` are summed away.
inline std::vector<long long> reduce_strides(const Shape& in_shape, const std::vector<int>& axes,
                                             Shape& out_shape) {
    std::vector<bool> reduced(in_shape.size(), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= static_cast<int>(in_shape.size()))
            throw ShapeError("reduce: axis " + std::to_string(ax) + " out of range for shape " +
                             shape_str(in_shape));
        if (reduced[static_cast<size_t>(ax)]) throw ShapeError("reduce: duplicate axis");
        reduced[static_cast<size_t>(ax)] = true;
    }
    out_shape.clear();
    for (size_t i = 0; i < in_shape.size(); ++i)
        if (!reduced[i]) out_shape.push_back(in_shape[i]);
    // out stride per input dim; 0 for reduced dims
    std::vector<long long> strides(in_shape.size(), 0);
    long long run = 1;
    for (int i = static_cast<int>(in_shape.size()) - 1; i >= 0; --i) {
        if (!reduced[static_cast<size_t>(i)]) {
            strides[static_cast<size_t>(i)] = run;
            run *= in_shape[static_cast<size_t>(i)];
        }
    }
    return strides;
}

template <class S>
Tensor<S> reduce_impl(const Tensor<S>& x, const std::vector<int>& axes, bool take_mean) {
    if (x.numel() == 0) throw ValueError("reduce on empty tensor");
    Shape out_shape;
    std::vector<long long> out_stride = reduce_strides(x.shape(), axes, out_shape);
    const Shape in_shape = x.shape();
    long long reduced_count = 1;
    {
        long long out_count = shape_numel(out_shape);
        reduced_count = x.numel() / (out_count == 0 ? 1 : out_count);
    }
    const S scale = take_mean ? S(1) / static_cast<S>(reduced_count) : S(1);

    auto node = make_node<S>(out_shape, x.requires_grad());
    const auto& xd = x.data();
    // double accumulators keep large float sums accurate and deterministic
    std::vector<double> acc(node->data.size(), 0.0);
    std::vector<int> idx(in_shape.size(), 0);
    long long out_flat = 0;
    for (size_t i = 0; i < xd.size(); ++i) {
        acc[static_cast<size_t>(out_flat)] += static_cast<double>(xd[i]);
        for (int d = static_cast<int>(in_shape.size()) - 1; d >= 0; --d) {
            out_flat += out_stride[static_cast<size_t>(d)];
            if (++idx[static_cast<size_t>(d)] < in_shape[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
            out_flat -= out_stride[static_cast<size_t>(d)] * in_shape[static_cast<size_t>(d)];
        }
    }
    for (size_t i = 0; i < acc.size(); ++i) node->data[i] = static_cast<S>(acc[i]) * scale;

    if (node->requires_grad) {
        auto px = x.node();
        node->parents = {px};
        node->backprop = [px, out_stride, in_shape, scale](TensorNode<S>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            std::vector<int> idx2(in_shape.size(), 0);
            long long flat = 0;
            for (size_t i = 0; i < px->data.size(); ++i) {
                px->grad[i] += self.grad[static_cast<size_t>(flat)] * scale;
                for (int d = static_cast<int>(in_shape.size()) - 1; d >= 0; --d) {
                    flat += out_stride[static_cast<size_t>(d)];
                    if (++idx2[static_cast<size_t>(d)] < in_shape[static_cast<size_t>(d)]) break;
                    idx2[static_cast<size_t>(d)] = 0;
                    flat -= out_stride[static_cast<size_t>(d)] * in_shape[static_cast<size_t>(d)];
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

inline std::vector<int> all_axes(size_t rank) {
    std::vector<int> axes(rank);
    for (size_t i = 0; i < rank; ++i) axes[i] = static_cast<int>(i);
    return axes;
}

}  // namespace detail

template <class S>
Tensor<S> sum(const Tensor<S>& x, const std::vector<int>& axes) {
    return detail::reduce_impl(x, axes, false);
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    return detail::reduce_impl(x, detail::all_axes(x.shape().size()), false);
}

template <class S>
Tensor<S> mean(const Tensor<S>& x, const std::vector<int>& axes) {
    return detail::reduce_impl(x, axes, true);
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    return detail::reduce_impl(x, detail::all_axes(x.shape().size()), true);
}

// Maximum value and row-major flat index of its first occurrence.
template <class S>
std::pair<S, long long> max_with_index(const Tensor<S>& x) {
    if (x.numel() == 0) throw ValueError("max_with_index on empty tensor");
    const auto& d = x.data();
    long long best = 0;
    for (size_t i = 1; i < d.size(); ++i)
        if (d[i] > d[static_cast<size_t>(best)]) best = static_cast<long long>(i);
    return {d[static_cast<size_t>(best)], best};
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

// Slice index i along axis 0: [d0, rest...] -> [rest...].
template <class S>
Tensor<S> select0(const Tensor<S>& x, int index) {
    const Shape& shp = x.shape();
    if (shp.empty()) throw ShapeError("select0 on rank-0 tensor");
    if (index < 0 || index >= shp[0])
        throw ShapeError("select0: index " + std::to_string(index) + " out of range for " +
                         shape_str(shp));
    Shape out_shape(shp.begin() + 1, shp.end());
    long long slice = shape_numel(out_shape);
    auto node = detail::make_node<S>(out_shape, x.requires_grad());
    const S* src = x.data().data() + static_cast<size_t>(index) * slice;
    std::copy(src, src + slice, node->data.begin());
    if (node->requires_grad) {
        auto px = x.node();
        node->parents = {px};
        node->backprop = [px, index, slice](TensorNode<S>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            S* dst = px->grad.data() + static_cast<size_t>(index) * slice;
            for (long long i = 0; i < slice; ++i) dst[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(i)];
        };
    }
    return Tensor<S>(std::move(node));
}

// Concatenate along the channel axis: [N,Ca,H,W] + [N,Cb,H,W] -> [N,Ca+Cb,H,W].
template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(sa) + " vs " +
                         shape_str(sb));
    const int n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    auto node = detail::make_node<S>({n, ca + cb, sa[2], sa[3]},
                                     a.requires_grad() || b.requires_grad());
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (int i = 0; i < n; ++i) {
        S* dst = node->data.data() + static_cast<size_t>(i) * (ca + cb) * hw;
        std::copy(ad.begin() + static_cast<size_t>(i) * ca * hw,
                  ad.begin() + static_cast<size_t>(i + 1) * ca * hw, dst);
        std::copy(bd.begin() + static_cast<size_t>(i) * cb * hw,
                  bd.begin() + static_cast<size_t>(i + 1) * cb * hw, dst + static_cast<size_t>(ca) * hw);
    }
    if (node->requires_grad) {
        auto pa = a.node();
        auto pb = b.node();
        node->parents = {pa, pb};
        node->backprop = [pa, pb, n, ca, cb, hw](TensorNode<S>& self) {
            for (int i = 0; i < n; ++i) {
                const S* src = self.grad.data() + static_cast<size_t>(i) * (ca + cb) * hw;
                if (pa->requires_grad) {
                    pa->ensure_grad();
                    S* dst = pa->grad.data() + static_cast<size_t>(i) * ca * hw;
                    for (long long j = 0; j < static_cast<long long>(ca) * hw; ++j)
                        dst[j] += src[j];
                }
                if (pb->requires_grad) {
                    pb->ensure_grad();
                    S* dst = pb->grad.data() + static_cast<size_t>(i) * cb * hw;
                    const S* src_b = src + static_cast<size_t>(ca) * hw;
                    for (long long j = 0; j < static_cast<long long>(cb) * hw; ++j)
                        dst[j] += src_b[j];
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

// Nearest-neighbor 2x upsampling; backward is the 2x2 block sum.
template <class S>
Tensor<S> upsample2x(const Tensor<S>& x) {
    const Shape& shp = x.shape();
    if (shp.size() != 4) throw ShapeError("upsample2x expects [N,C,H,W], got " + shape_str(shp));
    const int n = shp[0], c = shp[1], h = shp[2], w = shp[3];
    auto node = detail::make_node<S>({n, c, 2 * h, 2 * w}, x.requires_grad());
    const auto& xd = x.data();
    for (long long p = 0; p < static_cast<long long>(n) * c; ++p) {
        const S* src = xd.data() + static_cast<size_t>(p) * h * w;
        S* dst = node->data.data() + static_cast<size_t>(p) * 4 * h * w;
        for (int y = 0; y < h; ++y) {
            S* r0 = dst + static_cast<size_t>(2 * y) * 2 * w;
            S* r1 = r0 + static_cast<size_t>(2) * w;
            for (int xx = 0; xx < w; ++xx) {
                const S v = src[static_cast<size_t>(y) * w + xx];
                r0[2 * xx] = v;
                r0[2 * xx + 1] = v;
                r1[2 * xx] = v;
                r1[2 * xx + 1] = v;
            }
        }
    }
    if (node->requires_grad) {
        auto px = x.node();
        node->parents = {px};
        node->backprop = [px, n, c, h, w](TensorNode<S>& self) {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (long long p = 0; p < static_cast<long long>(n) * c; ++p) {
                const S* src = self.grad.data() + static_cast<size_t>(p) * 4 * h * w;
                S* dst = px->grad.data() + static_cast<size_t>(p) * h * w;
                for (int y = 0; y < h; ++y) {
                    const S* r0 = src + static_cast<size_t>(2 * y) * 2 * w;
                    const S* r1 = r0 + static_cast<size_t>(2) * w;
                    for (int xx = 0; xx < w; ++xx)
                        dst[static_cast<size_t>(y) * w + xx] +=
                            r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// 2D convolution, zero padding, square kernel. bias may be undefined.
// input [N,C,H,W] * kernel [F,C,k,k] -> [N,F,H',W'].
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias,
                 int stride, int padding) {
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (is.size() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(is));
    if (ks.size() != 4 || ks[2] != ks[3])
        throw ShapeError("conv2d: kernel must be [F,C,k,k], got " + shape_str(ks));
    if (is[1] != ks[1])
        throw ShapeError("conv2d: input channels " + std::to_string(is[1]) +
                         " != kernel channels " + std::to_string(ks[1]));
    if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
    if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
    const int n = is[0], c = is[1], h = is[2], w = is[3];
    const int f = ks[0], k = ks[2];
    if (k > h + 2 * padding || k > w + 2 * padding)
        throw ShapeError("conv2d: kernel size " + std::to_string(k) +
                         " exceeds padded input " + shape_str(is));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.shape().size() != 1 || bias.dim(0) != f))
        throw ShapeError("conv2d: bias must be [F]=" + std::to_string(f) + ", got " +
                         shape_str(bias.shape()));
    const int oh = (h + 2 * padding - k) / stride + 1;
    const int ow = (w + 2 * padding - k) / stride + 1;
    const int kdim = c * k * k;
    const long long cols = static_cast<long long>(oh) * ow;

    bool needs_grad = input.requires_grad() || kernel.requires_grad() ||
                      (has_bias && bias.requires_grad());
    auto node = detail::make_node<S>({n, f, oh, ow}, needs_grad);

    std::vector<S> col(static_cast<size_t>(kdim) * cols);
    const auto& xd = input.data();
    const auto& wd = kernel.data();
    for (int i = 0; i < n; ++i) {
        detail::im2col(xd.data() + static_cast<size_t>(i) * c * h * w, c, h, w, k, stride,
                       padding, oh, ow, col.data());
        S* out = node->data.data() + static_cast<size_t>(i) * f * cols;
        if (has_bias) {
            const auto& bd = bias.data();
            for (int ff = 0; ff < f; ++ff)
                std::fill(out + static_cast<size_t>(ff) * cols,
                          out + static_cast<size_t>(ff + 1) * cols, bd[static_cast<size_t>(ff)]);
        } else {
            std::fill(out, out + static_cast<size_t>(f) * cols, S(0));
        }
        detail::gemm_accum(wd.data(), col.data(), out, f, kdim, static_cast<int>(cols));
    }

    if (needs_grad) {
        auto pin = input.node();
        auto pker = kernel.node();
        auto pbias = has_bias ? bias.node() : nullptr;
        node->parents = {pin, pker};
        if (pbias) node->parents.push_back(pbias);
        const int cap_stride = stride, cap_pad = padding;
        node->backprop = [pin, pker, pbias, n, c, h, w, f, k, kdim, cols, oh, ow, cap_stride,
                          cap_pad](TensorNode<S>& self) {
            const bool need_in = pin->requires_grad;
            const bool need_ker = pker->requires_grad;
            const bool need_bias = pbias && pbias->requires_grad;
            if (need_in) pin->ensure_grad();
            if (need_ker) pker->ensure_grad();
            if (need_bias) pbias->ensure_grad();

            std::vector<S> col(static_cast<size_t>(kdim) * cols);
            std::vector<S> col_t;
            std::vector<S> ker_t;
            std::vector<S> dcol;
            if (need_ker) col_t.resize(col.size());
            if (need_in) {
                ker_t.resize(static_cast<size_t>(kdim) * f);
                detail::transpose(pker->data.data(), ker_t.data(), f, kdim);
                dcol.resize(col.size());
            }
            for (int i = 0; i < n; ++i) {
                const S* dout = self.grad.data() + static_cast<size_t>(i) * f * cols;
                if (need_bias) {
                    for (int ff = 0; ff < f; ++ff) {
                        double acc = 0.0;
                        const S* row = dout + static_cast<size_t>(ff) * cols;
                        for (long long j = 0; j < cols; ++j) acc += static_cast<double>(row[j]);
                        pbias->grad[static_cast<size_t>(ff)] += static_cast<S>(acc);
                    }
                }
                if (need_ker || need_in) {
                    if (need_ker) {
                        detail::im2col(pin->data.data() + static_cast<size_t>(i) * c * h * w, c, h,
                                       w, k, cap_stride, cap_pad, oh, ow, col.data());
                        detail::transpose(col.data(), col_t.data(), kdim,
                                          static_cast<int>(cols));
                        // dW += dOut * col^T
                        detail::gemm_accum(dout, col_t.data(), pker->grad.data(), f,
                                           static_cast<int>(cols), kdim);
                    }
                    if (need_in) {
                        std::fill(dcol.begin(), dcol.end(), S(0));
                        // dCol = W^T * dOut
                        detail::gemm_accum(ker_t.data(), dout, dcol.data(), kdim, f,
                                           static_cast<int>(cols));
                        detail::col2im_add(dcol.data(), c, h, w, k, cap_stride, cap_pad, oh, ow,
                                           pin->grad.data() + static_cast<size_t>(i) * c * h * w);
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

// Per-channel normalization over (N,H,W) with learned scale/shift.
// Training mode uses batch statistics and updates the running buffers in
// place; eval mode reads the running buffers. With N=1 the batch statistics
// degenerate to per-sample statistics.
template <class S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                     S momentum = S(0.1), S eps = S(1e-5)) {
    const Shape& shp = x.shape();
    if (shp.size() != 4) throw ShapeError("batch_norm expects [N,C,H,W], got " + shape_str(shp));
    const int n = shp[0], c = shp[1], h = shp[2], w = shp[3];
    auto check_c = [c](const Tensor<S>& t, const char* name) {
        if (t.shape().size() != 1 || t.dim(0) != c)
            throw ShapeError(std::string("batch_norm: ") + name + " must be [C]=" +
                             std::to_string(c) + ", got " + shape_str(t.shape()));
    };
    check_c(gamma, "gamma");
    check_c(beta, "beta");
    check_c(running_mean, "running_mean");
    check_c(running_var, "running_var");

    const long long m = static_cast<long long>(n) * h * w;
    const long long hw = static_cast<long long>(h) * w;
    std::vector<S> mean_c(static_cast<size_t>(c)), inv_std_c(static_cast<size_t>(c));
    const auto& xd = x.data();

    if (training) {
        for (int cc = 0; cc < c; ++cc) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) {
                const S* p = xd.data() + (static_cast<size_t>(i) * c + cc) * hw;
                for (long long j = 0; j < hw; ++j) s += static_cast<double>(p[j]);
            }
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (int i = 0; i < n; ++i) {
                const S* p = xd.data() + (static_cast<size_t>(i) * c + cc) * hw;
                for (long long j = 0; j < hw; ++j) {
                    const double d = static_cast<double>(p[j]) - mu;
                    v += d * d;
                }
            }
            const double var = v / static_cast<double>(m);
            mean_c[static_cast<size_t>(cc)] = static_cast<S>(mu);
            inv_std_c[static_cast<size_t>(cc)] =
                static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
            auto& rm = running_mean.data()[static_cast<size_t>(cc)];
            auto& rv = running_var.data()[static_cast<size_t>(cc)];
            rm = (S(1) - momentum) * rm + momentum * static_cast<S>(mu);
            rv = (S(1) - momentum) * rv + momentum * static_cast<S>(unbiased);
        }
    } else {
        for (int cc = 0; cc < c; ++cc) {
            mean_c[static_cast<size_t>(cc)] = running_mean.data()[static_cast<size_t>(cc)];
            inv_std_c[static_cast<size_t>(cc)] = static_cast<S>(
                1.0 / std::sqrt(static_cast<double>(running_var.data()[static_cast<size_t>(cc)]) +
                                static_cast<double>(eps)));
        }
    }

    bool needs_grad = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    auto node = detail::make_node<S>(shp, needs_grad);
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    for (int i = 0; i < n; ++i) {
        for (int cc = 0; cc < c; ++cc) {
            const S* src = xd.data() + (static_cast<size_t>(i) * c + cc) * hw;
            S* dst = node->data.data() + (static_cast<size_t>(i) * c + cc) * hw;
            const S mu = mean_c[static_cast<size_t>(cc)];
            const S is = inv_std_c[static_cast<size_t>(cc)];
            const S g = gd[static_cast<size_t>(cc)];
            const S b = bd[static_cast<size_t>(cc)];
            for (long long j = 0; j < hw; ++j) dst[j] = (src[j] - mu) * is * g + b;
        }
    }

    if (needs_grad) {
        auto px = x.node();
        auto pg = gamma.node();
        auto pb = beta.node();
        node->parents = {px, pg, pb};
        node->backprop = [px, pg, pb, mean_c, inv_std_c, n, c, hw, m,
                          training](TensorNode<S>& self) {
            const bool need_x = px->requires_grad;
            const bool need_g = pg->requires_grad;
            const bool need_b = pb->requires_grad;
            if (need_x) px->ensure_grad();
            if (need_g) pg->ensure_grad();
            if (need_b) pb->ensure_grad();
            for (int cc = 0; cc < c; ++cc) {
                const S mu = mean_c[static_cast<size_t>(cc)];
                const S is = inv_std_c[static_cast<size_t>(cc)];
                const S g = pg->data[static_cast<size_t>(cc)];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int i = 0; i < n; ++i) {
                    const S* dy = self.grad.data() + (static_cast<size_t>(i) * c + cc) * hw;
                    const S* xv = px->data.data() + (static_cast<size_t>(i) * c + cc) * hw;
                    for (long long j = 0; j < hw; ++j) {
                        sum_dy += static_cast<double>(dy[j]);
                        sum_dy_xhat += static_cast<double>(dy[j]) *
                                       static_cast<double>((xv[j] - mu) * is);
                    }
                }
                if (need_g) pg->grad[static_cast<size_t>(cc)] += static_cast<S>(sum_dy_xhat);
                if (need_b) pb->grad[static_cast<size_t>(cc)] += static_cast<S>(sum_dy);
                if (need_x) {
                    const S mean_dy = static_cast<S>(sum_dy / static_cast<double>(m));
                    const S mean_dy_xhat = static_cast<S>(sum_dy_xhat / static_cast<double>(m));
                    for (int i = 0; i < n; ++i) {
                        const S* dy = self.grad.data() + (static_cast<size_t>(i) * c + cc) * hw;
                        const S* xv = px->data.data() + (static_cast<size_t>(i) * c + cc) * hw;
                        S* dx = px->grad.data() + (static_cast<size_t>(i) * c + cc) * hw;
                        if (training) {
                            for (long long j = 0; j < hw; ++j) {
                                const S xhat = (xv[j] - mu) * is;
                                dx[j] += g * is * (dy[j] - mean_dy - xhat * mean_dy_xhat);
                            }
                        } else {
                            // running statistics are constants w.r.t. x
                            for (long long j = 0; j < hw; ++j) dx[j] += g * is * dy[j];
                        }
                    }
                }
            }
        };
    }
    return Tensor<S>(std::move(node));
}

}  // namespace gmark
