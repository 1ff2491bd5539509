#pragma once

// Reverse-mode automatic differentiation over dense tensors. A Tape owns the
// computation graph; nodes are appended in evaluation order, so replaying the
// recorded closures in reverse creation order is a valid backward pass. All
// ops are single-threaded and accumulate gradients in a fixed order, which
// makes every training run bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "supermag/tensor.hpp"

namespace supermag {

template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> back;
        bool needs_grad = false;
    };

    bool grad_enabled = true;

    int size() const { return static_cast<int>(nodes_.size()); }
    void clear() { nodes_.clear(); }

    const Tensor<T>& val(int id) const { return nodes_[id].value; }
    Tensor<T>& grad(int id) { return nodes_[id].grad; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }

    int leaf(Tensor<T> v, bool needs_grad_flag = false) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = grad_enabled && needs_grad_flag;
        if (n.needs_grad) n.grad = Tensor<T>(n.value.shape);
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    void backward(int loss_id) {
        if (nodes_[loss_id].value.numel() != 1)
            throw std::logic_error("backward: loss must be scalar");
        nodes_[loss_id].grad[0] = T(1);
        for (int i = loss_id; i >= 0; --i) {
            if (nodes_[i].back && nodes_[i].needs_grad) nodes_[i].back();
        }
    }

    // ---- elementwise -------------------------------------------------------

    int add(int a, int b) {
        check_same_shape(a, b, "add");
        Tensor<T> out(val(a).shape);
        const T* pa = val(a).ptr();
        const T* pb = val(b).ptr();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = pa[i] + pb[i];
        int id = result(std::move(out), {a, b});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, a, b] {
                const Tensor<T>& g = nodes_[id].grad;
                accumulate(a, [&](std::size_t i) { return g[i]; });
                accumulate(b, [&](std::size_t i) { return g[i]; });
            };
        }
        return id;
    }

    int scale(int x, T c) {
        Tensor<T> out(val(x).shape);
        const T* px = val(x).ptr();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c * px[i];
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, c] {
                const Tensor<T>& g = nodes_[id].grad;
                accumulate(x, [&](std::size_t i) { return c * g[i]; });
            };
        }
        return id;
    }

    // v = ca*A + cb*B for scalar nodes A, B.
    int lincomb(int a, T ca, int b, T cb) {
        Tensor<T> out(Shape{1});
        out[0] = ca * val(a)[0] + cb * val(b)[0];
        int id = result(std::move(out), {a, b});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, a, b, ca, cb] {
                const T g = nodes_[id].grad[0];
                if (nodes_[a].needs_grad) nodes_[a].grad[0] += ca * g;
                if (nodes_[b].needs_grad) nodes_[b].grad[0] += cb * g;
            };
        }
        return id;
    }

    int relu(int x) {
        Tensor<T> out(val(x).shape);
        const T* px = val(x).ptr();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = px[i] > T(0) ? px[i] : T(0);
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x] {
                const Tensor<T>& g = nodes_[id].grad;
                const T* px = val(x).ptr();
                accumulate(x, [&](std::size_t i) { return px[i] > T(0) ? g[i] : T(0); });
            };
        }
        return id;
    }

    int gelu(int x) {
        Tensor<T> out(val(x).shape);
        const T* px = val(x).ptr();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = px[i] * normal_cdf(px[i]);
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x] {
                const Tensor<T>& g = nodes_[id].grad;
                const T* px = val(x).ptr();
                accumulate(x, [&](std::size_t i) {
                    const T v = px[i];
                    return g[i] * (normal_cdf(v) + v * normal_pdf(v));
                });
            };
        }
        return id;
    }

    int sigmoid(int x) {
        Tensor<T> out(val(x).shape);
        const T* px = val(x).ptr();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-px[i]));
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x] {
                const Tensor<T>& g = nodes_[id].grad;
                const T* py = val(id).ptr();
                accumulate(x, [&](std::size_t i) { return g[i] * py[i] * (T(1) - py[i]); });
            };
        }
        return id;
    }

    int clamp(int x, T lo, T hi) {
        Tensor<T> out(val(x).shape);
        const T* px = val(x).ptr();
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::min(hi, std::max(lo, px[i]));
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, lo, hi] {
                const Tensor<T>& g = nodes_[id].grad;
                const T* px = val(x).ptr();
                accumulate(x, [&](std::size_t i) { return (px[i] >= lo && px[i] <= hi) ? g[i] : T(0); });
            };
        }
        return id;
    }

    // ---- shape ops ---------------------------------------------------------

    int reshape(int x, Shape s) {
        Tensor<T> out = val(x).reshaped(s);
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x] {
                const Tensor<T>& g = nodes_[id].grad;
                accumulate(x, [&](std::size_t i) { return g[i]; });
            };
        }
        return id;
    }

    // Column-wise concatenation of (N, A) and (N, B) into (N, A+B).
    int concat_cols(int a, int b) {
        const Tensor<T>& av = val(a);
        const Tensor<T>& bv = val(b);
        if (av.shape[0] != bv.shape[0]) throw std::invalid_argument("concat_cols: batch mismatch");
        const int n = av.shape[0], wa = av.shape[1], wb = bv.shape[1];
        Tensor<T> out(Shape{n, wa + wb});
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < wa; ++j) out[static_cast<std::size_t>(i) * (wa + wb) + j] = av[static_cast<std::size_t>(i) * wa + j];
            for (int j = 0; j < wb; ++j) out[static_cast<std::size_t>(i) * (wa + wb) + wa + j] = bv[static_cast<std::size_t>(i) * wb + j];
        }
        int id = result(std::move(out), {a, b});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, a, b, n, wa, wb] {
                const Tensor<T>& g = nodes_[id].grad;
                if (nodes_[a].needs_grad) {
                    Tensor<T>& ga = nodes_[a].grad;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < wa; ++j) ga[static_cast<std::size_t>(i) * wa + j] += g[static_cast<std::size_t>(i) * (wa + wb) + j];
                }
                if (nodes_[b].needs_grad) {
                    Tensor<T>& gb = nodes_[b].grad;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < wb; ++j) gb[static_cast<std::size_t>(i) * wb + j] += g[static_cast<std::size_t>(i) * (wa + wb) + wa + j];
                }
            };
        }
        return id;
    }

    // Columns [c0, c1) of a (N, M) matrix.
    int slice_cols(int x, int c0, int c1) {
        const Tensor<T>& xv = val(x);
        const int n = xv.shape[0], m = xv.shape[1], w = c1 - c0;
        Tensor<T> out(Shape{n, w});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j) out[static_cast<std::size_t>(i) * w + j] = xv[static_cast<std::size_t>(i) * m + c0 + j];
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, c0, w] {
                const Tensor<T>& g = nodes_[id].grad;
                Tensor<T>& gx = nodes_[x].grad;
                const int n = val(x).shape[0], m = val(x).shape[1];
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < w; ++j) gx[static_cast<std::size_t>(i) * m + c0 + j] += g[static_cast<std::size_t>(i) * w + j];
            };
        }
        return id;
    }

    // Channels [c0, c1) of a (N, C, H, W) tensor.
    int slice_channels(int x, int c0, int c1) {
        const Tensor<T>& xv = val(x);
        const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
        const int oc = c1 - c0;
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        Tensor<T> out(Shape{n, oc, h, w});
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < oc; ++ic) {
                const T* src = xv.ptr() + ((static_cast<std::size_t>(in) * c + c0 + ic) * plane);
                T* dst = out.ptr() + ((static_cast<std::size_t>(in) * oc + ic) * plane);
                for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i];
            }
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, c0, oc] {
                const Tensor<T>& g = nodes_[id].grad;
                Tensor<T>& gx = nodes_[x].grad;
                const int n = val(x).shape[0], c = val(x).shape[1], h = val(x).shape[2], w = val(x).shape[3];
                const std::size_t plane = static_cast<std::size_t>(h) * w;
                for (int in = 0; in < n; ++in)
                    for (int ic = 0; ic < oc; ++ic) {
                        T* dst = gx.ptr() + ((static_cast<std::size_t>(in) * c + c0 + ic) * plane);
                        const T* src = g.ptr() + ((static_cast<std::size_t>(in) * oc + ic) * plane);
                        for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
                    }
            };
        }
        return id;
    }

    // Center crop of the spatial dims.
    int crop2d(int x, int oh, int ow) {
        const Tensor<T>& xv = val(x);
        const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
        if (oh > h || ow > w) throw std::invalid_argument("crop2d: target larger than input");
        const int y0 = (h - oh) / 2, x0 = (w - ow) / 2;
        Tensor<T> out(Shape{n, c, oh, ow});
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic)
                for (int iy = 0; iy < oh; ++iy) {
                    const T* src = xv.ptr() + (((static_cast<std::size_t>(in) * c + ic) * h + y0 + iy) * w + x0);
                    T* dst = out.ptr() + (((static_cast<std::size_t>(in) * c + ic) * oh + iy) * ow);
                    for (int ix = 0; ix < ow; ++ix) dst[ix] = src[ix];
                }
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, oh, ow, y0, x0] {
                const Tensor<T>& g = nodes_[id].grad;
                Tensor<T>& gx = nodes_[x].grad;
                const int n = val(x).shape[0], c = val(x).shape[1], h = val(x).shape[2], w = val(x).shape[3];
                for (int in = 0; in < n; ++in)
                    for (int ic = 0; ic < c; ++ic)
                        for (int iy = 0; iy < oh; ++iy) {
                            T* dst = gx.ptr() + (((static_cast<std::size_t>(in) * c + ic) * h + y0 + iy) * w + x0);
                            const T* src = g.ptr() + (((static_cast<std::size_t>(in) * c + ic) * oh + iy) * ow);
                            for (int ix = 0; ix < ow; ++ix) dst[ix] += src[ix];
                        }
            };
        }
        return id;
    }

    // ---- linear algebra ----------------------------------------------------

    // y = x * W^T + b,  x: (N, In), W: (Out, In), b: (Out)
    int linear(int x, int w, int b) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        const int n = xv.shape[0], in = xv.shape[1], out_dim = wv.shape[0];
        if (wv.shape[1] != in) throw std::invalid_argument("linear: weight/input mismatch");
        Tensor<T> out(Shape{n, out_dim});
        gemm_nt(n, out_dim, in, xv.ptr(), wv.ptr(), out.ptr());
        const T* pb = val(b).ptr();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j) out[static_cast<std::size_t>(i) * out_dim + j] += pb[j];
        int id = result(std::move(out), {x, w, b});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, w, b, n, in, out_dim] {
                const Tensor<T>& g = nodes_[id].grad;
                if (nodes_[x].needs_grad) gemm_nn(n, in, out_dim, g.ptr(), val(w).ptr(), nodes_[x].grad.ptr());
                if (nodes_[w].needs_grad) gemm_tn(out_dim, in, n, g.ptr(), val(x).ptr(), nodes_[w].grad.ptr());
                if (nodes_[b].needs_grad) {
                    Tensor<T>& gb = nodes_[b].grad;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < out_dim; ++j) gb[j] += g[static_cast<std::size_t>(i) * out_dim + j];
                }
            };
        }
        return id;
    }

    // Per-channel scaling: y[n,c,h,w] = x[n,c,h,w] * s[n,c]
    int scale_channels(int x, int s) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& sv = val(s);
        const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
        if (sv.shape[0] != n || sv.shape[1] != c) throw std::invalid_argument("scale_channels: scale shape mismatch");
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        Tensor<T> out(xv.shape);
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const T sc = sv[static_cast<std::size_t>(in) * c + ic];
                const T* src = xv.ptr() + (static_cast<std::size_t>(in) * c + ic) * plane;
                T* dst = out.ptr() + (static_cast<std::size_t>(in) * c + ic) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] = sc * src[i];
            }
        int id = result(std::move(out), {x, s});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, s, n, c, plane] {
                const Tensor<T>& g = nodes_[id].grad;
                const Tensor<T>& xv = val(x);
                const Tensor<T>& sv = val(s);
                for (int in = 0; in < n; ++in)
                    for (int ic = 0; ic < c; ++ic) {
                        const std::size_t off = (static_cast<std::size_t>(in) * c + ic) * plane;
                        if (nodes_[x].needs_grad) {
                            const T sc = sv[static_cast<std::size_t>(in) * c + ic];
                            T* gx = nodes_[x].grad.ptr() + off;
                            const T* gp = g.ptr() + off;
                            for (std::size_t i = 0; i < plane; ++i) gx[i] += sc * gp[i];
                        }
                        if (nodes_[s].needs_grad) {
                            T acc = 0;
                            const T* gp = g.ptr() + off;
                            const T* xp = xv.ptr() + off;
#pragma omp simd reduction(+ : acc)
                            for (std::size_t i = 0; i < plane; ++i) acc += gp[i] * xp[i];
                            nodes_[s].grad[static_cast<std::size_t>(in) * c + ic] += acc;
                        }
                    }
            };
        }
        return id;
    }

    // ---- convolution -------------------------------------------------------

    // x: (N, Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout). Zero padding.
    int conv2d(int x, int w, int b, int stride, int pad) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        const int n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], ww = xv.shape[3];
        const int cout = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
        if (wv.shape[1] != cin) throw std::invalid_argument("conv2d: channel mismatch");
        const int oh = (h + 2 * pad - kh) / stride + 1;
        const int ow = (ww + 2 * pad - kw) / stride + 1;
        const int ck = cin * kh * kw;
        const std::size_t pos = static_cast<std::size_t>(oh) * ow;

        Tensor<T> out(Shape{n, cout, oh, ow});
        std::vector<T> col(static_cast<std::size_t>(ck) * pos);
        for (int in = 0; in < n; ++in) {
            im2col(xv.ptr() + static_cast<std::size_t>(in) * cin * h * ww, cin, h, ww, kh, kw, stride, pad, oh, ow, col.data());
            T* yp = out.ptr() + static_cast<std::size_t>(in) * cout * pos;
            gemm_nn(cout, static_cast<int>(pos), ck, wv.ptr(), col.data(), yp);
            const T* pb = val(b).ptr();
            for (int oc = 0; oc < cout; ++oc) {
                const T bias = pb[oc];
                T* row = yp + static_cast<std::size_t>(oc) * pos;
                for (std::size_t i = 0; i < pos; ++i) row[i] += bias;
            }
        }
        int id = result(std::move(out), {x, w, b});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, w, b, n, cin, h, ww, cout, kh, kw, stride, pad, oh, ow, ck, pos] {
                const Tensor<T>& g = nodes_[id].grad;
                const Tensor<T>& xv = val(x);
                const Tensor<T>& wv = val(w);
                std::vector<T> col(static_cast<std::size_t>(ck) * pos);
                std::vector<T> dcol;
                if (nodes_[x].needs_grad) dcol.resize(static_cast<std::size_t>(ck) * pos);
                for (int in = 0; in < n; ++in) {
                    const T* gp = g.ptr() + static_cast<std::size_t>(in) * cout * pos;
                    if (nodes_[w].needs_grad) {
                        im2col(xv.ptr() + static_cast<std::size_t>(in) * cin * h * ww, cin, h, ww, kh, kw, stride, pad, oh, ow, col.data());
                        gemm_nt(cout, ck, static_cast<int>(pos), gp, col.data(), nodes_[w].grad.ptr());
                    }
                    if (nodes_[b].needs_grad) {
                        Tensor<T>& gb = nodes_[b].grad;
                        for (int oc = 0; oc < cout; ++oc) {
                            const T* row = gp + static_cast<std::size_t>(oc) * pos;
                            T acc = 0;
#pragma omp simd reduction(+ : acc)
                            for (std::size_t i = 0; i < pos; ++i) acc += row[i];
                            gb[oc] += acc;
                        }
                    }
                    if (nodes_[x].needs_grad) {
                        std::fill(dcol.begin(), dcol.end(), T(0));
                        gemm_tn(ck, static_cast<int>(pos), cout, wv.ptr(), gp, dcol.data());
                        col2im_add(dcol.data(), cin, h, ww, kh, kw, stride, pad, oh, ow,
                                   nodes_[x].grad.ptr() + static_cast<std::size_t>(in) * cin * h * ww);
                    }
                }
            };
        }
        return id;
    }

    // Transposed conv, kernel 2, stride 2 (exact upsample-by-2).
    // x: (N, Cin, H, W), w: (Cin, Cout, 2, 2), b: (Cout) -> (N, Cout, 2H, 2W)
    int conv_transpose2x2(int x, int w, int b) {
        const Tensor<T>& xv = val(x);
        const Tensor<T>& wv = val(w);
        const int n = xv.shape[0], cin = xv.shape[1], h = xv.shape[2], ww = xv.shape[3];
        const int cout = wv.shape[1];
        if (wv.shape[0] != cin || wv.shape[2] != 2 || wv.shape[3] != 2)
            throw std::invalid_argument("conv_transpose2x2: expects (Cin, Cout, 2, 2) weights");
        const int oh = 2 * h, ow = 2 * ww;
        const std::size_t pos = static_cast<std::size_t>(h) * ww;

        Tensor<T> out(Shape{n, cout, oh, ow});
        std::vector<T> wt(static_cast<std::size_t>(cout) * cin);  // phase slice, transposed
        std::vector<T> tmp(static_cast<std::size_t>(cout) * pos);
        const T* pb = val(b).ptr();
        for (int in = 0; in < n; ++in) {
            const T* xp = xv.ptr() + static_cast<std::size_t>(in) * cin * pos;
            for (int ky = 0; ky < 2; ++ky)
                for (int kx = 0; kx < 2; ++kx) {
                    for (int co = 0; co < cout; ++co)
                        for (int ci = 0; ci < cin; ++ci)
                            wt[static_cast<std::size_t>(co) * cin + ci] =
                                wv[((static_cast<std::size_t>(ci) * cout + co) * 2 + ky) * 2 + kx];
                    std::fill(tmp.begin(), tmp.end(), T(0));
                    gemm_nn(cout, static_cast<int>(pos), cin, wt.data(), xp, tmp.data());
                    for (int co = 0; co < cout; ++co) {
                        const T bias = pb[co];
                        const T* src = tmp.data() + static_cast<std::size_t>(co) * pos;
                        T* dst = out.ptr() + ((static_cast<std::size_t>(in) * cout + co) * oh) * ow;
                        for (int iy = 0; iy < h; ++iy)
                            for (int ix = 0; ix < ww; ++ix)
                                dst[static_cast<std::size_t>(2 * iy + ky) * ow + 2 * ix + kx] =
                                    src[static_cast<std::size_t>(iy) * ww + ix] + bias;
                    }
                }
        }
        int id = result(std::move(out), {x, w, b});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, w, b, n, cin, h, ww, cout, oh, ow, pos] {
                const Tensor<T>& g = nodes_[id].grad;
                const Tensor<T>& xv = val(x);
                const Tensor<T>& wv = val(w);
                std::vector<T> gtmp(static_cast<std::size_t>(cout) * pos);
                std::vector<T> wp(static_cast<std::size_t>(cin) * cout);
                std::vector<T> dwp(static_cast<std::size_t>(cin) * cout);
                for (int in = 0; in < n; ++in) {
                    const T* xp = xv.ptr() + static_cast<std::size_t>(in) * cin * pos;
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx) {
                            // gather this phase of the output gradient
                            for (int co = 0; co < cout; ++co) {
                                const T* src = g.ptr() + ((static_cast<std::size_t>(in) * cout + co) * oh) * ow;
                                T* dst = gtmp.data() + static_cast<std::size_t>(co) * pos;
                                for (int iy = 0; iy < h; ++iy)
                                    for (int ix = 0; ix < ww; ++ix)
                                        dst[static_cast<std::size_t>(iy) * ww + ix] =
                                            src[static_cast<std::size_t>(2 * iy + ky) * ow + 2 * ix + kx];
                            }
                            if (nodes_[b].needs_grad) {
                                Tensor<T>& gb = nodes_[b].grad;
                                for (int co = 0; co < cout; ++co) {
                                    const T* row = gtmp.data() + static_cast<std::size_t>(co) * pos;
                                    T acc = 0;
#pragma omp simd reduction(+ : acc)
                                    for (std::size_t i = 0; i < pos; ++i) acc += row[i];
                                    gb[co] += acc;
                                }
                            }
                            if (nodes_[x].needs_grad) {
                                for (int ci = 0; ci < cin; ++ci)
                                    for (int co = 0; co < cout; ++co)
                                        wp[static_cast<std::size_t>(ci) * cout + co] =
                                            wv[((static_cast<std::size_t>(ci) * cout + co) * 2 + ky) * 2 + kx];
                                gemm_nn(cin, static_cast<int>(pos), cout, wp.data(), gtmp.data(),
                                        nodes_[x].grad.ptr() + static_cast<std::size_t>(in) * cin * pos);
                            }
                            if (nodes_[w].needs_grad) {
                                std::fill(dwp.begin(), dwp.end(), T(0));
                                gemm_nt(cin, cout, static_cast<int>(pos), xp, gtmp.data(), dwp.data());
                                Tensor<T>& gw = nodes_[w].grad;
                                for (int ci = 0; ci < cin; ++ci)
                                    for (int co = 0; co < cout; ++co)
                                        gw[((static_cast<std::size_t>(ci) * cout + co) * 2 + ky) * 2 + kx] +=
                                            dwp[static_cast<std::size_t>(ci) * cout + co];
                            }
                        }
                }
            };
        }
        return id;
    }

    // ---- normalization and pooling ------------------------------------------

    int group_norm(int x, int gamma, int beta, int groups, T eps = T(1e-5)) {
        const Tensor<T>& xv = val(x);
        const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
        if (c % groups != 0) throw std::invalid_argument("group_norm: groups must divide channels");
        const int cpg = c / groups;
        const std::size_t gsz = static_cast<std::size_t>(cpg) * h * w;
        const std::size_t plane = static_cast<std::size_t>(h) * w;

        Tensor<T> out(xv.shape);
        auto mean = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * groups);
        auto istd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * groups);
        const T* pg = val(gamma).ptr();
        const T* pbeta = val(beta).ptr();
        for (int in = 0; in < n; ++in)
            for (int ig = 0; ig < groups; ++ig) {
                const T* xs = xv.ptr() + (static_cast<std::size_t>(in) * c + static_cast<std::size_t>(ig) * cpg) * plane;
                T m = 0;
#pragma omp simd reduction(+ : m)
                for (std::size_t i = 0; i < gsz; ++i) m += xs[i];
                m /= static_cast<T>(gsz);
                T v = 0;
#pragma omp simd reduction(+ : v)
                for (std::size_t i = 0; i < gsz; ++i) {
                    const T d = xs[i] - m;
                    v += d * d;
                }
                v /= static_cast<T>(gsz);
                const T is = T(1) / std::sqrt(v + eps);
                (*mean)[static_cast<std::size_t>(in) * groups + ig] = m;
                (*istd)[static_cast<std::size_t>(in) * groups + ig] = is;
                T* ys = out.ptr() + (static_cast<std::size_t>(in) * c + static_cast<std::size_t>(ig) * cpg) * plane;
                for (int cc = 0; cc < cpg; ++cc) {
                    const T ga = pg[ig * cpg + cc];
                    const T be = pbeta[ig * cpg + cc];
                    const T* xc = xs + static_cast<std::size_t>(cc) * plane;
                    T* yc = ys + static_cast<std::size_t>(cc) * plane;
                    for (std::size_t i = 0; i < plane; ++i) yc[i] = ga * (xc[i] - m) * is + be;
                }
            }
        int id = result(std::move(out), {x, gamma, beta});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, gamma, beta, n, c, groups, cpg, plane, gsz, mean, istd] {
                const Tensor<T>& g = nodes_[id].grad;
                const Tensor<T>& xv = val(x);
                const T* pg = val(gamma).ptr();
                for (int in = 0; in < n; ++in)
                    for (int ig = 0; ig < groups; ++ig) {
                        const std::size_t base = (static_cast<std::size_t>(in) * c + static_cast<std::size_t>(ig) * cpg) * plane;
                        const T m = (*mean)[static_cast<std::size_t>(in) * groups + ig];
                        const T is = (*istd)[static_cast<std::size_t>(in) * groups + ig];
                        const T* xs = xv.ptr() + base;
                        const T* gs = g.ptr() + base;
                        // per-group sums of dxhat and dxhat*xhat
                        T s1 = 0, s2 = 0;
                        for (int cc = 0; cc < cpg; ++cc) {
                            const T ga = pg[ig * cpg + cc];
                            const T* xc = xs + static_cast<std::size_t>(cc) * plane;
                            const T* gc = gs + static_cast<std::size_t>(cc) * plane;
#pragma omp simd reduction(+ : s1, s2)
                            for (std::size_t i = 0; i < plane; ++i) {
                                const T xhat = (xc[i] - m) * is;
                                const T dxh = gc[i] * ga;
                                s1 += dxh;
                                s2 += dxh * xhat;
                            }
                        }
                        s1 /= static_cast<T>(gsz);
                        s2 /= static_cast<T>(gsz);
                        for (int cc = 0; cc < cpg; ++cc) {
                            const T ga = pg[ig * cpg + cc];
                            const T* xc = xs + static_cast<std::size_t>(cc) * plane;
                            const T* gc = gs + static_cast<std::size_t>(cc) * plane;
                            if (nodes_[x].needs_grad) {
                                T* gx = nodes_[x].grad.ptr() + base + static_cast<std::size_t>(cc) * plane;
                                for (std::size_t i = 0; i < plane; ++i) {
                                    const T xhat = (xc[i] - m) * is;
                                    gx[i] += is * (gc[i] * ga - s1 - xhat * s2);
                                }
                            }
                            if (nodes_[gamma].needs_grad) {
                                T acc = 0;
#pragma omp simd reduction(+ : acc)
                                for (std::size_t i = 0; i < plane; ++i) acc += gc[i] * (xc[i] - m) * is;
                                nodes_[gamma].grad[ig * cpg + cc] += acc;
                            }
                            if (nodes_[beta].needs_grad) {
                                T acc = 0;
#pragma omp simd reduction(+ : acc)
                                for (std::size_t i = 0; i < plane; ++i) acc += gc[i];
                                nodes_[beta].grad[ig * cpg + cc] += acc;
                            }
                        }
                    }
            };
        }
        return id;
    }

    int maxpool2(int x) {
        const Tensor<T>& xv = val(x);
        const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
        if (h % 2 || w % 2) throw std::invalid_argument("maxpool2: odd spatial size");
        const int oh = h / 2, ow = w / 2;
        Tensor<T> out(Shape{n, c, oh, ow});
        auto arg = std::make_shared<std::vector<std::int32_t>>(out.numel());
        std::size_t o = 0;
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const T* xp = xv.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox, ++o) {
                        int best = (2 * oy) * w + 2 * ox;
                        T bv = xp[best];
                        const int cand[3] = {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox, (2 * oy + 1) * w + 2 * ox + 1};
                        for (int k = 0; k < 3; ++k)
                            if (xp[cand[k]] > bv) { bv = xp[cand[k]]; best = cand[k]; }
                        out[o] = bv;
                        (*arg)[o] = best;
                    }
            }
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, n, c, h, w, arg] {
                const Tensor<T>& g = nodes_[id].grad;
                Tensor<T>& gx = nodes_[x].grad;
                const int oh = h / 2, ow = w / 2;
                std::size_t o = 0;
                for (int in = 0; in < n; ++in)
                    for (int ic = 0; ic < c; ++ic) {
                        T* gxp = gx.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
                        for (int i = 0; i < oh * ow; ++i, ++o) gxp[(*arg)[o]] += g[o];
                    }
            };
        }
        return id;
    }

    int avgpool2(int x) {
        const Tensor<T>& xv = val(x);
        const int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
        if (h % 2 || w % 2) throw std::invalid_argument("avgpool2: odd spatial size");
        const int oh = h / 2, ow = w / 2;
        Tensor<T> out(Shape{n, c, oh, ow});
        std::size_t o = 0;
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                const T* xp = xv.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox, ++o)
                        out[o] = (xp[(2 * oy) * w + 2 * ox] + xp[(2 * oy) * w + 2 * ox + 1] +
                                  xp[(2 * oy + 1) * w + 2 * ox] + xp[(2 * oy + 1) * w + 2 * ox + 1]) * T(0.25);
            }
        int id = result(std::move(out), {x});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, x, n, c, h, w] {
                const Tensor<T>& g = nodes_[id].grad;
                Tensor<T>& gx = nodes_[x].grad;
                const int oh = h / 2, ow = w / 2;
                std::size_t o = 0;
                for (int in = 0; in < n; ++in)
                    for (int ic = 0; ic < c; ++ic) {
                        T* gxp = gx.ptr() + (static_cast<std::size_t>(in) * c + ic) * h * w;
                        for (int oy = 0; oy < oh; ++oy)
                            for (int ox = 0; ox < ow; ++ox, ++o) {
                                const T q = g[o] * T(0.25);
                                gxp[(2 * oy) * w + 2 * ox] += q;
                                gxp[(2 * oy) * w + 2 * ox + 1] += q;
                                gxp[(2 * oy + 1) * w + 2 * ox] += q;
                                gxp[(2 * oy + 1) * w + 2 * ox + 1] += q;
                            }
                    }
            };
        }
        return id;
    }

    // ---- variational pieces --------------------------------------------------

    // z = mu + exp(logvar/2) * eps, eps constant.
    int reparameterize(int mu, int logvar, Tensor<T> eps) {
        check_same_shape(mu, logvar, "reparameterize");
        if (eps.shape != val(mu).shape) throw std::invalid_argument("reparameterize: eps shape mismatch");
        const Tensor<T>& mv = val(mu);
        const Tensor<T>& lv = val(logvar);
        Tensor<T> out(mv.shape);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = mv[i] + std::exp(lv[i] * T(0.5)) * eps[i];
        auto eps_keep = std::make_shared<Tensor<T>>(std::move(eps));
        int id = result(std::move(out), {mu, logvar});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, mu, logvar, eps_keep] {
                const Tensor<T>& g = nodes_[id].grad;
                const Tensor<T>& lv = val(logvar);
                accumulate(mu, [&](std::size_t i) { return g[i]; });
                accumulate(logvar, [&](std::size_t i) {
                    return g[i] * (*eps_keep)[i] * T(0.5) * std::exp(lv[i] * T(0.5));
                });
            };
        }
        return id;
    }

    // Summed Gaussian negative log-likelihood:
    //   sum_i 0.5 * [ (t-m)^2 * exp(-lv) + lv + log(2*pi) ]
    int gaussian_nll(Tensor<T> target, int mean, int logvar) {
        check_same_shape(mean, logvar, "gaussian_nll");
        if (target.shape.numel() != val(mean).numel()) throw std::invalid_argument("gaussian_nll: target shape mismatch");
        const Tensor<T>& mv = val(mean);
        const Tensor<T>& lv = val(logvar);
        const T log2pi = T(1.8378770664093454835606594728112);
        T acc = 0;
        const T* pt = target.ptr();
        const T* pm = mv.ptr();
        const T* pl = lv.ptr();
#pragma omp simd reduction(+ : acc)
        for (std::size_t i = 0; i < mv.numel(); ++i) {
            const T d = pt[i] - pm[i];
            acc += T(0.5) * (d * d * std::exp(-pl[i]) + pl[i] + log2pi);
        }
        Tensor<T> out(Shape{1});
        out[0] = acc;
        auto t_keep = std::make_shared<Tensor<T>>(std::move(target));
        int id = result(std::move(out), {mean, logvar});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, mean, logvar, t_keep] {
                const T g = nodes_[id].grad[0];
                const Tensor<T>& mv = val(mean);
                const Tensor<T>& lv = val(logvar);
                accumulate(mean, [&](std::size_t i) { return g * (mv[i] - (*t_keep)[i]) * std::exp(-lv[i]); });
                accumulate(logvar, [&](std::size_t i) {
                    const T d = (*t_keep)[i] - mv[i];
                    return g * T(0.5) * (T(1) - d * d * std::exp(-lv[i]));
                });
            };
        }
        return id;
    }

    // Summed KL( N(mu, exp(lv)) || N(0, I) ) = 0.5 * sum( mu^2 + expm1(lv) - lv ).
    // The expm1 form keeps the result non-negative under roundoff.
    int kl_std_normal(int mu, int logvar) {
        check_same_shape(mu, logvar, "kl_std_normal");
        const Tensor<T>& mv = val(mu);
        const Tensor<T>& lv = val(logvar);
        T acc = 0;
        for (std::size_t i = 0; i < mv.numel(); ++i)
            acc += T(0.5) * (mv[i] * mv[i] + std::expm1(lv[i]) - lv[i]);
        Tensor<T> out(Shape{1});
        out[0] = acc;
        int id = result(std::move(out), {mu, logvar});
        if (nodes_[id].needs_grad) {
            nodes_[id].back = [this, id, mu, logvar] {
                const T g = nodes_[id].grad[0];
                const Tensor<T>& mv = val(mu);
                const Tensor<T>& lv = val(logvar);
                accumulate(mu, [&](std::size_t i) { return g * mv[i]; });
                accumulate(logvar, [&](std::size_t i) { return g * T(0.5) * std::expm1(lv[i]); });
            };
        }
        return id;
    }

private:
    std::vector<Node> nodes_;

    static T normal_cdf(T x) { return T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440))); }
    static T normal_pdf(T x) { return T(0.39894228040143267794) * std::exp(T(-0.5) * x * x); }

    void check_same_shape(int a, int b, const char* what) const {
        if (val(a).shape != val(b).shape)
            throw std::invalid_argument(std::string(what) + ": shape mismatch " + val(a).shape.str() + " vs " + val(b).shape.str());
    }

    int result(Tensor<T> v, std::initializer_list<int> parents) {
        bool ng = false;
        if (grad_enabled)
            for (int p : parents) ng = ng || nodes_[p].needs_grad;
        Node n;
        n.value = std::move(v);
        n.needs_grad = ng;
        if (ng) n.grad = Tensor<T>(n.value.shape);
        nodes_.push_back(std::move(n));
        return size() - 1;
    }

    template <typename F>
    void accumulate(int target, F&& contrib) {
        if (!nodes_[target].needs_grad) return;
        Tensor<T>& g = nodes_[target].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += contrib(i);
    }

    static void im2col(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
                       int oh, int ow, T* col) {
        for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    T* row = col + (static_cast<std::size_t>(ic) * kh * kw + static_cast<std::size_t>(ky) * kw + kx) *
                                       (static_cast<std::size_t>(oh) * ow);
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) {
                            for (int ox = 0; ox < ow; ++ox) row[static_cast<std::size_t>(oy) * ow + ox] = T(0);
                            continue;
                        }
                        const T* xr = x + (static_cast<std::size_t>(ic) * h + iy) * w;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            row[static_cast<std::size_t>(oy) * ow + ox] = (ix >= 0 && ix < w) ? xr[ix] : T(0);
                        }
                    }
                }
    }

    static void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                           int oh, int ow, T* x) {
        for (int ic = 0; ic < c; ++ic)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    const T* row = col + (static_cast<std::size_t>(ic) * kh * kw + static_cast<std::size_t>(ky) * kw + kx) *
                                         (static_cast<std::size_t>(oh) * ow);
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        T* xr = x + (static_cast<std::size_t>(ic) * h + iy) * w;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < w) xr[ix] += row[static_cast<std::size_t>(oy) * ow + ox];
                        }
                    }
                }
    }
};

}  // namespace supermag
