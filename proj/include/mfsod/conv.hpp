#pragma once

#include <Eigen/Core>

#include "mfsod/autograd.hpp"
#include "mfsod/ops.hpp"

namespace mfsod {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

inline int conv_out_size(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

/// Unrolls one group of one sample into (cin_g*kh*kw, oh*ow) column-major
/// patches at `col`. `src` points at the group's first input channel.
template <typename T>
void im2col(const T* src, int cin_g, int in_h, int in_w, int kh, int kw, int stride, int pad,
            int oh, int ow, T* col) {
    const size_t out_plane = static_cast<size_t>(oh) * ow;
    for (int ci = 0; ci < cin_g; ++ci) {
        const T* chan = src + static_cast<size_t>(ci) * in_h * in_w;
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                T* row = col + ((static_cast<size_t>(ci) * kh + ky) * kw + kx) * out_plane;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= in_h) {
                        std::fill(row + static_cast<size_t>(oy) * ow,
                                  row + static_cast<size_t>(oy + 1) * ow, T(0));
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        row[static_cast<size_t>(oy) * ow + ox] =
                            (ix >= 0 && ix < in_w) ? chan[static_cast<size_t>(iy) * in_w + ix] : T(0);
                    }
                }
            }
    }
}

/// Scatter-add of a column buffer back onto the (padded) input plane.
template <typename T>
void col2im_add(const T* col, int cin_g, int in_h, int in_w, int kh, int kw, int stride, int pad,
                int oh, int ow, T* dst) {
    const size_t out_plane = static_cast<size_t>(oh) * ow;
    for (int ci = 0; ci < cin_g; ++ci) {
        T* chan = dst + static_cast<size_t>(ci) * in_h * in_w;
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const T* row = col + ((static_cast<size_t>(ci) * kh + ky) * kw + kx) * out_plane;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= in_h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < in_w)
                            chan[static_cast<size_t>(iy) * in_w + ix] +=
                                row[static_cast<size_t>(oy) * ow + ox];
                    }
                }
            }
    }
}

template <typename T>
void depthwise_forward(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad, Tensor<T>& y) {
    const int kh = w.h, kw = w.w;
    for (int i = 0; i < x.n; ++i)
        for (int ci = 0; ci < x.c; ++ci) {
            const T* xp = x.data() + (static_cast<size_t>(i) * x.c + ci) * x.plane();
            const T* wp = w.data() + static_cast<size_t>(ci) * kh * kw;
            T* yp = y.data() + (static_cast<size_t>(i) * y.c + ci) * y.plane();
            for (int oy = 0; oy < y.h; ++oy)
                for (int ox = 0; ox < y.w; ++ox) {
                    T acc = T(0);
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= x.w) continue;
                            acc += wp[ky * kw + kx] * xp[static_cast<size_t>(iy) * x.w + ix];
                        }
                    }
                    yp[static_cast<size_t>(oy) * y.w + ox] = acc;
                }
        }
}

template <typename T>
void depthwise_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, int stride,
                        int pad, Tensor<T>* dx, Tensor<T>* dw) {
    const int kh = w.h, kw = w.w;
    for (int i = 0; i < x.n; ++i)
        for (int ci = 0; ci < x.c; ++ci) {
            const T* xp = x.data() + (static_cast<size_t>(i) * x.c + ci) * x.plane();
            const T* wp = w.data() + static_cast<size_t>(ci) * kh * kw;
            const T* gp = dy.data() + (static_cast<size_t>(i) * dy.c + ci) * dy.plane();
            T* dxp = dx ? dx->data() + (static_cast<size_t>(i) * x.c + ci) * x.plane() : nullptr;
            T* dwp = dw ? dw->data() + static_cast<size_t>(ci) * kh * kw : nullptr;
            for (int oy = 0; oy < dy.h; ++oy)
                for (int ox = 0; ox < dy.w; ++ox) {
                    T g = gp[static_cast<size_t>(oy) * dy.w + ox];
                    if (g == T(0)) continue;
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= x.w) continue;
                            if (dxp) dxp[static_cast<size_t>(iy) * x.w + ix] += g * wp[ky * kw + kx];
                            if (dwp) dwp[ky * kw + kx] += g * xp[static_cast<size_t>(iy) * x.w + ix];
                        }
                    }
                }
        }
}

}  // namespace detail

/// 2-D convolution. weight (c_out, c_in/groups, kh, kw), optional bias
/// (1, c_out, 1, 1). Pass a null bias for conv layers that feed a norm.
template <typename T>
VarPtr<T> conv2d(const VarPtr<T>& x, const VarPtr<T>& weight, const VarPtr<T>& bias, int stride,
                 int pad, int groups = 1) {
    const Tensor<T>& xv = x->value;
    const Tensor<T>& wv = weight->value;
    const int c_out = wv.n;
    require(groups >= 1 && xv.c % groups == 0 && c_out % groups == 0,
            "conv2d: channels not divisible by groups");
    require(wv.c == xv.c / groups, "conv2d: input has " + std::to_string(xv.c) +
                                       " channels, weight expects " +
                                       std::to_string(wv.c * groups));
    if (bias)
        require(bias->value.c == c_out && bias->value.size() == static_cast<size_t>(c_out),
                "conv2d: bias/out-channel mismatch");
    const int oh = detail::conv_out_size(xv.h, wv.h, stride, pad);
    const int ow = detail::conv_out_size(xv.w, wv.w, stride, pad);
    require(oh > 0 && ow > 0, "conv2d: output would be empty for input " + xv.shape_str());

    Tensor<T> out(xv.n, c_out, oh, ow);
    const bool depthwise = (groups == xv.c && c_out == xv.c && wv.c == 1);
    const bool pointwise = (wv.h == 1 && wv.w == 1 && stride == 1 && pad == 0 && groups == 1);
    const size_t out_plane = static_cast<size_t>(oh) * ow;
    const int cin_g = xv.c / groups;
    const int cout_g = c_out / groups;
    const size_t k_size = static_cast<size_t>(cin_g) * wv.h * wv.w;

    if (depthwise) {
        detail::depthwise_forward(xv, wv, stride, pad, out);
    } else if (pointwise) {
        for (int i = 0; i < xv.n; ++i) {
            detail::CMapRM<T> xm(xv.data() + static_cast<size_t>(i) * xv.c * xv.plane(), xv.c,
                                 xv.plane());
            detail::CMapRM<T> wm(wv.data(), c_out, xv.c);
            detail::MapRM<T> ym(out.data() + static_cast<size_t>(i) * c_out * out_plane, c_out,
                                out_plane);
            ym.noalias() = wm * xm;
        }
    } else {
        std::vector<T> col(k_size * out_plane);
        for (int i = 0; i < xv.n; ++i)
            for (int g = 0; g < groups; ++g) {
                const T* src =
                    xv.data() + (static_cast<size_t>(i) * xv.c + g * cin_g) * xv.plane();
                detail::im2col(src, cin_g, xv.h, xv.w, wv.h, wv.w, stride, pad, oh, ow, col.data());
                detail::CMapRM<T> wm(wv.data() + static_cast<size_t>(g) * cout_g * k_size, cout_g,
                                     k_size);
                detail::CMapRM<T> cm(col.data(), k_size, out_plane);
                detail::MapRM<T> ym(out.data() + (static_cast<size_t>(i) * c_out + g * cout_g) * out_plane,
                                    cout_g, out_plane);
                ym.noalias() = wm * cm;
            }
    }
    if (bias) {
        for (int i = 0; i < out.n; ++i)
            for (int j = 0; j < c_out; ++j) {
                T b = bias->value.v[j];
                T* yp = out.data() + (static_cast<size_t>(i) * c_out + j) * out_plane;
                for (size_t p = 0; p < out_plane; ++p) yp[p] += b;
            }
    }

    std::vector<VarPtr<T>> parents = {x, weight};
    if (bias) parents.push_back(bias);
    auto node = make_var(std::move(out), any_requires_grad(parents));
    node->parents = parents;
    node->backward_fn = [x, weight, bias, stride, pad, groups, depthwise, pointwise, oh, ow, cin_g,
                         cout_g, k_size](Node<T>& self) {
        const Tensor<T>& xv = x->value;
        const Tensor<T>& wv = weight->value;
        const int c_out = wv.n;
        const size_t out_plane = static_cast<size_t>(oh) * ow;
        if (bias && bias->requires_grad) {
            bias->ensure_grad();
            for (int i = 0; i < self.grad.n; ++i)
                for (int j = 0; j < c_out; ++j) {
                    const T* gp = self.grad.data() + (static_cast<size_t>(i) * c_out + j) * out_plane;
                    T acc = T(0);
                    for (size_t p = 0; p < out_plane; ++p) acc += gp[p];
                    bias->grad.v[j] += acc;
                }
        }
        const bool need_dx = x->requires_grad;
        const bool need_dw = weight->requires_grad;
        if (!need_dx && !need_dw) return;
        if (need_dx) x->ensure_grad();
        if (need_dw) weight->ensure_grad();

        if (depthwise) {
            detail::depthwise_backward(xv, wv, self.grad, stride, pad,
                                       need_dx ? &x->grad : nullptr,
                                       need_dw ? &weight->grad : nullptr);
            return;
        }
        if (pointwise) {
            for (int i = 0; i < xv.n; ++i) {
                detail::CMapRM<T> gm(self.grad.data() + static_cast<size_t>(i) * c_out * out_plane,
                                     c_out, out_plane);
                if (need_dx) {
                    detail::CMapRM<T> wm(wv.data(), c_out, xv.c);
                    detail::MapRM<T> dxm(x->grad.data() + static_cast<size_t>(i) * xv.c * xv.plane(),
                                         xv.c, xv.plane());
                    dxm.noalias() += wm.transpose() * gm;
                }
                if (need_dw) {
                    detail::CMapRM<T> xm(xv.data() + static_cast<size_t>(i) * xv.c * xv.plane(),
                                         xv.c, xv.plane());
                    detail::MapRM<T> dwm(weight->grad.data(), c_out, xv.c);
                    dwm.noalias() += gm * xm.transpose();
                }
            }
            return;
        }
        std::vector<T> col(k_size * out_plane);
        std::vector<T> dcol(need_dx ? k_size * out_plane : 0);
        for (int i = 0; i < xv.n; ++i)
            for (int g = 0; g < groups; ++g) {
                const T* src = xv.data() + (static_cast<size_t>(i) * xv.c + g * cin_g) * xv.plane();
                detail::CMapRM<T> gm(
                    self.grad.data() + (static_cast<size_t>(i) * c_out + g * cout_g) * out_plane,
                    cout_g, out_plane);
                if (need_dw) {
                    detail::im2col(src, cin_g, xv.h, xv.w, wv.h, wv.w, stride, pad, oh, ow,
                                   col.data());
                    detail::CMapRM<T> cm(col.data(), k_size, out_plane);
                    detail::MapRM<T> dwm(weight->grad.data() + static_cast<size_t>(g) * cout_g * k_size,
                                         cout_g, k_size);
                    dwm.noalias() += gm * cm.transpose();
                }
                if (need_dx) {
                    detail::CMapRM<T> wm(wv.data() + static_cast<size_t>(g) * cout_g * k_size,
                                         cout_g, k_size);
                    detail::MapRM<T> dcm(dcol.data(), k_size, out_plane);
                    dcm.noalias() = wm.transpose() * gm;
                    detail::col2im_add(dcol.data(), cin_g, xv.h, xv.w, wv.h, wv.w, stride, pad, oh,
                                       ow,
                                       x->grad.data() +
                                           (static_cast<size_t>(i) * xv.c + g * cin_g) * xv.plane());
                }
            }
    };
    return node;
}

}  // namespace mfsod
