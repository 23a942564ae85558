#pragma once

#include <cmath>

#include "mfsod/autograd.hpp"

namespace mfsod {

namespace detail {

struct BilinearTap {
    int lo, hi;   // clamped neighbour indices
    double frac;  // weight of hi
};

inline BilinearTap bilinear_tap(int out_idx, int in_size, int out_size) {
    // Half-pixel-centre mapping, the common align_corners=false convention.
    double src = (out_idx + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
    double floor_src = std::floor(src);
    int lo = static_cast<int>(floor_src);
    double frac = src - floor_src;
    int hi = lo + 1;
    if (lo < 0) {
        lo = 0;
        hi = 0;
        frac = 0.0;
    } else if (hi >= in_size) {
        lo = in_size - 1;
        hi = in_size - 1;
        frac = 0.0;
    }
    return {lo, hi, frac};
}

}  // namespace detail

template <typename T>
VarPtr<T> bilinear_resize(const VarPtr<T>& x, int out_h, int out_w) {
    const Tensor<T>& xv = x->value;
    require(out_h > 0 && out_w > 0, "bilinear_resize: non-positive target size");
    if (out_h == xv.h && out_w == xv.w) return x;  // identity, keep the node

    std::vector<detail::BilinearTap> ty(out_h), tx(out_w);
    for (int oy = 0; oy < out_h; ++oy) ty[oy] = detail::bilinear_tap(oy, xv.h, out_h);
    for (int ox = 0; ox < out_w; ++ox) tx[ox] = detail::bilinear_tap(ox, xv.w, out_w);

    Tensor<T> out(xv.n, xv.c, out_h, out_w);
    const size_t in_plane = xv.plane();
    const size_t out_plane = static_cast<size_t>(out_h) * out_w;
    for (int i = 0; i < xv.n; ++i)
        for (int j = 0; j < xv.c; ++j) {
            const T* xp = xv.data() + (static_cast<size_t>(i) * xv.c + j) * in_plane;
            T* yp = out.data() + (static_cast<size_t>(i) * xv.c + j) * out_plane;
            for (int oy = 0; oy < out_h; ++oy) {
                const auto& a = ty[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const auto& b = tx[ox];
                    double v00 = xp[static_cast<size_t>(a.lo) * xv.w + b.lo];
                    double v01 = xp[static_cast<size_t>(a.lo) * xv.w + b.hi];
                    double v10 = xp[static_cast<size_t>(a.hi) * xv.w + b.lo];
                    double v11 = xp[static_cast<size_t>(a.hi) * xv.w + b.hi];
                    double top = v00 + (v01 - v00) * b.frac;
                    double bot = v10 + (v11 - v10) * b.frac;
                    yp[static_cast<size_t>(oy) * out_w + ox] =
                        static_cast<T>(top + (bot - top) * a.frac);
                }
            }
        }
    auto node = make_var(std::move(out), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x, ty, tx, in_plane, out_plane, out_h, out_w](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Tensor<T>& xv = x->value;
        for (int i = 0; i < xv.n; ++i)
            for (int j = 0; j < xv.c; ++j) {
                const T* gp = self.grad.data() + (static_cast<size_t>(i) * xv.c + j) * out_plane;
                T* dxp = x->grad.data() + (static_cast<size_t>(i) * xv.c + j) * in_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const auto& a = ty[oy];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const auto& b = tx[ox];
                        double g = gp[static_cast<size_t>(oy) * out_w + ox];
                        double wy1 = a.frac, wy0 = 1.0 - a.frac;
                        double wx1 = b.frac, wx0 = 1.0 - b.frac;
                        dxp[static_cast<size_t>(a.lo) * xv.w + b.lo] += static_cast<T>(g * wy0 * wx0);
                        dxp[static_cast<size_t>(a.lo) * xv.w + b.hi] += static_cast<T>(g * wy0 * wx1);
                        dxp[static_cast<size_t>(a.hi) * xv.w + b.lo] += static_cast<T>(g * wy1 * wx0);
                        dxp[static_cast<size_t>(a.hi) * xv.w + b.hi] += static_cast<T>(g * wy1 * wx1);
                    }
                }
            }
    };
    return node;
}

/// Nearest-neighbour resample of a raw tensor (no autograd); used for
/// ground-truth masks where interpolation would break binarity.
template <typename T>
Tensor<T> nearest_resize(const Tensor<T>& x, int out_h, int out_w) {
    if (out_h == x.h && out_w == x.w) return x;
    Tensor<T> out(x.n, x.c, out_h, out_w);
    for (int i = 0; i < x.n; ++i)
        for (int j = 0; j < x.c; ++j)
            for (int oy = 0; oy < out_h; ++oy) {
                int iy = std::min(static_cast<int>((oy + 0.5) * x.h / out_h), x.h - 1);
                for (int ox = 0; ox < out_w; ++ox) {
                    int ix = std::min(static_cast<int>((ox + 0.5) * x.w / out_w), x.w - 1);
                    out.at(i, j, oy, ox) = x.at(i, j, iy, ix);
                }
            }
    return out;
}

}  // namespace mfsod
