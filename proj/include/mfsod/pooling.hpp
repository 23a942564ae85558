#pragma once

#include <limits>
#include <vector>

#include "mfsod/autograd.hpp"
#include "mfsod/conv.hpp"

namespace mfsod {

/// Max pooling; ties resolve to the first element in scan order so the
/// backward scatter is unambiguous.
template <typename T>
VarPtr<T> max_pool2d(const VarPtr<T>& x, int k, int stride, int pad) {
    const Tensor<T>& xv = x->value;
    const int oh = detail::conv_out_size(xv.h, k, stride, pad);
    const int ow = detail::conv_out_size(xv.w, k, stride, pad);
    require(oh > 0 && ow > 0, "max_pool2d: output would be empty for input " + xv.shape_str());
    Tensor<T> out(xv.n, xv.c, oh, ow);
    auto argmax = std::make_shared<std::vector<int>>(out.size());
    const size_t in_plane = xv.plane();
    const size_t out_plane = static_cast<size_t>(oh) * ow;
    for (int i = 0; i < xv.n; ++i)
        for (int j = 0; j < xv.c; ++j) {
            const T* xp = xv.data() + (static_cast<size_t>(i) * xv.c + j) * in_plane;
            T* yp = out.data() + (static_cast<size_t>(i) * xv.c + j) * out_plane;
            int* ap = argmax->data() + (static_cast<size_t>(i) * xv.c + j) * out_plane;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    T best = -std::numeric_limits<T>::infinity();
                    int best_idx = -1;
                    for (int ky = 0; ky < k; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= xv.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= xv.w) continue;
                            T v = xp[static_cast<size_t>(iy) * xv.w + ix];
                            if (v > best) {
                                best = v;
                                best_idx = iy * xv.w + ix;
                            }
                        }
                    }
                    yp[static_cast<size_t>(oy) * ow + ox] = best;
                    ap[static_cast<size_t>(oy) * ow + ox] = best_idx;
                }
        }
    auto node = make_var(std::move(out), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x, argmax, out_plane, in_plane](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < x->value.n; ++i)
            for (int j = 0; j < x->value.c; ++j) {
                const T* gp = self.grad.data() + (static_cast<size_t>(i) * x->value.c + j) * out_plane;
                const int* ap = argmax->data() + (static_cast<size_t>(i) * x->value.c + j) * out_plane;
                T* dxp = x->grad.data() + (static_cast<size_t>(i) * x->value.c + j) * in_plane;
                for (size_t p = 0; p < out_plane; ++p)
                    if (ap[p] >= 0) dxp[ap[p]] += gp[p];
            }
    };
    return node;
}

}  // namespace mfsod
