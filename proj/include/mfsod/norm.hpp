#pragma once

#include <cmath>
#include <vector>

#include "mfsod/autograd.hpp"

namespace mfsod {

/// Batch normalization over (N,H,W) per channel. In training mode the batch
/// statistics normalize and the running estimates are updated in place; in
/// eval mode the running estimates normalize and nothing is mutated.
template <typename T>
VarPtr<T> batch_norm2d(const VarPtr<T>& x, const VarPtr<T>& gamma, const VarPtr<T>& beta,
                       Tensor<T>* running_mean, Tensor<T>* running_var, bool training,
                       double momentum = 0.1, double eps = 1e-5) {
    const Tensor<T>& xv = x->value;
    const int C = xv.c;
    require(gamma->value.c == C && beta->value.c == C, "batch_norm2d: affine/channel mismatch");
    require(running_mean && running_var && running_mean->c == C && running_var->c == C,
            "batch_norm2d: running stats/channel mismatch");
    const size_t plane = xv.plane();
    const size_t m = static_cast<size_t>(xv.n) * plane;  // samples per channel

    auto mean = std::make_shared<std::vector<T>>(C);
    auto invstd = std::make_shared<std::vector<T>>(C);
    if (training) {
        for (int j = 0; j < C; ++j) {
            double acc = 0.0;
            for (int i = 0; i < xv.n; ++i) {
                const T* xp = xv.data() + (static_cast<size_t>(i) * C + j) * plane;
                for (size_t p = 0; p < plane; ++p) acc += xp[p];
            }
            double mu = acc / m;
            double var_acc = 0.0;
            for (int i = 0; i < xv.n; ++i) {
                const T* xp = xv.data() + (static_cast<size_t>(i) * C + j) * plane;
                for (size_t p = 0; p < plane; ++p) {
                    double d = xp[p] - mu;
                    var_acc += d * d;
                }
            }
            double var = var_acc / m;
            (*mean)[j] = static_cast<T>(mu);
            (*invstd)[j] = static_cast<T>(1.0 / std::sqrt(var + eps));
            double unbiased = m > 1 ? var * static_cast<double>(m) / (m - 1) : var;
            running_mean->v[j] = static_cast<T>((1.0 - momentum) * running_mean->v[j] + momentum * mu);
            running_var->v[j] =
                static_cast<T>((1.0 - momentum) * running_var->v[j] + momentum * unbiased);
        }
    } else {
        for (int j = 0; j < C; ++j) {
            (*mean)[j] = running_mean->v[j];
            (*invstd)[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var->v[j]) + eps));
        }
    }

    Tensor<T> out = Tensor<T>::zeros_like(xv);
    for (int i = 0; i < xv.n; ++i)
        for (int j = 0; j < C; ++j) {
            const T* xp = xv.data() + (static_cast<size_t>(i) * C + j) * plane;
            T* yp = out.data() + (static_cast<size_t>(i) * C + j) * plane;
            T mu = (*mean)[j], is = (*invstd)[j];
            T g = gamma->value.v[j], b = beta->value.v[j];
            for (size_t p = 0; p < plane; ++p) yp[p] = g * (xp[p] - mu) * is + b;
        }

    auto node = make_var(std::move(out),
                         x->requires_grad || gamma->requires_grad || beta->requires_grad);
    node->parents = {x, gamma, beta};
    node->backward_fn = [x, gamma, beta, mean, invstd, training, m, plane, C](Node<T>& self) {
        const Tensor<T>& xv = x->value;
        if (beta->requires_grad) beta->ensure_grad();
        if (gamma->requires_grad) gamma->ensure_grad();
        if (x->requires_grad) x->ensure_grad();
        for (int j = 0; j < C; ++j) {
            T mu = (*mean)[j], is = (*invstd)[j];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int i = 0; i < xv.n; ++i) {
                const T* xp = xv.data() + (static_cast<size_t>(i) * C + j) * plane;
                const T* gp = self.grad.data() + (static_cast<size_t>(i) * C + j) * plane;
                for (size_t p = 0; p < plane; ++p) {
                    sum_dy += gp[p];
                    sum_dy_xhat += gp[p] * (xp[p] - mu) * is;
                }
            }
            if (beta->requires_grad) beta->grad.v[j] += static_cast<T>(sum_dy);
            if (gamma->requires_grad) gamma->grad.v[j] += static_cast<T>(sum_dy_xhat);
            if (!x->requires_grad) continue;
            T g = gamma->value.v[j];
            if (training) {
                for (int i = 0; i < xv.n; ++i) {
                    const T* xp = xv.data() + (static_cast<size_t>(i) * C + j) * plane;
                    const T* gp = self.grad.data() + (static_cast<size_t>(i) * C + j) * plane;
                    T* dxp = x->grad.data() + (static_cast<size_t>(i) * C + j) * plane;
                    for (size_t p = 0; p < plane; ++p) {
                        double xhat = (xp[p] - mu) * is;
                        dxp[p] += static_cast<T>(
                            g * is * (gp[p] - sum_dy / m - xhat * sum_dy_xhat / m));
                    }
                }
            } else {
                for (int i = 0; i < xv.n; ++i) {
                    const T* gp = self.grad.data() + (static_cast<size_t>(i) * C + j) * plane;
                    T* dxp = x->grad.data() + (static_cast<size_t>(i) * C + j) * plane;
                    for (size_t p = 0; p < plane; ++p) dxp[p] += g * is * gp[p];
                }
            }
        }
    };
    return node;
}

}  // namespace mfsod
