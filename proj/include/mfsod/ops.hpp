#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfsod/autograd.hpp"

namespace mfsod {

namespace detail {

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace detail

template <typename T>
VarPtr<T> add(const VarPtr<T>& a, const VarPtr<T>& b) {
    require(a->value.same_shape(b->value),
            "add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b->value.v[i];
    auto node = make_var(std::move(out), a->requires_grad || b->requires_grad);
    node->parents = {a, b};
    node->backward_fn = [a, b](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            detail::accumulate(a->grad, self.grad);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::accumulate(b->grad, self.grad);
        }
    };
    return node;
}

template <typename T>
VarPtr<T> sub(const VarPtr<T>& a, const VarPtr<T>& b) {
    require(a->value.same_shape(b->value),
            "sub: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b->value.v[i];
    auto node = make_var(std::move(out), a->requires_grad || b->requires_grad);
    node->parents = {a, b};
    node->backward_fn = [a, b](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            detail::accumulate(a->grad, self.grad);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->grad.v.size(); ++i) b->grad.v[i] -= self.grad.v[i];
        }
    };
    return node;
}

template <typename T>
VarPtr<T> mul(const VarPtr<T>& a, const VarPtr<T>& b) {
    require(a->value.same_shape(b->value),
            "mul: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b->value.v[i];
    auto node = make_var(std::move(out), a->requires_grad || b->requires_grad);
    node->parents = {a, b};
    node->backward_fn = [a, b](Node<T>& self) {
        if (a->requires_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < a->grad.v.size(); ++i)
                a->grad.v[i] += self.grad.v[i] * b->value.v[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < b->grad.v.size(); ++i)
                b->grad.v[i] += self.grad.v[i] * a->value.v[i];
        }
    };
    return node;
}

/// weights (N,1,H,W) scaled onto every channel of x (N,C,H,W).
template <typename T>
VarPtr<T> mul_channel_broadcast(const VarPtr<T>& weights, const VarPtr<T>& x) {
    const Tensor<T>& wv = weights->value;
    const Tensor<T>& xv = x->value;
    require(wv.c == 1 && wv.n == xv.n && wv.h == xv.h && wv.w == xv.w,
            "mul_channel_broadcast: weight map " + wv.shape_str() + " incompatible with " +
                xv.shape_str());
    Tensor<T> out = Tensor<T>::zeros_like(xv);
    const int plane = xv.plane();
    for (int i = 0; i < xv.n; ++i)
        for (int j = 0; j < xv.c; ++j) {
            const T* wp = wv.data() + static_cast<size_t>(i) * plane;
            const T* xp = xv.data() + (static_cast<size_t>(i) * xv.c + j) * plane;
            T* op = out.data() + (static_cast<size_t>(i) * xv.c + j) * plane;
            for (int p = 0; p < plane; ++p) op[p] = wp[p] * xp[p];
        }
    auto node = make_var(std::move(out), weights->requires_grad || x->requires_grad);
    node->parents = {weights, x};
    node->backward_fn = [weights, x](Node<T>& self) {
        const Tensor<T>& wv = weights->value;
        const Tensor<T>& xv = x->value;
        const int plane = xv.plane();
        if (x->requires_grad) {
            x->ensure_grad();
            for (int i = 0; i < xv.n; ++i)
                for (int j = 0; j < xv.c; ++j) {
                    const T* wp = wv.data() + static_cast<size_t>(i) * plane;
                    const T* gp = self.grad.data() + (static_cast<size_t>(i) * xv.c + j) * plane;
                    T* dxp = x->grad.data() + (static_cast<size_t>(i) * xv.c + j) * plane;
                    for (int p = 0; p < plane; ++p) dxp[p] += wp[p] * gp[p];
                }
        }
        if (weights->requires_grad) {
            weights->ensure_grad();
            for (int i = 0; i < xv.n; ++i)
                for (int j = 0; j < xv.c; ++j) {
                    const T* xp = xv.data() + (static_cast<size_t>(i) * xv.c + j) * plane;
                    const T* gp = self.grad.data() + (static_cast<size_t>(i) * xv.c + j) * plane;
                    T* dwp = weights->grad.data() + static_cast<size_t>(i) * plane;
                    for (int p = 0; p < plane; ++p) dwp[p] += xp[p] * gp[p];
                }
        }
    };
    return node;
}

template <typename T>
VarPtr<T> relu(const VarPtr<T>& x) {
    Tensor<T> out = x->value;
    for (auto& v : out.v) v = v > T(0) ? v : T(0);
    auto node = make_var(std::move(out), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.v.size(); ++i)
            if (x->value.v[i] > T(0)) x->grad.v[i] += self.grad.v[i];
    };
    return node;
}

template <typename T>
VarPtr<T> sigmoid(const VarPtr<T>& x) {
    Tensor<T> out = x->value;
    for (auto& v : out.v) v = T(1) / (T(1) + std::exp(-v));
    auto node = make_var(std::move(out), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < x->grad.v.size(); ++i) {
            T s = self.value.v[i];
            x->grad.v[i] += self.grad.v[i] * s * (T(1) - s);
        }
    };
    return node;
}

/// Softmax over the channel axis, independently per (n, y, x) location.
template <typename T>
VarPtr<T> softmax_channels(const VarPtr<T>& x) {
    const Tensor<T>& xv = x->value;
    Tensor<T> out = Tensor<T>::zeros_like(xv);
    const int plane = xv.plane();
    for (int i = 0; i < xv.n; ++i)
        for (int p = 0; p < plane; ++p) {
            T mx = xv.v[(static_cast<size_t>(i) * xv.c) * plane + p];
            for (int j = 1; j < xv.c; ++j)
                mx = std::max(mx, xv.v[(static_cast<size_t>(i) * xv.c + j) * plane + p]);
            T sum = T(0);
            for (int j = 0; j < xv.c; ++j) {
                T e = std::exp(xv.v[(static_cast<size_t>(i) * xv.c + j) * plane + p] - mx);
                out.v[(static_cast<size_t>(i) * xv.c + j) * plane + p] = e;
                sum += e;
            }
            for (int j = 0; j < xv.c; ++j)
                out.v[(static_cast<size_t>(i) * xv.c + j) * plane + p] /= sum;
        }
    auto node = make_var(std::move(out), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Tensor<T>& s = self.value;
        const int plane = s.plane();
        for (int i = 0; i < s.n; ++i)
            for (int p = 0; p < plane; ++p) {
                T dot = T(0);
                for (int j = 0; j < s.c; ++j) {
                    size_t idx = (static_cast<size_t>(i) * s.c + j) * plane + p;
                    dot += self.grad.v[idx] * s.v[idx];
                }
                for (int j = 0; j < s.c; ++j) {
                    size_t idx = (static_cast<size_t>(i) * s.c + j) * plane + p;
                    x->grad.v[idx] += s.v[idx] * (self.grad.v[idx] - dot);
                }
            }
    };
    return node;
}

template <typename T>
VarPtr<T> concat_channels(const std::vector<VarPtr<T>>& xs) {
    require(!xs.empty(), "concat_channels: empty input list");
    int n = xs[0]->value.n, h = xs[0]->value.h, w = xs[0]->value.w;
    int c_total = 0;
    for (const auto& x : xs) {
        require(x->value.n == n && x->value.h == h && x->value.w == w,
                "concat_channels: spatial/batch mismatch at " + x->value.shape_str());
        c_total += x->value.c;
    }
    Tensor<T> out(n, c_total, h, w);
    const int plane = h * w;
    int c_off = 0;
    for (const auto& x : xs) {
        for (int i = 0; i < n; ++i) {
            const T* src = x->value.data() + static_cast<size_t>(i) * x->value.c * plane;
            T* dst = out.data() + (static_cast<size_t>(i) * c_total + c_off) * plane;
            std::copy(src, src + static_cast<size_t>(x->value.c) * plane, dst);
        }
        c_off += x->value.c;
    }
    auto node = make_var(std::move(out), any_requires_grad(xs));
    node->parents = xs;
    node->backward_fn = [xs, n, c_total, plane](Node<T>& self) {
        int c_off = 0;
        for (const auto& x : xs) {
            if (x->requires_grad) {
                x->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const T* src = self.grad.data() + (static_cast<size_t>(i) * c_total + c_off) * plane;
                    T* dst = x->grad.data() + static_cast<size_t>(i) * x->value.c * plane;
                    for (size_t k = 0; k < static_cast<size_t>(x->value.c) * plane; ++k)
                        dst[k] += src[k];
                }
            }
            c_off += x->value.c;
        }
    };
    return node;
}

/// Channels [c0, c1) of x.
template <typename T>
VarPtr<T> slice_channels(const VarPtr<T>& x, int c0, int c1) {
    const Tensor<T>& xv = x->value;
    require(0 <= c0 && c0 < c1 && c1 <= xv.c, "slice_channels: bad range");
    Tensor<T> out(xv.n, c1 - c0, xv.h, xv.w);
    const int plane = xv.plane();
    for (int i = 0; i < xv.n; ++i) {
        const T* src = xv.data() + (static_cast<size_t>(i) * xv.c + c0) * plane;
        T* dst = out.data() + static_cast<size_t>(i) * out.c * plane;
        std::copy(src, src + static_cast<size_t>(out.c) * plane, dst);
    }
    auto node = make_var(std::move(out), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x, c0](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int plane = x->value.plane();
        for (int i = 0; i < x->value.n; ++i) {
            const T* src = self.grad.data() + static_cast<size_t>(i) * self.value.c * plane;
            T* dst = x->grad.data() + (static_cast<size_t>(i) * x->value.c + c0) * plane;
            for (size_t k = 0; k < static_cast<size_t>(self.value.c) * plane; ++k) dst[k] += src[k];
        }
    };
    return node;
}

/// Interleaves channel groups: view (groups, c/groups) transposed to
/// (c/groups, groups), the usual shuffle between grouped convolutions.
template <typename T>
VarPtr<T> channel_shuffle(const VarPtr<T>& x, int groups) {
    const Tensor<T>& xv = x->value;
    require(groups > 0 && xv.c % groups == 0, "channel_shuffle: channels not divisible by groups");
    const int per = xv.c / groups;
    const int plane = xv.plane();
    Tensor<T> out = Tensor<T>::zeros_like(xv);
    for (int i = 0; i < xv.n; ++i)
        for (int g = 0; g < groups; ++g)
            for (int d = 0; d < per; ++d) {
                const T* src = xv.data() + (static_cast<size_t>(i) * xv.c + g * per + d) * plane;
                T* dst = out.data() + (static_cast<size_t>(i) * xv.c + d * groups + g) * plane;
                std::copy(src, src + plane, dst);
            }
    auto node = make_var(std::move(out), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x, groups, per, plane](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int i = 0; i < x->value.n; ++i)
            for (int g = 0; g < groups; ++g)
                for (int d = 0; d < per; ++d) {
                    const T* src =
                        self.grad.data() + (static_cast<size_t>(i) * x->value.c + d * groups + g) * plane;
                    T* dst = x->grad.data() + (static_cast<size_t>(i) * x->value.c + g * per + d) * plane;
                    for (int p = 0; p < plane; ++p) dst[p] += src[p];
                }
    };
    return node;
}

template <typename T>
VarPtr<T> sum_all(const VarPtr<T>& x) {
    T s = T(0);
    for (T v : x->value.v) s += v;
    auto node = make_var(Tensor<T>::scalar(s), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        T g = self.grad.v[0];
        for (auto& v : x->grad.v) v += g;
    };
    return node;
}

/// Scalar projection <x, r> with a fixed tensor r; handy as a randomized
/// test loss because its gradient is exactly r.
template <typename T>
VarPtr<T> dot_const(const VarPtr<T>& x, const Tensor<T>& r) {
    require(x->value.same_shape(r), "dot_const: shape mismatch");
    T s = T(0);
    for (size_t i = 0; i < r.v.size(); ++i) s += x->value.v[i] * r.v[i];
    auto node = make_var(Tensor<T>::scalar(s), x->requires_grad);
    node->parents = {x};
    node->backward_fn = [x, r](Node<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        T g = self.grad.v[0];
        for (size_t i = 0; i < r.v.size(); ++i) x->grad.v[i] += g * r.v[i];
    };
    return node;
}

template <typename T>
VarPtr<T> add_scalars(const std::vector<VarPtr<T>>& xs) {
    require(!xs.empty(), "add_scalars: empty input list");
    T s = T(0);
    for (const auto& x : xs) {
        require(x->value.size() == 1, "add_scalars: non-scalar term");
        s += x->value.v[0];
    }
    auto node = make_var(Tensor<T>::scalar(s), any_requires_grad(xs));
    node->parents = xs;
    node->backward_fn = [xs](Node<T>& self) {
        for (const auto& x : xs) {
            if (!x->requires_grad) continue;
            x->ensure_grad();
            x->grad.v[0] += self.grad.v[0];
        }
    };
    return node;
}

/// Mean binary cross-entropy of logits z against a fixed {0,1} target,
/// computed in the log1p(exp(-|z|)) form so large logits stay finite.
template <typename T>
VarPtr<T> bce_with_logits_mean(const VarPtr<T>& z, const Tensor<T>& target) {
    require(z->value.same_shape(target), "bce_with_logits_mean: shape mismatch " +
                                             z->value.shape_str() + " vs " + target.shape_str());
    const size_t count = target.size();
    T acc = T(0);
    for (size_t i = 0; i < count; ++i) {
        T zi = z->value.v[i];
        T yi = target.v[i];
        acc += std::max(zi, T(0)) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
    }
    auto node = make_var(Tensor<T>::scalar(acc / static_cast<T>(count)), z->requires_grad);
    node->parents = {z};
    node->backward_fn = [z, target, count](Node<T>& self) {
        if (!z->requires_grad) return;
        z->ensure_grad();
        T g = self.grad.v[0] / static_cast<T>(count);
        for (size_t i = 0; i < count; ++i) {
            T s = T(1) / (T(1) + std::exp(-z->value.v[i]));
            z->grad.v[i] += g * (s - target.v[i]);
        }
    };
    return node;
}

}  // namespace mfsod
