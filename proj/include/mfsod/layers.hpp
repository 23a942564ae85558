#pragma once

#include <functional>
#include <memory>
#include <string>

#include "mfsod/conv.hpp"
#include "mfsod/norm.hpp"

namespace mfsod {

template <typename T>
using ParamVisitor = std::function<void(const std::string&, const VarPtr<T>&)>;
/// Non-trainable state that still belongs in checkpoints (BN running stats).
template <typename T>
using BufferVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <typename T>
struct Module {
    virtual ~Module() = default;
    virtual VarPtr<T> forward(const VarPtr<T>& x, bool training) = 0;
    virtual void visit(const std::string& prefix, const ParamVisitor<T>& params,
                       const BufferVisitor<T>& buffers) = 0;
};

template <typename T>
struct Conv2d {
    VarPtr<T> weight;
    VarPtr<T> bias;  // null when the conv feeds a norm layer
    int stride = 1, pad = 0, groups = 1;

    Conv2d() = default;
    Conv2d(int in_c, int out_c, int k, int stride_, int pad_, int groups_, bool with_bias,
           Rng& rng) {
        stride = stride_;
        pad = pad_;
        groups = groups_;
        Tensor<T> w(out_c, in_c / groups_, k, k);
        rng.fill_xavier_uniform(w);
        weight = make_var(std::move(w), true);
        if (with_bias) bias = make_var(Tensor<T>(1, out_c, 1, 1), true);
    }

    VarPtr<T> operator()(const VarPtr<T>& x) const {
        return conv2d(x, weight, bias, stride, pad, groups);
    }

    size_t param_count() const {
        return weight->value.size() + (bias ? bias->value.size() : 0);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>&) {
        params(prefix + ".weight", weight);
        if (bias) params(prefix + ".bias", bias);
    }
};

template <typename T>
struct BatchNorm2d {
    VarPtr<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels) {
        gamma = make_var(Tensor<T>::full(1, channels, 1, 1, T(1)), true);
        beta = make_var(Tensor<T>(1, channels, 1, 1), true);
        running_mean = Tensor<T>(1, channels, 1, 1);
        running_var = Tensor<T>::full(1, channels, 1, 1, T(1));
    }

    VarPtr<T> operator()(const VarPtr<T>& x, bool training) {
        return batch_norm2d(x, gamma, beta, &running_mean, &running_var, training, momentum, eps);
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) {
        params(prefix + ".gamma", gamma);
        params(prefix + ".beta", beta);
        buffers(prefix + ".running_mean", running_mean);
        buffers(prefix + ".running_var", running_var);
    }
};

/// Conv -> BN -> optional ReLU, the composite every backbone block is made of.
template <typename T>
struct ConvBnAct {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    bool act = true;

    ConvBnAct() = default;
    ConvBnAct(int in_c, int out_c, int k, int stride, int pad, int groups, bool act_, Rng& rng)
        : conv(in_c, out_c, k, stride, pad, groups, /*with_bias=*/false, rng),
          bn(out_c),
          act(act_) {}

    VarPtr<T> operator()(const VarPtr<T>& x, bool training) {
        auto y = bn(conv(x), training);
        return act ? relu(y) : y;
    }

    void visit(const std::string& prefix, const ParamVisitor<T>& params,
               const BufferVisitor<T>& buffers) {
        conv.visit(prefix + ".conv", params, buffers);
        bn.visit(prefix + ".bn", params, buffers);
    }
};

/// Total trainable scalars reachable from a module.
template <typename T>
size_t count_module_params(Module<T>& m) {
    size_t total = 0;
    m.visit(
        "", [&](const std::string&, const VarPtr<T>& p) { total += p->value.size(); },
        [](const std::string&, Tensor<T>&) {});
    return total;
}

}  // namespace mfsod
