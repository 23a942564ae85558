#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mfsod/errors.hpp"

namespace mfsod {

/// Dense NCHW tensor. Weights use (out, in, kh, kw), per-channel vectors
/// use (1, C, 1, 1), scalars (1, 1, 1, 1).
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

    static Tensor full(int n, int c, int h, int w, T value) {
        Tensor t(n, c, h, w);
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }
    static Tensor zeros_like(const Tensor& o) { return Tensor(o.n, o.c, o.h, o.w); }
    static Tensor scalar(T value) { return full(1, 1, 1, 1, value); }

    size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }
    int plane() const { return h * w; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& at(int i, int j, int y, int x) {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }
    const T& at(int i, int j, int y, int x) const {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::array<int, 4> shape() const { return {n, c, h, w}; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> o(n, c, h, w);
        for (size_t i = 0; i < v.size(); ++i) o.v[i] = static_cast<U>(v[i]);
        return o;
    }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InputError(msg);
}

/// Seeded RNG shared by initializers, synthesizers and shuffles.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mean, double stddev) {
        return std::normal_distribution<double>(mean, stddev)(gen_);
    }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(gen_);
    }
    std::mt19937_64& engine() { return gen_; }

    template <typename T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (auto& x : t.v) x = static_cast<T>(uniform(lo, hi));
    }

    /// Glorot bound for a conv weight tensor of shape (out, in, kh, kw).
    template <typename T>
    void fill_xavier_uniform(Tensor<T>& t) {
        double fan_in = static_cast<double>(t.c) * t.h * t.w;
        double fan_out = static_cast<double>(t.n) * t.h * t.w;
        double bound = std::sqrt(6.0 / (fan_in + fan_out));
        fill_uniform(t, -bound, bound);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace mfsod
