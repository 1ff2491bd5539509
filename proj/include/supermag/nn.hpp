#pragma once

// Parameter registry and the AdamW optimizer. Parameters live outside the
// tape; every training step re-registers them as leaves, runs the graph and
// reads the accumulated gradients back.

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "supermag/rng.hpp"
#include "supermag/tensor.hpp"

namespace supermag {

template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };
    std::vector<Entry> entries;

    int add(std::string name, Tensor<T> t) {
        entries.push_back({std::move(name), std::move(t)});
        return static_cast<int>(entries.size()) - 1;
    }

    Tensor<T>& operator[](int i) { return entries[i].tensor; }
    const Tensor<T>& operator[](int i) const { return entries[i].tensor; }
    int count() const { return static_cast<int>(entries.size()); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.tensor.numel();
        return n;
    }

    bool all_finite() const {
        for (const auto& e : entries)
            for (const T v : e.tensor.data)
                if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

// He-style fan-in scaled normal init.
template <typename T>
Tensor<T> init_normal(Shape s, double stddev, Rng& rng) {
    Tensor<T> t(s);
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

template <typename T>
Tensor<T> init_const(Shape s, T value) {
    return Tensor<T>(s, value);
}

// Decoupled weight decay Adam (AdamW). Bias-corrected first/second moments,
// decay applied directly to the parameter.
template <typename T>
class AdamW {
public:
    AdamW(T lr, T beta1, T beta2, T weight_decay, T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), wd_(weight_decay), eps_(eps) {}

    void step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads) {
        if (m_.empty()) {
            for (const auto& e : params.entries) {
                m_.emplace_back(e.tensor.shape);
                v_.emplace_back(e.tensor.shape);
            }
        }
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (int p = 0; p < params.count(); ++p) {
            Tensor<T>& w = params[p];
            const Tensor<T>& g = grads[p];
            Tensor<T>& m = m_[p];
            Tensor<T>& v = v_[p];
            for (std::size_t i = 0; i < w.numel(); ++i) {
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
            }
        }
    }

private:
    T lr_, beta1_, beta2_, wd_, eps_;
    long t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

// Largest divisor of c not exceeding 8; group count for GroupNorm layers.
inline int norm_groups(int c) {
    for (int g = 8; g > 1; --g)
        if (c % g == 0) return g;
    return 1;
}

}  // namespace supermag
