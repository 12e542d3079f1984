#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "surge/autodiff.hpp"
#include "surge/rng.hpp"

namespace surge::nn {

using ad::Var;

// Forward-pass mode. TrainNoStatUpdate exists for the second generator pass
// of a training step: batch statistics are used but running averages are not
// advanced twice for the same batch.
enum class Mode { Train, TrainNoStatUpdate, Eval };

// Named views over a model's tensors: trainable parameters and persistent
// state (batch-norm running statistics) are kept separate so the optimizer
// touches only the former while checkpoints carry both.
template <typename T>
struct TensorRegistry {
    std::vector<std::pair<std::string, Var<T>>> params;
    std::vector<std::pair<std::string, Tensor<T>*>> state;

    void add_param(const std::string& name, const Var<T>& v) { params.emplace_back(name, v); }
    void add_state(const std::string& name, Tensor<T>* t) { state.emplace_back(name, t); }
};

template <typename T>
int64_t total_param_count(const TensorRegistry<T>& reg) {
    int64_t n = 0;
    for (const auto& [name, v] : reg.params) n += v.numel();
    return n;
}

template <typename T>
Tensor<T> normal_init(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor<T> t(std::move(shape));
    const double stddev = std::sqrt(2.0 / double(fan_in));
    fill_normal<T>(t, rng, stddev);
    return t;
}

template <typename T>
struct Conv2d {
    Var<T> w, b;
    int64_t pad = 0;

    Conv2d() = default;
    Conv2d(int64_t in_c, int64_t out_c, int64_t k, int64_t pad_, Rng& rng) : pad(pad_) {
        w = Var<T>::parameter(normal_init<T>({out_c, in_c, k, k}, in_c * k * k, rng));
        b = Var<T>::parameter(Tensor<T>::zeros({out_c}));
    }

    Var<T> forward(const Var<T>& x) const { return ad::conv2d(x, w, std::optional<Var<T>>(b), pad); }

    void collect(const std::string& prefix, TensorRegistry<T>& reg) {
        reg.add_param(prefix + ".w", w);
        reg.add_param(prefix + ".b", b);
    }
};

template <typename T>
struct PReLU {
    Var<T> slope;

    PReLU() = default;
    explicit PReLU(int64_t channels, double init = 0.25) {
        slope = Var<T>::parameter(Tensor<T>::full({channels}, T(init)));
    }

    Var<T> forward(const Var<T>& x) const {
        const auto& s = x.shape();
        Var<T> neg = ad::neg_part(x);
        Var<T> scaled = ad::mul(neg, ad::broadcast_c(slope, s[0], s[2], s[3]));
        return ad::add(ad::pos_part(x), scaled);
    }

    void collect(const std::string& prefix, TensorRegistry<T>& reg) {
        reg.add_param(prefix + ".slope", slope);
    }
};

template <typename T>
struct BatchNorm2d {
    Var<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int64_t channels) {
        gamma = Var<T>::parameter(Tensor<T>::full({channels}, T(1)));
        beta = Var<T>::parameter(Tensor<T>::zeros({channels}));
        running_mean = Tensor<T>::zeros({channels});
        running_var = Tensor<T>::full({channels}, T(1));
    }

    Var<T> forward(const Var<T>& x, Mode mode) {
        const auto& s = x.shape();
        const int64_t n = s[0], c = s[1], h = s[2], w = s[3];
        Var<T> mean, inv_std;
        if (mode == Mode::Eval) {
            mean = Var<T>::constant(running_mean);
            Tensor<T> inv = running_var;
            for (int64_t i = 0; i < inv.numel(); ++i)
                inv[i] = T(1) / std::sqrt(inv[i] + T(eps));
            inv_std = Var<T>::constant(std::move(inv));
        } else {
            const double m = double(n * h * w);
            mean = ad::mul_scalar(ad::reduce_nhw_sum(x), 1.0 / m);
            Var<T> centered = ad::sub(x, ad::broadcast_c(mean, n, h, w));
            Var<T> var = ad::mul_scalar(ad::reduce_nhw_sum(ad::square(centered)), 1.0 / m);
            inv_std = ad::recip(ad::vsqrt(ad::add_scalar(var, eps)));
            if (mode == Mode::Train) {
                const double unbias = m > 1 ? m / (m - 1) : 1.0;
                for (int64_t i = 0; i < c; ++i) {
                    running_mean[i] =
                        T((1 - momentum) * running_mean[i] + momentum * mean.value()[i]);
                    running_var[i] =
                        T((1 - momentum) * running_var[i] + momentum * unbias * var.value()[i]);
                }
            }
        }
        Var<T> xn = ad::mul(ad::sub(x, ad::broadcast_c(mean, n, h, w)),
                            ad::broadcast_c(inv_std, n, h, w));
        return ad::add(ad::mul(xn, ad::broadcast_c(gamma, n, h, w)),
                       ad::broadcast_c(beta, n, h, w));
    }

    void collect(const std::string& prefix, TensorRegistry<T>& reg) {
        reg.add_param(prefix + ".gamma", gamma);
        reg.add_param(prefix + ".beta", beta);
        reg.add_state(prefix + ".running_mean", &running_mean);
        reg.add_state(prefix + ".running_var", &running_var);
    }
};

// Per-location channel-vector normalization to unit mean square.
template <typename T>
Var<T> pixel_norm(const Var<T>& x, double eps = 1e-8) {
    const int64_t c = x.shape()[1];
    Var<T> ms = ad::mul_scalar(ad::reduce_c_sum_keep(ad::square(x)), 1.0 / double(c));
    Var<T> scale = ad::recip(ad::vsqrt(ad::add_scalar(ms, eps)));
    return ad::mul(x, ad::broadcast_c_keep(scale, c));
}

template <typename T>
struct Linear {
    Var<T> w, b;

    Linear() = default;
    Linear(int64_t in_f, int64_t out_f, Rng& rng) {
        w = Var<T>::parameter(normal_init<T>({out_f, in_f}, in_f, rng));
        b = Var<T>::parameter(Tensor<T>::zeros({out_f}));
    }

    Var<T> forward(const Var<T>& x) const { return ad::linear(x, w, b); }

    void collect(const std::string& prefix, TensorRegistry<T>& reg) {
        reg.add_param(prefix + ".w", w);
        reg.add_param(prefix + ".b", b);
    }
};

// Learnable convex combination of K same-shaped branches. Softmax over the
// logits keeps the weights strictly positive with unit sum.
template <typename T>
Var<T> feature_mix(const std::vector<Var<T>>& inputs, const Var<T>& logits) {
    if (inputs.size() < 2) throw ShapeError("feature_mix: need at least two inputs");
    if (logits.numel() != static_cast<int64_t>(inputs.size()))
        throw ShapeError("feature_mix: logit count does not match inputs");
    for (size_t i = 1; i < inputs.size(); ++i)
        if (!inputs[i].value().same_shape(inputs[0].value()))
            throw ShapeError("feature_mix: input shape mismatch at branch " + std::to_string(i));
    Var<T> w = ad::softmax_vec(logits);
    Var<T> out;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Var<T> term =
            ad::mul(inputs[i], ad::expand_to(ad::pick(w, int64_t(i)), inputs[i].shape()));
        out = i == 0 ? term : ad::add(out, term);
    }
    return out;
}

}  // namespace surge::nn
