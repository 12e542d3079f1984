#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "surge/autodiff.hpp"
#include "surge/rng.hpp"

namespace testutil {

using surge::Shape;
using surge::Tensor;
namespace ad = surge::ad;

inline double rel_err(double a, double b) {
    double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) / scale;
}

inline Tensor<double> random_tensor(Shape shape, surge::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

// Central-difference check of d(scalar f)/d(inputs) against reverse-mode
// gradients. Samples a bounded number of coordinates per input.
inline double max_grad_rel_err(
    const std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double h = 1e-5, int max_samples = 16) {
    std::vector<ad::Var<double>> vars;
    vars.reserve(inputs.size());
    for (auto& t : inputs) vars.push_back(ad::Var<double>::parameter(t));
    ad::Var<double> out = f(vars);
    std::vector<ad::Var<double>> grads = ad::grad(out, vars);

    surge::Rng pick_rng(1234);
    double worst = 0.0;
    for (size_t k = 0; k < inputs.size(); ++k) {
        const int64_t n = inputs[k].numel();
        const int64_t samples = std::min<int64_t>(n, max_samples);
        for (int64_t s = 0; s < samples; ++s) {
            int64_t i = samples == n ? s : pick_rng.uniform_int(n);
            auto eval = [&](double delta) {
                std::vector<ad::Var<double>> vs;
                for (size_t j = 0; j < inputs.size(); ++j) {
                    Tensor<double> t = inputs[j];
                    if (j == k) t[i] += delta;
                    vs.push_back(ad::Var<double>::constant(std::move(t)));
                }
                ad::NoGradGuard ng;
                return f(vs).value()[0];
            };
            double fd = (eval(h) - eval(-h)) / (2 * h);
            worst = std::max(worst, rel_err(grads[k].value()[i], fd));
        }
    }
    return worst;
}

}  // namespace testutil
