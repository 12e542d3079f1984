#pragma once

#include <vector>

#include "surge/nn.hpp"

namespace surge {

struct GeneratorConfig {
    int64_t n_g = 8;    // residual blocks per half
    int64_t ch0 = 64;   // left-half width
    int64_t ch1 = 128;  // right-half width
    int64_t outer_kernel = 9;
    int64_t inner_kernel = 3;
    int64_t outer_padding = 4;
    int64_t inner_padding = 1;

    void validate() const;
};

namespace detail {

// conv(k3) -> BN -> PReLU, then conv(k3) -> BN, with the block input added
// back onto the second sub-block's output.
template <typename T>
struct GenResidualBlock {
    nn::Conv2d<T> conv1, conv2;
    nn::BatchNorm2d<T> bn1, bn2;
    nn::PReLU<T> act;

    GenResidualBlock() = default;
    GenResidualBlock(int64_t ch, int64_t k, int64_t pad, Rng& rng);
    ad::Var<T> forward(const ad::Var<T>& x, nn::Mode mode);
    void collect(const std::string& prefix, nn::TensorRegistry<T>& reg);
};

}  // namespace detail

// Two-stage 4x upscaling generator: each half runs an initial wide-kernel
// convolution, a residual stack, a stabilizing convolution and a learnable
// convex mix, then doubles the resolution by nearest-neighbor replication.
// A skip block carries the first half's low-level features into the second.
template <typename T>
class Generator {
  public:
    explicit Generator(const GeneratorConfig& cfg = {}, uint64_t seed = 0x5eed);

    // lr: [N,3,H,W] with H,W >= 16 -> [N,3,4H,4W]
    ad::Var<T> forward(const ad::Var<T>& lr, nn::Mode mode);

    nn::TensorRegistry<T> registry();
    const GeneratorConfig& config() const { return cfg_; }

    ad::Var<T> f0_logits() const { return f0_logits_; }
    ad::Var<T> f1_logits() const { return f1_logits_; }
    std::vector<double> f0_weights() const;
    std::vector<double> f1_weights() const;

  private:
    GeneratorConfig cfg_;
    nn::Conv2d<T> c0_, c1_;
    nn::PReLU<T> c0_act_, c1_act_;
    std::vector<detail::GenResidualBlock<T>> r0_, r1_;
    nn::Conv2d<T> i0_, i1_;
    nn::BatchNorm2d<T> i0_bn_, i1_bn_;
    nn::PReLU<T> i0_act_, i1_act_;
    nn::Conv2d<T> u0_, u1_;
    nn::PReLU<T> u0_act_, u1_act_;
    nn::Conv2d<T> skip_;
    nn::PReLU<T> skip_act_;
    nn::Conv2d<T> head1_, head2_;
    ad::Var<T> f0_logits_, f1_logits_;
};

struct DiscriminatorConfig;  // forward decl, see discriminator.hpp

int64_t generator_parameter_count(const GeneratorConfig& cfg);

}  // namespace surge
