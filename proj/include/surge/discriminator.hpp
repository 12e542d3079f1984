#pragma once

#include <vector>

#include "surge/nn.hpp"

namespace surge {

struct DiscriminatorConfig {
    int64_t n_d = 4;
    // Filter/kernel progression per residual block. The doubling filter
    // ladder is halved relative to the largest grid-searched widths to keep
    // the combined generator+critic parameter budget in the mid-20M range.
    std::vector<int64_t> block_filters{32, 64, 128, 256};
    std::vector<int64_t> block_kernels{3, 5, 7, 9};
    double leak = 0.2;
    int64_t pool_out = 6;
    int64_t dense_hidden = 1024;
    bool head_norm = false;  // normalize pooled features before the dense stack

    void validate() const;
};

namespace detail {

// Two conv->pixel-norm sub-blocks (LeakyReLU on the first only). The skip
// path uses a 1x1 projection when channel widths change and a center crop
// when the block kernel shrinks the spatial extent.
template <typename T>
struct CriticResidualBlock {
    nn::Conv2d<T> conv1, conv2;
    std::optional<nn::Conv2d<T>> proj;
    double leak = 0.2;
    int64_t shrink = 0;  // total spatial loss across the two convs

    CriticResidualBlock() = default;
    CriticResidualBlock(int64_t in_ch, int64_t out_ch, int64_t k, double leak, Rng& rng);
    ad::Var<T> forward(const ad::Var<T>& x) const;
    void collect(const std::string& prefix, nn::TensorRegistry<T>& reg);
};

}  // namespace detail

// Residual critic: stem convolution, n_d residual blocks with incrementally
// growing kernels and filter counts, then adaptive average pooling and a
// two-layer dense head ending in a sigmoid probability.
template <typename T>
class Discriminator {
  public:
    explicit Discriminator(const DiscriminatorConfig& cfg = {}, uint64_t seed = 0xd15c);

    // imgs: [N,3,H,W], H,W >= 32 -> probabilities [N] in (0,1)
    ad::Var<T> forward(const ad::Var<T>& imgs) const;

    nn::TensorRegistry<T> registry();
    const DiscriminatorConfig& config() const { return cfg_; }
    int64_t min_input_size() const;

  private:
    DiscriminatorConfig cfg_;
    nn::Conv2d<T> stem_;
    std::vector<detail::CriticResidualBlock<T>> blocks_;
    nn::Linear<T> fc1_, fc2_;
};

int64_t discriminator_parameter_count(const DiscriminatorConfig& cfg);

}  // namespace surge
