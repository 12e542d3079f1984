#include "surge/discriminator.hpp"

namespace surge {

using ad::Var;

void DiscriminatorConfig::validate() const {
    if (n_d < 1) throw ConfigError("discriminator: n_d must be >= 1");
    if (static_cast<int64_t>(block_filters.size()) != n_d ||
        static_cast<int64_t>(block_kernels.size()) != n_d)
        throw ConfigError("discriminator: filter/kernel lists must have n_d entries");
    if (leak <= 0.0 || leak >= 1.0) throw ConfigError("discriminator: leak must be in (0,1)");
    for (int64_t k : block_kernels)
        if (k % 2 == 0) throw ConfigError("discriminator: kernels must be odd");
    if (pool_out < 1 || dense_hidden < 1)
        throw ConfigError("discriminator: pool_out and dense_hidden must be >= 1");
}

namespace detail {

template <typename T>
CriticResidualBlock<T>::CriticResidualBlock(int64_t in_ch, int64_t out_ch, int64_t k,
                                            double leak_, Rng& rng)
    : conv1(in_ch, out_ch, k, 1, rng), conv2(out_ch, out_ch, k, 1, rng), leak(leak_) {
    shrink = 2 * (k - 3);
    if (in_ch != out_ch) proj.emplace(in_ch, out_ch, 1, 0, rng);
}

template <typename T>
Var<T> CriticResidualBlock<T>::forward(const Var<T>& x) const {
    Var<T> h = ad::leaky_relu(nn::pixel_norm(conv1.forward(x)), leak);
    h = nn::pixel_norm(conv2.forward(h));
    Var<T> skip = proj ? proj->forward(x) : x;
    if (shrink > 0) skip = ad::center_crop(skip, h.shape()[2], h.shape()[3]);
    return ad::add(skip, h);
}

template <typename T>
void CriticResidualBlock<T>::collect(const std::string& prefix, nn::TensorRegistry<T>& reg) {
    conv1.collect(prefix + ".conv1", reg);
    conv2.collect(prefix + ".conv2", reg);
    if (proj) proj->collect(prefix + ".proj", reg);
}

template struct CriticResidualBlock<float>;
template struct CriticResidualBlock<double>;

}  // namespace detail

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    stem_ = nn::Conv2d<T>(3, cfg_.block_filters[0], 3, 1, rng);
    int64_t ch = cfg_.block_filters[0];
    for (int64_t i = 0; i < cfg_.n_d; ++i) {
        blocks_.emplace_back(ch, cfg_.block_filters[i], cfg_.block_kernels[i], cfg_.leak, rng);
        ch = cfg_.block_filters[i];
    }
    fc1_ = nn::Linear<T>(ch * cfg_.pool_out * cfg_.pool_out, cfg_.dense_hidden, rng);
    fc2_ = nn::Linear<T>(cfg_.dense_hidden, 1, rng);
}

template <typename T>
int64_t Discriminator<T>::min_input_size() const {
    int64_t shrink = 0;
    for (const auto& b : blocks_) shrink += b.shrink;
    return std::max<int64_t>(32, shrink + cfg_.pool_out);
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& imgs) const {
    const auto& s = imgs.shape();
    if (s.size() != 4 || s[1] != 3)
        throw ShapeError("discriminator: expected [N,3,H,W] input, got " + shape_str(s));
    if (s[2] < 32 || s[3] < 32)
        throw ShapeError("discriminator: spatial size must be >= 32, got " + shape_str(s));

    Var<T> h = ad::leaky_relu(stem_.forward(imgs), cfg_.leak);
    for (const auto& b : blocks_) h = b.forward(h);
    Var<T> pooled = ad::adaptive_avg_pool(h, cfg_.pool_out);
    const int64_t n = s[0];
    Var<T> flat = ad::reshape(pooled, {n, pooled.numel() / n});
    if (cfg_.head_norm) {
        // unit-mean-square normalization of each pooled feature vector
        const int64_t f = flat.shape()[1];
        Var<T> ms = ad::mul_scalar(ad::row_sum(ad::square(flat)), 1.0 / double(f));
        Var<T> scale = ad::recip(ad::vsqrt(ad::add_scalar(ms, 1e-8)));
        flat = ad::mul(flat, ad::expand_cols(scale, f));
    }
    Var<T> hidden = ad::leaky_relu(fc1_.forward(flat), cfg_.leak);
    Var<T> logit = fc2_.forward(hidden);
    return ad::sigmoid(ad::reshape(logit, {n}));
}

template <typename T>
nn::TensorRegistry<T> Discriminator<T>::registry() {
    nn::TensorRegistry<T> reg;
    stem_.collect("d.stem", reg);
    for (size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("d.b" + std::to_string(i), reg);
    fc1_.collect("d.fc1", reg);
    fc2_.collect("d.fc2", reg);
    return reg;
}

int64_t discriminator_parameter_count(const DiscriminatorConfig& cfg) {
    Discriminator<float> d(cfg);
    auto reg = d.registry();
    return nn::total_param_count(reg);
}

template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace surge
