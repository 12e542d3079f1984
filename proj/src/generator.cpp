#include "surge/generator.hpp"

namespace surge {

using ad::Var;

void GeneratorConfig::validate() const {
    if (n_g < 1) throw ConfigError("generator: n_g must be >= 1");
    if (ch0 < 1 || ch1 < 1) throw ConfigError("generator: channel widths must be >= 1");
    if (outer_kernel % 2 == 0 || inner_kernel % 2 == 0)
        throw ConfigError("generator: kernels must be odd");
}

namespace detail {

template <typename T>
GenResidualBlock<T>::GenResidualBlock(int64_t ch, int64_t k, int64_t pad, Rng& rng)
    : conv1(ch, ch, k, pad, rng),
      conv2(ch, ch, k, pad, rng),
      bn1(ch),
      bn2(ch),
      act(ch) {}

template <typename T>
Var<T> GenResidualBlock<T>::forward(const Var<T>& x, nn::Mode mode) {
    Var<T> h = act.forward(bn1.forward(conv1.forward(x), mode));
    h = bn2.forward(conv2.forward(h), mode);
    return ad::add(x, h);
}

template <typename T>
void GenResidualBlock<T>::collect(const std::string& prefix, nn::TensorRegistry<T>& reg) {
    conv1.collect(prefix + ".conv1", reg);
    bn1.collect(prefix + ".bn1", reg);
    act.collect(prefix + ".act", reg);
    conv2.collect(prefix + ".conv2", reg);
    bn2.collect(prefix + ".bn2", reg);
}

template struct GenResidualBlock<float>;
template struct GenResidualBlock<double>;

}  // namespace detail

template <typename T>
Generator<T>::Generator(const GeneratorConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int64_t ik = cfg_.inner_kernel, ip = cfg_.inner_padding;

    c0_ = nn::Conv2d<T>(3, cfg_.ch0, cfg_.outer_kernel, cfg_.outer_padding, rng);
    c0_act_ = nn::PReLU<T>(cfg_.ch0);
    for (int64_t i = 0; i < cfg_.n_g; ++i) r0_.emplace_back(cfg_.ch0, ik, ip, rng);
    i0_ = nn::Conv2d<T>(cfg_.ch0, cfg_.ch0, ik, ip, rng);
    i0_bn_ = nn::BatchNorm2d<T>(cfg_.ch0);
    i0_act_ = nn::PReLU<T>(cfg_.ch0);
    u0_ = nn::Conv2d<T>(cfg_.ch0, cfg_.ch0, ik, ip, rng);
    u0_act_ = nn::PReLU<T>(cfg_.ch0);

    c1_ = nn::Conv2d<T>(cfg_.ch0, cfg_.ch1, cfg_.outer_kernel, cfg_.outer_padding, rng);
    c1_act_ = nn::PReLU<T>(cfg_.ch1);
    skip_ = nn::Conv2d<T>(cfg_.ch0, cfg_.ch1, ik, ip, rng);
    skip_act_ = nn::PReLU<T>(cfg_.ch1);
    for (int64_t i = 0; i < cfg_.n_g; ++i) r1_.emplace_back(cfg_.ch1, ik, ip, rng);
    i1_ = nn::Conv2d<T>(cfg_.ch1, cfg_.ch1, ik, ip, rng);
    i1_bn_ = nn::BatchNorm2d<T>(cfg_.ch1);
    i1_act_ = nn::PReLU<T>(cfg_.ch1);
    u1_ = nn::Conv2d<T>(cfg_.ch1, cfg_.ch1, ik, ip, rng);
    u1_act_ = nn::PReLU<T>(cfg_.ch1);

    head1_ = nn::Conv2d<T>(cfg_.ch1, cfg_.ch0, ik, ip, rng);
    head2_ = nn::Conv2d<T>(cfg_.ch0, 3, ik, ip, rng);

    // zero logits give an unbiased equal-weight start for both mixers
    f0_logits_ = Var<T>::parameter(Tensor<T>::zeros({2}));
    f1_logits_ = Var<T>::parameter(Tensor<T>::zeros({3}));
}

template <typename T>
Var<T> Generator<T>::forward(const Var<T>& lr, nn::Mode mode) {
    const auto& s = lr.shape();
    if (s.size() != 4 || s[1] != 3)
        throw ShapeError("generator: expected [N,3,H,W] input, got " + shape_str(s));
    if (s[2] < 16 || s[3] < 16)
        throw ShapeError("generator: spatial size must be >= 16, got " + shape_str(s));

    // left half
    Var<T> c0 = c0_act_.forward(c0_.forward(lr));
    Var<T> h = c0;
    for (auto& blk : r0_) h = blk.forward(h, mode);
    Var<T> i0 = i0_act_.forward(i0_bn_.forward(i0_.forward(h), mode));
    Var<T> f0 = nn::feature_mix<T>({c0, i0}, f0_logits_);
    Var<T> u0 = ad::upsample_nn2x(u0_act_.forward(u0_.forward(f0)));

    // right half; the skip block output feeds both the pre-stack sum and F1
    Var<T> c1 = c1_act_.forward(c1_.forward(u0));
    Var<T> s_out = ad::upsample_nn2x(skip_act_.forward(skip_.forward(c0)));
    h = ad::add(c1, s_out);
    for (auto& blk : r1_) h = blk.forward(h, mode);
    Var<T> i1 = i1_act_.forward(i1_bn_.forward(i1_.forward(h), mode));
    Var<T> f1 = nn::feature_mix<T>({i1, c1, s_out}, f1_logits_);
    Var<T> u1 = ad::upsample_nn2x(u1_act_.forward(u1_.forward(f1)));

    // output head: plain convolutions, no normalization or activation
    return head2_.forward(head1_.forward(u1));
}

template <typename T>
nn::TensorRegistry<T> Generator<T>::registry() {
    nn::TensorRegistry<T> reg;
    c0_.collect("g.c0", reg);
    c0_act_.collect("g.c0_act", reg);
    for (size_t i = 0; i < r0_.size(); ++i) r0_[i].collect("g.r0." + std::to_string(i), reg);
    i0_.collect("g.i0", reg);
    i0_bn_.collect("g.i0_bn", reg);
    i0_act_.collect("g.i0_act", reg);
    u0_.collect("g.u0", reg);
    u0_act_.collect("g.u0_act", reg);
    c1_.collect("g.c1", reg);
    c1_act_.collect("g.c1_act", reg);
    skip_.collect("g.skip", reg);
    skip_act_.collect("g.skip_act", reg);
    for (size_t i = 0; i < r1_.size(); ++i) r1_[i].collect("g.r1." + std::to_string(i), reg);
    i1_.collect("g.i1", reg);
    i1_bn_.collect("g.i1_bn", reg);
    i1_act_.collect("g.i1_act", reg);
    u1_.collect("g.u1", reg);
    u1_act_.collect("g.u1_act", reg);
    head1_.collect("g.head1", reg);
    head2_.collect("g.head2", reg);
    reg.add_param("g.f0_logits", f0_logits_);
    reg.add_param("g.f1_logits", f1_logits_);
    return reg;
}

namespace {
template <typename T>
std::vector<double> softmax_values(const ad::Var<T>& logits) {
    ad::NoGradGuard ng;
    ad::Var<T> w = ad::softmax_vec(logits);
    std::vector<double> out(static_cast<size_t>(w.numel()));
    for (int64_t i = 0; i < w.numel(); ++i) out[static_cast<size_t>(i)] = double(w.value()[i]);
    return out;
}
}  // namespace

template <typename T>
std::vector<double> Generator<T>::f0_weights() const {
    return softmax_values(f0_logits_);
}

template <typename T>
std::vector<double> Generator<T>::f1_weights() const {
    return softmax_values(f1_logits_);
}

int64_t generator_parameter_count(const GeneratorConfig& cfg) {
    Generator<float> g(cfg);
    auto reg = g.registry();
    return nn::total_param_count(reg);
}

template class Generator<float>;
template class Generator<double>;

}  // namespace surge
