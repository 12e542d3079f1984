#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "testutil.hpp"

using namespace surge;
using namespace testutil;
using V = ad::Var<double>;

namespace {
Rng fresh_rng(uint64_t salt) { return Rng(0xabcd1234 + salt); }
}  // namespace

TEST_CASE("elementwise and scalar ops match finite differences") {
    Rng rng = fresh_rng(1);
    auto x = random_tensor({2, 3}, rng, 0.2, 1.5);
    auto y = random_tensor({2, 3}, rng, 0.2, 1.5);

    auto f = [](const std::vector<V>& v) {
        V a = ad::mul(v[0], v[1]);
        V b = ad::add(ad::vlog(v[0]), ad::vsqrt(v[1]));
        V c = ad::sub(ad::square(a), ad::recip(ad::add_scalar(b, 2.0)));
        V d = ad::add(ad::vexp(ad::mul_scalar(v[0], 0.3)), ad::sigmoid(c));
        return ad::reduce_sum_all(d);
    };
    CHECK(max_grad_rel_err(f, {x, y}) < 1e-6);
}

TEST_CASE("piecewise activations match finite differences away from kinks") {
    Rng rng = fresh_rng(2);
    auto x = random_tensor({40}, rng, -2.0, 2.0);
    for (int64_t i = 0; i < x.numel(); ++i)
        if (std::fabs(x[i]) < 0.05) x[i] = 0.25;  // keep clear of the kink

    auto f = [](const std::vector<V>& v) {
        V a = ad::add(ad::pos_part(v[0]), ad::mul_scalar(ad::neg_part(v[0]), 0.5));
        V b = ad::add(a, ad::leaky_relu(v[0], 0.2));
        V c = ad::add(b, ad::clamp_min(v[0], 0.1));
        return ad::reduce_sum_all(ad::square(c));
    };
    CHECK(max_grad_rel_err(f, {x}) < 1e-6);
}

TEST_CASE("reductions and broadcasts match finite differences") {
    Rng rng = fresh_rng(3);
    auto x = random_tensor({2, 3, 4, 5}, rng);
    auto v = random_tensor({3}, rng);

    auto f = [](const std::vector<V>& in) {
        V x = in[0];
        V bc = ad::mul(x, ad::broadcast_c(in[1], 2, 4, 5));
        V a = ad::reduce_sum_all(ad::square(ad::reduce_nhw_sum(bc)));
        V b = ad::reduce_sum_all(ad::square(ad::reduce_c_sum_keep(bc)));
        V c = ad::reduce_sum_all(ad::square(ad::reduce_chw_sum(bc)));
        V d = ad::reduce_sum_all(ad::mul(bc, ad::expand_n(ad::reduce_chw_sum(x), 3, 4, 5)));
        V e = ad::mul(ad::reduce_max_all(x), ad::reduce_mean_all(bc));
        return ad::add(ad::add(a, b), ad::add(ad::add(c, d), e));
    };
    CHECK(max_grad_rel_err(f, {x, v}) < 1e-6);
}

TEST_CASE("matrix helpers match finite differences") {
    Rng rng = fresh_rng(4);
    auto m = random_tensor({3, 4}, rng);
    auto v = random_tensor({4}, rng);
    auto u = random_tensor({3}, rng);

    auto f = [](const std::vector<V>& in) {
        V a = ad::mul(in[0], ad::expand_rows(in[1], 3));
        V b = ad::mul(a, ad::expand_cols(in[2], 4));
        V r = ad::reduce_sum_all(ad::square(ad::row_sum(b)));
        V c = ad::reduce_sum_all(ad::square(ad::col_sum(b)));
        V p = ad::square(ad::pick(in[1], 2));
        return ad::add(ad::add(r, c), p);
    };
    CHECK(max_grad_rel_err(f, {m, v, u}) < 1e-6);
}

TEST_CASE("matmul all transpose combinations match finite differences") {
    Rng rng = fresh_rng(5);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            auto a = ta ? random_tensor({4, 3}, rng) : random_tensor({3, 4}, rng);
            auto b = tb ? random_tensor({5, 4}, rng) : random_tensor({4, 5}, rng);
            auto f = [ta, tb](const std::vector<V>& in) {
                return ad::reduce_sum_all(ad::square(ad::matmul(in[0], in[1], ta, tb)));
            };
            CHECK(max_grad_rel_err(f, {a, b}) < 1e-6);
        }
    }
}

TEST_CASE("matmul value") {
    auto a = Tensor<double>({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>({2, 2}, {5, 6, 7, 8});
    V r = ad::matmul(V::constant(a), V::constant(b));
    CHECK(r.value()[0] == doctest::Approx(19));
    CHECK(r.value()[1] == doctest::Approx(22));
    CHECK(r.value()[2] == doctest::Approx(43));
    CHECK(r.value()[3] == doctest::Approx(50));
}

TEST_CASE("conv2d value against direct summation") {
    Rng rng = fresh_rng(6);
    auto x = random_tensor({2, 3, 7, 6}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    const int64_t pad = 1;

    V out = ad::conv2d(V::constant(x), V::constant(w), std::optional<V>(V::constant(b)), pad);
    REQUIRE(out.shape() == Shape{2, 4, 7, 6});

    for (int64_t n = 0; n < 2; ++n)
        for (int64_t o = 0; o < 4; ++o)
            for (int64_t y = 0; y < 7; ++y)
                for (int64_t xx = 0; xx < 6; ++xx) {
                    double acc = b[o];
                    for (int64_t c = 0; c < 3; ++c)
                        for (int64_t u = 0; u < 3; ++u)
                            for (int64_t v = 0; v < 3; ++v) {
                                int64_t iy = y + u - pad, ix = xx + v - pad;
                                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                                acc += x.at4(n, c, iy, ix) * w.at4(o, c, u, v);
                            }
                    CHECK(out.value().at4(n, o, y, xx) == doctest::Approx(acc).epsilon(1e-10));
                }
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng = fresh_rng(7);
    for (auto [k, pad] : std::vector<std::pair<int64_t, int64_t>>{{3, 1}, {5, 1}, {9, 4}}) {
        auto x = random_tensor({2, 2, 12, 11}, rng);
        auto w = random_tensor({3, 2, k, k}, rng, -0.3, 0.3);
        auto b = random_tensor({3}, rng);
        auto f = [pad](const std::vector<V>& in) {
            V y = ad::conv2d(in[0], in[1], std::optional<V>(in[2]), pad);
            return ad::reduce_sum_all(ad::square(y));
        };
        CHECK(max_grad_rel_err(f, {x, w, b}, 1e-5, 10) < 1e-6);
    }
}

TEST_CASE("resampling and pooling gradients match finite differences") {
    Rng rng = fresh_rng(8);
    auto x = random_tensor({1, 2, 8, 8}, rng);

    auto f = [](const std::vector<V>& in) {
        V up = ad::upsample_nn2x(in[0]);
        V down = ad::downsample_sum2x(up);
        V pooled = ad::adaptive_avg_pool(in[0], 3);
        V crop = ad::center_crop(in[0], 5, 6);
        V pad = ad::zero_pad2d(crop, 1, 0, 2, 1);
        return ad::add(ad::reduce_sum_all(ad::square(down)),
                       ad::add(ad::reduce_sum_all(ad::square(pooled)),
                               ad::reduce_sum_all(ad::square(pad))));
    };
    CHECK(max_grad_rel_err(f, {x}) < 1e-6);
}

TEST_CASE("upsample_nn2x replicates pixels into 2x2 blocks") {
    auto x = Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4});
    V up = ad::upsample_nn2x(V::constant(x));
    std::vector<double> expect{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    REQUIRE(up.numel() == 16);
    for (int64_t i = 0; i < 16; ++i) CHECK(up.value()[i] == expect[size_t(i)]);
}

TEST_CASE("softmax composition") {
    auto logits = Tensor<double>({2}, {10.0, 0.0});
    V w = ad::softmax_vec(V::constant(logits));
    CHECK(w.value()[0] == doctest::Approx(std::exp(10.0) / (std::exp(10.0) + 1)).epsilon(1e-12));
    CHECK(w.value()[0] + w.value()[1] == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng = fresh_rng(9);
    auto l = random_tensor({5}, rng, -2, 2);
    auto f = [](const std::vector<V>& in) {
        V s = ad::softmax_vec(in[0]);
        return ad::reduce_sum_all(ad::square(s));
    };
    CHECK(max_grad_rel_err(f, {l}) < 1e-6);
}

TEST_CASE("second-order gradients through the input-gradient path") {
    // Critic-shaped composition: penalty built from the input gradient of a
    // conv+sigmoid network, differentiated with respect to the weights.
    Rng rng = fresh_rng(10);
    auto x0 = random_tensor({1, 1, 5, 5}, rng);
    auto w0 = random_tensor({1, 1, 3, 3}, rng, -0.5, 0.5);

    auto penalty = [&](const V& x, const V& w) {
        V score = ad::reduce_sum_all(ad::sigmoid(ad::conv2d(x, w, 1)));
        V gx = ad::grad(score, {x}, /*create_graph=*/true)[0];
        return ad::reduce_sum_all(ad::square(gx));
    };

    V x = V::parameter(x0);
    V w = V::parameter(w0);
    V p = penalty(x, w);
    V dw = ad::grad(p, {w})[0];

    const double h = 1e-5;
    surge::Rng pick(99);
    for (int s = 0; s < 6; ++s) {
        int64_t i = pick.uniform_int(w0.numel());
        auto eval = [&](double d) {
            Tensor<double> wt = w0;
            wt[i] += d;
            V xv = V::parameter(x0);  // differentiable leaf for inner grad
            V wv = V::constant(wt);
            return penalty(xv, wv).value()[0];
        };
        double fd = (eval(h) - eval(-h)) / (2 * h);
        CHECK(rel_err(dw.value()[i], fd) < 1e-5);
    }
}

TEST_CASE("grad returns zeros for unreachable inputs") {
    V a = V::parameter(Tensor<double>::scalar(2.0));
    V b = V::parameter(Tensor<double>::scalar(3.0));
    V out = ad::square(a);
    auto gs = ad::grad(out, {a, b});
    CHECK(gs[0].value()[0] == doctest::Approx(4.0));
    CHECK(gs[1].value()[0] == 0.0);
}

TEST_CASE("no-grad mode detaches results") {
    V a = V::parameter(Tensor<double>::scalar(2.0));
    ad::NoGradGuard ng;
    V out = ad::square(a);
    CHECK_FALSE(out.requires_grad());
}

TEST_CASE("shape mismatches raise shape errors") {
    V a = V::constant(Tensor<double>::zeros({2, 3}));
    V b = V::constant(Tensor<double>::zeros({3, 2}));
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
    CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
}
