#include "surge/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "surge/blas.hpp"

namespace surge::ad {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<uint64_t> g_next_id{1};

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    bool rg = false;
    if (g_grad_enabled)
        for (const auto& i : inputs)
            if (i.defined() && i.requires_grad()) {
                rg = true;
                break;
            }
    if (rg) {
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
        n->requires_grad = true;
    }
    return Var<T>(std::move(n));
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void check_rank4(const Var<T>& a, const char* op) {
    if (a.value().rank() != 4)
        throw ShapeError(std::string(op) + ": expected rank-4 tensor, got " +
                         shape_str(a.shape()));
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& a, F f) {
    Tensor<T> out = a;
    T* p = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) p[i] = f(p[i]);
    return out;
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

// Elementwise mask of the input, used by the piecewise-linear activations.
template <typename T, typename F>
Var<T> mask_of(const Var<T>& a, F pred) {
    Tensor<T> m = a.value();
    T* p = m.data();
    for (int64_t i = 0; i < m.numel(); ++i) p[i] = pred(p[i]);
    return Var<T>::constant(std::move(m));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
Var<T> Var<T>::constant(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return Var<T>(std::move(n));
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> v) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    n->requires_grad = true;
    return Var<T>(std::move(n));
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
    if (!n_) throw Error("use of undefined Var");
    return n_->value;
}

template <typename T>
Tensor<T>& Var<T>::mutable_value() {
    if (!n_) throw Error("use of undefined Var");
    return n_->value;
}

template <typename T>
bool Var<T>::requires_grad() const {
    return n_ && n_->requires_grad;
}

template <typename T>
Var<T> detach(const Var<T>& v) {
    return Var<T>::constant(v.value());
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
    return make_op<T>(std::move(out), {a, b}, [](const Var<T>& g) {
        return std::vector<Var<T>>{g, g};
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
    return make_op<T>(std::move(out), {a, b}, [](const Var<T>& g) {
        return std::vector<Var<T>>{g, mul_scalar(g, -1.0)};
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out = a.value();
    const T* pb = b.value().data();
    T* po = out.data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, b), mul(g, a)};
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, double s) {
    Tensor<T> out = map_unary(a.value(), [s](T v) { return v + T(s); });
    return make_op<T>(std::move(out), {a}, [](const Var<T>& g) {
        return std::vector<Var<T>>{g};
    });
}

template <typename T>
Var<T> mul_scalar(const Var<T>& a, double s) {
    Tensor<T> out = map_unary(a.value(), [s](T v) { return v * T(s); });
    return make_op<T>(std::move(out), {a}, [s](const Var<T>& g) {
        return std::vector<Var<T>>{mul_scalar(g, s)};
    });
}

template <typename T>
Var<T> vlog(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return std::log(v); });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, recip(a))};
    });
}

template <typename T>
Var<T> vexp(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return std::exp(v); });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, vexp(a))};
    });
}

template <typename T>
Var<T> vsqrt(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return std::sqrt(v); });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, mul_scalar(recip(vsqrt(a)), 0.5))};
    });
}

template <typename T>
Var<T> square(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return v * v; });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, mul_scalar(a, 2.0))};
    });
}

template <typename T>
Var<T> recip(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return T(1) / v; });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        return std::vector<Var<T>>{mul_scalar(mul(g, recip(square(a))), -1.0)};
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return stable_sigmoid(v); });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        Var<T> s = sigmoid(a);
        return std::vector<Var<T>>{mul(g, mul(s, add_scalar(mul_scalar(s, -1.0), 1.0)))};
    });
}

template <typename T>
Var<T> clamp_min(const Var<T>& a, double lo) {
    Tensor<T> out = map_unary(a.value(), [lo](T v) { return v > T(lo) ? v : T(lo); });
    return make_op<T>(std::move(out), {a}, [a, lo](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, mask_of(a, [lo](T v) { return v > T(lo) ? T(1) : T(0); }))};
    });
}

template <typename T>
Var<T> pos_part(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return v > T(0) ? v : T(0); });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, mask_of(a, [](T v) { return v > T(0) ? T(1) : T(0); }))};
    });
}

template <typename T>
Var<T> neg_part(const Var<T>& a) {
    Tensor<T> out = map_unary(a.value(), [](T v) { return v < T(0) ? v : T(0); });
    return make_op<T>(std::move(out), {a}, [a](const Var<T>& g) {
        return std::vector<Var<T>>{mul(g, mask_of(a, [](T v) { return v < T(0) ? T(1) : T(0); }))};
    });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, double slope) {
    Tensor<T> out = map_unary(a.value(), [slope](T v) { return v > T(0) ? v : T(slope) * v; });
    return make_op<T>(std::move(out), {a}, [a, slope](const Var<T>& g) {
        return std::vector<Var<T>>{
            mul(g, mask_of(a, [slope](T v) { return v > T(0) ? T(1) : T(slope); }))};
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
    Shape old = a.shape();
    Tensor<T> out = a.value().reshaped(std::move(s));
    return make_op<T>(std::move(out), {a}, [old](const Var<T>& g) {
        return std::vector<Var<T>>{reshape(g, old)};
    });
}

// ---- reductions and broadcasts --------------------------------------------

template <typename T>
Var<T> reduce_sum_all(const Var<T>& a) {
    double acc = 0;
    const T* p = a.value().data();
    for (int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(p[i]);
    Shape s = a.shape();
    return make_op<T>(Tensor<T>::scalar(T(acc)), {a}, [s](const Var<T>& g) {
        return std::vector<Var<T>>{expand_to(g, s)};
    });
}

template <typename T>
Var<T> reduce_max_all(const Var<T>& a) {
    const T* p = a.value().data();
    int64_t arg = 0;
    for (int64_t i = 1; i < a.numel(); ++i)
        if (p[i] > p[arg]) arg = i;
    Shape s = a.shape();
    int64_t n = a.numel();
    return make_op<T>(Tensor<T>::scalar(p[arg]), {a}, [s, n, arg](const Var<T>& g) {
        Tensor<T> onehot = Tensor<T>::zeros(s);
        onehot[arg] = T(1);
        return std::vector<Var<T>>{mul(expand_to(g, s), Var<T>::constant(std::move(onehot)))};
    });
}

template <typename T>
Var<T> expand_to(const Var<T>& a, Shape s) {
    if (a.numel() != 1) throw ShapeError("expand_to: source must be scalar");
    Tensor<T> out = Tensor<T>::full(std::move(s), a.value()[0]);
    return make_op<T>(std::move(out), {a}, [](const Var<T>& g) {
        return std::vector<Var<T>>{reduce_sum_all(g)};
    });
}

template <typename T>
Var<T> reduce_nhw_sum(const Var<T>& a) {
    check_rank4(a, "reduce_nhw_sum");
    int64_t n = a.value().size(0), c = a.value().size(1), hw = a.value().size(2) * a.value().size(3);
    Tensor<T> out({c});
    const T* p = a.value().data();
    for (int64_t ci = 0; ci < c; ++ci) {
        double acc = 0;
        for (int64_t ni = 0; ni < n; ++ni) {
            const T* row = p + (ni * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) acc += static_cast<double>(row[i]);
        }
        out[ci] = T(acc);
    }
    int64_t h = a.value().size(2), w = a.value().size(3);
    return make_op<T>(std::move(out), {a}, [n, h, w](const Var<T>& g) {
        return std::vector<Var<T>>{broadcast_c(g, n, h, w)};
    });
}

template <typename T>
Var<T> broadcast_c(const Var<T>& v, int64_t n, int64_t h, int64_t w) {
    if (v.value().rank() != 1) throw ShapeError("broadcast_c: expected rank-1");
    int64_t c = v.numel();
    Tensor<T> out({n, c, h, w});
    T* po = out.data();
    const T* pv = v.value().data();
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci) {
            T val = pv[ci];
            T* row = po + (ni * c + ci) * h * w;
            for (int64_t i = 0; i < h * w; ++i) row[i] = val;
        }
    return make_op<T>(std::move(out), {v}, [](const Var<T>& g) {
        return std::vector<Var<T>>{reduce_nhw_sum(g)};
    });
}

template <typename T>
Var<T> reduce_c_sum_keep(const Var<T>& a) {
    check_rank4(a, "reduce_c_sum_keep");
    int64_t n = a.value().size(0), c = a.value().size(1), h = a.value().size(2),
            w = a.value().size(3);
    Tensor<T> out({n, 1, h, w});
    const T* p = a.value().data();
    T* po = out.data();
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t i = 0; i < h * w; ++i) {
            double acc = 0;
            for (int64_t ci = 0; ci < c; ++ci)
                acc += static_cast<double>(p[(ni * c + ci) * h * w + i]);
            po[ni * h * w + i] = T(acc);
        }
    return make_op<T>(std::move(out), {a}, [c](const Var<T>& g) {
        return std::vector<Var<T>>{broadcast_c_keep(g, c)};
    });
}

template <typename T>
Var<T> broadcast_c_keep(const Var<T>& a, int64_t c) {
    check_rank4(a, "broadcast_c_keep");
    if (a.value().size(1) != 1) throw ShapeError("broadcast_c_keep: channel dim must be 1");
    int64_t n = a.value().size(0), h = a.value().size(2), w = a.value().size(3);
    Tensor<T> out({n, c, h, w});
    const T* p = a.value().data();
    T* po = out.data();
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ci = 0; ci < c; ++ci)
            std::memcpy(po + (ni * c + ci) * h * w, p + ni * h * w, sizeof(T) * size_t(h * w));
    return make_op<T>(std::move(out), {a}, [](const Var<T>& g) {
        return std::vector<Var<T>>{reduce_c_sum_keep(g)};
    });
}

template <typename T>
Var<T> reduce_chw_sum(const Var<T>& a) {
    check_rank4(a, "reduce_chw_sum");
    int64_t n = a.value().size(0);
    int64_t chw = a.numel() / n;
    Tensor<T> out({n});
    const T* p = a.value().data();
    for (int64_t ni = 0; ni < n; ++ni) {
        double acc = 0;
        for (int64_t i = 0; i < chw; ++i) acc += static_cast<double>(p[ni * chw + i]);
        out[ni] = T(acc);
    }
    int64_t c = a.value().size(1), h = a.value().size(2), w = a.value().size(3);
    return make_op<T>(std::move(out), {a}, [c, h, w](const Var<T>& g) {
        return std::vector<Var<T>>{expand_n(g, c, h, w)};
    });
}

template <typename T>
Var<T> expand_n(const Var<T>& v, int64_t c, int64_t h, int64_t w) {
    if (v.value().rank() != 1) throw ShapeError("expand_n: expected rank-1");
    int64_t n = v.numel();
    Tensor<T> out({n, c, h, w});
    T* po = out.data();
    const T* pv = v.value().data();
    int64_t chw = c * h * w;
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t i = 0; i < chw; ++i) po[ni * chw + i] = pv[ni];
    return make_op<T>(std::move(out), {v}, [](const Var<T>& g) {
        return std::vector<Var<T>>{reduce_chw_sum(g)};
    });
}

template <typename T>
Var<T> row_sum(const Var<T>& m) {
    if (m.value().rank() != 2) throw ShapeError("row_sum: expected rank-2");
    int64_t r = m.value().size(0), c = m.value().size(1);
    Tensor<T> out({r});
    for (int64_t i = 0; i < r; ++i) {
        double acc = 0;
        for (int64_t j = 0; j < c; ++j) acc += static_cast<double>(m.value().at2(i, j));
        out[i] = T(acc);
    }
    return make_op<T>(std::move(out), {m}, [c](const Var<T>& g) {
        return std::vector<Var<T>>{expand_cols(g, c)};
    });
}

template <typename T>
Var<T> col_sum(const Var<T>& m) {
    if (m.value().rank() != 2) throw ShapeError("col_sum: expected rank-2");
    int64_t r = m.value().size(0), c = m.value().size(1);
    Tensor<T> out({c});
    for (int64_t j = 0; j < c; ++j) {
        double acc = 0;
        for (int64_t i = 0; i < r; ++i) acc += static_cast<double>(m.value().at2(i, j));
        out[j] = T(acc);
    }
    return make_op<T>(std::move(out), {m}, [r](const Var<T>& g) {
        return std::vector<Var<T>>{expand_rows(g, r)};
    });
}

template <typename T>
Var<T> expand_rows(const Var<T>& v, int64_t r) {
    if (v.value().rank() != 1) throw ShapeError("expand_rows: expected rank-1");
    int64_t c = v.numel();
    Tensor<T> out({r, c});
    for (int64_t i = 0; i < r; ++i)
        std::memcpy(out.data() + i * c, v.value().data(), sizeof(T) * size_t(c));
    return make_op<T>(std::move(out), {v}, [](const Var<T>& g) {
        return std::vector<Var<T>>{col_sum(g)};
    });
}

template <typename T>
Var<T> expand_cols(const Var<T>& v, int64_t c) {
    if (v.value().rank() != 1) throw ShapeError("expand_cols: expected rank-1");
    int64_t r = v.numel();
    Tensor<T> out({r, c});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.at2(i, j) = v.value()[i];
    return make_op<T>(std::move(out), {v}, [](const Var<T>& g) {
        return std::vector<Var<T>>{row_sum(g)};
    });
}

template <typename T>
Var<T> pick(const Var<T>& v, int64_t idx) {
    if (idx < 0 || idx >= v.numel()) throw ShapeError("pick: index out of range");
    Shape s = v.shape();
    return make_op<T>(Tensor<T>::scalar(v.value()[idx]), {v}, [s, idx](const Var<T>& g) {
        Tensor<T> onehot = Tensor<T>::zeros(s);
        onehot[idx] = T(1);
        return std::vector<Var<T>>{mul(expand_to(g, s), Var<T>::constant(std::move(onehot)))};
    });
}

// ---- matmul ---------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
    if (a.value().rank() != 2 || b.value().rank() != 2) throw ShapeError("matmul: rank-2 only");
    int64_t m = trans_a ? a.value().size(1) : a.value().size(0);
    int64_t ka = trans_a ? a.value().size(0) : a.value().size(1);
    int64_t kb = trans_b ? b.value().size(1) : b.value().size(0);
    int64_t n = trans_b ? b.value().size(0) : b.value().size(1);
    if (ka != kb)
        throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Tensor<T> out({m, n});
    gemm<T>(trans_a, trans_b, m, n, ka, T(1), a.value().data(), a.value().size(1),
            b.value().data(), b.value().size(1), T(0), out.data(), n);
    return make_op<T>(std::move(out), {a, b}, [a, b, trans_a, trans_b](const Var<T>& g) {
        Var<T> da = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
        Var<T> db = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
        return std::vector<Var<T>>{da, db};
    });
}

// ---- convolution ----------------------------------------------------------

namespace {

// im2col over a band of output rows; cols is [C*k*k, band*OW] row-major.
template <typename T>
void im2col_band(const Tensor<T>& x, int64_t n, int64_t k, int64_t pad, int64_t ow, int64_t r0,
                 int64_t r1, std::vector<T>& cols) {
    const int64_t c = x.size(1), h = x.size(2), w = x.size(3);
    const int64_t band = r1 - r0;
    const T* px = x.data();
    int64_t row = 0;
    for (int64_t ci = 0; ci < c; ++ci) {
        const T* xc = px + (n * c + ci) * h * w;
        for (int64_t u = 0; u < k; ++u) {
            for (int64_t v = 0; v < k; ++v, ++row) {
                T* dst = cols.data() + row * band * ow;
                for (int64_t y = r0; y < r1; ++y) {
                    int64_t iy = y + u - pad;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, T(0));
                        dst += ow;
                        continue;
                    }
                    const T* src = xc + iy * w;
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        int64_t ix = ox + v - pad;
                        *dst++ = (ix >= 0 && ix < w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

constexpr int64_t kConvBandBytes = 48LL << 20;

template <typename T>
int64_t conv_band_rows(int64_t ckk, int64_t ow, int64_t oh) {
    int64_t rows = kConvBandBytes / int64_t(sizeof(T)) / std::max<int64_t>(1, ckk * ow);
    return std::clamp<int64_t>(rows, 1, oh);
}

// Plain correlation with zero padding; the value kernel shared by the three
// differentiable conv primitives.
template <typename T>
Tensor<T> conv2d_raw(const Tensor<T>& x, const Tensor<T>& w, const T* bias, int64_t pad) {
    const int64_t n = x.size(0), c = x.size(1), h = x.size(2), wd = x.size(3);
    const int64_t o = w.size(0), k = w.size(2);
    if (w.size(1) != c)
        throw ShapeError("conv2d: weight in-channels " + std::to_string(w.size(1)) +
                         " != input channels " + std::to_string(c));
    if (w.size(2) != w.size(3)) throw ShapeError("conv2d: non-square kernel");
    const int64_t oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
    if (oh < 1 || ow < 1)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " too large for input " +
                         shape_str(x.shape()));
    const int64_t ckk = c * k * k;
    Tensor<T> out({n, o, oh, ow});
    const int64_t band_rows = conv_band_rows<T>(ckk, ow, oh);
    std::vector<T> cols(size_t(ckk * band_rows * ow));
    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t r0 = 0; r0 < oh; r0 += band_rows) {
            const int64_t r1 = std::min(oh, r0 + band_rows);
            const int64_t cols_n = (r1 - r0) * ow;
            im2col_band(x, ni, k, pad, ow, r0, r1, cols);
            // out_band[o, cols_n] = w_flat[o, ckk] * cols[ckk, cols_n]
            gemm<T>(false, false, o, cols_n, ckk, T(1), w.data(), ckk, cols.data(), cols_n, T(0),
                    out.data() + (ni * o * oh + r0) * ow, oh * ow);
        }
    }
    if (bias) {
        T* po = out.data();
        for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t oi = 0; oi < o; ++oi) {
                T bval = bias[oi];
                T* row = po + (ni * o + oi) * oh * ow;
                for (int64_t i = 0; i < oh * ow; ++i) row[i] += bval;
            }
    }
    return out;
}

// dW as GEMM over the same column bands.
template <typename T>
Tensor<T> conv2d_weight_grad_raw(const Tensor<T>& x, const Tensor<T>& g, int64_t pad, int64_t k) {
    const int64_t n = x.size(0), c = x.size(1);
    const int64_t o = g.size(1), oh = g.size(2), ow = g.size(3);
    const int64_t ckk = c * k * k;
    Tensor<T> dw({o, c, k, k});
    const int64_t band_rows = conv_band_rows<T>(ckk, ow, oh);
    std::vector<T> cols(size_t(ckk * band_rows * ow));
    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t r0 = 0; r0 < oh; r0 += band_rows) {
            const int64_t r1 = std::min(oh, r0 + band_rows);
            const int64_t cols_n = (r1 - r0) * ow;
            im2col_band(x, ni, k, pad, ow, r0, r1, cols);
            // dw[o, ckk] += g_band[o, cols_n] * cols[ckk, cols_n]^T
            gemm<T>(false, true, o, ckk, cols_n, T(1), g.data() + (ni * o * oh + r0) * ow, oh * ow,
                    cols.data(), cols_n, T(1), dw.data(), ckk);
        }
    }
    return dw;
}

// Kernel spatially flipped with in/out channel roles swapped, for the
// transposed-convolution view of the input gradient.
template <typename T>
Tensor<T> flip_swap_kernel(const Tensor<T>& w) {
    const int64_t o = w.size(0), c = w.size(1), k = w.size(2);
    Tensor<T> wt({c, o, k, k});
    for (int64_t oi = 0; oi < o; ++oi)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t u = 0; u < k; ++u)
                for (int64_t v = 0; v < k; ++v)
                    wt.at4(ci, oi, u, v) = w.at4(oi, ci, k - 1 - u, k - 1 - v);
    return wt;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias, int64_t pad) {
    check_rank4(x, "conv2d");
    const int64_t k = w.value().size(2);
    Tensor<T> out = conv2d_raw(x.value(), w.value(), bias ? bias->value().data() : nullptr, pad);
    std::vector<Var<T>> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    bool has_bias = bias.has_value();
    return make_op<T>(std::move(out), std::move(inputs),
                      [x, w, pad, k, has_bias](const Var<T>& g) {
                          std::vector<Var<T>> grads{conv2d_input_grad(g, w, pad),
                                                    conv2d_weight_grad(x, g, pad, k)};
                          if (has_bias) grads.push_back(reduce_nhw_sum(g));
                          return grads;
                      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int64_t pad) {
    return conv2d<T>(x, w, std::nullopt, pad);
}

template <typename T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w, int64_t pad) {
    check_rank4(g, "conv2d_input_grad");
    const int64_t k = w.value().size(2);
    Tensor<T> wt = flip_swap_kernel(w.value());
    Tensor<T> out = conv2d_raw(g.value(), wt, static_cast<const T*>(nullptr), k - 1 - pad);
    return make_op<T>(std::move(out), {g, w}, [g, w, pad, k](const Var<T>& gg) {
        return std::vector<Var<T>>{conv2d<T>(gg, w, std::nullopt, pad),
                                   conv2d_weight_grad(gg, g, pad, k)};
    });
}

template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, int64_t pad, int64_t k) {
    check_rank4(x, "conv2d_weight_grad");
    Tensor<T> out = conv2d_weight_grad_raw(x.value(), g.value(), pad, k);
    return make_op<T>(std::move(out), {x, g}, [x, g, pad](const Var<T>& gg) {
        return std::vector<Var<T>>{conv2d_input_grad(g, gg, pad),
                                   conv2d<T>(x, gg, std::nullopt, pad)};
    });
}

// ---- resampling -----------------------------------------------------------

template <typename T>
Var<T> upsample_nn2x(const Var<T>& x) {
    check_rank4(x, "upsample_nn2x");
    const int64_t n = x.value().size(0), c = x.value().size(1), h = x.value().size(2),
                  w = x.value().size(3);
    Tensor<T> out({n, c, 2 * h, 2 * w});
    const T* p = x.value().data();
    T* po = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* src = p + nc * h * w;
        T* dst = po + nc * 4 * h * w;
        for (int64_t y = 0; y < h; ++y) {
            T* row0 = dst + (2 * y) * 2 * w;
            for (int64_t xx = 0; xx < w; ++xx) {
                row0[2 * xx] = src[y * w + xx];
                row0[2 * xx + 1] = src[y * w + xx];
            }
            std::memcpy(row0 + 2 * w, row0, sizeof(T) * size_t(2 * w));
        }
    }
    return make_op<T>(std::move(out), {x}, [](const Var<T>& g) {
        return std::vector<Var<T>>{downsample_sum2x(g)};
    });
}

template <typename T>
Var<T> downsample_sum2x(const Var<T>& x) {
    check_rank4(x, "downsample_sum2x");
    const int64_t n = x.value().size(0), c = x.value().size(1), h = x.value().size(2),
                  w = x.value().size(3);
    if (h % 2 || w % 2) throw ShapeError("downsample_sum2x: odd spatial size");
    Tensor<T> out({n, c, h / 2, w / 2});
    const T* p = x.value().data();
    T* po = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* src = p + nc * h * w;
        T* dst = po + nc * (h / 2) * (w / 2);
        for (int64_t y = 0; y < h / 2; ++y)
            for (int64_t xx = 0; xx < w / 2; ++xx)
                dst[y * (w / 2) + xx] = src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1] +
                                        src[(2 * y + 1) * w + 2 * xx] +
                                        src[(2 * y + 1) * w + 2 * xx + 1];
    }
    return make_op<T>(std::move(out), {x}, [](const Var<T>& g) {
        return std::vector<Var<T>>{upsample_nn2x(g)};
    });
}

namespace {
inline int64_t pool_start(int64_t i, int64_t in, int64_t out) { return (i * in) / out; }
inline int64_t pool_end(int64_t i, int64_t in, int64_t out) {
    return ((i + 1) * in + out - 1) / out;
}
}  // namespace

template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, int64_t out_size) {
    check_rank4(x, "adaptive_avg_pool");
    const int64_t n = x.value().size(0), c = x.value().size(1), h = x.value().size(2),
                  w = x.value().size(3);
    if (h < out_size || w < out_size)
        throw ShapeError("adaptive_avg_pool: input " + shape_str(x.shape()) +
                         " smaller than output " + std::to_string(out_size));
    Tensor<T> out({n, c, out_size, out_size});
    const T* p = x.value().data();
    T* po = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* src = p + nc * h * w;
        for (int64_t i = 0; i < out_size; ++i) {
            int64_t y0 = pool_start(i, h, out_size), y1 = pool_end(i, h, out_size);
            for (int64_t j = 0; j < out_size; ++j) {
                int64_t x0 = pool_start(j, w, out_size), x1 = pool_end(j, w, out_size);
                double acc = 0;
                for (int64_t y = y0; y < y1; ++y)
                    for (int64_t xx = x0; xx < x1; ++xx) acc += static_cast<double>(src[y * w + xx]);
                po[nc * out_size * out_size + i * out_size + j] =
                    T(acc / double((y1 - y0) * (x1 - x0)));
            }
        }
    }
    return make_op<T>(std::move(out), {x}, [h, w](const Var<T>& g) {
        return std::vector<Var<T>>{adaptive_avg_pool_grad(g, h, w)};
    });
}

template <typename T>
Var<T> adaptive_avg_pool_grad(const Var<T>& g, int64_t in_h, int64_t in_w) {
    check_rank4(g, "adaptive_avg_pool_grad");
    const int64_t n = g.value().size(0), c = g.value().size(1), s = g.value().size(2);
    Tensor<T> out({n, c, in_h, in_w});
    const T* p = g.value().data();
    T* po = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc) {
        T* dst = po + nc * in_h * in_w;
        for (int64_t i = 0; i < s; ++i) {
            int64_t y0 = pool_start(i, in_h, s), y1 = pool_end(i, in_h, s);
            for (int64_t j = 0; j < s; ++j) {
                int64_t x0 = pool_start(j, in_w, s), x1 = pool_end(j, in_w, s);
                T v = p[nc * s * s + i * s + j] / T((y1 - y0) * (x1 - x0));
                for (int64_t y = y0; y < y1; ++y)
                    for (int64_t xx = x0; xx < x1; ++xx) dst[y * in_w + xx] += v;
            }
        }
    }
    int64_t out_size = s;
    return make_op<T>(std::move(out), {g}, [out_size](const Var<T>& gg) {
        return std::vector<Var<T>>{adaptive_avg_pool(gg, out_size)};
    });
}

template <typename T>
Var<T> slice2d(const Var<T>& x, int64_t top, int64_t left, int64_t th, int64_t tw) {
    check_rank4(x, "slice2d");
    const int64_t n = x.value().size(0), c = x.value().size(1), h = x.value().size(2),
                  w = x.value().size(3);
    if (top < 0 || left < 0 || top + th > h || left + tw > w)
        throw ShapeError("slice2d: window out of bounds");
    Tensor<T> out({n, c, th, tw});
    const T* p = x.value().data();
    T* po = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t y = 0; y < th; ++y)
            std::memcpy(po + (nc * th + y) * tw, p + (nc * h + top + y) * w + left,
                        sizeof(T) * size_t(tw));
    int64_t bottom = h - top - th, right = w - left - tw;
    return make_op<T>(std::move(out), {x}, [top, bottom, left, right](const Var<T>& g) {
        return std::vector<Var<T>>{zero_pad2d(g, top, bottom, left, right)};
    });
}

template <typename T>
Var<T> zero_pad2d(const Var<T>& x, int64_t top, int64_t bottom, int64_t left, int64_t right) {
    check_rank4(x, "zero_pad2d");
    const int64_t n = x.value().size(0), c = x.value().size(1), h = x.value().size(2),
                  w = x.value().size(3);
    const int64_t oh = h + top + bottom, ow = w + left + right;
    Tensor<T> out({n, c, oh, ow});
    const T* p = x.value().data();
    T* po = out.data();
    for (int64_t nc = 0; nc < n * c; ++nc)
        for (int64_t y = 0; y < h; ++y)
            std::memcpy(po + (nc * oh + top + y) * ow + left, p + (nc * h + y) * w,
                        sizeof(T) * size_t(w));
    return make_op<T>(std::move(out), {x}, [top, left, h, w](const Var<T>& g) {
        return std::vector<Var<T>>{slice2d(g, top, left, h, w)};
    });
}

template <typename T>
Var<T> center_crop(const Var<T>& x, int64_t th, int64_t tw) {
    const int64_t h = x.value().size(2), w = x.value().size(3);
    return slice2d(x, (h - th) / 2, (w - tw) / 2, th, tw);
}

// ---- compositions ----------------------------------------------------------

template <typename T>
Var<T> reduce_mean_all(const Var<T>& a) {
    return mul_scalar(reduce_sum_all(a), 1.0 / double(a.numel()));
}

template <typename T>
Var<T> softmax_vec(const Var<T>& logits) {
    if (logits.value().rank() != 1) throw ShapeError("softmax_vec: expected rank-1");
    // max-shift for stability; the shift is a constant and does not alter
    // the softmax value or its gradient
    Var<T> shift = detach(reduce_max_all(logits));
    Var<T> e = vexp(sub(logits, expand_to(shift, logits.shape())));
    Var<T> denom = reduce_sum_all(e);
    return mul(e, expand_to(recip(denom), logits.shape()));
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    Var<T> y = matmul(x, w, false, true);
    return add(y, expand_rows(b, x.value().size(0)));
}

// ---- gradient engine -------------------------------------------------------

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt, bool create_graph) {
    if (!output.defined() || output.numel() != 1)
        throw ShapeError("grad: output must be a defined scalar");
    std::vector<Node<T>*> order;
    {
        std::unordered_set<Node<T>*> seen;
        std::vector<Node<T>*> stack{output.node()};
        while (!stack.empty()) {
            Node<T>* n = stack.back();
            stack.pop_back();
            if (!n || !n->requires_grad || seen.count(n)) continue;
            seen.insert(n);
            order.push_back(n);
            for (const auto& in : n->inputs) stack.push_back(in.node());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });

    std::unordered_map<Node<T>*, Var<T>> acc;
    const bool prev = grad_enabled();
    set_grad_enabled(create_graph);
    try {
        acc.emplace(output.node(), Var<T>::constant(Tensor<T>::full(output.shape(), T(1))));
        for (Node<T>* n : order) {
            auto it = acc.find(n);
            if (it == acc.end() || !n->backward) continue;
            std::vector<Var<T>> in_grads = n->backward(it->second);
            if (in_grads.size() != n->inputs.size())
                throw Error("grad: backward arity mismatch");
            for (size_t i = 0; i < n->inputs.size(); ++i) {
                Node<T>* in = n->inputs[i].node();
                if (!in || !in->requires_grad || !in_grads[i].defined()) continue;
                auto jt = acc.find(in);
                if (jt == acc.end())
                    acc.emplace(in, in_grads[i]);
                else
                    jt->second = add(jt->second, in_grads[i]);
            }
        }
    } catch (...) {
        set_grad_enabled(prev);
        throw;
    }
    set_grad_enabled(prev);

    std::vector<Var<T>> result;
    result.reserve(wrt.size());
    for (const auto& v : wrt) {
        auto it = acc.find(v.node());
        if (it != acc.end())
            result.push_back(it->second);
        else
            result.push_back(Var<T>::constant(Tensor<T>::zeros(v.shape())));
    }
    return result;
}

// ---- explicit instantiation -------------------------------------------------

#define SURGE_INSTANTIATE_AD(T)                                                                  \
    template class Var<T>;                                                                       \
    template Var<T> detach(const Var<T>&);                                                       \
    template std::vector<Var<T>> grad(const Var<T>&, const std::vector<Var<T>>&, bool);          \
    template Var<T> add(const Var<T>&, const Var<T>&);                                           \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                           \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                           \
    template Var<T> add_scalar(const Var<T>&, double);                                           \
    template Var<T> mul_scalar(const Var<T>&, double);                                           \
    template Var<T> vlog(const Var<T>&);                                                         \
    template Var<T> vexp(const Var<T>&);                                                         \
    template Var<T> vsqrt(const Var<T>&);                                                        \
    template Var<T> square(const Var<T>&);                                                       \
    template Var<T> recip(const Var<T>&);                                                        \
    template Var<T> sigmoid(const Var<T>&);                                                      \
    template Var<T> clamp_min(const Var<T>&, double);                                            \
    template Var<T> pos_part(const Var<T>&);                                                     \
    template Var<T> neg_part(const Var<T>&);                                                     \
    template Var<T> leaky_relu(const Var<T>&, double);                                           \
    template Var<T> reshape(const Var<T>&, Shape);                                               \
    template Var<T> reduce_sum_all(const Var<T>&);                                               \
    template Var<T> reduce_max_all(const Var<T>&);                                               \
    template Var<T> expand_to(const Var<T>&, Shape);                                             \
    template Var<T> reduce_nhw_sum(const Var<T>&);                                               \
    template Var<T> broadcast_c(const Var<T>&, int64_t, int64_t, int64_t);                       \
    template Var<T> reduce_c_sum_keep(const Var<T>&);                                            \
    template Var<T> broadcast_c_keep(const Var<T>&, int64_t);                                    \
    template Var<T> reduce_chw_sum(const Var<T>&);                                               \
    template Var<T> expand_n(const Var<T>&, int64_t, int64_t, int64_t);                          \
    template Var<T> row_sum(const Var<T>&);                                                      \
    template Var<T> col_sum(const Var<T>&);                                                      \
    template Var<T> expand_rows(const Var<T>&, int64_t);                                         \
    template Var<T> expand_cols(const Var<T>&, int64_t);                                         \
    template Var<T> pick(const Var<T>&, int64_t);                                                \
    template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                            \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const std::optional<Var<T>>&, int64_t); \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, int64_t);                              \
    template Var<T> conv2d_input_grad(const Var<T>&, const Var<T>&, int64_t);                    \
    template Var<T> conv2d_weight_grad(const Var<T>&, const Var<T>&, int64_t, int64_t);          \
    template Var<T> upsample_nn2x(const Var<T>&);                                                \
    template Var<T> downsample_sum2x(const Var<T>&);                                             \
    template Var<T> adaptive_avg_pool(const Var<T>&, int64_t);                                   \
    template Var<T> adaptive_avg_pool_grad(const Var<T>&, int64_t, int64_t);                     \
    template Var<T> slice2d(const Var<T>&, int64_t, int64_t, int64_t, int64_t);                  \
    template Var<T> zero_pad2d(const Var<T>&, int64_t, int64_t, int64_t, int64_t);               \
    template Var<T> center_crop(const Var<T>&, int64_t, int64_t);                                \
    template Var<T> reduce_mean_all(const Var<T>&);                                              \
    template Var<T> softmax_vec(const Var<T>&);                                                  \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);

SURGE_INSTANTIATE_AD(float)
SURGE_INSTANTIATE_AD(double)

}  // namespace surge::ad
