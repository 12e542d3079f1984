#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "surge/tensor.hpp"

namespace surge::ad {

template <typename T>
struct Node;

// Handle to a node in the eagerly evaluated computation graph. Values are
// computed at op-call time; backward closures rebuild gradients out of the
// same op vocabulary, which is what makes second-order differentiation (the
// gradient-penalty path) work without any special casing.
template <typename T>
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

    static Var constant(Tensor<T> v);
    static Var parameter(Tensor<T> v);

    bool defined() const { return n_ != nullptr; }
    const Tensor<T>& value() const;
    Tensor<T>& mutable_value();  // leaf updates only (optimizer steps)
    const Shape& shape() const { return value().shape(); }
    int64_t numel() const { return value().numel(); }
    bool requires_grad() const;
    Node<T>* node() const { return n_.get(); }
    std::shared_ptr<Node<T>> ptr() const { return n_; }

  private:
    std::shared_ptr<Node<T>> n_;
};

template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad_out)>;

template <typename T>
struct Node {
    Tensor<T> value;
    std::vector<Var<T>> inputs;
    BackwardFn<T> backward;
    bool requires_grad = false;
    uint64_t id = 0;
};

// Thread-local recording switch, mirroring the usual no-grad idiom.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }

  private:
    bool prev_;
};

template <typename T>
Var<T> detach(const Var<T>& v);

// Reverse-mode gradient of a scalar output with respect to `wrt`. Missing
// paths yield zero tensors. With create_graph the returned gradients are
// themselves differentiable.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt,
                         bool create_graph = false);

// ---- primitive ops -------------------------------------------------------

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> add_scalar(const Var<T>& a, double s);
template <typename T> Var<T> mul_scalar(const Var<T>& a, double s);

template <typename T> Var<T> vlog(const Var<T>& a);
template <typename T> Var<T> vexp(const Var<T>& a);
template <typename T> Var<T> vsqrt(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> recip(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> clamp_min(const Var<T>& a, double lo);
template <typename T> Var<T> pos_part(const Var<T>& a);
template <typename T> Var<T> neg_part(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, double slope);

template <typename T> Var<T> reshape(const Var<T>& a, Shape s);

template <typename T> Var<T> reduce_sum_all(const Var<T>& a);   // -> [1]
template <typename T> Var<T> reduce_max_all(const Var<T>& a);   // -> [1]
template <typename T> Var<T> expand_to(const Var<T>& a, Shape s);  // [1] -> s
template <typename T> Var<T> reduce_nhw_sum(const Var<T>& a);       // [N,C,H,W] -> [C]
template <typename T> Var<T> broadcast_c(const Var<T>& v, int64_t n, int64_t h, int64_t w);
template <typename T> Var<T> reduce_c_sum_keep(const Var<T>& a);    // [N,C,H,W] -> [N,1,H,W]
template <typename T> Var<T> broadcast_c_keep(const Var<T>& a, int64_t c);
template <typename T> Var<T> reduce_chw_sum(const Var<T>& a);       // [N,C,H,W] -> [N]
template <typename T> Var<T> expand_n(const Var<T>& v, int64_t c, int64_t h, int64_t w);
template <typename T> Var<T> row_sum(const Var<T>& m);              // [R,C] -> [R]
template <typename T> Var<T> col_sum(const Var<T>& m);              // [R,C] -> [C]
template <typename T> Var<T> expand_rows(const Var<T>& v, int64_t r);  // [C] -> [R,C]
template <typename T> Var<T> expand_cols(const Var<T>& v, int64_t c);  // [R] -> [R,C]
template <typename T> Var<T> pick(const Var<T>& v, int64_t idx);    // [K] -> [1]

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias, int64_t pad);
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, int64_t pad);  // bias-free
template <typename T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w, int64_t pad);
template <typename T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, int64_t pad, int64_t k);

template <typename T> Var<T> upsample_nn2x(const Var<T>& x);
template <typename T> Var<T> downsample_sum2x(const Var<T>& x);
template <typename T> Var<T> adaptive_avg_pool(const Var<T>& x, int64_t out_size);
template <typename T> Var<T> adaptive_avg_pool_grad(const Var<T>& g, int64_t in_h, int64_t in_w);
template <typename T>
Var<T> slice2d(const Var<T>& x, int64_t top, int64_t left, int64_t th, int64_t tw);
template <typename T>
Var<T> zero_pad2d(const Var<T>& x, int64_t top, int64_t bottom, int64_t left, int64_t right);
template <typename T> Var<T> center_crop(const Var<T>& x, int64_t th, int64_t tw);

// ---- compositions --------------------------------------------------------

template <typename T> Var<T> reduce_mean_all(const Var<T>& a);
template <typename T> Var<T> softmax_vec(const Var<T>& logits);
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);  // x[N,K], w[M,K], b[M]

}  // namespace surge::ad
