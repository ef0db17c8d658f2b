#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lbridge/rng.hpp"

namespace lbridge {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape & s);
std::string shape_str(const Shape & s);

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;

    // reverse-mode graph
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl &)> backward_fn;

    bool wants_grad() const { return requires_grad || backward_fn != nullptr; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Value-semantics handle over a shared tensor buffer. All math is double
// precision; the training and gradient-check contracts depend on it.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor randn(Shape shape, Rng & rng, double stdev, bool requires_grad = false);
    static Tensor rand_uniform(Shape shape, Rng & rng, double lo, double hi, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape & shape() const { return impl_->shape; }
    int64_t numel() const { return int64_t(impl_->value.size()); }
    int64_t dim(int i) const { return impl_->shape[size_t(i)]; }
    int rank() const { return int(impl_->shape.size()); }

    std::span<double> data() { return impl_->value; }
    std::span<const double> data() const { return impl_->value; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor & set_requires_grad(bool b) {
        impl_->requires_grad = b;
        return *this;
    }
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::span<double> grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() {
        if (impl_) impl_->grad.clear();
    }

    // Runs reverse-mode accumulation from this scalar.
    void backward();

    // Value copy detached from the graph.
    Tensor detach() const;
    // Deep copy (value only), preserving requires_grad.
    Tensor clone() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<TensorImpl> impl_;
};

// Graph-building helper shared by all ops.
Tensor make_node(Shape shape, std::vector<Tensor> parents,
                 std::function<void(TensorImpl &)> backward);

// ---- elementwise ----
Tensor add(const Tensor & a, const Tensor & b);
Tensor sub(const Tensor & a, const Tensor & b);
Tensor mul(const Tensor & a, const Tensor & b);
Tensor add_scalar(const Tensor & a, double s);
Tensor mul_scalar(const Tensor & a, double s);
Tensor neg(const Tensor & a);
Tensor relu(const Tensor & a);
Tensor gelu(const Tensor & a); // erf-based, smooth
Tensor tanh_op(const Tensor & a);
Tensor sigmoid(const Tensor & a);
Tensor softplus(const Tensor & a);
Tensor exp_op(const Tensor & a);
Tensor log_op(const Tensor & a);
Tensor square(const Tensor & a);
Tensor clamp(const Tensor & a, double lo, double hi);
Tensor clamp_min(const Tensor & a, double lo);
// max(x, bound) that still passes gradient when the bound is active but the
// upstream gradient pushes x upward (keeps floored scales trainable).
Tensor lower_bound(const Tensor & a, double bound);

// ---- quantization ----
enum class QuantMode { kNoise, kSteRound, kRound };
QuantMode quant_mode_from_string(const std::string & s);
std::string to_string(QuantMode m);
Tensor ste_round(const Tensor & a);             // round fwd, identity bwd
Tensor quantize_noise(const Tensor & a, Rng & rng); // a + U(-0.5, 0.5)
Tensor round_nograd(const Tensor & a);
Tensor quantize(const Tensor & a, QuantMode mode, Rng * rng);

// ---- reductions ----
Tensor sum(const Tensor & a);
Tensor mean(const Tensor & a);
Tensor mse(const Tensor & a, const Tensor & b); // mean squared difference

// ---- linear algebra (ops_linalg.cpp) ----
Tensor matmul(const Tensor & a, const Tensor & b);                 // [M,K]x[K,N]
Tensor bmm(const Tensor & a, const Tensor & b, bool trans_b = false); // [B,M,K]x[B,K,N] or [B,N,K]
Tensor linear(const Tensor & x, const Tensor & w, const Tensor & b); // x[...,K] w[K,N]
Tensor add_rowvec(const Tensor & x, const Tensor & v);             // x[M,N]+v[N]
Tensor mul_rowvec(const Tensor & x, const Tensor & v);
Tensor add_bias3(const Tensor & x, const Tensor & v); // x[C,M,N]+v[C,N] broadcast over M
Tensor mul_bias3(const Tensor & x, const Tensor & v);
Tensor layer_norm(const Tensor & x, const Tensor & gamma, const Tensor & beta, double eps = 1e-5);
Tensor softmax_lastdim(const Tensor & x);
Tensor log_softmax_lastdim(const Tensor & x);
Tensor l2_normalize_vec(const Tensor & x); // x[D] -> x/||x||
Tensor dot(const Tensor & a, const Tensor & b);

// ---- convolution (ops_conv.cpp), tensors are [B,C,H,W] ----
Tensor conv2d(const Tensor & x, const Tensor & w, const Tensor & b, int stride, int pad);
Tensor conv2d_transpose(const Tensor & x, const Tensor & w, const Tensor & b, int stride, int pad,
                        int out_pad);

// ---- shape / indexing (ops_shape.cpp) ----
Tensor reshape(const Tensor & x, Shape shape);
Tensor permute3(const Tensor & x, int d0, int d1, int d2); // rank-3 permute
Tensor slice_rows(const Tensor & x, int64_t r0, int64_t r1); // x[M,N] rows [r0,r1)
Tensor concat_rows(const std::vector<Tensor> & parts);
Tensor select_row(const Tensor & x, int64_t r); // x[M,N] -> [N]
Tensor select_index(const Tensor & x, int64_t i); // x[M] -> [1]
Tensor slice_channels(const Tensor & x, int64_t c0, int64_t c1); // [B,C,H,W]
Tensor concat_channels(const Tensor & a, const Tensor & b);
Tensor embedding_rows(const Tensor & table, const std::vector<int> & ids);
Tensor stack_rows(const std::vector<Tensor> & vecs); // k vectors [D] -> [k,D]

// ---- entropy-model primitive ----
// -log2 of the unit-bin Gaussian mass around each element of y_q, with the
// probability floored at p_floor. Differentiable in y_q, mean and scale.
Tensor gaussian_bits(const Tensor & y_q, const Tensor & mean, const Tensor & scale,
                     double p_floor);

// finite-difference gradient oracle used by the test suites
double finite_diff(const std::function<double()> & f, double * x, double h);

} // namespace lbridge
