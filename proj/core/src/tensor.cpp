#include "lbridge/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace lbridge {

int64_t shape_numel(const Shape & s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape & s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value.assign(size_t(shape_numel(impl->shape)), 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (auto & x : t.data()) x = v;
    return t;
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (int64_t(data.size()) != shape_numel(shape))
        throw std::invalid_argument("from_data: size mismatch for shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value = std::move(data);
    return Tensor(impl);
}

Tensor Tensor::randn(Shape shape, Rng & rng, double stdev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto & x : t.data()) x = rng.normal() * stdev;
    return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng & rng, double lo, double hi, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto & x : t.data()) x = rng.uniform_range(lo, hi);
    return t;
}

double Tensor::item() const {
    if (numel() != 1) throw std::logic_error("item(): tensor is not scalar, shape " + shape_str(shape()));
    return impl_->value[0];
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->value = impl_->value;
    return Tensor(impl);
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->value = impl_->value;
    impl->requires_grad = impl_->requires_grad;
    return Tensor(impl);
}

void Tensor::backward() {
    if (numel() != 1) throw std::logic_error("backward() requires a scalar root");

    // post-order DFS; reversed order visits every node before its parents
    std::vector<TensorImpl *> order;
    std::unordered_set<TensorImpl *> seen;
    std::vector<std::pair<TensorImpl *, size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto & [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorImpl * p = node->parents[idx++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->ensure_grad();
    impl_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl * node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

Tensor make_node(Shape shape, std::vector<Tensor> parents, std::function<void(TensorImpl &)> backward) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->value.assign(size_t(shape_numel(impl->shape)), 0.0);
    bool track = false;
    for (const auto & p : parents)
        if (p.defined() && p.impl()->wants_grad()) track = true;
    if (track) {
        for (const auto & p : parents)
            if (p.defined()) impl->parents.push_back(p.impl());
        impl->backward_fn = std::move(backward);
    }
    return Tensor(impl);
}

namespace {

void check_same_shape(const Tensor & a, const Tensor & b, const char * op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

// generic unary op with pointwise derivative computed from (x, y)
template <class F, class DF>
Tensor unary_op(const Tensor & a, F f, DF df) {
    Tensor out = make_node(a.shape(), {a}, [a, df](TensorImpl & self) {
        auto pa = a.impl();
        if (!pa->wants_grad()) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
            pa->grad[i] += self.grad[i] * df(pa->value[i], self.value[i]);
    });
    auto in = a.data();
    auto o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
    return out;
}

} // namespace

Tensor add(const Tensor & a, const Tensor & b) {
    check_same_shape(a, b, "add");
    Tensor out = make_node(a.shape(), {a, b}, [a, b](TensorImpl & self) {
        for (const auto & p : {a.impl(), b.impl()}) {
            if (!p->wants_grad()) continue;
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
    auto pa = a.data(), pb = b.data();
    auto o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + pb[i];
    return out;
}

Tensor sub(const Tensor & a, const Tensor & b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_node(a.shape(), {a, b}, [a, b](TensorImpl & self) {
        auto pa = a.impl(), pb = b.impl();
        if (pa->wants_grad()) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        }
        if (pb->wants_grad()) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
        }
    });
    auto pa = a.data(), pb = b.data();
    auto o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = pa[i] - pb[i];
    return out;
}

Tensor mul(const Tensor & a, const Tensor & b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_node(a.shape(), {a, b}, [a, b](TensorImpl & self) {
        auto pa = a.impl(), pb = b.impl();
        if (pa->wants_grad()) {
            pa->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->value[i];
        }
        if (pb->wants_grad()) {
            pb->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->value[i];
        }
    });
    auto pa = a.data(), pb = b.data();
    auto o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = pa[i] * pb[i];
    return out;
}

Tensor add_scalar(const Tensor & a, double s) {
    return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor & a, double s) {
    return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor & a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor & a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
} // namespace

Tensor gelu(const Tensor & a) {
    return unary_op(a, [](double x) { return x * norm_cdf(x); },
                    [](double x, double) { return norm_cdf(x) + x * norm_pdf(x); });
}

Tensor tanh_op(const Tensor & a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor & a) {
    return unary_op(a, [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                                    : std::exp(x) / (1.0 + std::exp(x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor & a) {
    return unary_op(a,
                    [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
                    [](double x, double) {
                        return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                    });
}

Tensor exp_op(const Tensor & a) {
    return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_op(const Tensor & a) {
    return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor & a) {
    return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor & a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor clamp_min(const Tensor & a, double lo) {
    return unary_op(a, [lo](double x) { return x < lo ? lo : x; },
                    [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}

Tensor lower_bound(const Tensor & a, double bound) {
    Tensor out = make_node(a.shape(), {a}, [a, bound](TensorImpl & self) {
        auto pa = a.impl();
        if (!pa->wants_grad()) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const bool pass = pa->value[i] >= bound || self.grad[i] < 0.0;
            if (pass) pa->grad[i] += self.grad[i];
        }
    });
    auto in = a.data();
    auto o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = in[i] < bound ? bound : in[i];
    return out;
}

QuantMode quant_mode_from_string(const std::string & s) {
    if (s == "noise") return QuantMode::kNoise;
    if (s == "ste_round") return QuantMode::kSteRound;
    if (s == "round") return QuantMode::kRound;
    throw std::invalid_argument("unknown quantize mode: " + s);
}

std::string to_string(QuantMode m) {
    switch (m) {
        case QuantMode::kNoise: return "noise";
        case QuantMode::kSteRound: return "ste_round";
        case QuantMode::kRound: return "round";
    }
    return "?";
}

Tensor ste_round(const Tensor & a) {
    return unary_op(a, [](double x) { return std::round(x); }, [](double, double) { return 1.0; });
}

Tensor quantize_noise(const Tensor & a, Rng & rng) {
    std::vector<double> noise(size_t(a.numel()));
    for (auto & u : noise) u = rng.uniform_sym();
    Tensor out = make_node(a.shape(), {a}, [a](TensorImpl & self) {
        auto pa = a.impl();
        if (!pa->wants_grad()) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    });
    auto in = a.data();
    auto o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = in[i] + noise[i];
    return out;
}

Tensor round_nograd(const Tensor & a) {
    Tensor out = Tensor::zeros(a.shape());
    auto in = a.data();
    auto o = out.data();
    for (size_t i = 0; i < o.size(); ++i) o[i] = std::round(in[i]);
    return out;
}

Tensor quantize(const Tensor & a, QuantMode mode, Rng * rng) {
    switch (mode) {
        case QuantMode::kNoise:
            if (!rng) throw std::invalid_argument("quantize(noise) needs a generator");
            return quantize_noise(a, *rng);
        case QuantMode::kSteRound: return ste_round(a);
        case QuantMode::kRound: return round_nograd(a);
    }
    throw std::invalid_argument("unknown quantize mode");
}

Tensor sum(const Tensor & a) {
    Tensor out = make_node({1}, {a}, [a](TensorImpl & self) {
        auto pa = a.impl();
        if (!pa->wants_grad()) return;
        pa->ensure_grad();
        const double g = self.grad[0];
        for (auto & x : pa->grad) x += g;
    });
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    out.data()[0] = acc;
    return out;
}

Tensor mean(const Tensor & a) {
    const double inv = 1.0 / double(a.numel());
    Tensor out = make_node({1}, {a}, [a, inv](TensorImpl & self) {
        auto pa = a.impl();
        if (!pa->wants_grad()) return;
        pa->ensure_grad();
        const double g = self.grad[0] * inv;
        for (auto & x : pa->grad) x += g;
    });
    double acc = 0.0;
    for (double x : a.data()) acc += x;
    out.data()[0] = acc * inv;
    return out;
}

Tensor mse(const Tensor & a, const Tensor & b) {
    check_same_shape(a, b, "mse");
    const double inv = 1.0 / double(a.numel());
    Tensor out = make_node({1}, {a, b}, [a, b, inv](TensorImpl & self) {
        auto pa = a.impl(), pb = b.impl();
        const double g = 2.0 * self.grad[0] * inv;
        if (pa->wants_grad()) {
            pa->ensure_grad();
            for (size_t i = 0; i < pa->value.size(); ++i)
                pa->grad[i] += g * (pa->value[i] - pb->value[i]);
        }
        if (pb->wants_grad()) {
            pb->ensure_grad();
            for (size_t i = 0; i < pb->value.size(); ++i)
                pb->grad[i] -= g * (pa->value[i] - pb->value[i]);
        }
    });
    auto pa = a.data(), pb = b.data();
    double acc = 0.0;
    for (size_t i = 0; i < pa.size(); ++i) {
        const double d = pa[i] - pb[i];
        acc += d * d;
    }
    out.data()[0] = acc * inv;
    return out;
}

Tensor gaussian_bits(const Tensor & y_q, const Tensor & mean, const Tensor & scale, double p_floor) {
    check_same_shape(y_q, mean, "gaussian_bits");
    check_same_shape(y_q, scale, "gaussian_bits");
    constexpr double kInvLn2 = 1.4426950408889634074;
    Tensor out = make_node(y_q.shape(), {y_q, mean, scale},
                           [y_q, mean, scale, p_floor, kInvLn2](TensorImpl & self) {
        auto py = y_q.impl(), pm = mean.impl(), ps = scale.impl();
        const bool gy = py->wants_grad(), gm = pm->wants_grad(), gs = ps->wants_grad();
        if (gy) py->ensure_grad();
        if (gm) pm->ensure_grad();
        if (gs) ps->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i) {
            const double s = ps->value[i];
            const double hi = (py->value[i] + 0.5 - pm->value[i]) / s;
            const double lo = (py->value[i] - 0.5 - pm->value[i]) / s;
            const double p = norm_cdf(hi) - norm_cdf(lo);
            if (!(p > p_floor)) continue; // floored or non-finite: flat
            const double dbits_dp = -kInvLn2 / p;
            const double phi_hi = norm_pdf(hi), phi_lo = norm_pdf(lo);
            const double g = self.grad[i] * dbits_dp;
            if (gy) py->grad[i] += g * (phi_hi - phi_lo) / s;
            if (gm) pm->grad[i] += g * (phi_lo - phi_hi) / s;
            if (gs) ps->grad[i] += g * (phi_lo * lo - phi_hi * hi) / s;
        }
    });
    auto py = y_q.data(), pm = mean.data(), ps = scale.data();
    auto o = out.data();
    constexpr double kLog2e = 1.4426950408889634074;
    for (size_t i = 0; i < o.size(); ++i) {
        const double s = ps[i];
        const double hi = (py[i] + 0.5 - pm[i]) / s;
        const double lo = (py[i] - 0.5 - pm[i]) / s;
        double p = norm_cdf(hi) - norm_cdf(lo);
        if (!(p >= p_floor)) p = p_floor; // NaN also lands here
        o[i] = -std::log(p) * kLog2e;
    }
    return out;
}

double finite_diff(const std::function<double()> & f, double * x, double h) {
    const double saved = *x;
    *x = saved + h;
    const double fp = f();
    *x = saved - h;
    const double fm = f();
    *x = saved;
    return (fp - fm) / (2.0 * h);
}

} // namespace lbridge
