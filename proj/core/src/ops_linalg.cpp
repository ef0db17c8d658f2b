#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

#include "lbridge/tensor.hpp"

namespace lbridge {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

namespace {

MapM map2(Tensor & t, int64_t r, int64_t c) { return MapM(t.data().data(), r, c); }
CMapM map2c(const Tensor & t, int64_t r, int64_t c) { return CMapM(t.data().data(), r, c); }
MapM map_grad(const std::shared_ptr<TensorImpl> & p, int64_t r, int64_t c) {
    return MapM(p->grad.data(), r, c);
}
CMapM map_val(const std::shared_ptr<TensorImpl> & p, int64_t r, int64_t c) {
    return CMapM(p->value.data(), r, c);
}
CMapM map_gradc(const TensorImpl & t, int64_t r, int64_t c) {
    return CMapM(t.grad.data(), r, c);
}

} // namespace

Tensor matmul(const Tensor & a, const Tensor & b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: bad shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_node({m, n}, {a, b}, [a, b, m, k, n](TensorImpl & self) {
        auto pa = a.impl(), pb = b.impl();
        CMapM g = map_gradc(self, m, n);
        if (pa->wants_grad()) {
            pa->ensure_grad();
            map_grad(pa, m, k).noalias() += g * map_val(pb, k, n).transpose();
        }
        if (pb->wants_grad()) {
            pb->ensure_grad();
            map_grad(pb, k, n).noalias() += map_val(pa, m, k).transpose() * g;
        }
    });
    map2(out, m, n).noalias() = map2c(a, m, k) * map2c(b, k, n);
    return out;
}

Tensor bmm(const Tensor & a, const Tensor & b, bool trans_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("bmm: bad shapes");
    const int64_t nb = a.dim(0), m = a.dim(1), k = a.dim(2);
    const int64_t n = trans_b ? b.dim(1) : b.dim(2);
    if ((trans_b ? b.dim(2) : b.dim(1)) != k) throw std::invalid_argument("bmm: inner dim mismatch");

    Tensor out = make_node({nb, m, n}, {a, b}, [a, b, nb, m, k, n, trans_b](TensorImpl & self) {
        auto pa = a.impl(), pb = b.impl();
        const bool ga = pa->wants_grad(), gb = pb->wants_grad();
        if (ga) pa->ensure_grad();
        if (gb) pb->ensure_grad();
        for (int64_t i = 0; i < nb; ++i) {
            CMapM g(self.grad.data() + i * m * n, m, n);
            CMapM av(pa->value.data() + i * m * k, m, k);
            if (!trans_b) {
                CMapM bv(pb->value.data() + i * k * n, k, n);
                if (ga) MapM(pa->grad.data() + i * m * k, m, k).noalias() += g * bv.transpose();
                if (gb) MapM(pb->grad.data() + i * k * n, k, n).noalias() += av.transpose() * g;
            } else {
                CMapM bv(pb->value.data() + i * n * k, n, k);
                if (ga) MapM(pa->grad.data() + i * m * k, m, k).noalias() += g * bv;
                if (gb) MapM(pb->grad.data() + i * n * k, n, k).noalias() += g.transpose() * av;
            }
        }
    });
    for (int64_t i = 0; i < nb; ++i) {
        CMapM av(a.data().data() + i * m * k, m, k);
        MapM ov(out.data().data() + i * m * n, m, n);
        if (!trans_b) {
            CMapM bv(b.data().data() + i * k * n, k, n);
            ov.noalias() = av * bv;
        } else {
            CMapM bv(b.data().data() + i * n * k, n, k);
            ov.noalias() = av * bv.transpose();
        }
    }
    return out;
}

Tensor add_rowvec(const Tensor & x, const Tensor & v) {
    if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
        throw std::invalid_argument("add_rowvec: bad shapes");
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor out = make_node(x.shape(), {x, v}, [x, v, m, n](TensorImpl & self) {
        auto px = x.impl(), pv = v.impl();
        if (px->wants_grad()) {
            px->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        }
        if (pv->wants_grad()) {
            pv->ensure_grad();
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < n; ++c) pv->grad[size_t(c)] += self.grad[size_t(r * n + c)];
        }
    });
    auto px = x.data();
    auto pv = v.data();
    auto o = out.data();
    for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) o[size_t(r * n + c)] = px[size_t(r * n + c)] + pv[size_t(c)];
    return out;
}

Tensor mul_rowvec(const Tensor & x, const Tensor & v) {
    if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
        throw std::invalid_argument("mul_rowvec: bad shapes");
    const int64_t m = x.dim(0), n = x.dim(1);
    Tensor out = make_node(x.shape(), {x, v}, [x, v, m, n](TensorImpl & self) {
        auto px = x.impl(), pv = v.impl();
        if (px->wants_grad()) {
            px->ensure_grad();
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < n; ++c)
                    px->grad[size_t(r * n + c)] += self.grad[size_t(r * n + c)] * pv->value[size_t(c)];
        }
        if (pv->wants_grad()) {
            pv->ensure_grad();
            for (int64_t r = 0; r < m; ++r)
                for (int64_t c = 0; c < n; ++c)
                    pv->grad[size_t(c)] += self.grad[size_t(r * n + c)] * px->value[size_t(r * n + c)];
        }
    });
    auto px = x.data();
    auto pv = v.data();
    auto o = out.data();
    for (int64_t r = 0; r < m; ++r)
        for (int64_t c = 0; c < n; ++c) o[size_t(r * n + c)] = px[size_t(r * n + c)] * pv[size_t(c)];
    return out;
}

namespace {

template <bool Multiply>
Tensor bias3_impl(const Tensor & x, const Tensor & v) {
    if (x.rank() != 3 || v.rank() != 2 || x.dim(0) != v.dim(0) || x.dim(2) != v.dim(1))
        throw std::invalid_argument("bias3: bad shapes");
    const int64_t C = x.dim(0), M = x.dim(1), N = x.dim(2);
    Tensor out = make_node(x.shape(), {x, v}, [x, v, C, M, N](TensorImpl & self) {
        auto px = x.impl(), pv = v.impl();
        const bool gx = px->wants_grad(), gv = pv->wants_grad();
        if (gx) px->ensure_grad();
        if (gv) pv->ensure_grad();
        for (int64_t c = 0; c < C; ++c)
            for (int64_t r = 0; r < M; ++r)
                for (int64_t j = 0; j < N; ++j) {
                    const size_t xi = size_t((c * M + r) * N + j);
                    const size_t vi = size_t(c * N + j);
                    if constexpr (Multiply) {
                        if (gx) px->grad[xi] += self.grad[xi] * pv->value[vi];
                        if (gv) pv->grad[vi] += self.grad[xi] * px->value[xi];
                    } else {
                        if (gx) px->grad[xi] += self.grad[xi];
                        if (gv) pv->grad[vi] += self.grad[xi];
                    }
                }
    });
    auto px = x.data();
    auto pv = v.data();
    auto o = out.data();
    for (int64_t c = 0; c < C; ++c)
        for (int64_t r = 0; r < M; ++r)
            for (int64_t j = 0; j < N; ++j) {
                const size_t xi = size_t((c * M + r) * N + j);
                const size_t vi = size_t(c * N + j);
                o[xi] = Multiply ? px[xi] * pv[vi] : px[xi] + pv[vi];
            }
    return out;
}

} // namespace

Tensor add_bias3(const Tensor & x, const Tensor & v) { return bias3_impl<false>(x, v); }
Tensor mul_bias3(const Tensor & x, const Tensor & v) { return bias3_impl<true>(x, v); }

Tensor linear(const Tensor & x, const Tensor & w, const Tensor & b) {
    Tensor x2 = x;
    Shape orig = x.shape();
    if (x.rank() != 2) {
        int64_t rows = x.numel() / orig.back();
        x2 = reshape(x, {rows, orig.back()});
    }
    Tensor y = matmul(x2, w);
    if (b.defined()) y = add_rowvec(y, b);
    if (x.rank() != 2) {
        Shape os = orig;
        os.back() = w.dim(1);
        y = reshape(y, os);
    }
    return y;
}

Tensor layer_norm(const Tensor & x, const Tensor & gamma, const Tensor & beta, double eps) {
    if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank");
    const int64_t n = x.shape().back();
    if (gamma.numel() != n || beta.numel() != n)
        throw std::invalid_argument("layer_norm: affine size mismatch");
    const int64_t rows = x.numel() / n;

    // cache normalized rows and inverse stddev for the backward pass
    auto xhat = std::make_shared<std::vector<double>>(size_t(rows * n));
    auto inv_std = std::make_shared<std::vector<double>>(size_t(rows));

    Tensor out = make_node(x.shape(), {x, gamma, beta},
                           [x, gamma, beta, rows, n, xhat, inv_std](TensorImpl & self) {
        auto px = x.impl(), pg = gamma.impl(), pb = beta.impl();
        const bool gx = px->wants_grad(), gg = pg->wants_grad(), gb = pb->wants_grad();
        if (gx) px->ensure_grad();
        if (gg) pg->ensure_grad();
        if (gb) pb->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double * dy = self.grad.data() + r * n;
            const double * xh = xhat->data() + r * n;
            if (gg || gb) {
                for (int64_t c = 0; c < n; ++c) {
                    if (gg) pg->grad[size_t(c)] += dy[c] * xh[c];
                    if (gb) pb->grad[size_t(c)] += dy[c];
                }
            }
            if (gx) {
                double m1 = 0.0, m2 = 0.0;
                for (int64_t c = 0; c < n; ++c) {
                    const double t = dy[c] * pg->value[size_t(c)];
                    m1 += t;
                    m2 += t * xh[c];
                }
                m1 /= double(n);
                m2 /= double(n);
                const double is = (*inv_std)[size_t(r)];
                double * dx = px->grad.data() + r * n;
                for (int64_t c = 0; c < n; ++c) {
                    const double t = dy[c] * pg->value[size_t(c)];
                    dx[c] += (t - m1 - xh[c] * m2) * is;
                }
            }
        }
    });

    auto px = x.data();
    auto pg = gamma.data();
    auto pb = beta.data();
    auto o = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double * xr = px.data() + r * n;
        double mu = 0.0;
        for (int64_t c = 0; c < n; ++c) mu += xr[c];
        mu /= double(n);
        double var = 0.0;
        for (int64_t c = 0; c < n; ++c) {
            const double d = xr[c] - mu;
            var += d * d;
        }
        var /= double(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[size_t(r)] = is;
        for (int64_t c = 0; c < n; ++c) {
            const double xh = (xr[c] - mu) * is;
            (*xhat)[size_t(r * n + c)] = xh;
            o[r * n + c] = xh * pg[size_t(c)] + pb[size_t(c)];
        }
    }
    return out;
}

Tensor softmax_lastdim(const Tensor & x) {
    const int64_t n = x.shape().back();
    const int64_t rows = x.numel() / n;
    Tensor out = make_node(x.shape(), {x}, [x, rows, n](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double * y = self.value.data() + r * n;
            const double * dy = self.grad.data() + r * n;
            double dot = 0.0;
            for (int64_t c = 0; c < n; ++c) dot += dy[c] * y[c];
            double * dx = px->grad.data() + r * n;
            for (int64_t c = 0; c < n; ++c) dx[c] += y[c] * (dy[c] - dot);
        }
    });
    auto px = x.data();
    auto o = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double * xr = px.data() + r * n;
        double mx = xr[0];
        for (int64_t c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
        double z = 0.0;
        for (int64_t c = 0; c < n; ++c) {
            const double e = std::exp(xr[c] - mx);
            o[r * n + c] = e;
            z += e;
        }
        const double iz = 1.0 / z;
        for (int64_t c = 0; c < n; ++c) o[r * n + c] *= iz;
    }
    return out;
}

Tensor log_softmax_lastdim(const Tensor & x) {
    const int64_t n = x.shape().back();
    const int64_t rows = x.numel() / n;
    Tensor out = make_node(x.shape(), {x}, [x, rows, n](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double * y = self.value.data() + r * n; // log-probs
            const double * dy = self.grad.data() + r * n;
            double gs = 0.0;
            for (int64_t c = 0; c < n; ++c) gs += dy[c];
            double * dx = px->grad.data() + r * n;
            for (int64_t c = 0; c < n; ++c) dx[c] += dy[c] - std::exp(y[c]) * gs;
        }
    });
    auto px = x.data();
    auto o = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double * xr = px.data() + r * n;
        double mx = xr[0];
        for (int64_t c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
        double z = 0.0;
        for (int64_t c = 0; c < n; ++c) z += std::exp(xr[c] - mx);
        const double lz = std::log(z) + mx;
        for (int64_t c = 0; c < n; ++c) o[r * n + c] = xr[c] - lz;
    }
    return out;
}

Tensor l2_normalize_vec(const Tensor & x) {
    if (x.rank() != 1) throw std::invalid_argument("l2_normalize_vec: expects [D]");
    const int64_t n = x.dim(0);
    Tensor out = make_node(x.shape(), {x}, [x, n](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        double norm = 0.0;
        for (int64_t c = 0; c < n; ++c) norm += px->value[size_t(c)] * px->value[size_t(c)];
        norm = std::sqrt(norm);
        double dotv = 0.0;
        for (int64_t c = 0; c < n; ++c) dotv += self.grad[size_t(c)] * self.value[size_t(c)];
        for (int64_t c = 0; c < n; ++c)
            px->grad[size_t(c)] += (self.grad[size_t(c)] - self.value[size_t(c)] * dotv) / norm;
    });
    auto px = x.data();
    auto o = out.data();
    double norm = 0.0;
    for (int64_t c = 0; c < n; ++c) norm += px[size_t(c)] * px[size_t(c)];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::domain_error("l2_normalize_vec: zero vector");
    for (int64_t c = 0; c < n; ++c) o[size_t(c)] = px[size_t(c)] / norm;
    return out;
}

Tensor dot(const Tensor & a, const Tensor & b) { return sum(mul(a, b)); }

} // namespace lbridge
