#include <array>
#include <cstring>
#include <stdexcept>

#include "lbridge/tensor.hpp"

namespace lbridge {

Tensor reshape(const Tensor & x, Shape shape) {
    // resolve a single -1 extent
    int64_t known = 1, wild = -1;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (wild >= 0) throw std::invalid_argument("reshape: two wildcards");
            wild = int64_t(i);
        } else {
            known *= shape[i];
        }
    }
    if (wild >= 0) shape[size_t(wild)] = x.numel() / known;
    if (shape_numel(shape) != x.numel())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                                    shape_str(shape));
    Tensor out = make_node(shape, {x}, [x](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
    });
    std::memcpy(out.data().data(), x.data().data(), sizeof(double) * size_t(x.numel()));
    return out;
}

Tensor permute3(const Tensor & x, int d0, int d1, int d2) {
    if (x.rank() != 3) throw std::invalid_argument("permute3: rank != 3");
    const std::array<int, 3> perm{d0, d1, d2};
    const Shape & s = x.shape();
    Shape os{s[size_t(d0)], s[size_t(d1)], s[size_t(d2)]};
    const int64_t s1 = s[1] * s[2], s2 = s[2];

    auto dst_index = [perm, os](int64_t i0, int64_t i1, int64_t i2) {
        std::array<int64_t, 3> src{i0, i1, i2};
        std::array<int64_t, 3> dst{};
        for (int d = 0; d < 3; ++d) dst[size_t(d)] = src[size_t(perm[size_t(d)])];
        return (dst[0] * os[1] + dst[1]) * os[2] + dst[2];
    };

    Tensor out = make_node(os, {x}, [x, dst_index, s1, s2](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        const Shape & ss = px->shape;
        for (int64_t i0 = 0; i0 < ss[0]; ++i0)
            for (int64_t i1 = 0; i1 < ss[1]; ++i1)
                for (int64_t i2 = 0; i2 < ss[2]; ++i2)
                    px->grad[size_t(i0 * s1 + i1 * s2 + i2)] +=
                        self.grad[size_t(dst_index(i0, i1, i2))];
    });
    auto in = x.data();
    auto o = out.data();
    for (int64_t i0 = 0; i0 < s[0]; ++i0)
        for (int64_t i1 = 0; i1 < s[1]; ++i1)
            for (int64_t i2 = 0; i2 < s[2]; ++i2)
                o[size_t(dst_index(i0, i1, i2))] = in[size_t(i0 * s1 + i1 * s2 + i2)];
    return out;
}

Tensor slice_rows(const Tensor & x, int64_t r0, int64_t r1) {
    if (x.rank() != 2) throw std::invalid_argument("slice_rows: rank != 2");
    const int64_t n = x.dim(1);
    if (r0 < 0 || r1 > x.dim(0) || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    Tensor out = make_node({r1 - r0, n}, {x}, [x, r0, n](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) px->grad[size_t(r0 * n) + i] += self.grad[i];
    });
    std::memcpy(out.data().data(), x.data().data() + r0 * n, sizeof(double) * size_t((r1 - r0) * n));
    return out;
}

Tensor concat_rows(const std::vector<Tensor> & parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    const int64_t n = parts[0].dim(1);
    int64_t rows = 0;
    for (const auto & p : parts) {
        if (p.rank() != 2 || p.dim(1) != n) throw std::invalid_argument("concat_rows: width mismatch");
        rows += p.dim(0);
    }
    Tensor out = make_node({rows, n}, parts, [parts, n](TensorImpl & self) {
        int64_t off = 0;
        for (const auto & p : parts) {
            auto pp = p.impl();
            const int64_t cnt = pp->shape[0] * n;
            if (pp->wants_grad()) {
                pp->ensure_grad();
                for (int64_t i = 0; i < cnt; ++i) pp->grad[size_t(i)] += self.grad[size_t(off + i)];
            }
            off += cnt;
        }
    });
    int64_t off = 0;
    for (const auto & p : parts) {
        std::memcpy(out.data().data() + off, p.data().data(), sizeof(double) * size_t(p.numel()));
        off += p.numel();
    }
    return out;
}

Tensor select_row(const Tensor & x, int64_t r) {
    if (x.rank() != 2) throw std::invalid_argument("select_row: rank != 2");
    const int64_t n = x.dim(1);
    Tensor out = make_node({n}, {x}, [x, r, n](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (int64_t c = 0; c < n; ++c) px->grad[size_t(r * n + c)] += self.grad[size_t(c)];
    });
    std::memcpy(out.data().data(), x.data().data() + r * n, sizeof(double) * size_t(n));
    return out;
}

Tensor select_index(const Tensor & x, int64_t i) {
    if (i < 0 || i >= x.numel()) throw std::out_of_range("select_index");
    Tensor out = make_node({1}, {x}, [x, i](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        px->grad[size_t(i)] += self.grad[0];
    });
    out.data()[0] = x.data()[size_t(i)];
    return out;
}

Tensor slice_channels(const Tensor & x, int64_t c0, int64_t c1) {
    if (x.rank() != 4) throw std::invalid_argument("slice_channels: rank != 4");
    const int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
    const int64_t Cs = c1 - c0;
    Tensor out = make_node({B, Cs, x.dim(2), x.dim(3)}, {x}, [x, B, C, hw, c0, Cs](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (int64_t i = 0; i < B; ++i)
            for (int64_t c = 0; c < Cs; ++c)
                for (int64_t t = 0; t < hw; ++t)
                    px->grad[size_t(((i * C) + c0 + c) * hw + t)] +=
                        self.grad[size_t(((i * Cs) + c) * hw + t)];
    });
    auto in = x.data();
    auto o = out.data();
    for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < Cs; ++c)
            std::memcpy(o.data() + ((i * Cs) + c) * hw, in.data() + ((i * C) + c0 + c) * hw,
                        sizeof(double) * size_t(hw));
    return out;
}

Tensor concat_channels(const Tensor & a, const Tensor & b) {
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
        a.dim(3) != b.dim(3))
        throw std::invalid_argument("concat_channels: shape mismatch");
    const int64_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), hw = a.dim(2) * a.dim(3);
    Tensor out = make_node({B, Ca + Cb, a.dim(2), a.dim(3)}, {a, b},
                           [a, b, B, Ca, Cb, hw](TensorImpl & self) {
        auto pa = a.impl(), pb = b.impl();
        const int64_t C = Ca + Cb;
        if (pa->wants_grad()) {
            pa->ensure_grad();
            for (int64_t i = 0; i < B; ++i)
                for (int64_t c = 0; c < Ca; ++c)
                    for (int64_t t = 0; t < hw; ++t)
                        pa->grad[size_t((i * Ca + c) * hw + t)] +=
                            self.grad[size_t((i * C + c) * hw + t)];
        }
        if (pb->wants_grad()) {
            pb->ensure_grad();
            for (int64_t i = 0; i < B; ++i)
                for (int64_t c = 0; c < Cb; ++c)
                    for (int64_t t = 0; t < hw; ++t)
                        pb->grad[size_t((i * Cb + c) * hw + t)] +=
                            self.grad[size_t((i * C + Ca + c) * hw + t)];
        }
    });
    auto pa = a.data();
    auto pb = b.data();
    auto o = out.data();
    const int64_t C = Ca + Cb;
    for (int64_t i = 0; i < B; ++i) {
        std::memcpy(o.data() + i * C * hw, pa.data() + i * Ca * hw, sizeof(double) * size_t(Ca * hw));
        std::memcpy(o.data() + (i * C + Ca) * hw, pb.data() + i * Cb * hw,
                    sizeof(double) * size_t(Cb * hw));
    }
    return out;
}

Tensor embedding_rows(const Tensor & table, const std::vector<int> & ids) {
    if (table.rank() != 2) throw std::invalid_argument("embedding_rows: table rank != 2");
    const int64_t V = table.dim(0), D = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= V) throw std::out_of_range("embedding_rows: id out of range");
    const int64_t L = int64_t(ids.size());
    Tensor out = make_node({L, D}, {table}, [table, ids, D](TensorImpl & self) {
        auto pt = table.impl();
        if (!pt->wants_grad()) return;
        pt->ensure_grad();
        for (size_t r = 0; r < ids.size(); ++r)
            for (int64_t c = 0; c < D; ++c)
                pt->grad[size_t(ids[r] * D + c)] += self.grad[size_t(int64_t(r) * D + c)];
    });
    for (size_t r = 0; r < ids.size(); ++r)
        std::memcpy(out.data().data() + int64_t(r) * D, table.data().data() + ids[r] * D,
                    sizeof(double) * size_t(D));
    return out;
}

Tensor stack_rows(const std::vector<Tensor> & vecs) {
    if (vecs.empty()) throw std::invalid_argument("stack_rows: empty");
    const int64_t D = vecs[0].numel();
    std::vector<Tensor> rows;
    rows.reserve(vecs.size());
    for (const auto & v : vecs) rows.push_back(reshape(v, {1, D}));
    return concat_rows(rows);
}

} // namespace lbridge
