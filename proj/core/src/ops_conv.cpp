#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "lbridge/tensor.hpp"

namespace lbridge {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

namespace {

// Gather k*k patches at a strided grid of positions into [PH*PW, C*k*k].
void im2col(const double * img, int64_t C, int64_t IH, int64_t IW, int64_t k, int64_t s, int64_t p,
            int64_t PH, int64_t PW, double * cols) {
    const int64_t patch = C * k * k;
    for (int64_t ph = 0; ph < PH; ++ph) {
        for (int64_t pw = 0; pw < PW; ++pw) {
            double * row = cols + (ph * PW + pw) * patch;
            for (int64_t c = 0; c < C; ++c) {
                const double * ch = img + c * IH * IW;
                for (int64_t di = 0; di < k; ++di) {
                    const int64_t ih = ph * s - p + di;
                    for (int64_t dj = 0; dj < k; ++dj) {
                        const int64_t iw = pw * s - p + dj;
                        const bool in = ih >= 0 && ih < IH && iw >= 0 && iw < IW;
                        row[(c * k + di) * k + dj] = in ? ch[ih * IW + iw] : 0.0;
                    }
                }
            }
        }
    }
}

// Scatter-add the transpose of im2col.
void col2im_add(const double * cols, int64_t C, int64_t IH, int64_t IW, int64_t k, int64_t s,
                int64_t p, int64_t PH, int64_t PW, double * img) {
    const int64_t patch = C * k * k;
    for (int64_t ph = 0; ph < PH; ++ph) {
        for (int64_t pw = 0; pw < PW; ++pw) {
            const double * row = cols + (ph * PW + pw) * patch;
            for (int64_t c = 0; c < C; ++c) {
                double * ch = img + c * IH * IW;
                for (int64_t di = 0; di < k; ++di) {
                    const int64_t ih = ph * s - p + di;
                    if (ih < 0 || ih >= IH) continue;
                    for (int64_t dj = 0; dj < k; ++dj) {
                        const int64_t iw = pw * s - p + dj;
                        if (iw < 0 || iw >= IW) continue;
                        ch[ih * IW + iw] += row[(c * k + di) * k + dj];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor & x, const Tensor & w, const Tensor & b, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4) throw std::invalid_argument("conv2d: expects [B,C,H,W] and [Co,Ci,k,k]");
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Ci) throw std::invalid_argument("conv2d: channel mismatch");
    if (b.defined() && b.numel() != Co) throw std::invalid_argument("conv2d: bias size");
    const int64_t Ho = (H + 2 * pad - k) / stride + 1;
    const int64_t Wo = (W + 2 * pad - k) / stride + 1;
    const int64_t patch = Ci * k * k, npos = Ho * Wo;

    Tensor out = make_node({B, Co, Ho, Wo}, {x, w, b},
                           [=](TensorImpl & self) {
        auto px = x.impl(), pw = w.impl(), pb = b.impl();
        const bool gx = px->wants_grad(), gw = pw->wants_grad(), gb = pb && pb->wants_grad();
        if (gx) px->ensure_grad();
        if (gw) pw->ensure_grad();
        if (gb) pb->ensure_grad();
        std::vector<double> cols(size_t(npos * patch)), dcols(size_t(npos * patch));
        for (int64_t i = 0; i < B; ++i) {
            CMapM dout(self.grad.data() + i * Co * npos, Co, npos);
            if (gw || gx) im2col(px->value.data() + i * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo, cols.data());
            if (gw) {
                MapM dw(pw->grad.data(), Co, patch);
                dw.noalias() += dout * CMapM(cols.data(), npos, patch);
            }
            if (gb) {
                for (int64_t c = 0; c < Co; ++c) {
                    double acc = 0.0;
                    const double * g = self.grad.data() + (i * Co + c) * npos;
                    for (int64_t t = 0; t < npos; ++t) acc += g[t];
                    pb->grad[size_t(c)] += acc;
                }
            }
            if (gx) {
                MapM(dcols.data(), npos, patch).noalias() =
                    dout.transpose() * CMapM(pw->value.data(), Co, patch);
                col2im_add(dcols.data(), Ci, H, W, k, stride, pad, Ho, Wo,
                           px->grad.data() + i * Ci * H * W);
            }
        }
    });

    std::vector<double> cols(size_t(npos * patch));
    for (int64_t i = 0; i < B; ++i) {
        im2col(x.data().data() + i * Ci * H * W, Ci, H, W, k, stride, pad, Ho, Wo, cols.data());
        MapM ov(out.data().data() + i * Co * npos, Co, npos);
        ov.noalias() = CMapM(w.data().data(), Co, patch) * CMapM(cols.data(), npos, patch).transpose();
        if (b.defined()) {
            for (int64_t c = 0; c < Co; ++c) ov.row(c).array() += b.data()[size_t(c)];
        }
    }
    return out;
}

Tensor conv2d_transpose(const Tensor & x, const Tensor & w, const Tensor & b, int stride, int pad,
                        int out_pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw std::invalid_argument("conv2d_transpose: expects [B,C,H,W] and [Ci,Co,k,k]");
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(1), k = w.dim(2);
    if (w.dim(0) != Ci) throw std::invalid_argument("conv2d_transpose: channel mismatch");
    const int64_t Ho = (H - 1) * stride - 2 * pad + k + out_pad;
    const int64_t Wo = (W - 1) * stride - 2 * pad + k + out_pad;
    const int64_t patch = Co * k * k, npos = H * W;

    Tensor out = make_node({B, Co, Ho, Wo}, {x, w, b},
                           [=](TensorImpl & self) {
        auto px = x.impl(), pw = w.impl(), pb = b.impl();
        const bool gx = px->wants_grad(), gw = pw->wants_grad(), gb = pb && pb->wants_grad();
        if (gx) px->ensure_grad();
        if (gw) pw->ensure_grad();
        if (gb) pb->ensure_grad();
        std::vector<double> dcols(size_t(npos * patch));
        for (int64_t i = 0; i < B; ++i) {
            // dcols: patches of the output gradient at each input position
            im2col(self.grad.data() + i * Co * Ho * Wo, Co, Ho, Wo, k, stride, pad, H, W, dcols.data());
            if (gx) {
                // dx rows [npos, Ci] = dcols [npos, patch] * Wflat^T [patch, Ci]
                MatRM dxr(npos, Ci);
                dxr.noalias() = CMapM(dcols.data(), npos, patch) *
                                CMapM(pw->value.data(), Ci, patch).transpose();
                double * dst = px->grad.data() + i * Ci * npos;
                for (int64_t t = 0; t < npos; ++t)
                    for (int64_t c = 0; c < Ci; ++c) dst[c * npos + t] += dxr(t, c);
            }
            if (gw) {
                // x rows^T [Ci, npos] * dcols [npos, patch]
                MatRM xr(npos, Ci);
                const double * src = px->value.data() + i * Ci * npos;
                for (int64_t t = 0; t < npos; ++t)
                    for (int64_t c = 0; c < Ci; ++c) xr(t, c) = src[c * npos + t];
                MapM(pw->grad.data(), Ci, patch).noalias() +=
                    xr.transpose() * CMapM(dcols.data(), npos, patch);
            }
            if (gb) {
                for (int64_t c = 0; c < Co; ++c) {
                    double acc = 0.0;
                    const double * g = self.grad.data() + (i * Co + c) * Ho * Wo;
                    for (int64_t t = 0; t < Ho * Wo; ++t) acc += g[t];
                    pb->grad[size_t(c)] += acc;
                }
            }
        }
    });

    std::vector<double> cols(size_t(npos * patch));
    std::fill(out.data().begin(), out.data().end(), 0.0);
    for (int64_t i = 0; i < B; ++i) {
        // cols [npos, patch] = x rows [npos, Ci] * Wflat [Ci, patch]
        MatRM xr(npos, Ci);
        const double * src = x.data().data() + i * Ci * npos;
        for (int64_t t = 0; t < npos; ++t)
            for (int64_t c = 0; c < Ci; ++c) xr(t, c) = src[c * npos + t];
        MapM(cols.data(), npos, patch).noalias() = xr * CMapM(w.data().data(), Ci, patch);
        double * dst = out.data().data() + i * Co * Ho * Wo;
        col2im_add(cols.data(), Co, Ho, Wo, k, stride, pad, H, W, dst);
        if (b.defined()) {
            for (int64_t c = 0; c < Co; ++c) {
                double * ch = dst + c * Ho * Wo;
                for (int64_t t = 0; t < Ho * Wo; ++t) ch[t] += b.data()[size_t(c)];
            }
        }
    }
    return out;
}

} // namespace lbridge
