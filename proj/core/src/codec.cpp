#include "lbridge/codec.hpp"

#include <cmath>
#include <limits>

#include "lbridge/range_coder.hpp"

namespace lbridge {

HyperpriorCodec::ConvLayer HyperpriorCodec::make_conv(const std::string & name, int c_in, int c_out,
                                                      Rng & rng, bool transpose) {
    const int k = cfg_.kernel;
    const double fan_in = double(c_in) * k * k;
    const double stdev = std::sqrt(2.0 / fan_in);
    ConvLayer layer;
    const Shape ws = transpose ? Shape{c_in, c_out, k, k} : Shape{c_out, c_in, k, k};
    layer.w = reg_.add(name + ".w", Tensor::randn(ws, rng, stdev, true));
    layer.b = reg_.add(name + ".b", Tensor::zeros({c_out}, true));
    return layer;
}

HyperpriorCodec::HyperpriorCodec(const CodecCfg & cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    const int N = cfg_.channels, Nh = cfg_.hyper_channels, M = cfg_.hidden;
    g_a_.push_back(make_conv("g_a.0", 3, M, rng, false));
    g_a_.push_back(make_conv("g_a.1", M, M, rng, false));
    g_a_.push_back(make_conv("g_a.2", M, M, rng, false));
    g_a_.push_back(make_conv("g_a.3", M, N, rng, false));
    g_s_.push_back(make_conv("g_s.0", N, M, rng, true));
    g_s_.push_back(make_conv("g_s.1", M, M, rng, true));
    g_s_.push_back(make_conv("g_s.2", M, M, rng, true));
    g_s_.push_back(make_conv("g_s.3", M, 3, rng, true));
    h_a_.push_back(make_conv("h_a.0", N, M, rng, false));
    h_a_.push_back(make_conv("h_a.1", M, Nh, rng, false));
    h_s_.push_back(make_conv("h_s.0", Nh, M, rng, true));
    h_s_.push_back(make_conv("h_s.1", M, 2 * N, rng, true));
    prior_ = std::make_unique<FactorizedPrior>(Nh, rng, reg_, "prior");
}

namespace {
int pad_for(int kernel) { return (kernel - 1) / 2; }
} // namespace

Tensor HyperpriorCodec::analysis_t(const Tensor & x) const {
    if (x.rank() != 4 || x.dim(1) != 3) throw CodecError("analysis: expects [B,3,H,W]");
    if (x.dim(2) % 64 != 0 || x.dim(3) % 64 != 0 || x.dim(2) < 64 || x.dim(3) < 64)
        throw CodecError("analysis: H and W must be multiples of 64");
    const int p = pad_for(cfg_.kernel);
    Tensor t = x;
    for (size_t i = 0; i < g_a_.size(); ++i) {
        t = conv2d(t, g_a_[i].w, g_a_[i].b, 2, p);
        if (i + 1 < g_a_.size()) t = gelu(t);
    }
    return t;
}

Tensor HyperpriorCodec::synthesis_t(const Tensor & y_hat) const {
    if (y_hat.rank() != 4 || y_hat.dim(1) != cfg_.channels)
        throw CodecError("synthesis: channel count mismatch (configured N=" +
                         std::to_string(cfg_.channels) + ")");
    const int p = pad_for(cfg_.kernel);
    Tensor t = y_hat;
    for (size_t i = 0; i < g_s_.size(); ++i) {
        t = conv2d_transpose(t, g_s_[i].w, g_s_[i].b, 2, p, 1);
        if (i + 1 < g_s_.size()) t = gelu(t);
    }
    return t;
}

Tensor HyperpriorCodec::hyper_analysis_t(const Tensor & y) const {
    if (y.rank() != 4 || y.dim(1) != cfg_.channels) throw CodecError("hyper_analysis: expects [B,N,h,w]");
    const int p = pad_for(cfg_.kernel);
    Tensor t = conv2d(y, h_a_[0].w, h_a_[0].b, 2, p);
    t = gelu(t);
    t = conv2d(t, h_a_[1].w, h_a_[1].b, 2, p);
    return t;
}

EntropyParams HyperpriorCodec::hyper_synthesis_t(const Tensor & z_hat) const {
    if (z_hat.rank() != 4 || z_hat.dim(1) != cfg_.hyper_channels)
        throw CodecError("hyper_synthesis: expects [B,Nh,h,w]");
    const int p = pad_for(cfg_.kernel);
    Tensor t = conv2d_transpose(z_hat, h_s_[0].w, h_s_[0].b, 2, p, 1);
    t = gelu(t);
    t = conv2d_transpose(t, h_s_[1].w, h_s_[1].b, 2, p, 1);
    const int N = cfg_.channels;
    EntropyParams ep;
    ep.mean = slice_channels(t, 0, N);
    ep.scale = lower_bound(softplus(slice_channels(t, N, 2 * N)), cfg_.scale_floor);
    return ep;
}

namespace {
Tensor unsqueeze0(const Tensor & t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return reshape(t, s);
}
Tensor squeeze0(const Tensor & t) {
    Shape s = t.shape();
    s.erase(s.begin());
    return reshape(t, s);
}
} // namespace

Tensor HyperpriorCodec::analysis(const Image & x) const {
    validate_codec_input(x);
    return squeeze0(analysis_t(unsqueeze0(x.pixels)));
}

Image HyperpriorCodec::synthesis(const Tensor & y_hat) const {
    if (y_hat.rank() != 3) throw CodecError("synthesis: expects [N,h,w]");
    Tensor out = synthesis_t(unsqueeze0(y_hat));
    return Image{squeeze0(clamp(out, 0.0, 1.0)).detach()};
}

Tensor HyperpriorCodec::hyper_analysis(const Tensor & y) const {
    if (y.rank() != 3) throw CodecError("hyper_analysis: expects [N,h,w]");
    return squeeze0(hyper_analysis_t(unsqueeze0(y)));
}

EntropyParams HyperpriorCodec::hyper_synthesis(const Tensor & z_hat) const {
    if (z_hat.rank() != 3) throw CodecError("hyper_synthesis: expects [Nh,h,w]");
    EntropyParams ep = hyper_synthesis_t(unsqueeze0(z_hat));
    return EntropyParams{squeeze0(ep.mean), squeeze0(ep.scale)};
}

Tensor HyperpriorCodec::rate_bits(const Tensor & y_q, const Tensor & z_q,
                                  const EntropyParams & params) const {
    if (y_q.shape() != params.mean.shape() || y_q.shape() != params.scale.shape())
        throw CodecError("rate: entropy parameter shapes do not match y");
    Tensor y4 = y_q.rank() == 3 ? unsqueeze0(y_q) : y_q;
    Tensor z4 = z_q.rank() == 3 ? unsqueeze0(z_q) : z_q;
    Tensor m4 = params.mean.rank() == 3 ? unsqueeze0(params.mean) : params.mean;
    Tensor s4 = params.scale.rank() == 3 ? unsqueeze0(params.scale) : params.scale;
    Tensor y_bits = sum(gaussian_bits(y4, m4, s4, kProbFloor));
    Tensor z_bits = prior_->bits(z4);
    return add(y_bits, z_bits);
}

Bitstream HyperpriorCodec::entropy_encode(const Tensor & y_hat, const Tensor & z_hat,
                                          uint8_t lambda_index, uint64_t config_hash) const {
    if (y_hat.rank() != 3 || z_hat.rank() != 3) throw CodecError("entropy_encode: expects [C,h,w]");
    const int64_t h = y_hat.dim(1), w = y_hat.dim(2);
    Bitstream b;
    b.height = uint32_t(h * 16);
    b.width = uint32_t(w * 16);
    b.lambda_index = lambda_index;
    b.config_hash = config_hash;

    // hyper latent first, one shared table per channel
    {
        RangeEncoder enc;
        const int64_t zh = z_hat.dim(1), zw = z_hat.dim(2);
        auto zd = z_hat.data();
        for (int c = 0; c < cfg_.hyper_channels; ++c) {
            auto [lo, hi] = prior_->mass_window(c, 1e-9);
            const auto pmf = prior_->pmf_window(c, lo, hi);
            const double tail_lo = prior_->cdf_value(c, lo - 0.5);
            const double tail_hi = 1.0 - prior_->cdf_value(c, hi + 0.5);
            const QuantizedCdf cdf = build_quantized_cdf(pmf, tail_lo, tail_hi, lo);
            for (int64_t t = 0; t < zh * zw; ++t) {
                const double v = zd[size_t(c * zh * zw + t)];
                if (v != std::round(v)) throw CodecError("entropy_encode: z_hat must be integer");
                encode_symbol(enc, cdf, int(v));
            }
        }
        b.hyper_payload = enc.finish();
    }

    // main latent conditioned on the decoded-side entropy parameters
    {
        EntropyParams ep = hyper_synthesis(z_hat.detach());
        RangeEncoder enc;
        auto yd = y_hat.data();
        auto md = ep.mean.data();
        auto sd = ep.scale.data();
        for (size_t i = 0; i < yd.size(); ++i) {
            const double v = yd[i];
            if (v != std::round(v)) throw CodecError("entropy_encode: y_hat must be integer");
            const QuantizedCdf cdf = gaussian_quantized_cdf(md[i], sd[i]);
            encode_symbol(enc, cdf, int(v));
        }
        b.main_payload = enc.finish();
    }
    return b;
}

HyperpriorCodec::Decoded HyperpriorCodec::entropy_decode(const Bitstream & b) const {
    const int64_t h = b.height / 16, w = b.width / 16;
    const int64_t zh = b.height / 64, zw = b.width / 64;

    Tensor z_hat = Tensor::zeros({cfg_.hyper_channels, zh, zw});
    {
        RangeDecoder dec(b.hyper_payload);
        auto zd = z_hat.data();
        for (int c = 0; c < cfg_.hyper_channels; ++c) {
            auto [lo, hi] = prior_->mass_window(c, 1e-9);
            const auto pmf = prior_->pmf_window(c, lo, hi);
            const double tail_lo = prior_->cdf_value(c, lo - 0.5);
            const double tail_hi = 1.0 - prior_->cdf_value(c, hi + 0.5);
            const QuantizedCdf cdf = build_quantized_cdf(pmf, tail_lo, tail_hi, lo);
            for (int64_t t = 0; t < zh * zw; ++t)
                zd[size_t(c * zh * zw + t)] = double(decode_symbol(dec, cdf));
        }
    }

    Tensor y_hat = Tensor::zeros({cfg_.channels, h, w});
    {
        EntropyParams ep = hyper_synthesis(z_hat);
        RangeDecoder dec(b.main_payload);
        auto yd = y_hat.data();
        auto md = ep.mean.data();
        auto sd = ep.scale.data();
        for (size_t i = 0; i < yd.size(); ++i) {
            const QuantizedCdf cdf = gaussian_quantized_cdf(md[i], sd[i]);
            yd[i] = double(decode_symbol(dec, cdf));
        }
    }
    return Decoded{y_hat, z_hat};
}

Image HyperpriorCodec::encode_decode_image(const Image & x) const {
    Tensor y = analysis(x);
    return synthesis(round_nograd(y));
}

double psnr(const Image & a, const Image & b) {
    if (a.pixels.shape() != b.pixels.shape()) throw CodecError("psnr: shape mismatch");
    auto pa = a.pixels.data(), pb = b.pixels.data();
    double acc = 0.0;
    for (size_t i = 0; i < pa.size(); ++i) {
        const double d = pa[i] - pb[i];
        acc += d * d;
    }
    const double mse = acc / double(pa.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

} // namespace lbridge
