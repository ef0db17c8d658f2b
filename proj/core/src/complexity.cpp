#include "lbridge/complexity.hpp"

#include <sstream>
#include <stdexcept>

namespace lbridge {

LayerSpec LayerSpec::conv(std::string name, int64_t c_in, int64_t c_out, int64_t k, int64_t out_h,
                          int64_t out_w, bool bias) {
    LayerSpec s;
    s.kind = Kind::kConv;
    s.name = std::move(name);
    s.c_in = c_in;
    s.c_out = c_out;
    s.kernel = k;
    s.sp_h = out_h;
    s.sp_w = out_w;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::tconv(std::string name, int64_t c_in, int64_t c_out, int64_t k, int64_t in_h,
                           int64_t in_w, bool bias) {
    LayerSpec s = conv(std::move(name), c_in, c_out, k, in_h, in_w, bias);
    s.kind = Kind::kTConv;
    return s;
}

LayerSpec LayerSpec::lin(std::string name, int64_t d_in, int64_t d_out, int64_t tokens, bool bias) {
    LayerSpec s;
    s.kind = Kind::kLinear;
    s.name = std::move(name);
    s.d_in = d_in;
    s.d_out = d_out;
    s.tokens = tokens;
    s.bias = bias;
    return s;
}

LayerSpec LayerSpec::attention(std::string name, int64_t width, int64_t seq, int64_t heads) {
    LayerSpec s;
    s.kind = Kind::kAttention;
    s.name = std::move(name);
    s.width = width;
    s.seq = seq;
    s.heads = heads;
    return s;
}

LayerSpec LayerSpec::layer_norm_spec(std::string name, int64_t width) {
    LayerSpec s;
    s.kind = Kind::kLayerNorm;
    s.name = std::move(name);
    s.width = width;
    return s;
}

LayerSpec LayerSpec::activation(std::string name) {
    LayerSpec s;
    s.kind = Kind::kActivation;
    s.name = std::move(name);
    return s;
}

LayerSpec LayerSpec::embedding(std::string name, int64_t count) {
    LayerSpec s;
    s.kind = Kind::kEmbedding;
    s.name = std::move(name);
    s.count = count;
    return s;
}

int64_t count_params(std::span<const LayerSpec> specs) {
    int64_t total = 0;
    for (const auto & s : specs) {
        switch (s.kind) {
            case LayerSpec::Kind::kConv:
            case LayerSpec::Kind::kTConv:
                total += s.kernel * s.kernel * s.c_in * s.c_out + (s.bias ? s.c_out : 0);
                break;
            case LayerSpec::Kind::kLinear:
                total += s.d_in * s.d_out + (s.bias ? s.d_out : 0);
                break;
            case LayerSpec::Kind::kAttention:
                total += 4 * (s.width * s.width + s.width);
                break;
            case LayerSpec::Kind::kLayerNorm: total += 2 * s.width; break;
            case LayerSpec::Kind::kActivation: break;
            case LayerSpec::Kind::kEmbedding: total += s.count; break;
        }
    }
    return total;
}

int64_t count_macs(std::span<const LayerSpec> specs) {
    int64_t total = 0;
    for (const auto & s : specs) {
        switch (s.kind) {
            case LayerSpec::Kind::kConv:
            case LayerSpec::Kind::kTConv:
                total += s.kernel * s.kernel * s.c_in * s.c_out * s.sp_h * s.sp_w;
                break;
            case LayerSpec::Kind::kLinear: total += s.tokens * s.d_in * s.d_out; break;
            case LayerSpec::Kind::kAttention:
                total += 4 * s.seq * s.width * s.width + 2 * s.seq * s.seq * s.width;
                break;
            case LayerSpec::Kind::kLayerNorm:
            case LayerSpec::Kind::kActivation:
            case LayerSpec::Kind::kEmbedding: break;
        }
    }
    return total;
}

double count_kmacs_per_pixel(std::span<const LayerSpec> specs, int64_t image_h, int64_t image_w) {
    if (image_h <= 0 || image_w <= 0) throw std::invalid_argument("kmacs: bad image dims");
    return double(count_macs(specs)) / double(image_h * image_w) / 1000.0;
}

std::vector<LayerSpec> codec_analysis_specs(const CodecCfg & c, int64_t h, int64_t w) {
    std::vector<LayerSpec> s;
    const int64_t k = c.kernel, m = c.hidden;
    s.push_back(LayerSpec::conv("g_a.0", 3, m, k, h / 2, w / 2));
    s.push_back(LayerSpec::activation("g_a.act0"));
    s.push_back(LayerSpec::conv("g_a.1", m, m, k, h / 4, w / 4));
    s.push_back(LayerSpec::activation("g_a.act1"));
    s.push_back(LayerSpec::conv("g_a.2", m, m, k, h / 8, w / 8));
    s.push_back(LayerSpec::activation("g_a.act2"));
    s.push_back(LayerSpec::conv("g_a.3", m, c.channels, k, h / 16, w / 16));
    return s;
}

std::vector<LayerSpec> codec_synthesis_specs(const CodecCfg & c, int64_t h, int64_t w) {
    std::vector<LayerSpec> s;
    const int64_t k = c.kernel, m = c.hidden;
    s.push_back(LayerSpec::tconv("g_s.0", c.channels, m, k, h / 16, w / 16));
    s.push_back(LayerSpec::activation("g_s.act0"));
    s.push_back(LayerSpec::tconv("g_s.1", m, m, k, h / 8, w / 8));
    s.push_back(LayerSpec::activation("g_s.act1"));
    s.push_back(LayerSpec::tconv("g_s.2", m, m, k, h / 4, w / 4));
    s.push_back(LayerSpec::activation("g_s.act2"));
    s.push_back(LayerSpec::tconv("g_s.3", m, 3, k, h / 2, w / 2));
    return s;
}

std::vector<LayerSpec> codec_hyper_analysis_specs(const CodecCfg & c, int64_t h, int64_t w) {
    std::vector<LayerSpec> s;
    const int64_t k = c.kernel, m = c.hidden;
    s.push_back(LayerSpec::conv("h_a.0", c.channels, m, k, h / 32, w / 32));
    s.push_back(LayerSpec::activation("h_a.act0"));
    s.push_back(LayerSpec::conv("h_a.1", m, c.hyper_channels, k, h / 64, w / 64));
    return s;
}

std::vector<LayerSpec> codec_hyper_synthesis_specs(const CodecCfg & c, int64_t h, int64_t w) {
    std::vector<LayerSpec> s;
    const int64_t k = c.kernel, m = c.hidden;
    s.push_back(LayerSpec::tconv("h_s.0", c.hyper_channels, m, k, h / 64, w / 64));
    s.push_back(LayerSpec::activation("h_s.act0"));
    s.push_back(LayerSpec::tconv("h_s.1", m, 2 * c.channels, k, h / 32, w / 32));
    return s;
}

std::vector<LayerSpec> factorized_prior_specs(const CodecCfg & c) {
    // per channel: 1-3-3-3-1 monotone MLP with gates on the hidden layers
    std::vector<LayerSpec> s;
    const int64_t C = c.hyper_channels;
    const int64_t per_channel = (1 * 3 + 3 + 3) + (3 * 3 + 3 + 3) + (3 * 3 + 3 + 3) + (3 * 1 + 1);
    s.push_back(LayerSpec::embedding("prior", C * per_channel));
    return s;
}

std::vector<LayerSpec> neck_specs(int64_t latent_channels, int64_t width, int64_t grid) {
    const int64_t g2 = grid * grid;
    const int64_t seq = g2 + 1;
    const int64_t heads = std::max<int64_t>(1, width / 64);
    std::vector<LayerSpec> s;
    s.push_back(LayerSpec::lin("neck.proj", latent_channels, width, g2));
    s.push_back(LayerSpec::embedding("neck.cls", width));
    s.push_back(LayerSpec::embedding("neck.pos", seq * width));
    s.push_back(LayerSpec::layer_norm_spec("neck.ln1", width));
    s.push_back(LayerSpec::attention("neck.attn", width, seq, heads));
    s.push_back(LayerSpec::layer_norm_spec("neck.ln2", width));
    s.push_back(LayerSpec::lin("neck.ffn.0", width, 4 * width, seq));
    s.push_back(LayerSpec::activation("neck.ffn.act"));
    s.push_back(LayerSpec::lin("neck.ffn.1", 4 * width, width, seq));
    return s;
}

std::vector<LayerSpec> encoder_block_specs(const EncoderCfg & c, int from_layer, int to_layer) {
    std::vector<LayerSpec> s;
    const int64_t D = c.width, L = c.tokens();
    for (int i = from_layer; i < to_layer; ++i) {
        const std::string p = "visual.block" + std::to_string(i);
        s.push_back(LayerSpec::layer_norm_spec(p + ".ln1", D));
        s.push_back(LayerSpec::attention(p + ".attn", D, L, c.heads));
        s.push_back(LayerSpec::layer_norm_spec(p + ".ln2", D));
        s.push_back(LayerSpec::lin(p + ".ffn.0", D, 4 * D, L));
        s.push_back(LayerSpec::activation(p + ".ffn.act"));
        s.push_back(LayerSpec::lin(p + ".ffn.1", 4 * D, D, L));
    }
    return s;
}

std::vector<LayerSpec> encoder_stem_specs(const EncoderCfg & c) {
    std::vector<LayerSpec> s;
    const int64_t g = c.grid();
    s.push_back(LayerSpec::conv("visual.patch", 3, c.width, c.patch, g, g, /*bias=*/false));
    s.push_back(LayerSpec::embedding("visual.cls", c.width));
    s.push_back(LayerSpec::embedding("visual.pos", c.tokens() * c.width));
    return s;
}

std::vector<LayerSpec> encoder_head_specs(const EncoderCfg & c) {
    std::vector<LayerSpec> s;
    s.push_back(LayerSpec::layer_norm_spec("visual.ln_final", c.width));
    s.push_back(LayerSpec::lin("visual.proj", c.width, c.embed_dim, 1, /*bias=*/false));
    return s;
}

std::vector<LayerSpec> unet_specs(int base, int depth, int64_t h, int64_t w) {
    // mirrors UNet in baselines.cpp: double conv per level, stride-2 entry
    // convs going down, tconv k2 s2 going up with skip concatenation, plus a
    // zero-init 1x1 residual head
    std::vector<LayerSpec> s;
    int64_t ch = base, in_c = 3;
    int64_t hh = h, ww = w;
    std::vector<int64_t> enc_ch;
    for (int d = 0; d <= depth; ++d) {
        if (d > 0) {
            hh /= 2;
            ww /= 2;
            ch *= 2;
        }
        const std::string p = "unet.enc" + std::to_string(d);
        s.push_back(LayerSpec::conv(p + ".0", in_c, ch, 3, hh, ww));
        s.push_back(LayerSpec::activation(p + ".act0"));
        s.push_back(LayerSpec::conv(p + ".1", ch, ch, 3, hh, ww));
        s.push_back(LayerSpec::activation(p + ".act1"));
        enc_ch.push_back(ch);
        in_c = ch;
    }
    for (int d = depth - 1; d >= 0; --d) {
        const std::string p = "unet.dec" + std::to_string(d);
        const int64_t skip = enc_ch[size_t(d)];
        s.push_back(LayerSpec::tconv(p + ".up", ch, skip, 2, hh, ww));
        hh *= 2;
        ww *= 2;
        s.push_back(LayerSpec::conv(p + ".0", skip * 2, skip, 3, hh, ww));
        s.push_back(LayerSpec::activation(p + ".act0"));
        s.push_back(LayerSpec::conv(p + ".1", skip, skip, 3, hh, ww));
        s.push_back(LayerSpec::activation(p + ".act1"));
        ch = skip;
    }
    s.push_back(LayerSpec::conv("unet.head", ch, 3, 1, h, w));
    return s;
}

std::vector<ComplexityRow> profile_paths(const RunConfig & cfg, int64_t image_h, int64_t image_w) {
    auto row = [&](std::string name, const std::vector<LayerSpec> & specs) {
        ComplexityRow r;
        r.name = std::move(name);
        r.params_millions = double(count_params(specs)) / 1e6;
        r.kmac_per_pixel = count_kmacs_per_pixel(specs, image_h, image_w);
        return r;
    };
    std::vector<ComplexityRow> rows;
    const int64_t grid = image_h / 16;
    rows.push_back(row("transform-neck", neck_specs(cfg.codec.channels, cfg.encoder.width, grid)));
    rows.push_back(row("decoder", codec_synthesis_specs(cfg.codec, image_h, image_w)));
    rows.push_back(
        row("post-processing network", unet_specs(cfg.training.unet_base, cfg.training.unet_depth,
                                                  image_h, image_w)));
    rows.push_back(row("first " + std::to_string(cfg.encoder.skip_layers) + " encoder layers",
                       encoder_block_specs(cfg.encoder, 0, cfg.encoder.skip_layers)));
    return rows;
}

std::string render_report(const std::vector<ComplexityRow> & rows) {
    std::ostringstream os;
    os << "component,params_m,kmac_per_pixel\n";
    for (const auto & r : rows) {
        os << r.name << "," << r.params_millions << "," << r.kmac_per_pixel << "\n";
    }
    return os.str();
}

} // namespace lbridge
