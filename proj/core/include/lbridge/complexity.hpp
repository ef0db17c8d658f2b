#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lbridge/config.hpp"

namespace lbridge {

// Closed-form parameter / MAC accounting over declared layer shapes.
//
// MAC convention (one multiply-accumulate = one MAC):
//   conv            k^2 * C_in * C_out * H_out * W_out
//   transposed conv k^2 * C_in * C_out * H_in * W_in
//   linear          tokens * d_in * d_out
//   attention       4 * L * D^2  (QKV + output projections)  +  2 * L^2 * D
//   layer norm, activations, embeddings: 0 MACs
// Biases contribute parameters but no MACs.
struct LayerSpec {
    enum class Kind { kConv, kTConv, kLinear, kAttention, kLayerNorm, kActivation, kEmbedding };
    Kind kind = Kind::kConv;
    std::string name;

    // conv / tconv
    int64_t c_in = 0, c_out = 0, kernel = 0;
    int64_t sp_h = 0, sp_w = 0; // H_out,W_out for conv; H_in,W_in for tconv
    bool bias = true;

    // linear
    int64_t d_in = 0, d_out = 0, tokens = 0;

    // attention / layer norm
    int64_t width = 0, seq = 0, heads = 0;

    // embedding (pure parameters: positional tables, class tokens, vocab)
    int64_t count = 0;

    static LayerSpec conv(std::string name, int64_t c_in, int64_t c_out, int64_t k, int64_t out_h,
                          int64_t out_w, bool bias = true);
    static LayerSpec tconv(std::string name, int64_t c_in, int64_t c_out, int64_t k, int64_t in_h,
                           int64_t in_w, bool bias = true);
    static LayerSpec lin(std::string name, int64_t d_in, int64_t d_out, int64_t tokens,
                         bool bias = true);
    static LayerSpec attention(std::string name, int64_t width, int64_t seq, int64_t heads);
    static LayerSpec layer_norm_spec(std::string name, int64_t width);
    static LayerSpec activation(std::string name);
    static LayerSpec embedding(std::string name, int64_t count);
};

int64_t count_params(std::span<const LayerSpec> specs);
int64_t count_macs(std::span<const LayerSpec> specs);
// MACs per source-image pixel, in thousands
double count_kmacs_per_pixel(std::span<const LayerSpec> specs, int64_t image_h, int64_t image_w);

// Spec builders. Each enumerates exactly the layers the corresponding module
// instantiates from the same config object, so profiled and executed
// architectures cannot drift.
std::vector<LayerSpec> codec_analysis_specs(const CodecCfg & c, int64_t h, int64_t w);
std::vector<LayerSpec> codec_synthesis_specs(const CodecCfg & c, int64_t h, int64_t w);
std::vector<LayerSpec> codec_hyper_analysis_specs(const CodecCfg & c, int64_t h, int64_t w);
std::vector<LayerSpec> codec_hyper_synthesis_specs(const CodecCfg & c, int64_t h, int64_t w);
std::vector<LayerSpec> factorized_prior_specs(const CodecCfg & c);
// neck over a g x g latent grid with the given latent channels and width
std::vector<LayerSpec> neck_specs(int64_t latent_channels, int64_t width, int64_t grid);
// encoder transformer blocks [from_layer, to_layer) plus shared head parts
std::vector<LayerSpec> encoder_block_specs(const EncoderCfg & c, int from_layer, int to_layer);
std::vector<LayerSpec> encoder_stem_specs(const EncoderCfg & c); // patch embed + cls + pos
std::vector<LayerSpec> encoder_head_specs(const EncoderCfg & c); // final LN + projection
std::vector<LayerSpec> unet_specs(int base, int depth, int64_t h, int64_t w);

struct ComplexityRow {
    std::string name;
    double params_millions = 0.0;
    double kmac_per_pixel = 0.0;
};

// Table-style comparison of the latent path (transform-neck) against the
// image-domain path (decoder + post-processing U-Net + the skipped encoder
// layers), omitting components shared by both.
std::vector<ComplexityRow> profile_paths(const RunConfig & cfg, int64_t image_h, int64_t image_w);

std::string render_report(const std::vector<ComplexityRow> & rows);

} // namespace lbridge
