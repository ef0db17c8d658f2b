#pragma once

#include <string>
#include <vector>

#include "lbridge/attention.hpp"
#include "lbridge/config.hpp"
#include "lbridge/image.hpp"

namespace lbridge {

struct ClipError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Channel-normalized encoder input. The flag guards against normalizing
// twice; preprocess() is a no-op on an already-normalized input.
struct EncoderInput {
    Tensor planes; // [3,R,R]
    bool normalized = false;
};

struct EncoderOutput {
    Tensor tokens; // [L,D], output of the final layer after the final norm
    Tensor emb;    // [De], projected CLS, L2-normalized
};

// CLIP-style vision transformer, full (C) and partial (C') with the first K
// blocks removed. Configurable from toy widths up to ViT-L/14 dims.
class VisionTransformer {
  public:
    VisionTransformer(const EncoderCfg & cfg, uint64_t init_seed);

    const EncoderCfg & cfg() const { return cfg_; }

    Tensor patch_tokens(const EncoderInput & in) const; // [L,D] with CLS + positions
    Tensor run_blocks(Tensor tokens, int from, int to) const;
    EncoderOutput head(const Tensor & tokens) const; // final LN + CLS projection

    EncoderOutput full_encode(const EncoderInput & in) const;
    // consumes neck output (or patch tokens when K=0); runs blocks K..n
    EncoderOutput partial_encode(const Tensor & tokens) const;
    // tokens entering block k of the full pass (for split-consistency checks)
    Tensor layer_activations(const EncoderInput & in, int k) const;

    int blocks_executed_last() const { return blocks_executed_; }

    ParamRegistry & params() { return reg_; }
    const ParamRegistry & params() const { return reg_; }

  private:
    EncoderOutput partial_after(int from, const Tensor & tokens) const;

    EncoderCfg cfg_;
    ParamRegistry reg_;
    Tensor patch_w_; // [D,3,P,P], no bias (CLIP convention)
    Tensor cls_, pos_;
    std::vector<BlockWeights> blocks_;
    Tensor ln_final_g_, ln_final_b_;
    Tensor proj_; // [D,De]
    mutable int blocks_executed_ = 0;
};

// Byte-level tokenizer + small transformer; the embedding-space contract
// (unit-norm vectors comparable with image embeddings) is all that matters.
class TextEncoder {
  public:
    TextEncoder(const TextCfg & cfg, int embed_dim, uint64_t init_seed);

    Tensor encode(const std::string & label) const; // [De], L2-normalized
    std::vector<int> tokenize(const std::string & label) const;

    ParamRegistry & params() { return reg_; }
    const ParamRegistry & params() const { return reg_; }

  private:
    TextCfg cfg_;
    int embed_dim_;
    ParamRegistry reg_;
    Tensor tok_emb_; // [258,Dt]: 256 bytes + BOS + EOS
    Tensor pos_;
    std::vector<BlockWeights> blocks_;
    Tensor ln_final_g_, ln_final_b_;
    Tensor proj_;
};

// The frozen encoder stack: visual encoder, text encoder, preprocessing.
class ClipStack {
  public:
    ClipStack(const EncoderCfg & cfg, uint64_t init_seed);

    EncoderInput preprocess(const Image & img) const;
    EncoderInput preprocess(const EncoderInput & in) const; // idempotent

    EncoderOutput full_encode_image(const Image & img) const;
    std::vector<Tensor> text_encode(const std::vector<std::string> & labels) const;

    VisionTransformer & visual() { return visual_; }
    const VisionTransformer & visual() const { return visual_; }
    TextEncoder & text() { return text_; }
    const TextEncoder & text() const { return text_; }

    uint64_t checksum() const;

  private:
    EncoderCfg cfg_;
    VisionTransformer visual_;
    TextEncoder text_;
};

// differentiable preprocessing core used by baseline training paths:
// resize [B,3,H,W] to the encoder resolution and channel-normalize
Tensor preprocess_tensor(const Tensor & x, const EncoderCfg & cfg);

} // namespace lbridge
