#pragma once

#include <memory>

#include "lbridge/bitstream.hpp"
#include "lbridge/config.hpp"
#include "lbridge/entropy.hpp"
#include "lbridge/image.hpp"
#include "lbridge/serialize.hpp"
#include "lbridge/tensor.hpp"

namespace lbridge {

struct EntropyParams {
    Tensor mean;  // [B,N,h,w]
    Tensor scale; // [B,N,h,w], >= scale_floor
};

struct CodecError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mean-scale hyperprior codec: four stride-2 stages in the main transforms
// (16x) and two in the hyper transforms (64x), with a conditional Gaussian
// over the main latent and a learned factorized prior over the hyper latent.
class HyperpriorCodec {
  public:
    HyperpriorCodec(const CodecCfg & cfg, uint64_t init_seed);

    const CodecCfg & cfg() const { return cfg_; }

    // batched transforms on [B,...] tensors (differentiable)
    Tensor analysis_t(const Tensor & x) const;       // [B,3,H,W] -> [B,N,H/16,W/16]
    Tensor synthesis_t(const Tensor & y_hat) const;  // [B,N,h,w] -> [B,3,16h,16w] (unclamped)
    Tensor hyper_analysis_t(const Tensor & y) const; // [B,N,h,w] -> [B,Nh,h/4,w/4]
    EntropyParams hyper_synthesis_t(const Tensor & z_hat) const;

    // single-image convenience wrappers enforcing the Image contract
    Tensor analysis(const Image & x) const;          // [N,h,w]
    Image synthesis(const Tensor & y_hat) const;     // clamped to [0,1]
    Tensor hyper_analysis(const Tensor & y) const;   // [N,h,w] -> [Nh,...]
    EntropyParams hyper_synthesis(const Tensor & z_hat) const; // 3-D in/out

    const FactorizedPrior & prior() const { return *prior_; }

    // Estimated rate in bits (log2): conditional Gaussian for y, factorized
    // prior for z. Differentiable w.r.t. all continuous inputs.
    Tensor rate_bits(const Tensor & y_q, const Tensor & z_q, const EntropyParams & params) const;

    // bit-exact transport of integer latents
    Bitstream entropy_encode(const Tensor & y_hat, const Tensor & z_hat, uint8_t lambda_index,
                             uint64_t config_hash) const;
    struct Decoded {
        Tensor y_hat; // [N,h,w]
        Tensor z_hat; // [Nh,...]
    };
    Decoded entropy_decode(const Bitstream & b) const;

    Image encode_decode_image(const Image & x) const; // analysis+round+synthesis

    ParamRegistry & params() { return reg_; }
    const ParamRegistry & params() const { return reg_; }

  private:
    CodecCfg cfg_;
    ParamRegistry reg_;

    struct ConvLayer {
        Tensor w, b;
    };
    std::vector<ConvLayer> g_a_, g_s_, h_a_, h_s_;
    std::unique_ptr<FactorizedPrior> prior_;

    ConvLayer make_conv(const std::string & name, int c_in, int c_out, Rng & rng, bool transpose);
};

// 10*log10(1/MSE) over [0,1] pixels; returns +infinity for identical inputs.
double psnr(const Image & a, const Image & b);

} // namespace lbridge
