#pragma once

#include "lbridge/clip.hpp"
#include "lbridge/codec.hpp"
#include "lbridge/training.hpp"

namespace lbridge {

// Residual U-Net enhancer: out = x + f(x) with a zero-initialized head, so a
// fresh network is exactly the identity. Downsampling via stride-2 entry
// convs, upsampling via 2x2 transposed convs with skip concatenation.
class UNet {
  public:
    UNet(int base, int depth, uint64_t init_seed);

    Tensor forward(const Tensor & x) const; // [B,3,H,W], unclamped residual output
    Image enhance(const Image & x) const;   // clamped to [0,1]

    int base() const { return base_; }
    int depth() const { return depth_; }

    ParamRegistry & params() { return reg_; }
    const ParamRegistry & params() const { return reg_; }

  private:
    int base_, depth_;
    ParamRegistry reg_;
    struct Conv {
        Tensor w, b;
    };
    std::vector<Conv> enc_; // 2 convs per level
    std::vector<Conv> ups_, dec_;
    Conv head_;
};

void save_unet_checkpoint(const std::filesystem::path & path, const UNet & unet,
                          const RunConfig & cfg, int lambda_index, int64_t step);
std::unique_ptr<UNet> load_unet_checkpoint(const std::filesystem::path & path, const RunConfig & cfg,
                                           bool check_hash = true);
int unet_checkpoint_lambda(const std::filesystem::path & path);

struct PipelineOutput {
    Tensor tokens; // full-encoder tokens (final layer, after final norm)
    Tensor emb;    // projected, unit-norm CLS embedding
    double bpp = 0.0;
};

// image-domain pipeline stem shared by both baselines: preprocess the given
// reconstruction and run the full encoder; bpp is carried through
PipelineOutput encoder_pipeline_from_recon(const Image & x_hat, double bpp, const ClipStack & clip);

// decode-then-recognize: x -> y_hat (real bitstream for bpp) -> x_hat -> C
PipelineOutput baseline_reconstruction(const Image & x, const HyperpriorCodec & codec,
                                       const ClipStack & clip, uint8_t lambda_index,
                                       uint64_t config_hash);

// decode, enhance with the U-Net, then recognize; same bitstream as above
PipelineOutput baseline_postprocess(const Image & x, const HyperpriorCodec & codec, const UNet & unet,
                                    int unet_lambda_index, const ClipStack & clip,
                                    uint8_t lambda_index, uint64_t config_hash);

// trains the U-Net with the surrogate schedule against a frozen codec and
// encoder; returns the checkpoint path
std::filesystem::path train_postprocess(const RunConfig & cfg, const DatasetManifest & manifest,
                                        const std::filesystem::path & codec_ckpt,
                                        const std::filesystem::path & clip_ckpt,
                                        const std::filesystem::path & out_dir);

} // namespace lbridge
