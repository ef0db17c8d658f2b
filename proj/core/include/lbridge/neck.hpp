#pragma once

#include "lbridge/attention.hpp"
#include "lbridge/tensor.hpp"

namespace lbridge {

struct NeckError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The transform-neck T: linear projection of quantized latent vectors to
// encoder width, a learned class token, learned positional embeddings, and a
// single pre-norm attention + feed-forward block. Its output feeds the
// partial visual encoder directly.
class TransformNeck {
  public:
    // latent_channels = codec N; width = encoder width D; max_grid bounds the
    // positional table (grid tokens + 1)
    TransformNeck(int latent_channels, int width, int max_grid, uint64_t init_seed);

    // [N,g,g] -> [(g*g)+1, D]: flatten, project, prepend CLS, add positions
    Tensor project_tokens(const Tensor & y_hat) const;
    // the attention/FFN block, shape-preserving
    Tensor block_forward(const Tensor & tokens) const;
    // full neck: block_forward(project_tokens(y_hat))
    Tensor forward(const Tensor & y_hat) const;

    int latent_channels() const { return latent_channels_; }
    int width() const { return width_; }
    int heads() const { return block_.attn.heads; }
    int max_grid() const { return max_grid_; }

    ParamRegistry & params() { return reg_; }
    const ParamRegistry & params() const { return reg_; }

  private:
    int latent_channels_, width_, max_grid_;
    ParamRegistry reg_;
    Tensor proj_w_, proj_b_; // [N,D],[D]
    Tensor cls_;             // [1,D]
    Tensor pos_;             // [max_grid^2+1, D]
    BlockWeights block_;
};

} // namespace lbridge
