#include "lbridge/neck.hpp"

#include <algorithm>
#include <cmath>

namespace lbridge {

TransformNeck::TransformNeck(int latent_channels, int width, int max_grid, uint64_t init_seed)
    : latent_channels_(latent_channels), width_(width), max_grid_(max_grid) {
    Rng rng(init_seed);
    const int heads = std::max(1, width / 64); // ViT convention
    proj_w_ = reg_.add("proj.w",
                       Tensor::randn({latent_channels, width}, rng,
                                     std::sqrt(2.0 / double(latent_channels)), true));
    proj_b_ = reg_.add("proj.b", Tensor::zeros({width}, true));
    cls_ = reg_.add("cls", Tensor::randn({1, width}, rng, 0.02, true));
    pos_ = reg_.add("pos", Tensor::randn({max_grid * max_grid + 1, width}, rng, 0.02, true));
    block_ = make_block(reg_, "block", width, heads, rng);
}

Tensor TransformNeck::project_tokens(const Tensor & y_hat) const {
    if (y_hat.rank() != 3 || y_hat.dim(0) != latent_channels_)
        throw NeckError("project_tokens: expects [N,g,g] with N=" + std::to_string(latent_channels_));
    const int64_t g = y_hat.dim(1);
    if (y_hat.dim(2) != g) throw NeckError("project_tokens: latent grid must be square");
    if (g > max_grid_)
        throw NeckError("project_tokens: grid " + std::to_string(g) +
                        " exceeds positional table (max " + std::to_string(max_grid_) + ")");
    const int64_t g2 = g * g;
    // [N,g,g] -> [g*g, N] -> linear -> [g*g, D]
    Tensor grid = permute3(reshape(y_hat, {latent_channels_, g2, 1}), 1, 0, 2);
    grid = linear(reshape(grid, {g2, latent_channels_}), proj_w_, proj_b_);
    Tensor tokens = concat_rows({cls_, grid});

    Tensor pos = pos_;
    if (g2 + 1 != pos_.dim(0)) {
        // sub-grid: CLS position plus the leading g^2 grid positions
        pos = concat_rows({slice_rows(pos_, 0, 1), slice_rows(pos_, 1, g2 + 1)});
    }
    return add(tokens, pos);
}

Tensor TransformNeck::block_forward(const Tensor & tokens) const {
    if (tokens.rank() != 2 || tokens.dim(1) != width_)
        throw NeckError("block_forward: expects [L,D] with D=" + std::to_string(width_));
    return transformer_block(tokens, block_);
}

Tensor TransformNeck::forward(const Tensor & y_hat) const {
    return block_forward(project_tokens(y_hat));
}

} // namespace lbridge
