#pragma once

#include <string>

#include "lbridge/serialize.hpp"
#include "lbridge/tensor.hpp"

namespace lbridge {

// Pre-norm transformer building blocks shared by the transform-neck, the
// visual encoder and the text encoder.

struct AttnWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 1;
};

struct BlockWeights {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    AttnWeights attn;
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

AttnWeights make_attention(ParamRegistry & reg, const std::string & prefix, int width, int heads,
                           Rng & rng);
BlockWeights make_block(ParamRegistry & reg, const std::string & prefix, int width, int heads,
                        Rng & rng);

// x [L,D] -> [L,D]
Tensor multihead_attention(const Tensor & x, const AttnWeights & w);
// pre-norm residual block: x + Attn(LN1(x)), then + FFN(LN2(.))
Tensor transformer_block(const Tensor & x, const BlockWeights & w);

} // namespace lbridge
