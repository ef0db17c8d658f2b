#include "lbridge/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace lbridge {

AttnWeights make_attention(ParamRegistry & reg, const std::string & prefix, int width, int heads,
                           Rng & rng) {
    if (width % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
    const double stdev = 1.0 / std::sqrt(double(width));
    AttnWeights w;
    w.heads = heads;
    w.wq = reg.add(prefix + ".wq", Tensor::randn({width, width}, rng, stdev, true));
    w.bq = reg.add(prefix + ".bq", Tensor::zeros({width}, true));
    w.wk = reg.add(prefix + ".wk", Tensor::randn({width, width}, rng, stdev, true));
    w.bk = reg.add(prefix + ".bk", Tensor::zeros({width}, true));
    w.wv = reg.add(prefix + ".wv", Tensor::randn({width, width}, rng, stdev, true));
    w.bv = reg.add(prefix + ".bv", Tensor::zeros({width}, true));
    w.wo = reg.add(prefix + ".wo", Tensor::randn({width, width}, rng, stdev, true));
    w.bo = reg.add(prefix + ".bo", Tensor::zeros({width}, true));
    return w;
}

BlockWeights make_block(ParamRegistry & reg, const std::string & prefix, int width, int heads,
                        Rng & rng) {
    BlockWeights b;
    b.ln1_g = reg.add(prefix + ".ln1.g", Tensor::full({width}, 1.0).set_requires_grad(true));
    b.ln1_b = reg.add(prefix + ".ln1.b", Tensor::zeros({width}, true));
    b.ln2_g = reg.add(prefix + ".ln2.g", Tensor::full({width}, 1.0).set_requires_grad(true));
    b.ln2_b = reg.add(prefix + ".ln2.b", Tensor::zeros({width}, true));
    b.attn = make_attention(reg, prefix + ".attn", width, heads, rng);
    const double s1 = std::sqrt(2.0 / double(width));
    const double s2 = std::sqrt(2.0 / double(4 * width));
    b.fc1_w = reg.add(prefix + ".fc1.w", Tensor::randn({width, 4 * width}, rng, s1, true));
    b.fc1_b = reg.add(prefix + ".fc1.b", Tensor::zeros({4 * width}, true));
    b.fc2_w = reg.add(prefix + ".fc2.w", Tensor::randn({4 * width, width}, rng, s2, true));
    b.fc2_b = reg.add(prefix + ".fc2.b", Tensor::zeros({width}, true));
    return b;
}

Tensor multihead_attention(const Tensor & x, const AttnWeights & w) {
    if (x.rank() != 2) throw std::invalid_argument("attention: expects [L,D]");
    const int64_t L = x.dim(0), D = x.dim(1);
    const int64_t H = w.heads, dh = D / H;

    Tensor q = linear(x, w.wq, w.bq);
    Tensor k = linear(x, w.wk, w.bk);
    Tensor v = linear(x, w.wv, w.bv);

    // [L,D] -> [H,L,dh]
    auto split_heads = [&](const Tensor & t) {
        return permute3(reshape(t, {L, H, dh}), 1, 0, 2);
    };
    Tensor qh = split_heads(q), kh = split_heads(k), vh = split_heads(v);

    Tensor scores = mul_scalar(bmm(qh, kh, /*trans_b=*/true), 1.0 / std::sqrt(double(dh)));
    Tensor attn = softmax_lastdim(scores);     // [H,L,L]
    Tensor ctx = bmm(attn, vh);                // [H,L,dh]
    Tensor merged = reshape(permute3(ctx, 1, 0, 2), {L, D});
    return linear(merged, w.wo, w.bo);
}

Tensor transformer_block(const Tensor & x, const BlockWeights & w) {
    Tensor t = add(x, multihead_attention(layer_norm(x, w.ln1_g, w.ln1_b), w.attn));
    Tensor h = layer_norm(t, w.ln2_g, w.ln2_b);
    h = linear(gelu(linear(h, w.fc1_w, w.fc1_b)), w.fc2_w, w.fc2_b);
    return add(t, h);
}

} // namespace lbridge
