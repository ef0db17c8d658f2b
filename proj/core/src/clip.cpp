#include "lbridge/clip.hpp"

#include <cmath>

namespace lbridge {

VisionTransformer::VisionTransformer(const EncoderCfg & cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng(init_seed);
    const int D = cfg_.width, P = cfg_.patch, L = cfg_.tokens();
    const double ps = std::sqrt(2.0 / double(3 * P * P));
    patch_w_ = reg_.add("patch.w", Tensor::randn({D, 3, P, P}, rng, ps, true));
    cls_ = reg_.add("cls", Tensor::randn({1, D}, rng, 0.02, true));
    pos_ = reg_.add("pos", Tensor::randn({L, D}, rng, 0.02, true));
    for (int i = 0; i < cfg_.layers; ++i)
        blocks_.push_back(make_block(reg_, "block" + std::to_string(i), D, cfg_.heads, rng));
    ln_final_g_ = reg_.add("ln_final.g", Tensor::full({D}, 1.0).set_requires_grad(true));
    ln_final_b_ = reg_.add("ln_final.b", Tensor::zeros({D}, true));
    proj_ = reg_.add("proj", Tensor::randn({D, cfg_.embed_dim}, rng, 1.0 / std::sqrt(double(D)), true));
}

Tensor VisionTransformer::patch_tokens(const EncoderInput & in) const {
    if (!in.normalized) throw ClipError("encoder input must be preprocessed");
    if (in.planes.rank() != 3 || in.planes.dim(1) != cfg_.resolution ||
        in.planes.dim(2) != cfg_.resolution)
        throw ClipError("encoder input resolution mismatch");
    Tensor x = reshape(in.planes, {1, 3, cfg_.resolution, cfg_.resolution});
    Tensor grid = conv2d(x, patch_w_, Tensor(), cfg_.patch, 0); // [1,D,g,g]
    const int64_t g2 = int64_t(cfg_.grid()) * cfg_.grid();
    // [1,D,g,g] -> [g*g, D]
    Tensor tokens = permute3(reshape(grid, {1, cfg_.width, g2}), 0, 2, 1);
    tokens = reshape(tokens, {g2, cfg_.width});
    Tensor all = concat_rows({cls_, tokens});
    return add(all, pos_);
}

Tensor VisionTransformer::run_blocks(Tensor tokens, int from, int to) const {
    blocks_executed_ = 0;
    for (int i = from; i < to; ++i) {
        tokens = transformer_block(tokens, blocks_[size_t(i)]);
        ++blocks_executed_;
    }
    return tokens;
}

EncoderOutput VisionTransformer::head(const Tensor & tokens) const {
    EncoderOutput out;
    out.tokens = layer_norm(tokens, ln_final_g_, ln_final_b_);
    Tensor cls = select_row(out.tokens, 0);
    out.emb = l2_normalize_vec(reshape(matmul(reshape(cls, {1, cfg_.width}), proj_),
                                       {cfg_.embed_dim}));
    return out;
}

EncoderOutput VisionTransformer::partial_after(int from, const Tensor & tokens) const {
    return head(run_blocks(tokens, from, cfg_.layers));
}

EncoderOutput VisionTransformer::full_encode(const EncoderInput & in) const {
    return partial_after(0, patch_tokens(in));
}

EncoderOutput VisionTransformer::partial_encode(const Tensor & tokens) const {
    if (tokens.rank() != 2 || tokens.dim(1) != cfg_.width)
        throw ClipError("partial_encode: token width mismatch (encoder width " +
                        std::to_string(cfg_.width) + ")");
    if (tokens.dim(0) != cfg_.tokens())
        throw ClipError("partial_encode: token count mismatch");
    return partial_after(cfg_.skip_layers, tokens);
}

Tensor VisionTransformer::layer_activations(const EncoderInput & in, int k) const {
    if (k < 0 || k > cfg_.layers) throw ClipError("layer_activations: bad layer index");
    return run_blocks(patch_tokens(in), 0, k);
}

TextEncoder::TextEncoder(const TextCfg & cfg, int embed_dim, uint64_t init_seed)
    : cfg_(cfg), embed_dim_(embed_dim) {
    Rng rng(init_seed);
    const int D = cfg_.width;
    tok_emb_ = reg_.add("tok_emb", Tensor::randn({258, D}, rng, 0.02, true));
    pos_ = reg_.add("pos", Tensor::randn({cfg_.context, D}, rng, 0.02, true));
    for (int i = 0; i < cfg_.layers; ++i)
        blocks_.push_back(make_block(reg_, "block" + std::to_string(i), D, cfg_.heads, rng));
    ln_final_g_ = reg_.add("ln_final.g", Tensor::full({D}, 1.0).set_requires_grad(true));
    ln_final_b_ = reg_.add("ln_final.b", Tensor::zeros({D}, true));
    proj_ = reg_.add("proj", Tensor::randn({D, embed_dim}, rng, 1.0 / std::sqrt(double(D)), true));
}

std::vector<int> TextEncoder::tokenize(const std::string & label) const {
    std::vector<int> ids;
    ids.push_back(256); // BOS
    for (unsigned char c : label) {
        if (int(ids.size()) >= cfg_.context - 1) break;
        ids.push_back(int(c));
    }
    ids.push_back(257); // EOS
    return ids;
}

Tensor TextEncoder::encode(const std::string & label) const {
    const std::vector<int> ids = tokenize(label);
    Tensor t = embedding_rows(tok_emb_, ids);
    t = add(t, slice_rows(pos_, 0, int64_t(ids.size())));
    for (const auto & b : blocks_) t = transformer_block(t, b);
    t = layer_norm(t, ln_final_g_, ln_final_b_);
    Tensor eos = select_row(t, int64_t(ids.size()) - 1);
    return l2_normalize_vec(reshape(matmul(reshape(eos, {1, cfg_.width}), proj_), {embed_dim_}));
}

ClipStack::ClipStack(const EncoderCfg & cfg, uint64_t init_seed)
    : cfg_(cfg), visual_(cfg, init_seed), text_(cfg.text, cfg.embed_dim, init_seed + 1) {}

Tensor preprocess_tensor(const Tensor & x, const EncoderCfg & cfg) {
    Tensor r = resize_bilinear(x, cfg.resolution, cfg.resolution);
    // per-channel (x - mean) / std as one affine map
    const int64_t B = r.dim(0), hw = int64_t(cfg.resolution) * cfg.resolution;
    std::vector<double> scale(size_t(B * 3 * hw)), shift(size_t(B * 3 * hw));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < 3; ++c) {
            const double sc = 1.0 / cfg.norm_std[size_t(c)];
            const double sh = -cfg.norm_mean[size_t(c)] / cfg.norm_std[size_t(c)];
            for (int64_t t = 0; t < hw; ++t) {
                scale[size_t((b * 3 + c) * hw + t)] = sc;
                shift[size_t((b * 3 + c) * hw + t)] = sh;
            }
        }
    const Shape s = r.shape();
    return add(mul(r, Tensor::from_data(s, std::move(scale))), Tensor::from_data(s, std::move(shift)));
}

EncoderInput ClipStack::preprocess(const Image & img) const {
    for (double v : img.pixels.data())
        if (!std::isfinite(v)) throw ClipError("preprocess: non-finite pixel");
    Tensor x = reshape(img.pixels.detach(), {1, 3, img.height(), img.width()});
    Tensor n = preprocess_tensor(x, cfg_);
    return EncoderInput{reshape(n, {3, cfg_.resolution, cfg_.resolution}).detach(), true};
}

EncoderInput ClipStack::preprocess(const EncoderInput & in) const {
    if (in.normalized && in.planes.dim(1) == cfg_.resolution) return in;
    throw ClipError("preprocess: input already denormalized or wrong resolution");
}

EncoderOutput ClipStack::full_encode_image(const Image & img) const {
    return visual_.full_encode(preprocess(img));
}

std::vector<Tensor> ClipStack::text_encode(const std::vector<std::string> & labels) const {
    if (labels.empty()) throw ClipError("text_encode: empty label list");
    std::vector<Tensor> out;
    out.reserve(labels.size());
    for (const auto & l : labels) out.push_back(text_.encode(l));
    return out;
}

uint64_t ClipStack::checksum() const {
    uint64_t h = params_checksum(visual_.params());
    const uint64_t th = params_checksum(text_.params());
    return h ^ (th + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
}

} // namespace lbridge
