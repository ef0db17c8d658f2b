#include "lbridge/baselines.hpp"

#include <cmath>

namespace lbridge {

namespace fs = std::filesystem;

UNet::UNet(int base, int depth, uint64_t init_seed) : base_(base), depth_(depth) {
    Rng rng(init_seed);
    auto conv = [&](const std::string & name, int c_in, int c_out, int k) {
        Conv c;
        const double stdev = std::sqrt(2.0 / double(c_in * k * k));
        c.w = reg_.add(name + ".w", Tensor::randn({c_out, c_in, k, k}, rng, stdev, true));
        c.b = reg_.add(name + ".b", Tensor::zeros({c_out}, true));
        return c;
    };
    auto tconv = [&](const std::string & name, int c_in, int c_out, int k) {
        Conv c;
        const double stdev = std::sqrt(2.0 / double(c_in * k * k));
        c.w = reg_.add(name + ".w", Tensor::randn({c_in, c_out, k, k}, rng, stdev, true));
        c.b = reg_.add(name + ".b", Tensor::zeros({c_out}, true));
        return c;
    };

    int ch = base_, in_c = 3;
    std::vector<int> enc_ch;
    for (int d = 0; d <= depth_; ++d) {
        if (d > 0) ch *= 2;
        const std::string p = "enc" + std::to_string(d);
        enc_.push_back(conv(p + ".0", in_c, ch, 3));
        enc_.push_back(conv(p + ".1", ch, ch, 3));
        enc_ch.push_back(ch);
        in_c = ch;
    }
    for (int d = depth_ - 1; d >= 0; --d) {
        const std::string p = "dec" + std::to_string(d);
        const int skip = enc_ch[size_t(d)];
        ups_.push_back(tconv(p + ".up", ch, skip, 2));
        dec_.push_back(conv(p + ".0", skip * 2, skip, 3));
        dec_.push_back(conv(p + ".1", skip, skip, 3));
        ch = skip;
    }
    head_ = conv("head", ch, 3, 1);
    // zero head: the residual network starts as the identity
    std::fill(head_.w.data().begin(), head_.w.data().end(), 0.0);
}

Tensor UNet::forward(const Tensor & x) const {
    if (x.rank() != 4 || x.dim(1) != 3) throw std::invalid_argument("unet: expects [B,3,H,W]");
    std::vector<Tensor> skips;
    Tensor t = x;
    for (int d = 0; d <= depth_; ++d) {
        const int stride = d > 0 ? 2 : 1;
        t = relu(conv2d(t, enc_[size_t(2 * d)].w, enc_[size_t(2 * d)].b, stride, 1));
        t = relu(conv2d(t, enc_[size_t(2 * d + 1)].w, enc_[size_t(2 * d + 1)].b, 1, 1));
        if (d < depth_) skips.push_back(t);
    }
    for (int i = 0; i < depth_; ++i) {
        t = conv2d_transpose(t, ups_[size_t(i)].w, ups_[size_t(i)].b, 2, 0, 0);
        t = concat_channels(skips[size_t(depth_ - 1 - i)], t);
        t = relu(conv2d(t, dec_[size_t(2 * i)].w, dec_[size_t(2 * i)].b, 1, 1));
        t = relu(conv2d(t, dec_[size_t(2 * i + 1)].w, dec_[size_t(2 * i + 1)].b, 1, 1));
    }
    Tensor residual = conv2d(t, head_.w, head_.b, 1, 0);
    return add(x, residual);
}

Image UNet::enhance(const Image & x) const {
    Tensor y = forward(reshape(x.pixels.detach(), {1, 3, x.height(), x.width()}));
    return Image{reshape(clamp(y, 0.0, 1.0), {3, x.height(), x.width()}).detach()};
}

void save_unet_checkpoint(const fs::path & path, const UNet & unet, const RunConfig & cfg,
                          int lambda_index, int64_t step) {
    TensorFile f;
    f.meta["kind"] = "unet";
    f.meta["config_hash"] = cfg.hash;
    f.meta["lambda_index"] = lambda_index;
    f.meta["step"] = step;
    f.meta["base"] = unet.base();
    f.meta["depth"] = unet.depth();
    unet.params().save_into(f, "unet.");
    f.save(path);
}

std::unique_ptr<UNet> load_unet_checkpoint(const fs::path & path, const RunConfig & cfg,
                                           bool check_hash) {
    if (!fs::exists(path)) throw CheckpointError("missing unet checkpoint: " + path.string());
    TensorFile f = TensorFile::load(path);
    if (f.meta.value("kind", "") != "unet") throw CheckpointError("not a unet checkpoint");
    if (check_hash && f.meta.value("config_hash", uint64_t(0)) != cfg.hash)
        throw CheckpointError("checkpoint config hash mismatch (artifact from a different config)");
    auto unet = std::make_unique<UNet>(f.meta.at("base").get<int>(), f.meta.at("depth").get<int>(),
                                       cfg.seed + 91);
    unet->params().load_from(f, "unet.");
    return unet;
}

int unet_checkpoint_lambda(const fs::path & path) {
    return TensorFile::load(path).meta.at("lambda_index").get<int>();
}

PipelineOutput encoder_pipeline_from_recon(const Image & x_hat, double bpp, const ClipStack & clip) {
    EncoderOutput out = clip.full_encode_image(x_hat);
    return PipelineOutput{out.tokens.detach(), out.emb.detach(), bpp};
}

PipelineOutput baseline_reconstruction(const Image & x, const HyperpriorCodec & codec,
                                       const ClipStack & clip, uint8_t lambda_index,
                                       uint64_t config_hash) {
    Tensor y_hat = round_nograd(codec.analysis(x));
    Tensor z_hat = round_nograd(codec.hyper_analysis(y_hat));
    Bitstream bs = codec.entropy_encode(y_hat, z_hat, lambda_index, config_hash);
    auto dec = codec.entropy_decode(bs);
    Image x_hat = codec.synthesis(dec.y_hat);
    const double bpp = double(bs.payload_bits()) / double(x.height() * x.width());
    return encoder_pipeline_from_recon(x_hat, bpp, clip);
}

PipelineOutput baseline_postprocess(const Image & x, const HyperpriorCodec & codec, const UNet & unet,
                                    int unet_lambda_index, const ClipStack & clip,
                                    uint8_t lambda_index, uint64_t config_hash) {
    if (unet_lambda_index != int(lambda_index))
        throw TrainError("post-processing U-Net was trained for lambda index " +
                         std::to_string(unet_lambda_index) + ", codec uses " +
                         std::to_string(int(lambda_index)));
    Tensor y_hat = round_nograd(codec.analysis(x));
    Tensor z_hat = round_nograd(codec.hyper_analysis(y_hat));
    Bitstream bs = codec.entropy_encode(y_hat, z_hat, lambda_index, config_hash);
    auto dec = codec.entropy_decode(bs);
    Image x_hat = codec.synthesis(dec.y_hat);
    Image enhanced = unet.enhance(x_hat);
    const double bpp = double(bs.payload_bits()) / double(x.height() * x.width());
    return encoder_pipeline_from_recon(enhanced, bpp, clip);
}

fs::path train_postprocess(const RunConfig & cfg, const DatasetManifest & manifest,
                           const fs::path & codec_ckpt, const fs::path & clip_ckpt,
                           const fs::path & out_dir) {
    fs::create_directories(out_dir);
    auto codec = load_codec_checkpoint(codec_ckpt, cfg);
    codec->params().set_trainable(false);
    auto clip = load_clip_checkpoint(clip_ckpt, cfg);
    const int li = cfg.training.lambda_index;

    ImageDataset data(manifest, "train", cfg.training.image_size);
    const auto & names = data.class_names();

    UNet unet(cfg.training.unet_base, cfg.training.unet_depth, cfg.seed + 91);
    Adam adam(unet.params().tensors(), cfg.optimizer);

    std::vector<Tensor> text_embs;
    for (const auto & l : names) text_embs.push_back(clip->text().encode(l).detach());

    // frozen codec: cache reconstructions and distillation targets
    std::vector<Tensor> recons(size_t(data.size()));
    std::vector<Tensor> targets(size_t(data.size()));
    std::vector<char> ready(size_t(data.size()), 0);
    auto cache = [&](int64_t i) {
        if (!ready[size_t(i)]) {
            const Image & img = data.image(i);
            recons[size_t(i)] = codec->encode_decode_image(img).pixels;
            targets[size_t(i)] = dist_target_tokens(*clip, img, cfg.encoder.cls_in_dist);
            ready[size_t(i)] = 1;
        }
    };

    ScheduleState sched{cfg.schedule.e1, cfg.schedule.e2, cfg.schedule.alpha, cfg.schedule.beta,
                        cfg.schedule.mode};
    const fs::path csv = out_dir / ("metrics_postproc_l" + std::to_string(li) + ".csv");

    for (int64_t step = 0; step < cfg.training.unet_steps; ++step) {
        const int64_t epoch = schedule_epoch(cfg, data, step);
        const Regime regime = sched.regime_at(epoch);
        const auto idx = batch_indices(data, cfg, step);

        std::vector<Tensor> ce_terms, dist_terms;
        for (int64_t i : idx) {
            cache(i);
            const int64_t hw = cfg.training.image_size;
            Tensor x_hat = reshape(recons[size_t(i)], {1, 3, hw, hw});
            Tensor enhanced = unet.forward(x_hat);
            Tensor planes = preprocess_tensor(enhanced, cfg.encoder);
            EncoderInput in{reshape(planes, {3, cfg.encoder.resolution, cfg.encoder.resolution}),
                            true};
            EncoderOutput out = clip->visual().full_encode(in);
            if (regime != Regime::kDistOnly)
                ce_terms.push_back(
                    ce_loss(sim_vector(out.emb, text_embs), data.label(i), cfg.training.tau));
            if (regime != Regime::kCeOnly) {
                Tensor pred = cfg.encoder.cls_in_dist ? out.tokens
                                                      : slice_rows(out.tokens, 1, out.tokens.dim(0));
                dist_terms.push_back(dist_loss(pred, targets[size_t(i)]));
            }
        }
        auto mean_of = [](std::vector<Tensor> & v) {
            if (v.empty()) return Tensor::scalar(0.0);
            Tensor t = v[0];
            for (size_t i = 1; i < v.size(); ++i) t = add(t, v[i]);
            return mul_scalar(t, 1.0 / double(v.size()));
        };
        Tensor ce = mean_of(ce_terms);
        Tensor dist = mean_of(dist_terms);
        Tensor loss = surrogate_loss(epoch, ce, dist, sched);

        adam.zero_grad();
        loss.backward();
        adam.step(cfg.optimizer.lr_phase1);
        append_metrics(csv,
                       MetricsRow{step, to_string(regime), ce.item(), dist.item(), 0, 0, loss.item()},
                       step == 0);
    }

    const fs::path p = out_dir / ("unet_l" + std::to_string(li) + ".ckpt");
    save_unet_checkpoint(p, unet, cfg, li, cfg.training.unet_steps);
    return p;
}

} // namespace lbridge
