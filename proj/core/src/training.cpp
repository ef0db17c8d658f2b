#include "lbridge/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace lbridge {

namespace fs = std::filesystem;

Adam::Adam(std::vector<Tensor> params, const OptimCfg & cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto & p : params_) {
        m_.push_back(Tensor::zeros(p.shape()));
        v_.push_back(Tensor::zeros(p.shape()));
        if (!p.requires_grad())
            throw TrainError("Adam: refusing to register a frozen parameter");
    }
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto p = params_[i].data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        const bool has_grad = params_[i].has_grad();
        auto g = has_grad ? params_[i].grad() : std::span<double>();
        for (size_t j = 0; j < p.size(); ++j) {
            const double gj = has_grad ? g[j] : 0.0;
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto & p : params_) p.zero_grad();
}

void Adam::save_into(TensorFile & f, const std::vector<std::string> & names) const {
    if (names.size() != params_.size()) throw TrainError("Adam::save_into: name count mismatch");
    for (size_t i = 0; i < params_.size(); ++i) {
        f.put("adam.m." + names[i], m_[i]);
        f.put("adam.v." + names[i], v_[i]);
    }
    f.meta["adam_t"] = t_;
}

void Adam::load_from(const TensorFile & f, const std::vector<std::string> & names) {
    if (names.size() != params_.size()) throw TrainError("Adam::load_from: name count mismatch");
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor m = f.get("adam.m." + names[i]);
        Tensor v = f.get("adam.v." + names[i]);
        std::copy(m.data().begin(), m.data().end(), m_[i].data().begin());
        std::copy(v.data().begin(), v.data().end(), v_[i].data().begin());
    }
    t_ = f.meta.at("adam_t").get<int64_t>();
}

// ---- checkpoints ----

namespace {

void check_meta(const nlohmann::json & meta, const RunConfig & cfg, const std::string & kind,
                bool check_hash) {
    if (meta.value("kind", "") != kind)
        throw CheckpointError("checkpoint kind mismatch: expected '" + kind + "', got '" +
                              meta.value("kind", "?") + "'");
    if (check_hash && meta.value("config_hash", uint64_t(0)) != cfg.hash)
        throw CheckpointError("checkpoint config hash mismatch (artifact from a different config)");
}

} // namespace

void save_codec_checkpoint(const fs::path & path, const HyperpriorCodec & codec,
                           const RunConfig & cfg, int lambda_index, int64_t step,
                           const std::string & kind, const Adam * adam) {
    TensorFile f;
    f.meta["kind"] = kind;
    f.meta["config_hash"] = cfg.hash;
    f.meta["lambda_index"] = lambda_index;
    f.meta["step"] = step;
    f.meta["n"] = codec.cfg().channels;
    f.meta["n_h"] = codec.cfg().hyper_channels;
    codec.params().save_into(f, "codec.");
    if (adam) {
        std::vector<std::string> names;
        for (const auto & [n, t] : codec.params().entries()) names.push_back("codec." + n);
        adam->save_into(f, names);
    }
    f.save(path);
}

std::unique_ptr<HyperpriorCodec> load_codec_checkpoint(const fs::path & path, const RunConfig & cfg,
                                                       bool check_hash) {
    if (!fs::exists(path)) throw CheckpointError("missing codec checkpoint: " + path.string());
    TensorFile f = TensorFile::load(path);
    check_meta(f.meta, cfg, "codec", check_hash);
    if (f.meta.at("n").get<int>() != cfg.codec.channels ||
        f.meta.at("n_h").get<int>() != cfg.codec.hyper_channels)
        throw CheckpointError("codec checkpoint channel counts do not match config");
    auto codec = std::make_unique<HyperpriorCodec>(cfg.codec, cfg.seed);
    codec->params().load_from(f, "codec.");
    return codec;
}

void save_clip_checkpoint(const fs::path & path, const ClipStack & clip, const RunConfig & cfg,
                          int64_t step) {
    TensorFile f;
    f.meta["kind"] = "clip";
    f.meta["config_hash"] = cfg.hash;
    f.meta["step"] = step;
    clip.visual().params().save_into(f, "visual.");
    clip.text().params().save_into(f, "text.");
    f.save(path);
}

std::unique_ptr<ClipStack> load_clip_checkpoint(const fs::path & path, const RunConfig & cfg,
                                                bool check_hash) {
    if (!fs::exists(path)) throw CheckpointError("missing clip checkpoint: " + path.string());
    TensorFile f = TensorFile::load(path);
    check_meta(f.meta, cfg, "clip", check_hash);
    auto clip = std::make_unique<ClipStack>(cfg.encoder, cfg.seed + 17);
    clip->visual().params().load_from(f, "visual.");
    clip->text().params().load_from(f, "text.");
    clip->visual().params().set_trainable(false);
    clip->text().params().set_trainable(false);
    return clip;
}

std::unique_ptr<TransformNeck> make_neck(const RunConfig & cfg) {
    return std::make_unique<TransformNeck>(cfg.codec.channels, cfg.encoder.width,
                                           cfg.encoder.grid(), cfg.seed + 33);
}

void save_neck_checkpoint(const fs::path & path, const TransformNeck & neck, const RunConfig & cfg,
                          int lambda_index, int64_t step, const std::string & kind) {
    TensorFile f;
    f.meta["kind"] = kind;
    f.meta["config_hash"] = cfg.hash;
    f.meta["lambda_index"] = lambda_index;
    f.meta["step"] = step;
    f.meta["n"] = neck.latent_channels();
    f.meta["width"] = neck.width();
    f.meta["heads"] = neck.heads();
    f.meta["max_grid"] = neck.max_grid();
    neck.params().save_into(f, "neck.");
    f.save(path);
}

std::unique_ptr<TransformNeck> load_neck_checkpoint(const fs::path & path, const RunConfig & cfg,
                                                    bool check_hash) {
    if (!fs::exists(path)) throw CheckpointError("missing neck checkpoint: " + path.string());
    TensorFile f = TensorFile::load(path);
    if (f.meta.value("kind", "") != "neck_phase1" && f.meta.value("kind", "") != "neck")
        throw CheckpointError("not a neck checkpoint: " + path.string());
    if (check_hash && f.meta.value("config_hash", uint64_t(0)) != cfg.hash)
        throw CheckpointError("checkpoint config hash mismatch (artifact from a different config)");
    auto neck = make_neck(cfg);
    neck->params().load_from(f, "neck.");
    return neck;
}

void save_scenario_checkpoint(const fs::path & path, const HyperpriorCodec & codec,
                              const TransformNeck & neck, const RunConfig & cfg, int lambda_index,
                              int64_t step, const std::string & scenario) {
    TensorFile f;
    f.meta["kind"] = "scenario";
    f.meta["scenario"] = scenario;
    f.meta["config_hash"] = cfg.hash;
    f.meta["lambda_index"] = lambda_index;
    f.meta["step"] = step;
    f.meta["n"] = codec.cfg().channels;
    f.meta["n_h"] = codec.cfg().hyper_channels;
    codec.params().save_into(f, "codec.");
    neck.params().save_into(f, "neck.");
    f.save(path);
}

ScenarioBundle load_scenario_checkpoint(const fs::path & path, const RunConfig & cfg,
                                        bool check_hash) {
    if (!fs::exists(path)) throw CheckpointError("missing scenario checkpoint: " + path.string());
    TensorFile f = TensorFile::load(path);
    check_meta(f.meta, cfg, "scenario", check_hash);
    ScenarioBundle b;
    b.codec = std::make_unique<HyperpriorCodec>(cfg.codec, cfg.seed);
    b.codec->params().load_from(f, "codec.");
    b.neck = make_neck(cfg);
    b.neck->params().load_from(f, "neck.");
    return b;
}

nlohmann::json checkpoint_meta(const fs::path & path) { return TensorFile::load(path).meta; }

// ---- deterministic streams ----

Rng stream_rng(uint64_t seed, uint64_t purpose, int64_t step) {
    Rng base(seed);
    return base.split(purpose * 0x1000193ull + uint64_t(step) + 1);
}

std::vector<int64_t> batch_indices(const ImageDataset & data, const RunConfig & cfg, int64_t step) {
    const int64_t n = data.size();
    const int64_t bs = std::min<int64_t>(cfg.training.batch_size, n);
    const int64_t steps_per_epoch = std::max<int64_t>(1, n / bs);
    const int64_t epoch = step / steps_per_epoch;
    const int64_t offset = (step % steps_per_epoch) * bs;
    Rng perm_rng = stream_rng(cfg.seed, 101, epoch);
    std::vector<int64_t> perm = data.shuffled_indices(perm_rng);
    std::vector<int64_t> out;
    for (int64_t i = 0; i < bs; ++i) out.push_back(perm[size_t((offset + i) % n)]);
    return out;
}

int64_t schedule_epoch(const RunConfig & cfg, const ImageDataset & data, int64_t step) {
    if (cfg.schedule.unit == "steps") return step;
    const int64_t bs = std::min<int64_t>(cfg.training.batch_size, data.size());
    const int64_t steps_per_epoch = std::max<int64_t>(1, data.size() / bs);
    return step / steps_per_epoch;
}

// ---- metrics ledger ----

void append_metrics(const fs::path & csv, const MetricsRow & row, bool write_header) {
    std::ofstream out(csv, write_header ? std::ios::trunc : std::ios::app);
    if (!out) throw TrainError("cannot write metrics ledger: " + csv.string());
    if (write_header) out << "step,regime,ce,dist,rate_bpp,d_recon,total\n";
    out.precision(17);
    out << row.step << "," << row.regime << "," << row.ce << "," << row.dist << "," << row.rate_bpp
        << "," << row.d_recon << "," << row.total << "\n";
}

std::vector<MetricsRow> read_metrics(const fs::path & csv) {
    std::ifstream in(csv);
    if (!in) throw TrainError("cannot read metrics ledger: " + csv.string());
    std::vector<MetricsRow> rows;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        MetricsRow r;
        std::string tok;
        std::getline(ss, tok, ',');
        r.step = std::stoll(tok);
        std::getline(ss, r.regime, ',');
        std::getline(ss, tok, ',');
        r.ce = std::stod(tok);
        std::getline(ss, tok, ',');
        r.dist = std::stod(tok);
        std::getline(ss, tok, ',');
        r.rate_bpp = std::stod(tok);
        std::getline(ss, tok, ',');
        r.d_recon = std::stod(tok);
        std::getline(ss, tok, ',');
        r.total = std::stod(tok);
        rows.push_back(r);
    }
    return rows;
}

// ---- shared forward helpers ----

Tensor neck_tokens_from_latent(const TransformNeck & neck, const Tensor & y_hat) {
    return neck.forward(y_hat);
}

Tensor dist_target_tokens(const ClipStack & clip, const Image & x, bool include_cls) {
    EncoderOutput out = clip.full_encode_image(x);
    Tensor t = out.tokens.detach();
    if (!include_cls) t = slice_rows(t, 1, t.dim(0)).detach();
    return t;
}

namespace {

// batch tensor [B,3,H,W] from dataset indices
Tensor gather_batch(const ImageDataset & data, const std::vector<int64_t> & idx) {
    const Image & first = data.image(idx[0]);
    const int64_t h = first.height(), w = first.width();
    Tensor out = Tensor::zeros({int64_t(idx.size()), 3, h, w});
    auto d = out.data();
    for (size_t i = 0; i < idx.size(); ++i) {
        auto src = data.image(int64_t(idx[i])).pixels.data();
        std::copy(src.begin(), src.end(), d.begin() + int64_t(i) * 3 * h * w);
    }
    return out;
}

Tensor slice_batch_item(const Tensor & batch, int64_t i) {
    const Shape & s = batch.shape();
    const int64_t per = s[1] * s[2] * s[3];
    Tensor flat = reshape(batch, {s[0], per});
    return reshape(slice_rows(flat, i, i + 1), {s[1], s[2], s[3]});
}

} // namespace

// ---- pretraining: codec ----

std::vector<fs::path> pretrain_codec(const RunConfig & cfg, const DatasetManifest & manifest,
                                     const fs::path & out_dir) {
    fs::create_directories(out_dir);
    ImageDataset data(manifest, "train", cfg.training.image_size);
    const QuantMode rate_mode = quant_mode_from_string(cfg.training.rate_quantize);
    const QuantMode data_mode = quant_mode_from_string(cfg.training.data_quantize);

    std::vector<fs::path> out_paths;
    for (size_t li = 0; li < cfg.codec.lambdas.size(); ++li) {
        const double lambda = cfg.codec.lambdas[li];
        HyperpriorCodec codec(cfg.codec, cfg.seed);
        Adam adam(codec.params().tensors(), cfg.optimizer);
        const fs::path csv = out_dir / ("metrics_pretrain_l" + std::to_string(li) + ".csv");

        for (int64_t step = 0; step < cfg.training.pretrain_steps; ++step) {
            Rng noise_rng = stream_rng(cfg.seed, 201 + uint64_t(li), step);
            const auto idx = batch_indices(data, cfg, step);
            Tensor x = gather_batch(data, idx);

            Tensor y = codec.analysis_t(x);
            Tensor z = codec.hyper_analysis_t(y);
            Tensor z_rate = quantize(z, rate_mode, &noise_rng);
            Tensor z_data = quantize(z, data_mode, &noise_rng);
            EntropyParams ep = codec.hyper_synthesis_t(z_data);
            Tensor y_rate = quantize(y, rate_mode, &noise_rng);
            Tensor y_data = quantize(y, data_mode, &noise_rng);

            Tensor bits = codec.rate_bits(y_rate, z_rate, ep);
            const double px = double(x.dim(0) * x.dim(2) * x.dim(3));
            Tensor bpp = mul_scalar(bits, 1.0 / px);
            Tensor x_hat = codec.synthesis_t(y_data);
            Tensor d_recon = recon_loss(x, x_hat);
            Tensor loss = add(bpp, mul_scalar(d_recon, lambda));

            adam.zero_grad();
            loss.backward();
            adam.step(cfg.optimizer.lr_phase1);

            append_metrics(csv,
                           MetricsRow{step, "rd", 0.0, 0.0, bpp.item(), d_recon.item(), loss.item()},
                           step == 0);
        }
        const fs::path p = out_dir / ("codec_l" + std::to_string(li) + ".ckpt");
        save_codec_checkpoint(p, codec, cfg, int(li), cfg.training.pretrain_steps);
        out_paths.push_back(p);
    }
    return out_paths;
}

// ---- pretraining: toy CLIP ----

fs::path pretrain_clip(const RunConfig & cfg, const DatasetManifest & manifest,
                       const fs::path & out_dir) {
    fs::create_directories(out_dir);
    ImageDataset data(manifest, "train", cfg.training.image_size);
    const auto & names = data.class_names();
    const int m = int(names.size());

    // per-class index pools
    std::vector<std::vector<int64_t>> pools(size_t(m));
    for (int64_t i = 0; i < data.size(); ++i) pools[size_t(data.label(i))].push_back(i);
    for (const auto & p : pools)
        if (p.empty()) throw TrainError("pretrain_clip: a class has no training images");

    ClipStack clip(cfg.encoder, cfg.seed + 17);
    std::vector<Tensor> params = clip.visual().params().tensors();
    for (auto & t : clip.text().params().tensors()) params.push_back(t);
    Adam adam(params, cfg.optimizer);
    const fs::path csv = out_dir / "metrics_clip.csv";
    const double tau = 0.05; // contrastive temperature for the toy pretrain

    for (int64_t step = 0; step < cfg.training.clip_steps; ++step) {
        Rng pick = stream_rng(cfg.seed, 301, step);
        std::vector<Tensor> img_embs, txt_embs;
        for (int c = 0; c < m; ++c) {
            const auto & pool = pools[size_t(c)];
            const Image & img = data.image(pool[size_t(pick.below(pool.size()))]);
            img_embs.push_back(clip.full_encode_image(img).emb);
            txt_embs.push_back(clip.text().encode(names[size_t(c)]));
        }
        std::vector<Tensor> losses;
        for (int c = 0; c < m; ++c) {
            losses.push_back(ce_loss(sim_vector(img_embs[size_t(c)], txt_embs), c, tau));
            losses.push_back(ce_loss(sim_vector(txt_embs[size_t(c)], img_embs), c, tau));
        }
        Tensor total = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
        Tensor loss = mul_scalar(total, 1.0 / double(losses.size()));

        adam.zero_grad();
        loss.backward();
        adam.step(cfg.optimizer.lr_phase1);
        append_metrics(csv, MetricsRow{step, "clip", loss.item(), 0, 0, 0, loss.item()}, step == 0);
    }
    const fs::path p = out_dir / "clip.ckpt";
    save_clip_checkpoint(p, clip, cfg, cfg.training.clip_steps);
    return p;
}

// ---- phase 1 ----

namespace {

struct Phase1Cache {
    std::vector<char> ready;
    std::vector<Tensor> y_hat;   // [N,g,g] rounded latents
    std::vector<Tensor> targets; // distillation target tokens
};

} // namespace

fs::path train_phase1(const RunConfig & cfg, const DatasetManifest & manifest,
                      const fs::path & codec_ckpt, const fs::path & clip_ckpt,
                      const fs::path & out_dir, const TrainOptions & opts) {
    fs::create_directories(out_dir);
    auto codec = load_codec_checkpoint(codec_ckpt, cfg);
    codec->params().set_trainable(false);
    auto clip = load_clip_checkpoint(clip_ckpt, cfg);
    const int li = cfg.training.lambda_index;

    ImageDataset data(manifest, "train", cfg.training.image_size);
    const auto & names = data.class_names();

    auto neck = make_neck(cfg);
    Adam adam(neck->params().tensors(), cfg.optimizer);

    int64_t start_step = 0;
    if (!opts.resume_from.empty()) {
        TensorFile f = TensorFile::load(opts.resume_from);
        if (f.meta.value("kind", "") != "phase1_state")
            throw CheckpointError("not a phase-1 state checkpoint");
        if (f.meta.value("config_hash", uint64_t(0)) != cfg.hash)
            throw CheckpointError("resume: config hash mismatch");
        neck->params().load_from(f, "neck.");
        std::vector<std::string> names_;
        for (const auto & [n, t] : neck->params().entries()) names_.push_back("neck." + n);
        adam.load_from(f, names_);
        start_step = f.meta.at("step").get<int64_t>();
    }

    // frozen anchors
    std::vector<Tensor> text_embs;
    for (const auto & l : names) text_embs.push_back(clip->text().encode(l).detach());

    Phase1Cache cache;
    cache.ready.assign(size_t(data.size()), 0);
    cache.y_hat.resize(size_t(data.size()));
    cache.targets.resize(size_t(data.size()));
    auto cached = [&](int64_t i) -> std::pair<Tensor, Tensor> {
        if (!cache.ready[size_t(i)]) {
            const Image & img = data.image(i);
            cache.y_hat[size_t(i)] = round_nograd(codec->analysis(img));
            cache.targets[size_t(i)] = dist_target_tokens(*clip, img, cfg.encoder.cls_in_dist);
            cache.ready[size_t(i)] = 1;
        }
        return {cache.y_hat[size_t(i)], cache.targets[size_t(i)]};
    };

    ScheduleState sched{cfg.schedule.e1, cfg.schedule.e2, cfg.schedule.alpha, cfg.schedule.beta,
                        cfg.schedule.mode};
    const fs::path csv = out_dir / ("metrics_phase1_l" + std::to_string(li) + ".csv");

    for (int64_t step = start_step; step < cfg.training.phase1_steps; ++step) {
        if (opts.stop_after_step >= 0 && step == opts.stop_after_step) {
            TensorFile f;
            f.meta["kind"] = "phase1_state";
            f.meta["config_hash"] = cfg.hash;
            f.meta["lambda_index"] = li;
            f.meta["step"] = step;
            f.meta["rng_data"] = stream_rng(cfg.seed, 101, step).state_hex();
            neck->params().save_into(f, "neck.");
            std::vector<std::string> names_;
            for (const auto & [n, t] : neck->params().entries()) names_.push_back("neck." + n);
            adam.save_into(f, names_);
            const fs::path p = out_dir / ("phase1_state_l" + std::to_string(li) + ".ckpt");
            f.save(p);
            return p;
        }

        const int64_t epoch = schedule_epoch(cfg, data, step);
        const auto idx = batch_indices(data, cfg, step);

        std::vector<Tensor> ce_terms, dist_terms;
        const Regime regime = sched.regime_at(epoch);
        for (int64_t i : idx) {
            auto [y_hat, target] = cached(i);
            Tensor tokens = neck_tokens_from_latent(*neck, y_hat);
            EncoderOutput out = clip->visual().partial_encode(tokens);
            if (regime != Regime::kDistOnly)
                ce_terms.push_back(ce_loss(sim_vector(out.emb, text_embs), data.label(i),
                                           cfg.training.tau));
            if (regime != Regime::kCeOnly) {
                Tensor pred = cfg.encoder.cls_in_dist ? out.tokens
                                                      : slice_rows(out.tokens, 1, out.tokens.dim(0));
                dist_terms.push_back(dist_loss(pred, target));
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

    const fs::path p = out_dir / ("neck_phase1_l" + std::to_string(li) + ".ckpt");
    save_neck_checkpoint(p, *neck, cfg, li, cfg.training.phase1_steps, "neck_phase1");
    return p;
}

// ---- phase 2 ----

fs::path train_phase2(const RunConfig & cfg, const DatasetManifest & manifest,
                      const fs::path & phase1_ckpt, const fs::path & codec_ckpt,
                      const fs::path & clip_ckpt, const fs::path & out_dir,
                      const TrainOptions & opts) {
    const std::string scenario = cfg.training.scenario;
    if (scenario == "d1")
        throw ConfigError("phase 2 is undefined for scenario d1 (the codec stays frozen)");
    if (scenario != "d2" && scenario != "d3") throw ConfigError("unknown scenario: " + scenario);

    fs::create_directories(out_dir);
    auto codec = load_codec_checkpoint(codec_ckpt, cfg);
    auto clip = load_clip_checkpoint(clip_ckpt, cfg);
    auto neck = load_neck_checkpoint(phase1_ckpt, cfg);
    const int li = cfg.training.lambda_index;
    const double lambda = cfg.codec.lambdas[size_t(li)];

    ImageDataset data(manifest, "train", cfg.training.image_size);

    // trainable sets: d2 updates the whole codec; d3 freezes g_s (it does not
    // appear in the objective) and keeps the rate path trainable
    codec->params().set_trainable(true);
    std::vector<Tensor> params;
    std::vector<std::string> param_names;
    auto add_group = [&](const ParamRegistry & reg, const std::string & owner,
                         const std::string & prefix) {
        for (const auto & [n, t] : reg.entries())
            if (prefix.empty() || n.rfind(prefix, 0) == 0) {
                params.push_back(t);
                param_names.push_back(owner + n);
            }
    };
    if (scenario == "d3") codec->params().set_trainable("g_s.", false);
    for (const auto & [n, t] : codec->params().entries())
        if (t.requires_grad()) {
            params.push_back(t);
            param_names.push_back("codec." + n);
        }
    add_group(neck->params(), "neck.", "");
    Adam adam(params, cfg.optimizer);

    int64_t start_step = 0;
    if (!opts.resume_from.empty()) {
        TensorFile f = TensorFile::load(opts.resume_from);
        if (f.meta.value("kind", "") != "phase2_state")
            throw CheckpointError("not a phase-2 state checkpoint");
        if (f.meta.value("config_hash", uint64_t(0)) != cfg.hash)
            throw CheckpointError("resume: config hash mismatch");
        codec->params().load_from(f, "codec.");
        neck->params().load_from(f, "neck.");
        adam.load_from(f, param_names);
        start_step = f.meta.at("step").get<int64_t>();
    }

    // distillation targets are frozen; cache them per image
    std::vector<Tensor> targets(size_t(data.size()));
    std::vector<char> ready(size_t(data.size()), 0);
    auto target_of = [&](int64_t i) {
        if (!ready[size_t(i)]) {
            targets[size_t(i)] = dist_target_tokens(*clip, data.image(i), cfg.encoder.cls_in_dist);
            ready[size_t(i)] = 1;
        }
        return targets[size_t(i)];
    };

    const QuantMode rate_mode = quant_mode_from_string(cfg.training.rate_quantize);
    const QuantMode data_mode = quant_mode_from_string(cfg.training.data_quantize);
    const fs::path csv =
        out_dir / ("metrics_phase2_" + scenario + "_l" + std::to_string(li) + ".csv");

    for (int64_t step = start_step; step < cfg.training.phase2_steps; ++step) {
        if (opts.stop_after_step >= 0 && step == opts.stop_after_step) {
            TensorFile f;
            f.meta["kind"] = "phase2_state";
            f.meta["config_hash"] = cfg.hash;
            f.meta["lambda_index"] = li;
            f.meta["step"] = step;
            f.meta["rng_noise"] = stream_rng(cfg.seed, 401, step).state_hex();
            codec->params().save_into(f, "codec.");
            neck->params().save_into(f, "neck.");
            adam.save_into(f, param_names);
            const fs::path p =
                out_dir / ("phase2_state_" + scenario + "_l" + std::to_string(li) + ".ckpt");
            f.save(p);
            return p;
        }

        Rng noise_rng = stream_rng(cfg.seed, 401, step);
        const auto idx = batch_indices(data, cfg, step);
        Tensor x = gather_batch(data, idx);

        Tensor y = codec->analysis_t(x);
        Tensor z = codec->hyper_analysis_t(y);
        Tensor z_rate = quantize(z, rate_mode, &noise_rng);
        Tensor z_data = quantize(z, data_mode, &noise_rng);
        EntropyParams ep = codec->hyper_synthesis_t(z_data);
        Tensor y_rate = quantize(y, rate_mode, &noise_rng);
        Tensor y_data = quantize(y, data_mode, &noise_rng);

        Tensor bits = codec->rate_bits(y_rate, z_rate, ep);
        const double px = double(x.dim(0) * x.dim(2) * x.dim(3));
        Tensor bpp = mul_scalar(bits, 1.0 / px);

        std::vector<Tensor> dist_terms;
        for (size_t bi = 0; bi < idx.size(); ++bi) {
            Tensor y_i = slice_batch_item(y_data, int64_t(bi));
            Tensor tokens = neck_tokens_from_latent(*neck, y_i);
            EncoderOutput out = clip->visual().partial_encode(tokens);
            Tensor pred = cfg.encoder.cls_in_dist ? out.tokens
                                                  : slice_rows(out.tokens, 1, out.tokens.dim(0));
            dist_terms.push_back(dist_loss(pred, target_of(idx[bi])));
        }
        Tensor dist = dist_terms[0];
        for (size_t i = 1; i < dist_terms.size(); ++i) dist = add(dist, dist_terms[i]);
        dist = mul_scalar(dist, 1.0 / double(dist_terms.size()));

        Tensor loss;
        double d_recon_val = 0.0;
        if (scenario == "d2") {
            Tensor x_hat = codec->synthesis_t(y_data);
            Tensor d_recon = recon_loss(x, x_hat);
            d_recon_val = d_recon.item();
            loss = loss_d2(bpp, d_recon, dist, lambda, cfg.training.gamma, cfg.training.delta);
        } else {
            loss = loss_d3(bpp, dist, lambda);
        }

        adam.zero_grad();
        loss.backward();
        adam.step(cfg.optimizer.lr_phase2);
        append_metrics(csv,
                       MetricsRow{step, scenario, 0.0, dist.item(), bpp.item(), d_recon_val,
                                  loss.item()},
                       step == 0);
    }

    const fs::path p = out_dir / ("scenario_" + scenario + "_l" + std::to_string(li) + ".ckpt");
    save_scenario_checkpoint(p, *codec, *neck, cfg, li, cfg.training.phase2_steps, scenario);
    return p;
}

} // namespace lbridge
