#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "lbridge/clip.hpp"
#include "lbridge/codec.hpp"
#include "lbridge/config.hpp"
#include "lbridge/dataset.hpp"
#include "lbridge/losses.hpp"
#include "lbridge/neck.hpp"

namespace lbridge {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Adam with bias correction; weight decay off. Only tensors passed in are
// ever updated, which enforces the freeze contracts structurally.
class Adam {
  public:
    Adam(std::vector<Tensor> params, const OptimCfg & cfg);

    void step(double lr);
    void zero_grad();
    int64_t steps_taken() const { return t_; }

    void save_into(TensorFile & f, const std::vector<std::string> & names) const;
    void load_from(const TensorFile & f, const std::vector<std::string> & names);

  private:
    std::vector<Tensor> params_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
    OptimCfg cfg_;
};

// ---- checkpoint plumbing ----

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// meta: kind, config_hash, lambda_index, step, scenario, n, n_h
void save_codec_checkpoint(const std::filesystem::path & path, const HyperpriorCodec & codec,
                           const RunConfig & cfg, int lambda_index, int64_t step,
                           const std::string & kind = "codec", const Adam * adam = nullptr);
std::unique_ptr<HyperpriorCodec> load_codec_checkpoint(const std::filesystem::path & path,
                                                       const RunConfig & cfg,
                                                       bool check_hash = true);

void save_clip_checkpoint(const std::filesystem::path & path, const ClipStack & clip,
                          const RunConfig & cfg, int64_t step);
std::unique_ptr<ClipStack> load_clip_checkpoint(const std::filesystem::path & path,
                                                const RunConfig & cfg, bool check_hash = true);

std::unique_ptr<TransformNeck> make_neck(const RunConfig & cfg);

nlohmann::json checkpoint_meta(const std::filesystem::path & path);

// ---- derived deterministic streams ----
// All sampling is a pure function of (seed, purpose, step), so a resumed run
// replays the identical sequence without serializing generator positions.
Rng stream_rng(uint64_t seed, uint64_t purpose, int64_t step);
std::vector<int64_t> batch_indices(const ImageDataset & data, const RunConfig & cfg, int64_t step);
int64_t schedule_epoch(const RunConfig & cfg, const ImageDataset & data, int64_t step);

// ---- metric ledger ----
struct MetricsRow {
    int64_t step = 0;
    std::string regime;
    double ce = 0, dist = 0, rate_bpp = 0, d_recon = 0, total = 0;
};
void append_metrics(const std::filesystem::path & csv, const MetricsRow & row, bool write_header);
std::vector<MetricsRow> read_metrics(const std::filesystem::path & csv);

// ---- training drivers ----

struct TrainOptions {
    int64_t stop_after_step = -1; // checkpoint and return early at this step
    std::filesystem::path resume_from; // state checkpoint produced by an early stop
};

// R + lambda * 255^2 MSE pretraining, one checkpoint per lambda, named
// codec_l<i>.ckpt. Returns the checkpoint paths in lambda order.
std::vector<std::filesystem::path> pretrain_codec(const RunConfig & cfg,
                                                  const DatasetManifest & manifest,
                                                  const std::filesystem::path & out_dir);

// contrastive toy-CLIP pretraining on the labeled dataset -> clip.ckpt
std::filesystem::path pretrain_clip(const RunConfig & cfg, const DatasetManifest & manifest,
                                    const std::filesystem::path & out_dir);

// phase 1: neck only, surrogate schedule -> neck_phase1_l<i>.ckpt
std::filesystem::path train_phase1(const RunConfig & cfg, const DatasetManifest & manifest,
                                   const std::filesystem::path & codec_ckpt,
                                   const std::filesystem::path & clip_ckpt,
                                   const std::filesystem::path & out_dir,
                                   const TrainOptions & opts = {});

// phase 2 (d2/d3): joint codec+neck -> scenario_<d>_l<i>.ckpt; throws for d1
std::filesystem::path train_phase2(const RunConfig & cfg, const DatasetManifest & manifest,
                                   const std::filesystem::path & phase1_ckpt,
                                   const std::filesystem::path & codec_ckpt,
                                   const std::filesystem::path & clip_ckpt,
                                   const std::filesystem::path & out_dir,
                                   const TrainOptions & opts = {});

// neck checkpoint IO (phase-1 neck or scenario bundle)
void save_neck_checkpoint(const std::filesystem::path & path, const TransformNeck & neck,
                          const RunConfig & cfg, int lambda_index, int64_t step,
                          const std::string & kind);
std::unique_ptr<TransformNeck> load_neck_checkpoint(const std::filesystem::path & path,
                                                    const RunConfig & cfg, bool check_hash = true);

// scenario bundles store codec + neck together
struct ScenarioBundle {
    std::unique_ptr<HyperpriorCodec> codec;
    std::unique_ptr<TransformNeck> neck;
};
void save_scenario_checkpoint(const std::filesystem::path & path, const HyperpriorCodec & codec,
                              const TransformNeck & neck, const RunConfig & cfg, int lambda_index,
                              int64_t step, const std::string & scenario);
ScenarioBundle load_scenario_checkpoint(const std::filesystem::path & path, const RunConfig & cfg,
                                        bool check_hash = true);

// shared forward helpers (also used by evaluation and the baselines)
Tensor neck_tokens_from_latent(const TransformNeck & neck, const Tensor & y_hat);
// distillation target: full-encoder tokens of the uncompressed image
Tensor dist_target_tokens(const ClipStack & clip, const Image & x, bool include_cls);

} // namespace lbridge
