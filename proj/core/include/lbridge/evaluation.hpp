#pragma once

#include <map>

#include "lbridge/baselines.hpp"
#include "lbridge/clip.hpp"
#include "lbridge/codec.hpp"
#include "lbridge/dataset.hpp"
#include "lbridge/neck.hpp"

namespace lbridge {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RatePoint {
    std::string pipeline; // d1 | d2 | d3 | recon | postproc | uncompressed
    int lambda_index = -1; // -1 for the uncompressed reference
    double bpp = 0.0;      // 0 sentinel only for uncompressed
    std::string metric;    // "accuracy" | "psnr"
    double value = 0.0;

    bool operator==(const RatePoint &) const = default;
};

enum class PipelineKind { kD1, kD2, kD3, kReconstruction, kPostprocess, kUncompressed };
std::string to_string(PipelineKind k);

// everything needed to run one coded pipeline at one rate point
struct PipelineArtifacts {
    const HyperpriorCodec * codec = nullptr;
    const TransformNeck * neck = nullptr; // latent pipelines
    const UNet * unet = nullptr;          // postproc only
};

// Embedding produced by the given pipeline for one image plus the measured
// bpp from a real bitstream (coded pipelines only).
PipelineOutput run_pipeline(const Image & x, PipelineKind kind, const PipelineArtifacts & art,
                            const ClipStack & clip, uint8_t lambda_index, uint64_t config_hash);

// one point per lambda (or a single sentinel point for kUncompressed)
std::vector<RatePoint> eval_rate_accuracy(const ImageDataset & test, const ClipStack & clip,
                                          PipelineKind kind,
                                          const std::map<int, PipelineArtifacts> & per_lambda,
                                          uint64_t config_hash);

std::vector<RatePoint> eval_rate_psnr(const ImageDataset & test,
                                      const std::map<int, const HyperpriorCodec *> & per_lambda,
                                      uint64_t config_hash);

struct MseReductionMap {
    int grid = 0;                    // g (token grid side)
    std::vector<double> token_delta; // g*g entries, MSE_before - MSE_after
    double cls_delta = 0.0;

    double total() const {
        double t = cls_delta;
        for (double v : token_delta) t += v;
        return t;
    }
};

// Per-token MSE reduction between two neck checkpoints over a dataset with a
// frozen codec and encoder (positive = improvement).
MseReductionMap token_mse_reduction(const ImageDataset & data, const HyperpriorCodec & codec,
                                    const ClipStack & clip, const TransformNeck & neck_before,
                                    const TransformNeck & neck_after);

// mean distillation loss of one neck over a dataset (diagnostics + tests)
double mean_dist_loss(const ImageDataset & data, const HyperpriorCodec & codec,
                      const ClipStack & clip, const TransformNeck & neck);

// ---- emission ----
// CSV schema: pipeline,lambda_index,bpp,metric,value with a leading
// "# config_hash=<hex>" comment line.
void emit_csv(const std::vector<RatePoint> & points, const std::filesystem::path & path,
              uint64_t config_hash);
std::vector<RatePoint> parse_csv(const std::filesystem::path & path);

void emit_plot_svg(const std::vector<RatePoint> & points, const std::filesystem::path & path,
                   uint64_t config_hash);
void emit_heatmap_svg(const MseReductionMap & map, const std::filesystem::path & path,
                      uint64_t config_hash);

} // namespace lbridge
