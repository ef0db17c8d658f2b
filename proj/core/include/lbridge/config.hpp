#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace lbridge {

// Thrown for schema violations: unknown keys, bad values, invalid
// combinations. The CLI maps it to its config-error exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CodecCfg {
    int channels = 320;       // N, main latent channels
    int hyper_channels = 192; // N_h
    int hidden = 128;         // conv trunk width
    int kernel = 5;
    double scale_floor = 1e-4;
    std::vector<double> lambdas = {0.004, 0.008, 0.016, 0.032};
};

struct TextCfg {
    int width = 64;
    int layers = 2;
    int heads = 2;
    int context = 32;
};

struct EncoderCfg {
    int width = 128;  // D
    int layers = 6;
    int heads = 2;
    int patch = 16;
    int resolution = 64;
    int embed_dim = 64; // D_e
    int skip_layers = 2; // K
    bool cls_in_dist = true;
    std::array<double, 3> norm_mean = {0.48145466, 0.4578275, 0.40821073};
    std::array<double, 3> norm_std = {0.26862954, 0.26130258, 0.27577711};
    TextCfg text;

    int grid() const { return resolution / patch; }
    int tokens() const { return grid() * grid() + 1; }
};

struct ScheduleCfg {
    int64_t e1 = 20;
    int64_t e2 = 40;
    std::string unit = "epochs"; // or "steps"
    double alpha = 0.01;
    double beta = 1.0;
    std::string mode = "full"; // full | ce_only | dist_only
};

struct OptimCfg {
    double lr_phase1 = 1e-4;
    double lr_phase2 = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainCfg {
    std::string scenario = "d1"; // d1 | d2 | d3
    int lambda_index = 0;
    double gamma = 60.0;
    double delta = 1.0;
    double tau = 0.01;
    int batch_size = 8;
    int image_size = 64; // crop/resize target, multiple of 64
    int64_t pretrain_steps = 400;
    int64_t clip_steps = 400;
    int64_t phase1_steps = 400;
    int64_t phase2_steps = 150;
    int64_t unet_steps = 200;
    std::string data_quantize = "ste_round";
    std::string rate_quantize = "noise";
    int unet_base = 8;
    int unet_depth = 2;
};

struct RunConfig {
    uint64_t seed = 1234;
    std::string output_dir = "runs/out";
    std::string dataset_manifest;
    CodecCfg codec;
    EncoderCfg encoder;
    std::optional<int> neck_width; // must equal encoder width when given
    ScheduleCfg schedule;
    OptimCfg optimizer;
    TrainCfg training;

    uint64_t hash = 0; // content hash of the canonical document

    static RunConfig from_json(const nlohmann::json & j);
    static RunConfig from_file(const std::filesystem::path & p);
    nlohmann::json to_json() const;
};

uint64_t config_hash(const nlohmann::json & j);

} // namespace lbridge
