#include "lbridge/config.hpp"

#include <fstream>
#include <set>

#include "lbridge/serialize.hpp"

namespace lbridge {

namespace {

void reject_unknown(const nlohmann::json & j, const std::set<std::string> & known,
                    const std::string & scope) {
    if (!j.is_object()) throw ConfigError("config: '" + scope + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key '" + scope + "." + it.key() + "'");
}

template <class T>
void opt(const nlohmann::json & j, const char * key, T & out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

uint64_t config_hash(const nlohmann::json & j) {
    // nlohmann objects iterate in sorted key order, so dump() is canonical
    const std::string s = j.dump();
    return fnv1a64(s.data(), s.size());
}

RunConfig RunConfig::from_json(const nlohmann::json & j) {
    RunConfig c;
    reject_unknown(j, {"seed", "output_dir", "dataset", "codec", "encoder", "neck", "schedule",
                       "optimizer", "training"},
                   "");
    opt(j, "seed", c.seed);
    opt(j, "output_dir", c.output_dir);
    if (j.contains("dataset")) {
        reject_unknown(j.at("dataset"), {"manifest"}, "dataset");
        opt(j.at("dataset"), "manifest", c.dataset_manifest);
    }
    if (j.contains("codec")) {
        const auto & d = j.at("codec");
        reject_unknown(d, {"channels", "hyper_channels", "hidden", "kernel", "scale_floor", "lambdas"},
                       "codec");
        opt(d, "channels", c.codec.channels);
        opt(d, "hyper_channels", c.codec.hyper_channels);
        opt(d, "hidden", c.codec.hidden);
        opt(d, "kernel", c.codec.kernel);
        opt(d, "scale_floor", c.codec.scale_floor);
        opt(d, "lambdas", c.codec.lambdas);
    }
    if (j.contains("encoder")) {
        const auto & d = j.at("encoder");
        reject_unknown(d,
                       {"width", "layers", "heads", "patch", "resolution", "embed_dim", "skip_layers",
                        "cls_in_dist", "norm_mean", "norm_std", "text"},
                       "encoder");
        opt(d, "width", c.encoder.width);
        opt(d, "layers", c.encoder.layers);
        opt(d, "heads", c.encoder.heads);
        opt(d, "patch", c.encoder.patch);
        opt(d, "resolution", c.encoder.resolution);
        opt(d, "embed_dim", c.encoder.embed_dim);
        opt(d, "skip_layers", c.encoder.skip_layers);
        opt(d, "cls_in_dist", c.encoder.cls_in_dist);
        opt(d, "norm_mean", c.encoder.norm_mean);
        opt(d, "norm_std", c.encoder.norm_std);
        if (d.contains("text")) {
            reject_unknown(d.at("text"), {"width", "layers", "heads", "context"}, "encoder.text");
            opt(d.at("text"), "width", c.encoder.text.width);
            opt(d.at("text"), "layers", c.encoder.text.layers);
            opt(d.at("text"), "heads", c.encoder.text.heads);
            opt(d.at("text"), "context", c.encoder.text.context);
        }
    }
    if (j.contains("neck")) {
        reject_unknown(j.at("neck"), {"width"}, "neck");
        if (j.at("neck").contains("width")) c.neck_width = j.at("neck").at("width").get<int>();
    }
    if (j.contains("schedule")) {
        const auto & d = j.at("schedule");
        reject_unknown(d, {"e1", "e2", "unit", "alpha", "beta", "mode"}, "schedule");
        opt(d, "e1", c.schedule.e1);
        opt(d, "e2", c.schedule.e2);
        opt(d, "unit", c.schedule.unit);
        opt(d, "alpha", c.schedule.alpha);
        opt(d, "beta", c.schedule.beta);
        opt(d, "mode", c.schedule.mode);
    }
    if (j.contains("optimizer")) {
        const auto & d = j.at("optimizer");
        reject_unknown(d, {"lr_phase1", "lr_phase2", "beta1", "beta2", "eps"}, "optimizer");
        opt(d, "lr_phase1", c.optimizer.lr_phase1);
        opt(d, "lr_phase2", c.optimizer.lr_phase2);
        opt(d, "beta1", c.optimizer.beta1);
        opt(d, "beta2", c.optimizer.beta2);
        opt(d, "eps", c.optimizer.eps);
    }
    if (j.contains("training")) {
        const auto & d = j.at("training");
        reject_unknown(d,
                       {"scenario", "lambda_index", "gamma", "delta", "tau", "batch_size",
                        "image_size", "pretrain_steps", "clip_steps", "phase1_steps", "phase2_steps",
                        "unet_steps", "data_quantize", "rate_quantize", "unet_base", "unet_depth"},
                       "training");
        opt(d, "scenario", c.training.scenario);
        opt(d, "lambda_index", c.training.lambda_index);
        opt(d, "gamma", c.training.gamma);
        opt(d, "delta", c.training.delta);
        opt(d, "tau", c.training.tau);
        opt(d, "batch_size", c.training.batch_size);
        opt(d, "image_size", c.training.image_size);
        opt(d, "pretrain_steps", c.training.pretrain_steps);
        opt(d, "clip_steps", c.training.clip_steps);
        opt(d, "phase1_steps", c.training.phase1_steps);
        opt(d, "phase2_steps", c.training.phase2_steps);
        opt(d, "unet_steps", c.training.unet_steps);
        opt(d, "data_quantize", c.training.data_quantize);
        opt(d, "rate_quantize", c.training.rate_quantize);
        opt(d, "unet_base", c.training.unet_base);
        opt(d, "unet_depth", c.training.unet_depth);
    }

    // cross-field validation
    if (c.codec.channels <= 0 || c.codec.hyper_channels <= 0 || c.codec.hidden <= 0)
        throw ConfigError("config: codec channel counts must be positive");
    if (c.codec.lambdas.empty()) throw ConfigError("config: codec.lambdas must be nonempty");
    for (size_t i = 1; i < c.codec.lambdas.size(); ++i)
        if (c.codec.lambdas[i] <= c.codec.lambdas[i - 1])
            throw ConfigError("config: codec.lambdas must be strictly increasing");
    if (c.encoder.skip_layers < 0 || c.encoder.skip_layers >= c.encoder.layers)
        throw ConfigError("config: encoder.skip_layers must satisfy 0 <= K < layers");
    if (c.encoder.width % c.encoder.heads != 0)
        throw ConfigError("config: encoder.width must be divisible by heads");
    if (c.encoder.resolution % c.encoder.patch != 0)
        throw ConfigError("config: encoder.resolution must be a multiple of patch");
    if (c.neck_width && *c.neck_width != c.encoder.width)
        throw ConfigError("config: neck.width must equal encoder.width (got " +
                          std::to_string(*c.neck_width) + " vs " +
                          std::to_string(c.encoder.width) + ")");
    if (c.schedule.e1 <= 0 || c.schedule.e2 <= c.schedule.e1)
        throw ConfigError("config: schedule requires 0 < e1 < e2");
    if (c.schedule.unit != "epochs" && c.schedule.unit != "steps")
        throw ConfigError("config: schedule.unit must be 'epochs' or 'steps'");
    if (c.schedule.mode != "full" && c.schedule.mode != "ce_only" && c.schedule.mode != "dist_only")
        throw ConfigError("config: schedule.mode must be full|ce_only|dist_only");
    if (c.schedule.alpha <= 0 || c.schedule.beta <= 0)
        throw ConfigError("config: schedule weights must be positive");
    if (c.training.scenario != "d1" && c.training.scenario != "d2" && c.training.scenario != "d3")
        throw ConfigError("config: training.scenario must be d1|d2|d3");
    if (c.training.lambda_index < 0 || size_t(c.training.lambda_index) >= c.codec.lambdas.size())
        throw ConfigError("config: training.lambda_index out of range");
    if (c.training.image_size < 64 || c.training.image_size % 64 != 0)
        throw ConfigError("config: training.image_size must be a positive multiple of 64");
    if (c.training.tau <= 0) throw ConfigError("config: training.tau must be positive");
    if (c.training.image_size / 16 != c.encoder.grid())
        throw ConfigError("config: latent grid (image_size/16) must match encoder token grid "
                          "(resolution/patch)");
    for (const std::string & q : {c.training.data_quantize, c.training.rate_quantize})
        if (q != "noise" && q != "ste_round" && q != "round")
            throw ConfigError("config: quantize mode must be noise|ste_round|round, got '" + q + "'");

    c.hash = config_hash(c.to_json());
    return c;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["dataset"]["manifest"] = dataset_manifest;
    j["codec"] = {{"channels", codec.channels},
                  {"hyper_channels", codec.hyper_channels},
                  {"hidden", codec.hidden},
                  {"kernel", codec.kernel},
                  {"scale_floor", codec.scale_floor},
                  {"lambdas", codec.lambdas}};
    j["encoder"] = {{"width", encoder.width},
                    {"layers", encoder.layers},
                    {"heads", encoder.heads},
                    {"patch", encoder.patch},
                    {"resolution", encoder.resolution},
                    {"embed_dim", encoder.embed_dim},
                    {"skip_layers", encoder.skip_layers},
                    {"cls_in_dist", encoder.cls_in_dist},
                    {"norm_mean", encoder.norm_mean},
                    {"norm_std", encoder.norm_std},
                    {"text",
                     {{"width", encoder.text.width},
                      {"layers", encoder.text.layers},
                      {"heads", encoder.text.heads},
                      {"context", encoder.text.context}}}};
    if (neck_width) j["neck"]["width"] = *neck_width;
    j["schedule"] = {{"e1", schedule.e1},   {"e2", schedule.e2},     {"unit", schedule.unit},
                     {"alpha", schedule.alpha}, {"beta", schedule.beta}, {"mode", schedule.mode}};
    j["optimizer"] = {{"lr_phase1", optimizer.lr_phase1},
                      {"lr_phase2", optimizer.lr_phase2},
                      {"beta1", optimizer.beta1},
                      {"beta2", optimizer.beta2},
                      {"eps", optimizer.eps}};
    j["training"] = {{"scenario", training.scenario},
                     {"lambda_index", training.lambda_index},
                     {"gamma", training.gamma},
                     {"delta", training.delta},
                     {"tau", training.tau},
                     {"batch_size", training.batch_size},
                     {"image_size", training.image_size},
                     {"pretrain_steps", training.pretrain_steps},
                     {"clip_steps", training.clip_steps},
                     {"phase1_steps", training.phase1_steps},
                     {"phase2_steps", training.phase2_steps},
                     {"unet_steps", training.unet_steps},
                     {"data_quantize", training.data_quantize},
                     {"rate_quantize", training.rate_quantize},
                     {"unet_base", training.unet_base},
                     {"unet_depth", training.unet_depth}};
    return j;
}

RunConfig RunConfig::from_file(const std::filesystem::path & p) {
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open config file: " + p.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception & e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(j);
}

} // namespace lbridge
