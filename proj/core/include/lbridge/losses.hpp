#pragma once

#include <string>
#include <vector>

#include "lbridge/tensor.hpp"

namespace lbridge {

struct LossError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Token distillation: mean squared error between adapted features and the
// uncompressed-image features. The target carries no gradient; callers pass
// it detached.
Tensor dist_loss(const Tensor & a, const Tensor & b);

// Cosine similarities of one image embedding against m text embeddings
// (all unit-norm, so cosine = dot). Differentiable in img_emb.
Tensor sim_vector(const Tensor & img_emb, const std::vector<Tensor> & text_embs);

// Cross-entropy of softmax(v / tau) against a one-hot target.
Tensor ce_loss(const Tensor & v, int label, double tau);
Tensor ce_loss(const Tensor & v, const std::vector<double> & one_hot, double tau);

enum class Regime { kCeOnly, kMixed, kDistOnly };
std::string to_string(Regime r);

// Progressive surrogate schedule. `mode` implements the loss-term ablations:
// ce_only / dist_only pin the regime regardless of the epoch.
struct ScheduleState {
    int64_t e1 = 20;
    int64_t e2 = 40;
    double alpha = 0.01;
    double beta = 1.0;
    std::string mode = "full";

    Regime regime_at(int64_t epoch) const;
};

Tensor surrogate_loss(int64_t epoch, const Tensor & ce, const Tensor & dist,
                      const ScheduleState & sched);

// Scenario objectives. Rate enters in bits per source pixel.
Tensor loss_d2(const Tensor & rate_bpp, const Tensor & d_recon, const Tensor & dist, double lambda,
               double gamma, double delta);
Tensor loss_d3(const Tensor & rate_bpp, const Tensor & dist, double lambda);

// Reconstruction distortion: MSE scaled to the [0,255] pixel domain.
Tensor recon_loss(const Tensor & x, const Tensor & x_hat);

} // namespace lbridge
