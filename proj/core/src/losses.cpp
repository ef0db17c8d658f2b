#include "lbridge/losses.hpp"

#include <cmath>

namespace lbridge {

Tensor dist_loss(const Tensor & a, const Tensor & b) {
    if (a.shape() != b.shape())
        throw LossError("dist_loss: shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    return mse(a, b);
}

Tensor sim_vector(const Tensor & img_emb, const std::vector<Tensor> & text_embs) {
    if (text_embs.empty()) throw LossError("sim_vector: empty text embedding list");
    std::vector<Tensor> sims;
    sims.reserve(text_embs.size());
    for (const auto & t : text_embs) {
        if (t.shape() != img_emb.shape()) throw LossError("sim_vector: embedding dim mismatch");
        sims.push_back(dot(img_emb, t));
    }
    Tensor v = concat_rows([&] {
        std::vector<Tensor> rows;
        for (auto & s : sims) rows.push_back(reshape(s, {1, 1}));
        return rows;
    }());
    return reshape(v, {int64_t(text_embs.size())});
}

Tensor ce_loss(const Tensor & v, int label, double tau) {
    if (tau <= 0.0) throw LossError("ce_loss: temperature must be positive");
    if (v.rank() != 1) throw LossError("ce_loss: expects a vector of scores");
    if (label < 0 || label >= v.numel()) throw LossError("ce_loss: label out of range");
    Tensor logits = mul_scalar(v, 1.0 / tau);
    Tensor logp = log_softmax_lastdim(logits);
    return neg(select_index(logp, label));
}

Tensor ce_loss(const Tensor & v, const std::vector<double> & one_hot, double tau) {
    if (int64_t(one_hot.size()) != v.numel()) throw LossError("ce_loss: target length mismatch");
    int label = -1;
    for (size_t i = 0; i < one_hot.size(); ++i) {
        if (one_hot[i] == 1.0) {
            if (label >= 0) throw LossError("ce_loss: target is not one-hot (two ones)");
            label = int(i);
        } else if (one_hot[i] != 0.0) {
            throw LossError("ce_loss: target is not one-hot (non-binary entry)");
        }
    }
    if (label < 0) throw LossError("ce_loss: target is not one-hot (no one)");
    return ce_loss(v, label, tau);
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::kCeOnly: return "ce";
        case Regime::kMixed: return "mixed";
        case Regime::kDistOnly: return "dist";
    }
    return "?";
}

Regime ScheduleState::regime_at(int64_t epoch) const {
    if (epoch < 0) throw LossError("schedule: negative epoch");
    if (mode == "ce_only") return Regime::kCeOnly;
    if (mode == "dist_only") return Regime::kDistOnly;
    if (epoch < e1) return Regime::kCeOnly;
    if (epoch < e2) return Regime::kMixed;
    return Regime::kDistOnly;
}

Tensor surrogate_loss(int64_t epoch, const Tensor & ce, const Tensor & dist,
                      const ScheduleState & sched) {
    switch (sched.regime_at(epoch)) {
        case Regime::kCeOnly: return ce;
        case Regime::kMixed: return add(mul_scalar(ce, sched.alpha), mul_scalar(dist, sched.beta));
        case Regime::kDistOnly: return dist;
    }
    throw LossError("schedule: unreachable");
}

Tensor loss_d2(const Tensor & rate_bpp, const Tensor & d_recon, const Tensor & dist, double lambda,
               double gamma, double delta) {
    Tensor distortion = add(mul_scalar(d_recon, gamma), mul_scalar(dist, delta));
    return add(rate_bpp, mul_scalar(distortion, lambda));
}

Tensor loss_d3(const Tensor & rate_bpp, const Tensor & dist, double lambda) {
    return add(rate_bpp, mul_scalar(dist, lambda));
}

Tensor recon_loss(const Tensor & x, const Tensor & x_hat) {
    if (x.shape() != x_hat.shape()) throw LossError("recon_loss: shape mismatch");
    return mul_scalar(mse(x, x_hat), 255.0 * 255.0);
}

} // namespace lbridge
