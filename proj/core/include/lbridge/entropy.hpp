#pragma once

#include <cstdint>
#include <vector>

#include "lbridge/serialize.hpp"
#include "lbridge/tensor.hpp"

namespace lbridge {

// Coding alphabet: integers in [kSymbolMin, kSymbolMax]. Values outside are
// an encoder error.
inline constexpr int kSymbolMin = -255;
inline constexpr int kSymbolMax = 256;
inline constexpr int kCdfBits = 16; // quantized CDF precision
inline constexpr double kProbFloor = 1.52587890625e-05; // 2^-16

// A 16-bit quantized CDF over a symbol window plus two escape slots. Symbols
// outside the window are coded as escape + a raw uniform literal, so any
// legal symbol stays encodable.
struct QuantizedCdf {
    int window_lo = 0; // first in-window symbol value
    std::vector<uint32_t> cum; // size = slots+1, cum.back() == 1<<kCdfBits
    // slot layout: [escape_lo][window ...][escape_hi]
    int slots() const { return int(cum.size()) - 1; }
    int window_size() const { return slots() - 2; }
};

// Builds a quantized CDF from window pmf values and the two tail masses.
// Every slot receives frequency >= 1 and the total is exactly 2^kCdfBits.
QuantizedCdf build_quantized_cdf(const std::vector<double> & pmf, double tail_lo, double tail_hi,
                                 int window_lo);

// Per-channel learned monotone CDF for the hyper latent: a 1-3-3-3-1 MLP
// with softplus-positive weights and tanh-bounded gates, squashed by a
// sigmoid. Vectorized across channels.
class FactorizedPrior {
  public:
    FactorizedPrior(int channels, Rng & rng, ParamRegistry & reg, const std::string & prefix);

    int channels() const { return channels_; }

    // CDF evaluated elementwise: x [C, M] -> [C, M], differentiable.
    Tensor cdf(const Tensor & x) const;

    // Total bits of integer-valued (or noise-perturbed) z under unit bins:
    // z [B,C,h,w] -> scalar. Differentiable in z and the prior parameters.
    Tensor bits(const Tensor & z) const;

    // pmf over [lo, hi] for one channel, no gradients; used by the coder.
    std::vector<double> pmf_window(int channel, int lo, int hi) const;
    double cdf_value(int channel, double x) const;

    // smallest window [lo,hi] within the alphabet holding mass >= 1 - eps
    std::pair<int, int> mass_window(int channel, double eps) const;

  private:
    int channels_;
    static constexpr int kFilters[5] = {1, 3, 3, 3, 1};
    std::vector<Tensor> h_, b_, a_; // per layer, shapes [C,in,out],[C,out],[C,out]
};

// Conditional Gaussian helpers shared by the rate estimate and the coder.
double gaussian_bin_mass(double sym, double mean, double scale);
QuantizedCdf gaussian_quantized_cdf(double mean, double scale);

} // namespace lbridge
