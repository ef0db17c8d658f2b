#include "lbridge/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lbridge {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
} // namespace

double gaussian_bin_mass(double sym, double mean, double scale) {
    const double hi = (sym + 0.5 - mean) / scale;
    const double lo = (sym - 0.5 - mean) / scale;
    return norm_cdf(hi) - norm_cdf(lo);
}

QuantizedCdf build_quantized_cdf(const std::vector<double> & pmf, double tail_lo, double tail_hi,
                                 int window_lo) {
    const int n = int(pmf.size());
    if (n < 1) throw std::invalid_argument("build_quantized_cdf: empty window");
    const uint32_t total = 1u << kCdfBits;
    std::vector<uint32_t> freq(size_t(n) + 2, 0);

    // initial rounding with a floor of one
    auto to_freq = [&](double p) {
        double f = std::round(p * double(total));
        if (f < 1.0) f = 1.0;
        if (f > double(total)) f = double(total);
        return uint32_t(f);
    };
    freq[0] = to_freq(std::max(tail_lo, 0.0));
    for (int i = 0; i < n; ++i) freq[size_t(i) + 1] = to_freq(std::max(pmf[size_t(i)], 0.0));
    freq[size_t(n) + 1] = to_freq(std::max(tail_hi, 0.0));

    // repair the sum to exactly 2^16, stealing from / giving to the largest
    int64_t diff = int64_t(total);
    for (uint32_t f : freq) diff -= int64_t(f);
    while (diff != 0) {
        size_t best = 0;
        for (size_t i = 1; i < freq.size(); ++i)
            if (freq[i] > freq[best]) best = i;
        if (diff > 0) {
            const int64_t add = diff;
            freq[best] += uint32_t(add);
            diff = 0;
        } else {
            const int64_t take = std::min<int64_t>(-diff, int64_t(freq[best]) - 1);
            if (take <= 0) throw std::logic_error("build_quantized_cdf: cannot normalize");
            freq[best] -= uint32_t(take);
            diff += take;
        }
    }

    QuantizedCdf q;
    q.window_lo = window_lo;
    q.cum.resize(freq.size() + 1);
    q.cum[0] = 0;
    for (size_t i = 0; i < freq.size(); ++i) q.cum[i + 1] = q.cum[i] + freq[i];
    return q;
}

QuantizedCdf gaussian_quantized_cdf(double mean, double scale) {
    // window covering ~1e-9 of tail mass per side, clamped to the alphabet
    const double half = 6.0 * scale + 1.0;
    int lo = int(std::floor(mean - half));
    int hi = int(std::ceil(mean + half));
    lo = std::max(lo, kSymbolMin);
    hi = std::min(hi, kSymbolMax);
    if (lo > hi) { // degenerate: mean far outside the alphabet
        lo = std::clamp(lo, kSymbolMin, kSymbolMax);
        hi = lo;
    }
    std::vector<double> pmf(size_t(hi - lo + 1));
    for (int s = lo; s <= hi; ++s) pmf[size_t(s - lo)] = gaussian_bin_mass(s, mean, scale);
    const double tail_lo = norm_cdf((lo - 0.5 - mean) / scale);
    const double tail_hi = 1.0 - norm_cdf((hi + 0.5 - mean) / scale);
    return build_quantized_cdf(pmf, tail_lo, tail_hi, lo);
}

constexpr int FactorizedPrior::kFilters[5];

FactorizedPrior::FactorizedPrior(int channels, Rng & rng, ParamRegistry & reg,
                                 const std::string & prefix)
    : channels_(channels) {
    // softplus(h) ~ (1/init_scale)^(1/K) spreads the initial CDF over a
    // range of about +-init_scale
    const double init_scale = 10.0;
    const int K = 4;
    const double target = std::pow(1.0 / init_scale, 1.0 / K);
    const double h_init = std::log(std::expm1(target));
    for (int k = 0; k < K; ++k) {
        const int in = kFilters[k], out = kFilters[k + 1];
        Tensor h = Tensor::full({channels, in, out}, h_init);
        h.set_requires_grad(true);
        Tensor b = Tensor::rand_uniform({channels, out}, rng, -0.5, 0.5, true);
        h_.push_back(reg.add(prefix + ".h" + std::to_string(k), h));
        b_.push_back(reg.add(prefix + ".b" + std::to_string(k), b));
        if (k + 1 < K) {
            Tensor a = Tensor::zeros({channels, out}, true);
            a_.push_back(reg.add(prefix + ".a" + std::to_string(k), a));
        }
    }
}

Tensor FactorizedPrior::cdf(const Tensor & x) const {
    if (x.rank() != 2 || x.dim(0) != channels_)
        throw std::invalid_argument("FactorizedPrior::cdf expects [C,M]");
    const int64_t M = x.dim(1);
    Tensor t = reshape(x, {channels_, M, 1});
    for (size_t k = 0; k < h_.size(); ++k) {
        t = bmm(t, softplus(h_[k]));
        t = add_bias3(t, b_[k]);
        if (k + 1 < h_.size()) t = add(t, mul_bias3(tanh_op(t), tanh_op(a_[k])));
    }
    return reshape(sigmoid(t), {channels_, M});
}

Tensor FactorizedPrior::bits(const Tensor & z) const {
    if (z.rank() != 4 || z.dim(1) != channels_)
        throw std::invalid_argument("FactorizedPrior::bits expects [B,C,h,w]");
    const int64_t B = z.dim(0), hw = z.dim(2) * z.dim(3);
    Tensor x = reshape(permute3(reshape(z, {B, channels_, hw}), 1, 0, 2), {channels_, B * hw});
    Tensor upper = cdf(add_scalar(x, 0.5));
    Tensor lower = cdf(add_scalar(x, -0.5));
    Tensor p = clamp_min(sub(upper, lower), kProbFloor);
    constexpr double kLog2e = 1.4426950408889634074;
    return sum(mul_scalar(log_op(p), -kLog2e));
}

double FactorizedPrior::cdf_value(int channel, double x) const {
    Tensor t = Tensor::zeros({channels_, 1});
    t.data()[size_t(channel)] = x;
    Tensor c = cdf(t);
    return c.data()[size_t(channel)];
}

std::vector<double> FactorizedPrior::pmf_window(int channel, int lo, int hi) const {
    const int n = hi - lo + 1;
    // evaluate all bin edges for this channel in one pass
    Tensor t = Tensor::zeros({channels_, int64_t(n) + 1});
    for (int i = 0; i <= n; ++i) t.data()[size_t(channel * (n + 1) + i)] = lo - 0.5 + i;
    Tensor c = cdf(t);
    std::vector<double> pmf(size_t(n));
    for (int i = 0; i < n; ++i) {
        const double a = c.data()[size_t(channel * (n + 1) + i)];
        const double b = c.data()[size_t(channel * (n + 1) + i + 1)];
        pmf[size_t(i)] = std::max(b - a, 0.0);
    }
    return pmf;
}

std::pair<int, int> FactorizedPrior::mass_window(int channel, double eps) const {
    // scan outward from the median in integer steps
    int lo = 0, hi = 0;
    while (lo > kSymbolMin && cdf_value(channel, lo - 0.5) > eps / 2) --lo;
    while (hi < kSymbolMax && cdf_value(channel, hi + 0.5) < 1.0 - eps / 2) ++hi;
    return {lo, hi};
}

} // namespace lbridge
