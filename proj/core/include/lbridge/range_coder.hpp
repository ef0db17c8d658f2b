#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lbridge/entropy.hpp"

namespace lbridge {

// 32-bit renormalizing range coder with 16-bit cumulative frequencies and
// LZMA-style carry propagation. encode(cum, freq) / decode pairs are
// bit-exact inverses for any frequency table summing to 2^kCdfBits.
class RangeEncoder {
  public:
    void encode(uint32_t cum, uint32_t freq);
    // uniform literal of `bits` <= 16
    void encode_raw(uint32_t value, int bits);
    std::vector<uint8_t> finish();

  private:
    void shift_low();
    std::vector<uint8_t> out_;
    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    uint64_t cache_size_ = 1;
};

class RangeDecoder {
  public:
    explicit RangeDecoder(std::span<const uint8_t> bytes);
    // cumulative-frequency estimate of the next symbol
    uint32_t decode_cum();
    void decode_update(uint32_t cum, uint32_t freq);
    uint32_t decode_raw(int bits);

  private:
    uint8_t next_byte();
    std::span<const uint8_t> in_;
    size_t pos_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint32_t code_ = 0;
};

// Symbol-level helpers over a QuantizedCdf (escape slots + raw literals for
// out-of-window symbols).
void encode_symbol(RangeEncoder & enc, const QuantizedCdf & cdf, int symbol);
int decode_symbol(RangeDecoder & dec, const QuantizedCdf & cdf);

} // namespace lbridge
