#include "lbridge/range_coder.hpp"

#include <algorithm>
#include <stdexcept>

namespace lbridge {

namespace {
constexpr uint32_t kTopValue = 1u << 24;
constexpr uint32_t kTotal = 1u << kCdfBits;
} // namespace

void RangeEncoder::shift_low() {
    if (uint32_t(low_ >> 32) != 0 || uint32_t(low_) < 0xFF000000u) {
        uint8_t carry = uint8_t(low_ >> 32);
        while (cache_size_ != 0) {
            out_.push_back(uint8_t(cache_ + carry));
            cache_ = 0xFF;
            --cache_size_;
        }
        cache_ = uint8_t(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ << 8) & 0xFFFFFFFFull;
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
    if (freq == 0 || cum + freq > kTotal) throw std::invalid_argument("range encoder: bad frequency");
    const uint32_t r = range_ >> kCdfBits;
    low_ += uint64_t(r) * cum;
    range_ = r * freq;
    while (range_ < kTopValue) {
        shift_low();
        range_ <<= 8;
    }
}

void RangeEncoder::encode_raw(uint32_t value, int bits) {
    if (bits <= 0 || bits > 16 || value >= (1u << bits))
        throw std::invalid_argument("range encoder: bad raw literal");
    encode(value << (kCdfBits - bits), 1u << (kCdfBits - bits));
}

std::vector<uint8_t> RangeEncoder::finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> bytes) : in_(bytes) {
    next_byte(); // leading zero emitted by the encoder's cache priming
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() { return pos_ < in_.size() ? in_[pos_++] : 0; }

uint32_t RangeDecoder::decode_cum() {
    range_ >>= kCdfBits;
    const uint32_t v = code_ / range_;
    return std::min(v, kTotal - 1);
}

void RangeDecoder::decode_update(uint32_t cum, uint32_t freq) {
    code_ -= cum * range_;
    range_ *= freq;
    while (range_ < kTopValue) {
        code_ = (code_ << 8) | next_byte();
        range_ <<= 8;
    }
}

uint32_t RangeDecoder::decode_raw(int bits) {
    const uint32_t cum = decode_cum();
    const uint32_t value = cum >> (kCdfBits - bits);
    decode_update(value << (kCdfBits - bits), 1u << (kCdfBits - bits));
    return value;
}

void encode_symbol(RangeEncoder & enc, const QuantizedCdf & cdf, int symbol) {
    if (symbol < kSymbolMin || symbol > kSymbolMax)
        throw std::out_of_range("entropy encoder: symbol outside supported range [-255,256]: " +
                                std::to_string(symbol));
    const int w = cdf.window_size();
    int slot;
    if (symbol < cdf.window_lo) {
        slot = 0; // low escape
    } else if (symbol >= cdf.window_lo + w) {
        slot = w + 1; // high escape
    } else {
        slot = 1 + (symbol - cdf.window_lo);
    }
    enc.encode(cdf.cum[size_t(slot)], cdf.cum[size_t(slot) + 1] - cdf.cum[size_t(slot)]);
    if (slot == 0 || slot == w + 1) {
        enc.encode_raw(uint32_t(symbol - kSymbolMin), 9); // 512-value literal
    }
}

int decode_symbol(RangeDecoder & dec, const QuantizedCdf & cdf) {
    const uint32_t v = dec.decode_cum();
    // binary search for the slot with cum[slot] <= v < cum[slot+1]
    int lo = 0, hi = cdf.slots() - 1;
    while (lo < hi) {
        const int mid = (lo + hi + 1) / 2;
        if (cdf.cum[size_t(mid)] <= v)
            lo = mid;
        else
            hi = mid - 1;
    }
    const int slot = lo;
    dec.decode_update(cdf.cum[size_t(slot)], cdf.cum[size_t(slot) + 1] - cdf.cum[size_t(slot)]);
    const int w = cdf.window_size();
    if (slot == 0 || slot == w + 1) return kSymbolMin + int(dec.decode_raw(9));
    return cdf.window_lo + (slot - 1);
}

} // namespace lbridge
