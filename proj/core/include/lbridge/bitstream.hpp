#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace lbridge {

// Raised for magic/version mismatches and structurally invalid containers.
struct BitstreamFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Raised when a declared payload extends past the available bytes.
struct TruncatedPayloadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Self-describing coded-image container. Little-endian layout:
//   magic "LBRC" | version u8 | H u32 | W u32 | lambda_index u8 |
//   config_hash u64 | hyper_len u32 | hyper bytes | main_len u32 | main bytes
struct Bitstream {
    static constexpr char kMagic[4] = {'L', 'B', 'R', 'C'};
    static constexpr uint8_t kVersion = 1;

    uint32_t height = 0;
    uint32_t width = 0;
    uint8_t lambda_index = 0;
    uint64_t config_hash = 0;
    std::vector<uint8_t> hyper_payload;
    std::vector<uint8_t> main_payload;

    std::vector<uint8_t> serialize() const;
    static Bitstream parse(const std::vector<uint8_t> & bytes);

    void save(const std::filesystem::path & path) const;
    static Bitstream load(const std::filesystem::path & path);

    int64_t payload_bits() const {
        return int64_t(hyper_payload.size() + main_payload.size()) * 8;
    }
    int64_t total_bits() const { return int64_t(serialize().size()) * 8; }
};

} // namespace lbridge
