#include "lbridge/bitstream.hpp"

#include <cstring>
#include <fstream>

namespace lbridge {

namespace {

template <class T>
void put_le(std::vector<uint8_t> & out, T v) {
    for (size_t i = 0; i < sizeof(T); ++i) out.push_back(uint8_t(uint64_t(v) >> (8 * i)));
}

template <class T>
T get_le(const std::vector<uint8_t> & in, size_t & pos) {
    if (pos + sizeof(T) > in.size()) throw TruncatedPayloadError("bitstream: truncated header");
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    return T(v);
}

} // namespace

std::vector<uint8_t> Bitstream::serialize() const {
    std::vector<uint8_t> out;
    out.reserve(32 + hyper_payload.size() + main_payload.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    put_le(out, height);
    put_le(out, width);
    out.push_back(lambda_index);
    put_le(out, config_hash);
    put_le(out, uint32_t(hyper_payload.size()));
    out.insert(out.end(), hyper_payload.begin(), hyper_payload.end());
    put_le(out, uint32_t(main_payload.size()));
    out.insert(out.end(), main_payload.begin(), main_payload.end());
    return out;
}

Bitstream Bitstream::parse(const std::vector<uint8_t> & bytes) {
    size_t pos = 0;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw BitstreamFormatError("bitstream: bad magic");
    pos = 4;
    const uint8_t ver = get_le<uint8_t>(bytes, pos);
    if (ver != kVersion)
        throw BitstreamFormatError("bitstream: unsupported version " + std::to_string(int(ver)));
    Bitstream b;
    b.height = get_le<uint32_t>(bytes, pos);
    b.width = get_le<uint32_t>(bytes, pos);
    b.lambda_index = get_le<uint8_t>(bytes, pos);
    b.config_hash = get_le<uint64_t>(bytes, pos);
    const uint32_t hlen = get_le<uint32_t>(bytes, pos);
    if (pos + hlen > bytes.size()) throw TruncatedPayloadError("bitstream: truncated hyper payload");
    b.hyper_payload.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + hlen));
    pos += hlen;
    const uint32_t mlen = get_le<uint32_t>(bytes, pos);
    if (pos + mlen > bytes.size()) throw TruncatedPayloadError("bitstream: truncated main payload");
    b.main_payload.assign(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(pos + mlen));
    pos += mlen;
    if (pos != bytes.size()) throw BitstreamFormatError("bitstream: trailing bytes");
    if (b.height == 0 || b.width == 0 || b.height % 64 != 0 || b.width % 64 != 0)
        throw BitstreamFormatError("bitstream: invalid dimensions");
    return b;
}

void Bitstream::save(const std::filesystem::path & path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write bitstream: " + path.string());
    out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
}

Bitstream Bitstream::load(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open bitstream: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(bytes);
}

} // namespace lbridge
