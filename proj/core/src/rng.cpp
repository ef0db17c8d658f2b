#include "lbridge/rng.hpp"

#include <cstdio>
#include <stdexcept>

namespace lbridge {

std::string Rng::state_hex() const {
    char buf[17];
    std::string out;
    out.reserve(64);
    for (uint64_t s : state_) {
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(s));
        out += buf;
    }
    return out;
}

Rng Rng::from_state_hex(const std::string & hex) {
    if (hex.size() != 64) throw std::invalid_argument("rng state: expected 64 hex chars");
    Rng r;
    std::array<uint64_t, 4> st{};
    for (int i = 0; i < 4; ++i) {
        st[size_t(i)] = std::stoull(hex.substr(size_t(i) * 16, 16), nullptr, 16);
    }
    r.set_state(st);
    return r;
}

} // namespace lbridge
