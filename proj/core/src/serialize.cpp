#include "lbridge/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lbridge {

namespace {
constexpr char kMagic[4] = {'L', 'B', 'T', 'F'};
constexpr uint8_t kVersion = 1;
} // namespace

void TensorFile::put(const std::string & name, const Tensor & t) {
    tensors.emplace_back(name, t);
}

const Tensor * TensorFile::find(const std::string & name) const {
    for (const auto & [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

Tensor TensorFile::get(const std::string & name) const {
    const Tensor * t = find(name);
    if (!t) throw std::runtime_error("tensor file: missing entry '" + name + "'");
    return *t;
}

void TensorFile::save(const std::filesystem::path & path) const {
    nlohmann::json index = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto & [name, t] : tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["dtype"] = "f64";
        e["offset"] = offset;
        offset += uint64_t(t.numel()) * sizeof(double);
        index.push_back(e);
    }
    nlohmann::json header;
    header["meta"] = meta;
    header["tensors"] = index;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write(kMagic, 4);
    out.put(char(kVersion));
    uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char *>(&hlen), sizeof(hlen));
    out.write(hs.data(), std::streamsize(hs.size()));
    for (const auto & [name, t] : tensors)
        out.write(reinterpret_cast<const char *>(t.data().data()),
                  std::streamsize(size_t(t.numel()) * sizeof(double)));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

TensorFile TensorFile::load(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bad tensor-file magic: " + path.string());
    const int version = in.get();
    if (version != kVersion) throw std::runtime_error("unsupported tensor-file version");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char *>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), std::streamsize(hlen));
    if (!in) throw std::runtime_error("truncated tensor-file header");
    nlohmann::json header = nlohmann::json::parse(hs);

    TensorFile f;
    f.meta = header.value("meta", nlohmann::json::object());
    for (const auto & e : header.at("tensors")) {
        Shape shape = e.at("shape").get<Shape>();
        if (e.at("dtype").get<std::string>() != "f64")
            throw std::runtime_error("unsupported dtype in tensor file");
        std::vector<double> data(size_t(shape_numel(shape)));
        in.read(reinterpret_cast<char *>(data.data()), std::streamsize(data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("truncated tensor-file blob");
        f.tensors.emplace_back(e.at("name").get<std::string>(),
                               Tensor::from_data(std::move(shape), std::move(data)));
    }
    return f;
}

std::vector<Tensor> ParamRegistry::group(const std::string & prefix) const {
    std::vector<Tensor> out;
    for (const auto & [n, t] : entries_)
        if (n.rfind(prefix, 0) == 0) out.push_back(t);
    return out;
}

void ParamRegistry::set_trainable(const std::string & prefix, bool b) {
    for (auto & [n, t] : entries_)
        if (n.rfind(prefix, 0) == 0) t.set_requires_grad(b);
}

void ParamRegistry::save_into(TensorFile & f, const std::string & prefix) const {
    for (const auto & [n, t] : entries_) f.put(prefix + n, t);
}

void ParamRegistry::load_from(const TensorFile & f, const std::string & prefix) {
    for (auto & [n, t] : entries_) {
        Tensor src = f.get(prefix + n);
        if (src.shape() != t.shape())
            throw std::runtime_error("checkpoint shape mismatch for '" + prefix + n + "': " +
                                     shape_str(src.shape()) + " vs " + shape_str(t.shape()));
        std::memcpy(t.data().data(), src.data().data(), size_t(t.numel()) * sizeof(double));
    }
}

uint64_t fnv1a64(const void * data, size_t len, uint64_t h) {
    const auto * p = static_cast<const unsigned char *>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t params_checksum(const ParamRegistry & reg) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto & [n, t] : reg.entries()) {
        h = fnv1a64(n.data(), n.size(), h);
        h = fnv1a64(t.data().data(), size_t(t.numel()) * sizeof(double), h);
    }
    return h;
}

} // namespace lbridge
