#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lbridge/tensor.hpp"

namespace lbridge {

// Single-file tensor container: "LBTF" magic, a JSON index (per-tensor name,
// shape, dtype, offset) and a raw little-endian float64 blob. Used for
// checkpoints and for importing externally trained weights.
struct TensorFile {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void put(const std::string & name, const Tensor & t);
    const Tensor * find(const std::string & name) const;
    Tensor get(const std::string & name) const; // throws if absent

    void save(const std::filesystem::path & path) const;
    static TensorFile load(const std::filesystem::path & path);
};

// Ordered name->tensor registry. Modules register their parameters here so
// that training, checkpointing and freeze-contract checks all see the same
// canonical list.
class ParamRegistry {
  public:
    Tensor add(const std::string & name, Tensor t) {
        entries_.emplace_back(name, t);
        return t;
    }
    const std::vector<std::pair<std::string, Tensor>> & entries() const { return entries_; }
    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        out.reserve(entries_.size());
        for (const auto & [n, t] : entries_) out.push_back(t);
        return out;
    }
    // tensors whose name starts with the given prefix
    std::vector<Tensor> group(const std::string & prefix) const;
    int64_t param_count() const {
        int64_t n = 0;
        for (const auto & [name, t] : entries_) n += t.numel();
        return n;
    }
    void set_trainable(bool b) {
        for (auto & [name, t] : entries_) t.set_requires_grad(b);
    }
    void set_trainable(const std::string & prefix, bool b);
    void zero_grads() {
        for (auto & [name, t] : entries_) t.zero_grad();
    }

    void save_into(TensorFile & f, const std::string & prefix = "") const;
    // copies values from the file into registered tensors; throws on missing
    // names or shape mismatches
    void load_from(const TensorFile & f, const std::string & prefix = "");

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// FNV-1a over the raw bytes of all parameters, in registration order.
uint64_t params_checksum(const ParamRegistry & reg);
uint64_t fnv1a64(const void * data, size_t len, uint64_t h = 0xcbf29ce484222325ull);

} // namespace lbridge
