#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lbridge/image.hpp"
#include "lbridge/rng.hpp"

namespace lbridge {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ManifestEntry {
    std::string path; // relative to root
    int label = 0;
};

// JSON manifest: class-name list plus disjoint train/val/test split lists of
// (path, label). Ordering is preserved from the document and must be
// deterministic.
struct DatasetManifest {
    std::filesystem::path root;
    std::vector<std::string> class_names;
    std::vector<ManifestEntry> train, val, test;

    static DatasetManifest load(const std::filesystem::path & manifest_path);
    void save(const std::filesystem::path & manifest_path) const;
    void validate() const; // label ranges, split disjointness

    const std::vector<ManifestEntry> & split(const std::string & name) const;
};

// In-memory dataset over one split: decodes images on first access, then
// serves cached copies cropped/resized to the configured square size.
class ImageDataset {
  public:
    ImageDataset(const DatasetManifest & manifest, const std::string & split, int64_t image_size);

    int64_t size() const { return int64_t(entries_.size()); }
    int label(int64_t i) const { return entries_[size_t(i)].label; }
    const Image & image(int64_t i) const; // cached
    const std::vector<std::string> & class_names() const { return class_names_; }

    // deterministic seeded shuffle of [0,size)
    std::vector<int64_t> shuffled_indices(Rng & rng) const;

  private:
    std::filesystem::path root_;
    std::vector<ManifestEntry> entries_;
    std::vector<std::string> class_names_;
    int64_t image_size_;
    mutable std::vector<Image> cache_;
    mutable std::vector<char> loaded_;
};

// Synthetic labeled shapes dataset (datagen.cpp): class = shape x color,
// rendered procedurally with a seeded generator; writes PPM images plus
// manifest.json into out_dir.
struct DatagenOptions {
    int image_size = 128;
    int train_per_class = 40;
    int val_per_class = 8;
    int test_per_class = 20;
    uint64_t seed = 7;
};
DatasetManifest generate_shapes_dataset(const std::filesystem::path & out_dir,
                                        const DatagenOptions & opts);

} // namespace lbridge
