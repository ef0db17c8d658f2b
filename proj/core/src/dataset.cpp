#include "lbridge/dataset.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace lbridge {

namespace {

std::vector<ManifestEntry> parse_split(const nlohmann::json & j) {
    std::vector<ManifestEntry> out;
    for (const auto & e : j) {
        ManifestEntry m;
        m.path = e.at("path").get<std::string>();
        m.label = e.at("label").get<int>();
        out.push_back(std::move(m));
    }
    return out;
}

nlohmann::json dump_split(const std::vector<ManifestEntry> & split) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto & e : split) j.push_back({{"path", e.path}, {"label", e.label}});
    return j;
}

} // namespace

DatasetManifest DatasetManifest::load(const std::filesystem::path & manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DatasetError("cannot open manifest: " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception & e) {
        throw DatasetError(std::string("manifest parse error: ") + e.what());
    }
    DatasetManifest m;
    m.root = manifest_path.parent_path();
    m.class_names = j.at("classes").get<std::vector<std::string>>();
    m.train = parse_split(j.at("splits").at("train"));
    m.val = parse_split(j.at("splits").at("val"));
    m.test = parse_split(j.at("splits").at("test"));
    m.validate();
    return m;
}

void DatasetManifest::save(const std::filesystem::path & manifest_path) const {
    nlohmann::json j;
    j["classes"] = class_names;
    j["splits"]["train"] = dump_split(train);
    j["splits"]["val"] = dump_split(val);
    j["splits"]["test"] = dump_split(test);
    std::ofstream out(manifest_path);
    if (!out) throw DatasetError("cannot write manifest: " + manifest_path.string());
    out << j.dump(1);
}

void DatasetManifest::validate() const {
    if (class_names.empty()) throw DatasetError("manifest: empty class list");
    std::set<std::string> seen;
    for (const auto * split : {&train, &val, &test}) {
        for (const auto & e : *split) {
            if (e.label < 0 || size_t(e.label) >= class_names.size())
                throw DatasetError("manifest: label out of range for " + e.path);
            if (!seen.insert(e.path).second)
                throw DatasetError("manifest: path appears in multiple splits: " + e.path);
        }
    }
}

const std::vector<ManifestEntry> & DatasetManifest::split(const std::string & name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw DatasetError("unknown split: " + name);
}

ImageDataset::ImageDataset(const DatasetManifest & manifest, const std::string & split,
                           int64_t image_size)
    : root_(manifest.root),
      entries_(manifest.split(split)),
      class_names_(manifest.class_names),
      image_size_(image_size) {
    if (entries_.empty()) throw DatasetError("dataset split '" + split + "' is empty");
    cache_.resize(entries_.size());
    loaded_.assign(entries_.size(), 0);
}

const Image & ImageDataset::image(int64_t i) const {
    if (i < 0 || i >= size()) throw DatasetError("dataset index out of range");
    if (!loaded_[size_t(i)]) {
        Image img = load_image(root_ / entries_[size_t(i)].path);
        if (img.height() != img.width()) img = center_crop_square(img);
        if (img.height() != image_size_) img = resize_image(img, image_size_, image_size_);
        cache_[size_t(i)] = img;
        loaded_[size_t(i)] = 1;
    }
    return cache_[size_t(i)];
}

std::vector<int64_t> ImageDataset::shuffled_indices(Rng & rng) const {
    std::vector<int64_t> idx(size_t(size()));
    for (int64_t i = 0; i < size(); ++i) idx[size_t(i)] = i;
    for (int64_t i = size() - 1; i > 0; --i) {
        const int64_t j = int64_t(rng.below(uint64_t(i + 1)));
        std::swap(idx[size_t(i)], idx[size_t(j)]);
    }
    return idx;
}

} // namespace lbridge
