#include <algorithm>
#include <cmath>

#include "lbridge/dataset.hpp"

namespace lbridge {

namespace {

enum class ShapeKind { kCircle, kSquare, kTriangle, kCross };

// signed distance to the shape boundary in pixels, negative inside
double shape_sdf(ShapeKind kind, double px, double py, double cx, double cy, double radius,
                 double rot) {
    const double ca = std::cos(rot), sa = std::sin(rot);
    const double dx0 = px - cx, dy0 = py - cy;
    const double dx = ca * dx0 + sa * dy0;
    const double dy = -sa * dx0 + ca * dy0;
    switch (kind) {
        case ShapeKind::kCircle: return std::sqrt(dx * dx + dy * dy) - radius;
        case ShapeKind::kSquare: {
            const double qx = std::fabs(dx) - radius, qy = std::fabs(dy) - radius;
            const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
            return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
        }
        case ShapeKind::kTriangle: {
            // equilateral triangle of circumradius `radius`
            const double k = std::sqrt(3.0);
            double x = std::fabs(dx) - radius, y = dy + radius / k;
            if (x + k * y > 0.0) {
                const double nx = (x - k * y) / 2.0, ny = (-k * x - y) / 2.0;
                x = nx;
                y = ny;
            }
            x -= std::clamp(x, -2.0 * radius, 0.0);
            return -std::sqrt(x * x + y * y) * (y > 0 ? -1.0 : 1.0);
        }
        case ShapeKind::kCross: {
            const double arm = radius * 0.38;
            const double qx = std::fabs(dx), qy = std::fabs(dy);
            const double bar1 = std::max(qx - radius, qy - arm);
            const double bar2 = std::max(qy - radius, qx - arm);
            return std::min(bar1, bar2);
        }
    }
    return 1e9;
}

} // namespace

DatasetManifest generate_shapes_dataset(const std::filesystem::path & out_dir,
                                        const DatagenOptions & opts) {
    namespace fs = std::filesystem;
    const std::vector<std::pair<std::string, ShapeKind>> shapes = {
        {"circle", ShapeKind::kCircle},
        {"square", ShapeKind::kSquare},
        {"triangle", ShapeKind::kTriangle},
        {"cross", ShapeKind::kCross},
    };
    struct ColorDef {
        std::string name;
        double r, g, b;
    };
    const std::vector<ColorDef> colors = {
        {"red", 0.85, 0.15, 0.12}, {"green", 0.15, 0.75, 0.20}, {"blue", 0.15, 0.25, 0.85}};

    DatasetManifest m;
    m.root = out_dir;
    for (const auto & c : colors)
        for (const auto & s : shapes) m.class_names.push_back(c.name + " " + s.first);

    fs::create_directories(out_dir / "img");
    Rng rng(opts.seed);
    const int sz = opts.image_size;

    auto render = [&](int cls, int index, const std::string & split) {
        const auto & color = colors[size_t(cls) / shapes.size()];
        const auto & shape = shapes[size_t(cls) % shapes.size()];

        const double cx = rng.uniform_range(0.32, 0.68) * sz;
        const double cy = rng.uniform_range(0.32, 0.68) * sz;
        const double radius = rng.uniform_range(0.18, 0.30) * sz;
        const double rot = rng.uniform_range(0.0, 6.2831853);
        const double bg = rng.uniform_range(0.25, 0.75);
        const double gx = rng.uniform_range(-0.12, 0.12) / sz;
        const double gy = rng.uniform_range(-0.12, 0.12) / sz;
        const double jitter = rng.uniform_range(0.85, 1.15);

        Tensor t = Tensor::zeros({3, sz, sz});
        auto d = t.data();
        for (int y = 0; y < sz; ++y) {
            for (int x = 0; x < sz; ++x) {
                const double sd = shape_sdf(shape.second, x + 0.5, y + 0.5, cx, cy, radius, rot);
                const double cov = std::clamp(0.5 - sd, 0.0, 1.0); // 1px anti-aliased edge
                const double base = std::clamp(bg + gx * (x - sz / 2.0) + gy * (y - sz / 2.0), 0.05, 0.95);
                const double noise = rng.uniform_range(-0.03, 0.03);
                const double fg[3] = {std::clamp(color.r * jitter, 0.0, 1.0),
                                      std::clamp(color.g * jitter, 0.0, 1.0),
                                      std::clamp(color.b * jitter, 0.0, 1.0)};
                for (int c = 0; c < 3; ++c) {
                    const double v = (1.0 - cov) * base + cov * fg[c] + noise;
                    d[size_t(c * sz * sz + y * sz + x)] = std::clamp(v, 0.0, 1.0);
                }
            }
        }
        char name[64];
        std::snprintf(name, sizeof(name), "img/%s_c%02d_%04d.ppm", split.c_str(), cls, index);
        save_image(Image{t}, out_dir / name);
        return ManifestEntry{name, cls};
    };

    const int ncls = int(m.class_names.size());
    for (int cls = 0; cls < ncls; ++cls)
        for (int i = 0; i < opts.train_per_class; ++i) m.train.push_back(render(cls, i, "train"));
    for (int cls = 0; cls < ncls; ++cls)
        for (int i = 0; i < opts.val_per_class; ++i) m.val.push_back(render(cls, i, "val"));
    for (int cls = 0; cls < ncls; ++cls)
        for (int i = 0; i < opts.test_per_class; ++i) m.test.push_back(render(cls, i, "test"));

    m.validate();
    m.save(out_dir / "manifest.json");
    return m;
}

} // namespace lbridge
