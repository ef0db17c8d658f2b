#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "lbridge/image.hpp"

namespace lbridge {

void validate_codec_input(const Image & img) {
    if (!img.pixels.defined() || img.pixels.rank() != 3 || img.pixels.dim(0) != 3)
        throw ImageError("image must be [3,H,W]");
    const int64_t h = img.height(), w = img.width();
    if (h < 64 || w < 64 || h % 64 != 0 || w % 64 != 0)
        throw ImageError("image dims must be multiples of 64 and >= 64, got " + std::to_string(h) +
                         "x" + std::to_string(w));
    for (double v : img.pixels.data())
        if (!(v >= 0.0 && v <= 1.0)) throw ImageError("image values must be finite and in [0,1]");
}

namespace {

Image from_u8(const std::vector<uint8_t> & rgb, int64_t h, int64_t w) {
    Tensor t = Tensor::zeros({3, h, w});
    auto d = t.data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                d[size_t(c * h * w + y * w + x)] = double(rgb[size_t((y * w + x) * 3 + c)]) / 255.0;
    return Image{t};
}

int read_pnm_token(std::istream & in) {
    // skips whitespace and '#' comments
    while (true) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    in >> v;
    return v;
}

Image load_pnm(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open image: " + path.string());
    char p, n;
    in.get(p);
    in.get(n);
    const bool gray = (n == '5');
    if (p != 'P' || (n != '6' && n != '5')) throw ImageError("unsupported PNM type in " + path.string());
    const int w = read_pnm_token(in);
    const int h = read_pnm_token(in);
    const int maxv = read_pnm_token(in);
    in.get(); // single whitespace before raster
    if (w <= 0 || h <= 0 || maxv != 255) throw ImageError("unsupported PNM header in " + path.string());
    const int ch = gray ? 1 : 3;
    std::vector<uint8_t> raw(size_t(w) * size_t(h) * size_t(ch));
    in.read(reinterpret_cast<char *>(raw.data()), std::streamsize(raw.size()));
    if (!in) throw ImageError("truncated PNM raster in " + path.string());
    std::vector<uint8_t> rgb(size_t(w) * size_t(h) * 3);
    for (size_t i = 0; i < size_t(w) * size_t(h); ++i)
        for (int c = 0; c < 3; ++c) rgb[i * 3 + size_t(c)] = gray ? raw[i] : raw[i * 3 + size_t(c)];
    return from_u8(rgb, h, w);
}

void save_ppm(const Image & img, const std::filesystem::path & path) {
    const int64_t h = img.height(), w = img.width();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError("cannot write image: " + path.string());
    out << "P6\n" << w << " " << h << "\n255\n";
    auto d = img.pixels.data();
    std::vector<uint8_t> row(size_t(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                double v = d[size_t(c * h * w + y * w + x)];
                v = std::clamp(v, 0.0, 1.0);
                row[size_t(x * 3 + c)] = uint8_t(std::lround(v * 255.0));
            }
        out.write(reinterpret_cast<const char *>(row.data()), std::streamsize(row.size()));
    }
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE * fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

Image load_png(const std::filesystem::path & path) {
    PngReadCloser s;
    s.fp = std::fopen(path.c_str(), "rb");
    if (!s.fp) throw ImageError("cannot open image: " + path.string());
    s.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    s.info = png_create_info_struct(s.png);
    if (!s.png || !s.info || setjmp(png_jmpbuf(s.png)))
        throw ImageError("png decode failed: " + path.string());
    png_init_io(s.png, s.fp);
    png_read_info(s.png, s.info);
    png_set_expand(s.png);
    png_set_strip_16(s.png);
    png_set_strip_alpha(s.png);
    png_set_gray_to_rgb(s.png); // grayscale replicated to 3 channels
    png_read_update_info(s.png, s.info);
    const int64_t w = png_get_image_width(s.png, s.info);
    const int64_t h = png_get_image_height(s.png, s.info);
    if (png_get_channels(s.png, s.info) != 3) throw ImageError("png: unexpected channel count");
    std::vector<uint8_t> rgb(size_t(w) * size_t(h) * 3);
    std::vector<png_bytep> rows(size_t(h));
    for (int64_t y = 0; y < h; ++y) rows[size_t(y)] = rgb.data() + y * w * 3;
    png_read_image(s.png, rows.data());
    png_read_end(s.png, nullptr);
    return from_u8(rgb, h, w);
}

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE * fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

void save_png(const Image & img, const std::filesystem::path & path) {
    const int64_t h = img.height(), w = img.width();
    PngWriteCloser s;
    s.fp = std::fopen(path.c_str(), "wb");
    if (!s.fp) throw ImageError("cannot write image: " + path.string());
    s.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    s.info = png_create_info_struct(s.png);
    if (!s.png || !s.info || setjmp(png_jmpbuf(s.png)))
        throw ImageError("png encode failed: " + path.string());
    png_init_io(s.png, s.fp);
    png_set_IHDR(s.png, s.info, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(s.png, s.info);
    auto d = img.pixels.data();
    std::vector<uint8_t> row(size_t(w) * 3);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                double v = std::clamp(d[size_t(c * h * w + y * w + x)], 0.0, 1.0);
                row[size_t(x * 3 + c)] = uint8_t(std::lround(v * 255.0));
            }
        png_write_row(s.png, row.data());
    }
    png_write_end(s.png, nullptr);
}

} // namespace

Image load_image(const std::filesystem::path & path) {
    const std::string ext = path.extension().string();
    if (ext == ".ppm" || ext == ".pgm") return load_pnm(path);
    if (ext == ".png") return load_png(path);
    throw ImageError("unsupported image format: " + path.string());
}

void save_image(const Image & img, const std::filesystem::path & path) {
    const std::string ext = path.extension().string();
    if (ext == ".ppm") return save_ppm(img, path);
    if (ext == ".png") return save_png(img, path);
    throw ImageError("unsupported image format: " + path.string());
}

Tensor resize_bilinear(const Tensor & x, int64_t out_h, int64_t out_w) {
    if (x.rank() != 4) throw std::invalid_argument("resize_bilinear: expects [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H == out_h && W == out_w) {
        return reshape(x, x.shape()); // identity (keeps graph)
    }
    const double sy = double(H) / double(out_h);
    const double sx = double(W) / double(out_w);

    struct Tap {
        int64_t i0, i1, j0, j1;
        double w00, w01, w10, w11;
    };
    auto taps = std::make_shared<std::vector<Tap>>(size_t(out_h * out_w));
    for (int64_t oy = 0; oy < out_h; ++oy) {
        const double fy = std::clamp((double(oy) + 0.5) * sy - 0.5, 0.0, double(H - 1));
        const int64_t i0 = int64_t(fy), i1 = std::min(i0 + 1, H - 1);
        const double dy = fy - double(i0);
        for (int64_t ox = 0; ox < out_w; ++ox) {
            const double fx = std::clamp((double(ox) + 0.5) * sx - 0.5, 0.0, double(W - 1));
            const int64_t j0 = int64_t(fx), j1 = std::min(j0 + 1, W - 1);
            const double dx = fx - double(j0);
            (*taps)[size_t(oy * out_w + ox)] =
                Tap{i0, i1, j0, j1, (1 - dy) * (1 - dx), (1 - dy) * dx, dy * (1 - dx), dy * dx};
        }
    }

    Tensor out = make_node({B, C, out_h, out_w}, {x}, [x, taps, B, C, H, W, out_h, out_w](TensorImpl & self) {
        auto px = x.impl();
        if (!px->wants_grad()) return;
        px->ensure_grad();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                double * gx = px->grad.data() + (b * C + c) * H * W;
                const double * go = self.grad.data() + (b * C + c) * out_h * out_w;
                for (int64_t t = 0; t < out_h * out_w; ++t) {
                    const Tap & tp = (*taps)[size_t(t)];
                    gx[tp.i0 * W + tp.j0] += go[t] * tp.w00;
                    gx[tp.i0 * W + tp.j1] += go[t] * tp.w01;
                    gx[tp.i1 * W + tp.j0] += go[t] * tp.w10;
                    gx[tp.i1 * W + tp.j1] += go[t] * tp.w11;
                }
            }
    });
    auto in = x.data();
    auto o = out.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double * sxp = in.data() + (b * C + c) * H * W;
            double * op = o.data() + (b * C + c) * out_h * out_w;
            for (int64_t t = 0; t < out_h * out_w; ++t) {
                const Tap & tp = (*taps)[size_t(t)];
                op[t] = sxp[tp.i0 * W + tp.j0] * tp.w00 + sxp[tp.i0 * W + tp.j1] * tp.w01 +
                        sxp[tp.i1 * W + tp.j0] * tp.w10 + sxp[tp.i1 * W + tp.j1] * tp.w11;
            }
        }
    return out;
}

Image resize_image(const Image & img, int64_t out_h, int64_t out_w) {
    Tensor x = reshape(img.pixels.detach(), {1, 3, img.height(), img.width()});
    Tensor y = resize_bilinear(x, out_h, out_w);
    return Image{reshape(y, {3, out_h, out_w}).detach()};
}

Image center_crop_square(const Image & img) {
    const int64_t h = img.height(), w = img.width();
    const int64_t side = std::min(h, w);
    const int64_t y0 = (h - side) / 2, x0 = (w - side) / 2;
    Tensor t = Tensor::zeros({3, side, side});
    auto src = img.pixels.data();
    auto dst = t.data();
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < side; ++y)
            std::memcpy(dst.data() + (c * side + y) * side, src.data() + (c * h + y0 + y) * w + x0,
                        sizeof(double) * size_t(side));
    return Image{t};
}

} // namespace lbridge
