#pragma once

#include <filesystem>

#include "lbridge/tensor.hpp"

namespace lbridge {

// RGB image in [0,1], stored [3,H,W]. Codec inputs additionally require H
// and W to be multiples of 64 (see validate_codec_input).
struct Image {
    Tensor pixels;

    int64_t height() const { return pixels.dim(1); }
    int64_t width() const { return pixels.dim(2); }
};

struct ImageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Enforces the codec input contract: finite values in [0,1], H,W >= 64 and
// multiples of 64.
void validate_codec_input(const Image & img);

Image load_image(const std::filesystem::path & path); // .ppm/.pgm/.png
void save_image(const Image & img, const std::filesystem::path & path);

// Deterministic bilinear resize of a [3,H,W] (no gradient).
Image resize_image(const Image & img, int64_t out_h, int64_t out_w);
Image center_crop_square(const Image & img);

// Differentiable bilinear resize on [B,C,H,W] (align_corners=false).
Tensor resize_bilinear(const Tensor & x, int64_t out_h, int64_t out_w);

} // namespace lbridge
