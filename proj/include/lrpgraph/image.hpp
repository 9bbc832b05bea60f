#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrpgraph/tensor.hpp"

namespace lrp {

// 8-bit interleaved RGB.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

struct Normalization {
  std::vector<float> mean{0.0f};
  std::vector<float> stddev{1.0f};
};

// PNG, JPEG or binary/ASCII PPM, detected from the file signature. Throws
// DecodeError.
RgbImage decode_image(const std::filesystem::path& path);
RgbImage decode_image_bytes(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
// Picks PNG or PPM from the extension.
void write_image(const std::filesystem::path& path, const RgbImage& image);

// Bilinear resampling of a [C,H,W] tensor with half-pixel centers and edge
// clamping (no antialiasing).
Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w);

// RGB bytes to a [C,H,W] tensor in [0,1]; C == 1 uses Rec.601 luma.
Tensor rgb_to_tensor(const RgbImage& image, std::size_t channels);

// Decode, resize to input_shape when needed, scale to [0,1], then apply
// (v - mean[c]) / std[c].
Tensor load_image(const std::filesystem::path& path, const Shape& input_shape,
                  const Normalization& normalization);
Tensor preprocess_image(const RgbImage& image, const Shape& input_shape,
                        const Normalization& normalization);

// Inverse of the normalization, clamped to bytes. Used for overlays.
RgbImage tensor_to_rgb(const Tensor& image, const Normalization& normalization);

}  // namespace lrp
