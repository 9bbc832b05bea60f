#include "lrpgraph/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "lrpgraph/errors.hpp"

namespace lrp {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DecodeError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(std::string("png: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out{image.width, image.height, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("png: " + msg);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

RgbImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  RgbImage out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = cinfo.output_width;
  out.height = cinfo.output_height;
  out.pixels.resize(out.width * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

// Reads whitespace/comment separated header tokens of a PNM file.
class PnmReader {
 public:
  explicit PnmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t next_number() {
    skip_space();
    std::size_t value = 0;
    bool any = false;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      any = true;
    }
    if (!any) throw DecodeError("ppm: malformed header");
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

RgbImage decode_ppm(std::span<const std::uint8_t> bytes) {
  const bool binary = bytes[1] == '6';
  PnmReader reader(bytes);
  RgbImage out;
  out.width = reader.next_number();
  out.height = reader.next_number();
  const std::size_t maxval = reader.next_number();
  if (out.width == 0 || out.height == 0 || maxval == 0 || maxval > 255) {
    throw DecodeError("ppm: unsupported dimensions or maxval");
  }
  const std::size_t count = out.width * out.height * 3;
  out.pixels.resize(count);
  if (binary) {
    reader.advance(1);  // single whitespace after maxval
    if (bytes.size() < reader.pos() + count) throw DecodeError("ppm: truncated pixel data");
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(reader.pos()), count, out.pixels.begin());
  } else {
    for (std::size_t i = 0; i < count; ++i) out.pixels[i] = static_cast<std::uint8_t>(reader.next_number());
  }
  if (maxval != 255) {
    for (auto& p : out.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / maxval));
  }
  return out;
}

}  // namespace

RgbImage decode_image_bytes(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(kPng), std::end(kPng), bytes.begin())) {
    return decode_png(bytes);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes);
  }
  if (bytes.size() >= 3 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '3')) {
    return decode_ppm(bytes);
  }
  throw DecodeError("unrecognized image format");
}

RgbImage decode_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_image_bytes(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode: ") + png.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

namespace {

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_bytes(path, encode_png(image));
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_bytes(path, encode_ppm(image));
}

void write_image(const std::filesystem::path& path, const RgbImage& image) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm") {
    write_ppm(path, image);
  } else {
    write_png(path, image);
  }
}

Tensor resize_bilinear(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  if (input.rank() != 3) throw ShapeError("resize needs a [C,H,W] tensor");
  const std::size_t channels = input.dim(0), in_h = input.dim(1), in_w = input.dim(2);
  Tensor out({channels, out_h, out_w});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const double top = input.at(c, y0, x0) * (1 - wx) + input.at(c, y0, x1) * wx;
        const double bottom = input.at(c, y1, x0) * (1 - wx) + input.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Tensor rgb_to_tensor(const RgbImage& image, std::size_t channels) {
  if (channels != 1 && channels != 3) {
    throw ShapeError("images load into 1 or 3 channels, not " + std::to_string(channels));
  }
  Tensor out({channels, image.height, image.width});
  const std::size_t plane = image.height * image.width;
  for (std::size_t i = 0; i < plane; ++i) {
    const float r = image.pixels[i * 3] / 255.0f;
    const float g = image.pixels[i * 3 + 1] / 255.0f;
    const float b = image.pixels[i * 3 + 2] / 255.0f;
    if (channels == 3) {
      out[i] = r;
      out[plane + i] = g;
      out[2 * plane + i] = b;
    } else {
      out[i] = 0.299f * r + 0.587f * g + 0.114f * b;
    }
  }
  return out;
}

namespace {

float channel_value(const std::vector<float>& v, std::size_t c, const char* what) {
  if (v.size() == 1) return v[0];
  if (c >= v.size()) throw ConfigError(std::string("normalization ") + what + " has too few entries");
  return v[c];
}

}  // namespace

Tensor preprocess_image(const RgbImage& image, const Shape& input_shape,
                        const Normalization& normalization) {
  if (input_shape.size() != 3) throw ShapeError("image input shape must be [C,H,W]");
  Tensor t = rgb_to_tensor(image, input_shape[0]);
  if (t.dim(1) != input_shape[1] || t.dim(2) != input_shape[2]) {
    t = resize_bilinear(t, input_shape[1], input_shape[2]);
  }
  const std::size_t plane = input_shape[1] * input_shape[2];
  for (std::size_t c = 0; c < input_shape[0]; ++c) {
    const float m = channel_value(normalization.mean, c, "mean");
    const float s = channel_value(normalization.stddev, c, "std");
    for (std::size_t i = 0; i < plane; ++i) t[c * plane + i] = (t[c * plane + i] - m) / s;
  }
  return t;
}

Tensor load_image(const std::filesystem::path& path, const Shape& input_shape,
                  const Normalization& normalization) {
  return preprocess_image(decode_image(path), input_shape, normalization);
}

RgbImage tensor_to_rgb(const Tensor& image, const Normalization& normalization) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("tensor_to_rgb needs a [1|3,H,W] tensor");
  }
  const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  RgbImage out{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t i = 0; i < w * h; ++i) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const std::size_t c = channels == 3 ? ch : 0;
      const float v = image[c * w * h + i] * channel_value(normalization.stddev, c, "std") +
                      channel_value(normalization.mean, c, "mean");
      out.pixels[i * 3 + ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  return out;
}

}  // namespace lrp
