#include "lrpgraph/visualization.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "lrpgraph/errors.hpp"

namespace lrp {

const char* heatmap_kind_name(HeatmapKind kind) {
  switch (kind) {
    case HeatmapKind::Relevance: return "relevance";
    case HeatmapKind::Activation: return "activation";
    case HeatmapKind::Reconstruction: return "reconstruction";
  }
  return "?";
}

namespace {

float max_abs(const std::vector<float>& v) {
  float m = 0.0f;
  for (float x : v) m = std::max(m, std::abs(x));
  return m;
}

void check_spatial(const Tensor& t, const char* what) {
  if (t.rank() != 3) {
    throw LayerError(std::string(what) + " has shape " + shape_to_string(t.shape()) +
                     "; heatmaps need a [C,H,W] layer");
  }
}

Heatmap boundary_heatmap(const Network& net, const RelevanceGraph& graph, const Tensor& t,
                         std::span<const Path> paths, std::size_t boundary, HeatmapKind kind) {
  if (boundary > net.layer_count()) {
    throw LayerError("boundary " + std::to_string(boundary) + " is past the output");
  }
  check_spatial(t, "boundary");
  if (boundary == 0) {
    std::vector<std::size_t> all(t.dim(0));
    for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
    return channel_heatmap(t, all, kind);
  }
  const auto g = graph.layer_for_boundary(net, boundary);
  if (!g) {
    throw LayerError("no graph layer indexes the channels at boundary " + std::to_string(boundary));
  }
  return channel_heatmap(t, path_channels(graph, paths, *g), kind);
}

std::array<float, 3> lerp(const std::array<float, 3>& a, const std::array<float, 3>& b, float t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

// Piecewise-linear diverging ramp on x in [-1, 1].
std::array<float, 3> seismic_color(float x) {
  constexpr std::array<float, 3> white{1, 1, 1};
  constexpr std::array<float, 3> blue{0, 0, 1};
  constexpr std::array<float, 3> navy{0, 0, 0.3f};
  constexpr std::array<float, 3> red{1, 0, 0};
  constexpr std::array<float, 3> maroon{0.5f, 0, 0};
  const float u = std::abs(x);
  const bool pos = x > 0;
  if (u <= 0.5f) return lerp(white, pos ? red : blue, u / 0.5f);
  return lerp(pos ? red : blue, pos ? maroon : navy, (u - 0.5f) / 0.5f);
}

std::vector<float> upscale_values(const Heatmap& hm, std::size_t out_w, std::size_t out_h,
                                  Upscale mode) {
  if (out_w == hm.width && out_h == hm.height) return hm.values;
  std::vector<float> out(out_w * out_h);
  const double sy = static_cast<double>(hm.height) / out_h;
  const double sx = static_cast<double>(hm.width) / out_w;
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      float v;
      if (mode == Upscale::Nearest) {
        const auto iy = std::min(hm.height - 1, static_cast<std::size_t>(y * sy));
        const auto ix = std::min(hm.width - 1, static_cast<std::size_t>(x * sx));
        v = hm.values[iy * hm.width + ix];
      } else {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(hm.height - 1));
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(hm.width - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t y1 = std::min(y0 + 1, hm.height - 1);
        const std::size_t x1 = std::min(x0 + 1, hm.width - 1);
        const double wy = fy - y0;
        const double wx = fx - x0;
        const auto at = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(hm.values[yy * hm.width + xx]);
        };
        v = static_cast<float>((1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                               wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1)));
      }
      out[y * out_w + x] = v;
    }
  }
  return out;
}

}  // namespace

Heatmap channel_heatmap(const Tensor& t, std::span<const std::size_t> channels, HeatmapKind kind) {
  check_spatial(t, "tensor");
  Heatmap hm;
  hm.kind = kind;
  hm.height = t.dim(1);
  hm.width = t.dim(2);
  const std::size_t plane = hm.width * hm.height;
  hm.values.assign(plane, 0.0f);
  for (std::size_t c : channels) {
    if (c >= t.dim(0)) {
      throw IndexError("channel " + std::to_string(c) + " out of range for " +
                       shape_to_string(t.shape()));
    }
    const float* src = t.data().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) hm.values[i] += src[i];
  }
  hm.scale = max_abs(hm.values);
  return hm;
}

std::vector<std::size_t> path_channels(const RelevanceGraph& graph, std::span<const Path> paths,
                                       std::size_t graph_layer) {
  if (graph_layer >= graph.layers.size()) {
    throw IndexError("graph layer " + std::to_string(graph_layer) + " out of range");
  }
  std::set<std::size_t> channels;
  for (const auto& p : paths) {
    if (p.nodes.size() != graph.layers.size()) {
      throw ConsistencyError("path length differs from graph depth");
    }
    const std::size_t c = p.nodes[graph_layer];
    if (c >= graph.layers[graph_layer].size()) {
      throw IndexError("path node " + std::to_string(c) + " out of range at graph layer " +
                       std::to_string(graph_layer));
    }
    channels.insert(c);
  }
  return {channels.begin(), channels.end()};
}

Heatmap relevance_heatmap(const Network& net, const RelevanceGraph& graph, const RelevanceMap& rmap,
                          std::span<const Path> paths, std::size_t boundary) {
  if (boundary >= rmap.boundaries.size()) {
    throw LayerError("boundary " + std::to_string(boundary) + " is past the output");
  }
  return boundary_heatmap(net, graph, rmap.boundaries[boundary], paths, boundary,
                          HeatmapKind::Relevance);
}

Heatmap activation_heatmap(const Network& net, const RelevanceGraph& graph,
                           const ForwardTrace& trace, std::span<const Path> paths,
                           std::size_t boundary) {
  if (boundary >= trace.boundaries.size()) {
    throw LayerError("boundary " + std::to_string(boundary) + " is past the output");
  }
  return boundary_heatmap(net, graph, trace.boundaries[boundary], paths, boundary,
                          HeatmapKind::Activation);
}

Heatmap reconstruction_heatmap(const Tensor& reconstruction) {
  check_spatial(reconstruction, "reconstruction");
  std::vector<std::size_t> all(reconstruction.dim(0));
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  return channel_heatmap(reconstruction, all, HeatmapKind::Reconstruction);
}

Colormap parse_colormap(const std::string& name) {
  if (name == "seismic") return Colormap::Seismic;
  if (name == "gray" || name == "grey") return Colormap::Gray;
  throw ConfigError("unknown colormap \"" + name + "\" (expected seismic or gray)");
}

const std::array<std::array<std::uint8_t, 3>, 256>& seismic_table() {
  static const auto table = [] {
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const float x = i >= 128 ? (i - 128) / 127.0f : -(128 - i) / 128.0f;
      const auto c = seismic_color(x);
      for (int k = 0; k < 3; ++k) t[i][k] = static_cast<std::uint8_t>(std::lround(c[k] * 255.0f));
    }
    return t;
  }();
  return table;
}

const std::array<std::array<std::uint8_t, 3>, 256>& gray_table() {
  static const auto table = [] {
    std::array<std::array<std::uint8_t, 3>, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const auto v = static_cast<std::uint8_t>(i);
      t[i] = {v, v, v};
    }
    return t;
  }();
  return table;
}

std::uint8_t colormap_index(float t) {
  if (!(t != 0.0f)) return 128;  // zero (and NaN) map to the midpoint
  if (t > 0) {
    const long i = std::clamp(std::lround(std::min(t, 1.0f) * 127.0f), 1L, 127L);
    return static_cast<std::uint8_t>(128 + i);
  }
  const long i = std::clamp(std::lround(std::min(-t, 1.0f) * 128.0f), 1L, 128L);
  return static_cast<std::uint8_t>(128 - i);
}

RgbImage render(const Heatmap& hm, const RenderOptions& options) {
  if (hm.width == 0 || hm.height == 0 || hm.values.size() != hm.width * hm.height) {
    throw ShapeError("heatmap grid is empty or inconsistent");
  }
  const std::size_t out_w = options.width ? options.width : hm.width;
  const std::size_t out_h = options.height ? options.height : hm.height;
  if (out_w < hm.width || out_h < hm.height) {
    throw ShapeError("render target " + std::to_string(out_w) + "x" + std::to_string(out_h) +
                     " is smaller than the heatmap");
  }
  const auto& table = options.colormap == Colormap::Seismic ? seismic_table() : gray_table();
  RgbImage img;
  img.width = out_w;
  img.height = out_h;
  img.pixels.resize(out_w * out_h * 3);
  if (hm.all_zero()) {
    if (options.warnings) {
      *options.warnings << "warning: " << heatmap_kind_name(hm.kind)
                        << " heatmap is all zero; rendering the colormap midpoint\n";
    }
    for (std::size_t i = 0; i < out_w * out_h; ++i) {
      std::copy(table[128].begin(), table[128].end(), img.pixels.begin() + 3 * i);
    }
    return img;
  }
  Heatmap normalized = hm;
  for (auto& v : normalized.values) v /= hm.scale;
  const auto values = upscale_values(normalized, out_w, out_h, options.upscale);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto& rgb = table[colormap_index(values[i])];
    std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + 3 * i);
  }
  return img;
}

RgbImage overlay(const RgbImage& heat, const RgbImage& photo, float alpha) {
  if (heat.width != photo.width || heat.height != photo.height) {
    throw ShapeError("overlay needs images of equal size");
  }
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw ConfigError("overlay alpha must lie in [0, 1]");
  RgbImage out = heat;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const float v = alpha * heat.pixels[i] + (1.0f - alpha) * photo.pixels[i];
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

std::string heatmap_filename(const std::string& image_stem, HeatmapKind kind,
                             const std::string& layer, std::size_t k, const std::string& ext) {
  return image_stem + "_" + heatmap_kind_name(kind) + "_L" + layer + "_k" + std::to_string(k) +
         "." + ext;
}

}  // namespace lrp
