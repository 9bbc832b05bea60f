#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lrpgraph/graph.hpp"
#include "lrpgraph/image.hpp"
#include "lrpgraph/lrp.hpp"
#include "lrpgraph/network.hpp"

namespace lrp {

enum class HeatmapKind { Relevance, Activation, Reconstruction };

const char* heatmap_kind_name(HeatmapKind kind);

struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;  // row-major [height, width]
  // max |value|; 0 only for an all-zero grid.
  float scale = 0.0f;
  HeatmapKind kind = HeatmapKind::Relevance;

  bool all_zero() const { return scale == 0.0f; }
};

// Sums the listed channels of a [C,H,W] tensor. Throws LayerError for other
// ranks and IndexError for out-of-range channels.
Heatmap channel_heatmap(const Tensor& t, std::span<const std::size_t> channels, HeatmapKind kind);

// Channels of graph layer `graph_layer` touched by any path, ascending.
std::vector<std::size_t> path_channels(const RelevanceGraph& graph, std::span<const Path> paths,
                                       std::size_t graph_layer);

// Heatmaps at a layer boundary (0 = input, b = output of layer b-1). The
// input boundary sums every color channel; other boundaries sum the path
// channels of the graph layer that indexes them (see
// RelevanceGraph::layer_for_boundary). Throws LayerError when the boundary
// has no spatial extent or no graph layer indexes its channels.
Heatmap relevance_heatmap(const Network& net, const RelevanceGraph& graph, const RelevanceMap& rmap,
                          std::span<const Path> paths, std::size_t boundary);
Heatmap activation_heatmap(const Network& net, const RelevanceGraph& graph,
                           const ForwardTrace& trace, std::span<const Path> paths,
                           std::size_t boundary);

// Deconv output [C,H,W] summed over color channels.
Heatmap reconstruction_heatmap(const Tensor& reconstruction);

enum class Colormap { Seismic, Gray };
enum class Upscale { Bilinear, Nearest };

Colormap parse_colormap(const std::string& name);

// 256-entry diverging table: 0 dark blue, 128 white, 255 dark red.
const std::array<std::array<std::uint8_t, 3>, 256>& seismic_table();
const std::array<std::array<std::uint8_t, 3>, 256>& gray_table();

// Table index for a value already divided by the scale: 0 maps to 128,
// positive values to 129..255, negative values to 0..127.
std::uint8_t colormap_index(float normalized);

struct RenderOptions {
  Colormap colormap = Colormap::Seismic;
  // Target size; 0 keeps the heatmap size. Must not be smaller.
  std::size_t width = 0;
  std::size_t height = 0;
  Upscale upscale = Upscale::Bilinear;
  // Receives the all-zero warning; null silences it.
  std::ostream* warnings = nullptr;
};

RgbImage render(const Heatmap& heatmap, const RenderOptions& options = {});

// alpha * heat + (1 - alpha) * photo, per byte. Sizes must match.
RgbImage overlay(const RgbImage& heat, const RgbImage& photo, float alpha = 0.5f);

// "{image}_{kind}_L{layer}_k{k}.{ext}"
std::string heatmap_filename(const std::string& image_stem, HeatmapKind kind,
                             const std::string& layer, std::size_t k, const std::string& ext);

}  // namespace lrp
