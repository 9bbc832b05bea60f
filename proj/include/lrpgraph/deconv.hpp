#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "lrpgraph/kernels.hpp"
#include "lrpgraph/network.hpp"
#include "lrpgraph/tensor.hpp"

namespace lrp {

enum class DeconvLayerKind { ConvTranspose, ReLU, MaxUnpool };

struct DeconvLayer {
  DeconvLayerKind kind = DeconvLayerKind::ReLU;
  // Forward layer this one inverts.
  std::size_t mirrors = 0;
  // Tied to the forward conv weight (same object).
  std::shared_ptr<const Tensor> weight;
  ConvParams params;
  // Shape of the mirrored layer's input.
  Shape output_shape;
};

// Feature extractor in reverse: deconv layer i mirrors forward layer
// n-1-i, where n is the number of layers before the first Flatten.
struct DeconvNetwork {
  std::vector<DeconvLayer> layers;

  std::size_t size() const { return layers.size(); }
};

// Throws BuildError when the feature extractor is empty or holds anything
// other than Conv/ReLU/MaxPool.
DeconvNetwork build_deconv(const Network& net);

struct DeconvOptions {
  // Rectify after the mirrored ReLU positions. Off makes the projection
  // linear in the kept features.
  bool relu = true;
};

// Forward pass through layers 0..layer_idx, recording pool switches.
struct FeatureTrace {
  std::size_t layer_idx = 0;
  Tensor features;
  std::map<std::size_t, SwitchMap> switches;
};

FeatureTrace forward_features(const Network& net, const Tensor& image, std::size_t layer_idx);

// Zeroes every channel of `features` (the output of layer_idx) except
// `channels`, then runs the deconv suffix with the given switches.
Tensor project_to_pixels(const DeconvNetwork& deconv, const Tensor& features, std::size_t layer_idx,
                         std::span<const std::size_t> channels,
                         const std::map<std::size_t, SwitchMap>& switches, DeconvOptions options = {});

Tensor reconstruct_feature(const Network& net, const DeconvNetwork& deconv, const Tensor& image,
                           std::size_t layer_idx, std::size_t channel, DeconvOptions options = {});

Tensor reconstruct_channels(const Network& net, const DeconvNetwork& deconv, const Tensor& image,
                            std::size_t layer_idx, std::span<const std::size_t> channels,
                            DeconvOptions options = {});

// Same projection reusing an existing full forward trace.
Tensor reconstruct_from_trace(const DeconvNetwork& deconv, const ForwardTrace& trace,
                              std::size_t layer_idx, std::span<const std::size_t> channels,
                              DeconvOptions options = {});

}  // namespace lrp
