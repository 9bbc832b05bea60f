#include "lrpgraph/deconv.hpp"

#include "lrpgraph/errors.hpp"

namespace lrp {

DeconvNetwork build_deconv(const Network& net) {
  std::size_t n = 0;
  while (n < net.layer_count() && net.layer(n).kind != LayerKind::Flatten) ++n;
  if (n == 0) throw BuildError("network has no feature layers to mirror");
  DeconvNetwork deconv;
  deconv.layers.reserve(n);
  for (std::size_t i = n; i-- > 0;) {
    const auto& spec = net.layer(i);
    DeconvLayer layer;
    layer.mirrors = i;
    layer.output_shape = net.boundary_shape(i);
    switch (spec.kind) {
      case LayerKind::Conv:
        layer.kind = DeconvLayerKind::ConvTranspose;
        layer.weight = net.weight_ptr(i);
        layer.params = {spec.stride, spec.padding};
        break;
      case LayerKind::ReLU:
        layer.kind = DeconvLayerKind::ReLU;
        break;
      case LayerKind::MaxPool:
        layer.kind = DeconvLayerKind::MaxUnpool;
        break;
      default:
        throw BuildError("layer " + std::to_string(i) + ": " + layer_kind_name(spec.kind) +
                         " cannot be mirrored by the deconv network");
    }
    deconv.layers.push_back(std::move(layer));
  }
  return deconv;
}

namespace {

void check_layer(const DeconvNetwork& deconv, std::size_t layer_idx) {
  if (layer_idx >= deconv.size()) {
    throw IndexError("layer " + std::to_string(layer_idx) + " is outside the " +
                     std::to_string(deconv.size()) + "-layer feature extractor");
  }
}

}  // namespace

FeatureTrace forward_features(const Network& net, const Tensor& image, std::size_t layer_idx) {
  if (image.shape() != net.input_shape()) {
    throw ShapeError("image shape " + shape_to_string(image.shape()) +
                     " does not match network input " + shape_to_string(net.input_shape()));
  }
  if (layer_idx >= net.layer_count()) {
    throw IndexError("layer " + std::to_string(layer_idx) + " out of range");
  }
  FeatureTrace out;
  out.layer_idx = layer_idx;
  Tensor x = image;
  for (std::size_t idx = 0; idx <= layer_idx; ++idx) {
    if (net.layer(idx).kind == LayerKind::MaxPool) {
      SwitchMap sw;
      x = apply_layer(net, idx, x, &sw);
      out.switches.emplace(idx, std::move(sw));
    } else {
      x = apply_layer(net, idx, x);
    }
  }
  out.features = std::move(x);
  return out;
}

Tensor project_to_pixels(const DeconvNetwork& deconv, const Tensor& features, std::size_t layer_idx,
                         std::span<const std::size_t> channels,
                         const std::map<std::size_t, SwitchMap>& switches, DeconvOptions options) {
  check_layer(deconv, layer_idx);
  const std::size_t n = deconv.size();
  const auto& first = deconv.layers[n - 1 - layer_idx];
  if (features.rank() != 3) throw ShapeError("features must be [C,H,W]");
  const std::size_t count = features.dim(0);
  std::vector<bool> keep(count, false);
  for (auto c : channels) {
    if (c >= count) {
      throw IndexError("channel " + std::to_string(c) + " out of range for " +
                       std::to_string(count) + " feature maps at layer " + std::to_string(first.mirrors));
    }
    keep[c] = true;
  }
  Tensor x = features;
  const std::size_t plane = x.size() / count;
  for (std::size_t c = 0; c < count; ++c) {
    if (!keep[c]) std::fill_n(x.data().begin() + static_cast<std::ptrdiff_t>(c * plane), plane, 0.0f);
  }
  for (std::size_t idx = n - 1 - layer_idx; idx < n; ++idx) {
    const auto& layer = deconv.layers[idx];
    switch (layer.kind) {
      case DeconvLayerKind::ConvTranspose:
        x = conv_transpose2d(x, *layer.weight, layer.params,
                             std::make_pair(layer.output_shape[1], layer.output_shape[2]));
        break;
      case DeconvLayerKind::ReLU:
        if (options.relu) x = relu(x);
        break;
      case DeconvLayerKind::MaxUnpool: {
        auto it = switches.find(n - 1 - idx);
        if (it == switches.end()) {
          throw ConsistencyError("no switches recorded for pool layer " + std::to_string(n - 1 - idx));
        }
        x = max_unpool2d(x, it->second, layer.output_shape);
        break;
      }
    }
  }
  return x;
}

Tensor reconstruct_channels(const Network& net, const DeconvNetwork& deconv, const Tensor& image,
                            std::size_t layer_idx, std::span<const std::size_t> channels,
                            DeconvOptions options) {
  check_layer(deconv, layer_idx);
  auto features = forward_features(net, image, layer_idx);
  return project_to_pixels(deconv, features.features, layer_idx, channels, features.switches, options);
}

Tensor reconstruct_feature(const Network& net, const DeconvNetwork& deconv, const Tensor& image,
                           std::size_t layer_idx, std::size_t channel, DeconvOptions options) {
  const std::size_t channels[] = {channel};
  return reconstruct_channels(net, deconv, image, layer_idx, channels, options);
}

Tensor reconstruct_from_trace(const DeconvNetwork& deconv, const ForwardTrace& trace,
                              std::size_t layer_idx, std::span<const std::size_t> channels,
                              DeconvOptions options) {
  check_layer(deconv, layer_idx);
  return project_to_pixels(deconv, trace.output(layer_idx), layer_idx, channels, trace.switches,
                           options);
}

}  // namespace lrp
