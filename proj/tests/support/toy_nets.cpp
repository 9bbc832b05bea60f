#include "toy_nets.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace toy {

lrp::Tensor random_tensor(std::mt19937& rng, lrp::Shape shape, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  lrp::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

std::string put(lrp::ParameterStore& params, const std::string& name, lrp::Tensor t) {
  params[name] = std::make_shared<const lrp::Tensor>(std::move(t));
  return name;
}

lrp::Network build(const lrp::Shape& input, std::vector<lrp::LayerSpec> layers,
                   const lrp::ParameterStore& params) {
  lrp::ArchitectureSpec spec;
  spec.name = "toy";
  spec.input_shape = input;
  spec.layers = std::move(layers);
  return lrp::build_network(spec, params);
}

lrp::Network random_conv_net(std::mt19937& rng, const ConvNetOptions& o) {
  lrp::ParameterStore params;
  std::vector<lrp::LayerSpec> layers;
  std::uniform_int_distribution<std::size_t> channels(1, o.max_channels);
  std::size_t c = o.in_channels;
  std::size_t hw = o.size;
  for (std::size_t l = 0; l < o.conv_layers; ++l) {
    const std::size_t out = channels(rng);
    const float scale = std::sqrt(2.0f / static_cast<float>(c * 9));
    const auto w = put(params, "conv" + std::to_string(l) + ".weight",
                       random_tensor(rng, {out, c, 3, 3}, -scale, scale));
    std::string b;
    if (o.bias) {
      b = put(params, "conv" + std::to_string(l) + ".bias", random_tensor(rng, {out}, -0.1f, 0.1f));
    }
    layers.push_back(lrp::LayerSpec::conv(w, b, 1, o.padding));
    layers.push_back(lrp::LayerSpec::relu());
    hw = hw + 2 * o.padding - 2;
    if (o.pool && l == 0 && hw >= 2) {
      layers.push_back(lrp::LayerSpec::maxpool(2, 2));
      hw /= 2;
    }
    c = out;
  }
  layers.push_back(lrp::LayerSpec::flatten());
  const std::size_t features = c * hw * hw;
  const float scale = std::sqrt(2.0f / static_cast<float>(features));
  const auto w = put(params, "fc.weight", random_tensor(rng, {o.classes, features}, -scale, scale));
  std::string b;
  if (o.bias) b = put(params, "fc.bias", random_tensor(rng, {o.classes}, -0.1f, 0.1f));
  layers.push_back(lrp::LayerSpec::linear(w, b));
  return build({o.in_channels, o.size, o.size}, std::move(layers), params);
}

lrp::Network linear_net(std::size_t in, std::size_t out, std::vector<float> weight) {
  lrp::ParameterStore params;
  put(params, "fc.weight", lrp::Tensor({out, in}, std::move(weight)));
  return build({in}, {lrp::LayerSpec::linear("fc.weight", "")}, params);
}

lrp::Network mini_vgg(std::mt19937& rng, std::size_t width, std::size_t size, bool bias) {
  const std::size_t blocks[5] = {2, 2, 3, 3, 3};
  lrp::ParameterStore params;
  std::vector<lrp::LayerSpec> layers;
  std::size_t c = 3;
  std::size_t hw = size;
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t i = 0; i < blocks[b]; ++i) {
      const std::string name = "features." + std::to_string(layers.size());
      const std::size_t out = width << std::min<std::size_t>(b, 3);
      const float scale = std::sqrt(2.0f / static_cast<float>(c * 9));
      put(params, name + ".weight", random_tensor(rng, {out, c, 3, 3}, -scale, scale));
      if (bias) put(params, name + ".bias", random_tensor(rng, {out}, -0.05f, 0.05f));
      layers.push_back(lrp::LayerSpec::conv(name + ".weight", bias ? name + ".bias" : "", 1, 1));
      layers.push_back(lrp::LayerSpec::relu());
      c = out;
    }
    layers.push_back(lrp::LayerSpec::maxpool(2, 2));
    hw /= 2;
  }
  layers.push_back(lrp::LayerSpec::flatten());
  std::size_t features = c * hw * hw;
  const std::size_t dims[3] = {16, 16, 10};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "classifier." + std::to_string(3 * i);
    const float scale = std::sqrt(2.0f / static_cast<float>(features));
    put(params, name + ".weight", random_tensor(rng, {dims[i], features}, -scale, scale));
    if (bias) put(params, name + ".bias", random_tensor(rng, {dims[i]}, -0.05f, 0.05f));
    layers.push_back(lrp::LayerSpec::linear(name + ".weight", bias ? name + ".bias" : ""));
    if (i < 2) layers.push_back(lrp::LayerSpec::relu());
    features = dims[i];
  }
  return build({3, size, size}, std::move(layers), params);
}

lrp::ParameterStore random_parameters(std::mt19937& rng, const lrp::ArchitectureSpec& spec) {
  lrp::ParameterStore params;
  for (const auto& l : spec.layers) {
    if (!l.has_weights()) continue;
    const bool conv = l.kind == lrp::LayerKind::Conv;
    const lrp::Shape shape = conv ? lrp::Shape{l.out_channels, l.in_channels, l.kernel_h, l.kernel_w}
                                  : lrp::Shape{l.out_features, l.in_features};
    const std::size_t fan_in = lrp::shape_numel(shape) / shape[0];
    const float scale = std::sqrt(6.0f / static_cast<float>(fan_in));
    put(params, l.weight, random_tensor(rng, shape, -scale, scale));
    if (!l.bias.empty()) put(params, l.bias, random_tensor(rng, {shape[0]}, -0.01f, 0.01f));
  }
  return params;
}

lrp::RelevanceGraph random_graph(std::mt19937& rng, const std::vector<std::size_t>& sizes,
                                 bool integer_weights) {
  std::uniform_real_distribution<float> real(-1.0f, 1.0f);
  std::uniform_int_distribution<int> small(0, 3);
  lrp::RelevanceGraph g;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    lrp::GraphLayer layer;
    layer.boundary = l;
    if (l > 0) layer.network_layer = l - 1;
    layer.scores.resize(sizes[l]);
    for (auto& s : layer.scores) s = real(rng);
    layer.retained.assign(sizes[l], true);
    g.layers.push_back(std::move(layer));
    if (l > 0) {
      lrp::EdgeMatrix e{sizes[l - 1], sizes[l], std::vector<float>(sizes[l - 1] * sizes[l])};
      for (auto& w : e.weights) w = integer_weights ? static_cast<float>(small(rng)) : real(rng);
      g.edges.push_back(std::move(e));
    }
  }
  return g;
}

}  // namespace toy
