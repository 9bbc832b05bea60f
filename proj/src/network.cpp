#include "lrpgraph/network.hpp"

#include <set>

#include "lrpgraph/errors.hpp"
#include "lrpgraph/kernels.hpp"

namespace lrp {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Linear: return "linear";
  }
  return "unknown";
}

LayerSpec LayerSpec::conv(std::string weight, std::string bias, std::size_t stride,
                          std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  s.stride = stride;
  s.padding = padding;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool(std::size_t size, std::size_t stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.pool_size = size;
  s.pool_stride = stride;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::Flatten;
  return s;
}

LayerSpec LayerSpec::linear(std::string weight, std::string bias) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.weight = std::move(weight);
  s.bias = std::move(bias);
  return s;
}

namespace {

const Tensor& empty_tensor() {
  static const Tensor empty;
  return empty;
}

[[noreturn]] void fail(std::size_t layer, const std::string& msg) {
  throw BuildError("layer " + std::to_string(layer) + ": " + msg);
}

std::shared_ptr<const Tensor> resolve(const ParameterStore& params, const std::string& name,
                                      std::size_t layer) {
  auto it = params.find(name);
  if (it == params.end() || !it->second) {
    fail(layer, "missing parameter \"" + name + "\"");
  }
  return it->second;
}

void check_expected(std::size_t layer, const char* what, std::size_t declared,
                    std::size_t actual) {
  if (declared != 0 && declared != actual) {
    fail(layer, std::string(what) + " declared " + std::to_string(declared) +
                    " but parameters give " + std::to_string(actual));
  }
}

}  // namespace

Network build_network(const ArchitectureSpec& spec, const ParameterStore& params) {
  if (spec.input_shape.empty()) throw BuildError("input shape is empty");
  for (auto e : spec.input_shape) {
    if (e == 0) throw BuildError("input shape has a zero extent");
  }
  if (spec.layers.empty()) throw BuildError("network has no layers");

  Network net;
  net.name_ = spec.name;
  net.shapes_.push_back(spec.input_shape);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    LayerSpec layer = spec.layers[i];
    const Shape& in = net.shapes_.back();
    std::shared_ptr<const Tensor> w, b;
    Shape out;
    switch (layer.kind) {
      case LayerKind::Conv: {
        if (in.size() != 3) fail(i, "conv needs a [C,H,W] input, got " + shape_to_string(in));
        w = resolve(params, layer.weight, i);
        if (w->rank() != 4) fail(i, "conv weight \"" + layer.weight + "\" must be rank 4");
        check_expected(i, "in_channels", layer.in_channels, w->dim(1));
        check_expected(i, "out_channels", layer.out_channels, w->dim(0));
        check_expected(i, "kernel height", layer.kernel_h, w->dim(2));
        check_expected(i, "kernel width", layer.kernel_w, w->dim(3));
        layer.out_channels = w->dim(0);
        layer.in_channels = w->dim(1);
        layer.kernel_h = w->dim(2);
        layer.kernel_w = w->dim(3);
        if (layer.in_channels != in[0]) {
          fail(i, "conv expects " + std::to_string(layer.in_channels) +
                      " input channels, previous layer gives " + std::to_string(in[0]));
        }
        if (layer.stride == 0) fail(i, "conv stride must be >= 1");
        if (layer.kernel_h > in[1] + 2 * layer.padding ||
            layer.kernel_w > in[2] + 2 * layer.padding) {
          fail(i, "conv kernel larger than padded input " + shape_to_string(in));
        }
        out = {layer.out_channels, (in[1] + 2 * layer.padding - layer.kernel_h) / layer.stride + 1,
               (in[2] + 2 * layer.padding - layer.kernel_w) / layer.stride + 1};
        if (!layer.bias.empty()) {
          b = resolve(params, layer.bias, i);
          if (b->rank() != 1 || b->dim(0) != layer.out_channels) {
            fail(i, "conv bias \"" + layer.bias + "\" has shape " + shape_to_string(b->shape()));
          }
        }
        break;
      }
      case LayerKind::Linear: {
        w = resolve(params, layer.weight, i);
        if (w->rank() != 2) fail(i, "linear weight \"" + layer.weight + "\" must be rank 2");
        check_expected(i, "in_features", layer.in_features, w->dim(1));
        check_expected(i, "out_features", layer.out_features, w->dim(0));
        layer.out_features = w->dim(0);
        layer.in_features = w->dim(1);
        if (shape_numel(in) != layer.in_features || in.size() != 1) {
          fail(i, "linear expects [" + std::to_string(layer.in_features) + "] input, got " +
                      shape_to_string(in));
        }
        out = {layer.out_features};
        if (!layer.bias.empty()) {
          b = resolve(params, layer.bias, i);
          if (b->rank() != 1 || b->dim(0) != layer.out_features) {
            fail(i, "linear bias \"" + layer.bias + "\" has shape " + shape_to_string(b->shape()));
          }
        }
        break;
      }
      case LayerKind::ReLU:
        out = in;
        break;
      case LayerKind::MaxPool:
        if (in.size() != 3) fail(i, "maxpool needs a [C,H,W] input, got " + shape_to_string(in));
        if (layer.pool_size == 0 || layer.pool_stride == 0) fail(i, "pool size/stride must be >= 1");
        if (layer.pool_size > in[1] || layer.pool_size > in[2]) {
          fail(i, "pool size " + std::to_string(layer.pool_size) + " exceeds input " +
                      shape_to_string(in));
        }
        out = {in[0], (in[1] - layer.pool_size) / layer.pool_stride + 1,
               (in[2] - layer.pool_size) / layer.pool_stride + 1};
        break;
      case LayerKind::Flatten:
        out = {shape_numel(in)};
        break;
    }
    net.layers_.push_back(std::move(layer));
    net.weights_.push_back(std::move(w));
    net.biases_.push_back(std::move(b));
    net.shapes_.push_back(std::move(out));
  }
  return net;
}

const Tensor& Network::weight(std::size_t layer) const {
  const auto& w = weights_.at(layer);
  if (!w) throw LayerError("layer " + std::to_string(layer) + " has no weights");
  return *w;
}

const std::shared_ptr<const Tensor>& Network::weight_ptr(std::size_t layer) const {
  return weights_.at(layer);
}

const Tensor& Network::bias(std::size_t layer) const {
  const auto& b = biases_.at(layer);
  return b ? *b : empty_tensor();
}

std::size_t Network::parameter_count() const {
  std::set<const Tensor*> seen;
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (const auto* t : {weights_[i].get(), biases_[i].get()}) {
      if (t != nullptr && seen.insert(t).second) total += t->size();
    }
  }
  return total;
}

std::size_t Network::feature_extractor_length() const {
  std::size_t n = 0;
  while (n < layers_.size() &&
         (layers_[n].kind == LayerKind::Conv || layers_[n].kind == LayerKind::ReLU ||
          layers_[n].kind == LayerKind::MaxPool)) {
    ++n;
  }
  return n;
}

std::vector<std::size_t> Network::conv_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::Conv) out.push_back(i);
  }
  return out;
}

std::string Network::class_label(std::size_t index) const {
  if (index < labels_.size()) return labels_[index];
  return std::to_string(index);
}

Tensor apply_layer(const Network& net, std::size_t layer, const Tensor& x,
                   SwitchMap* switches) {
  const LayerSpec& spec = net.layer(layer);
  switch (spec.kind) {
    case LayerKind::Conv:
      return conv2d(x, net.weight(layer), net.bias(layer), {spec.stride, spec.padding});
    case LayerKind::ReLU:
      return relu(x);
    case LayerKind::MaxPool: {
      auto pooled = maxpool2d_with_switches(x, spec.pool_size, spec.pool_stride);
      if (switches != nullptr) *switches = std::move(pooled.switches);
      return std::move(pooled.output);
    }
    case LayerKind::Flatten:
      return flatten(x);
    case LayerKind::Linear:
      return linear(x, net.weight(layer), net.bias(layer));
  }
  throw LayerError("unknown layer kind");
}

ForwardTrace forward_trace(const Network& net, const Tensor& image) {
  if (image.shape() != net.input_shape()) {
    throw ShapeError("image shape " + shape_to_string(image.shape()) +
                     " does not match network input " + shape_to_string(net.input_shape()));
  }
  ForwardTrace trace;
  trace.boundaries.reserve(net.layer_count() + 1);
  trace.boundaries.push_back(image);
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    if (net.layer(i).kind == LayerKind::MaxPool) {
      SwitchMap sw;
      trace.boundaries.push_back(apply_layer(net, i, trace.boundaries.back(), &sw));
      trace.switches.emplace(i, std::move(sw));
    } else {
      trace.boundaries.push_back(apply_layer(net, i, trace.boundaries.back()));
    }
  }
  return trace;
}

ChannelMask ChannelMask::full(const Network& net) {
  ChannelMask mask;
  for (auto i : net.conv_layers()) {
    auto& kept = mask.kept[i];
    kept.resize(net.boundary_shape(i + 1)[0]);
    for (std::size_t c = 0; c < kept.size(); ++c) kept[c] = c;
  }
  return mask;
}

ChannelMask ChannelMask::none(const Network& net) {
  ChannelMask mask;
  for (auto i : net.conv_layers()) mask.kept[i] = {};
  return mask;
}

namespace {

void zero_unkept(Tensor& x, const std::vector<std::size_t>& kept) {
  const std::size_t channels = x.dim(0);
  const std::size_t plane = x.size() / channels;
  std::vector<bool> keep(channels, false);
  for (auto c : kept) keep[c] = true;
  auto data = x.data();
  for (std::size_t c = 0; c < channels; ++c) {
    if (!keep[c]) std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, 0.0f);
  }
}

}  // namespace

Tensor masked_forward(const Network& net, const Tensor& image, const ChannelMask& mask) {
  if (image.shape() != net.input_shape()) {
    throw ShapeError("image shape " + shape_to_string(image.shape()) +
                     " does not match network input " + shape_to_string(net.input_shape()));
  }
  for (const auto& [layer, kept] : mask.kept) {
    if (layer >= net.layer_count() || net.layer(layer).kind != LayerKind::Conv) {
      throw MaskError("mask entry for layer " + std::to_string(layer) + " is not a conv layer");
    }
    const std::size_t channels = net.boundary_shape(layer + 1)[0];
    for (auto c : kept) {
      if (c >= channels) {
        throw MaskError("mask keeps channel " + std::to_string(c) + " of conv layer " +
                        std::to_string(layer) + " which has " + std::to_string(channels));
      }
    }
  }
  Tensor x = image;
  const std::vector<std::size_t>* pending = nullptr;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    x = apply_layer(net, i, x);
    if (net.layer(i).kind == LayerKind::Conv) {
      auto it = mask.kept.find(i);
      pending = it == mask.kept.end() ? nullptr : &it->second;
      const bool relu_follows =
          i + 1 < net.layer_count() && net.layer(i + 1).kind == LayerKind::ReLU;
      if (pending != nullptr && !relu_follows) {
        zero_unkept(x, *pending);
        pending = nullptr;
      }
    } else if (pending != nullptr) {
      zero_unkept(x, *pending);
      pending = nullptr;
    }
  }
  return x;
}

}  // namespace lrp
