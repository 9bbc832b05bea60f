#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lrpgraph/tensor.hpp"

namespace lrp {

enum class LayerKind { Conv, ReLU, MaxPool, Flatten, Linear };

const char* layer_kind_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;

  // Conv. Zero channel/kernel counts are inferred from the weight tensor.
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  // MaxPool.
  std::size_t pool_size = 2;
  std::size_t pool_stride = 2;

  // Linear. Zero counts are inferred from the weight tensor.
  std::size_t in_features = 0;
  std::size_t out_features = 0;

  // Conv / Linear parameter names; an empty bias name means no bias.
  std::string weight;
  std::string bias;

  bool has_weights() const { return kind == LayerKind::Conv || kind == LayerKind::Linear; }

  static LayerSpec conv(std::string weight, std::string bias, std::size_t stride = 1,
                        std::size_t padding = 0);
  static LayerSpec relu();
  static LayerSpec maxpool(std::size_t size, std::size_t stride);
  static LayerSpec flatten();
  static LayerSpec linear(std::string weight, std::string bias);
};

struct ArchitectureSpec {
  std::string name;
  Shape input_shape;
  std::vector<LayerSpec> layers;
};

using ParameterStore = std::map<std::string, std::shared_ptr<const Tensor>>;

// Validated, immutable layer sequence with resolved parameters.
class Network {
 public:
  const std::string& name() const { return name_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }

  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  // Boundary b is the input for b == 0, else the output of layer b-1.
  const Shape& boundary_shape(std::size_t b) const { return shapes_.at(b); }

  const Tensor& weight(std::size_t layer) const;
  // Empty tensor when the layer has no bias.
  const Tensor& bias(std::size_t layer) const;
  const std::shared_ptr<const Tensor>& weight_ptr(std::size_t layer) const;

  std::size_t parameter_count() const;

  // Number of leading Conv/ReLU/MaxPool layers.
  std::size_t feature_extractor_length() const;

  // Indices of Conv layers, ascending.
  std::vector<std::size_t> conv_layers() const;

  const std::vector<std::string>& class_labels() const { return labels_; }
  void set_class_labels(std::vector<std::string> labels) { labels_ = std::move(labels); }
  std::string class_label(std::size_t index) const;

 private:
  friend Network build_network(const ArchitectureSpec&, const ParameterStore&);

  std::string name_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<std::shared_ptr<const Tensor>> weights_;
  std::vector<std::shared_ptr<const Tensor>> biases_;
  std::vector<std::string> labels_;
};

// Throws BuildError naming the offending layer or parameter.
Network build_network(const ArchitectureSpec& spec, const ParameterStore& params);

// Activations at every layer boundary plus the pool switches.
struct ForwardTrace {
  std::vector<Tensor> boundaries;
  std::map<std::size_t, SwitchMap> switches;

  std::size_t layer_count() const { return boundaries.size() - 1; }
  const Tensor& input(std::size_t layer) const { return boundaries.at(layer); }
  const Tensor& output(std::size_t layer) const { return boundaries.at(layer + 1); }
  const Tensor& scores() const { return boundaries.back(); }
};

// Runs one layer. `switches` receives the argmax map for MaxPool layers.
Tensor apply_layer(const Network& net, std::size_t layer, const Tensor& x,
                   SwitchMap* switches = nullptr);

ForwardTrace forward_trace(const Network& net, const Tensor& image);

// Kept channels per Conv layer. Conv layers without an entry are not masked.
struct ChannelMask {
  std::map<std::size_t, std::vector<std::size_t>> kept;

  // Keeps every channel of every conv layer.
  static ChannelMask full(const Network& net);
  // Keeps nothing at any conv layer.
  static ChannelMask none(const Network& net);
};

// Forward pass that zeroes unkept channels of each masked conv layer, right
// after the ReLU that follows it (or after the conv itself when no ReLU
// follows). Throws MaskError for entries that are not conv layers or name
// channels out of range.
Tensor masked_forward(const Network& net, const Tensor& image, const ChannelMask& mask);

}  // namespace lrp
