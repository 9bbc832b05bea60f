#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "lrpgraph/graph.hpp"
#include "lrpgraph/network.hpp"
#include "lrpgraph/tensor.hpp"

namespace toy {

lrp::Tensor random_tensor(std::mt19937& rng, lrp::Shape shape, float lo = -1.0f, float hi = 1.0f);

// Adds a tensor to the store under `name` and returns the name.
std::string put(lrp::ParameterStore& params, const std::string& name, lrp::Tensor t);

struct ConvNetOptions {
  std::size_t in_channels = 2;
  std::size_t size = 8;          // input height and width
  std::size_t conv_layers = 2;   // 1..3
  std::size_t max_channels = 8;
  std::size_t classes = 3;
  bool bias = false;
  bool pool = true;              // 2x2 pool after the first conv block
  std::size_t padding = 1;
};

// conv(3x3) relu [pool] ... flatten linear, He-style random weights.
lrp::Network random_conv_net(std::mt19937& rng, const ConvNetOptions& options);

// Single linear layer with the given weights (row-major [out, in]), no bias.
lrp::Network linear_net(std::size_t in, std::size_t out, std::vector<float> weight);

// Builds from a spec and store, for tests that hand-write networks.
lrp::Network build(const lrp::Shape& input, std::vector<lrp::LayerSpec> layers,
                   const lrp::ParameterStore& params);

// Layered graph with the given layer sizes, uniform [-1,1] scores and
// edges (or integers 0..3, which force ties), everything retained.
lrp::RelevanceGraph random_graph(std::mt19937& rng, const std::vector<std::size_t>& sizes,
                                 bool integer_weights = false);

// He-scaled random parameters for every weighted layer of a spec whose
// channel and feature counts are explicit (as in *.arch.json files).
lrp::ParameterStore random_parameters(std::mt19937& rng, const lrp::ArchitectureSpec& spec);

}  // namespace toy

namespace toy {

// VGG16 layer list (13 conv, 5 pools, 3 linear) with narrow channels and a
// small input, for tests that need the real layer indexing.
lrp::Network mini_vgg(std::mt19937& rng, std::size_t width = 2, std::size_t size = 32,
                      bool bias = true);

}  // namespace toy
