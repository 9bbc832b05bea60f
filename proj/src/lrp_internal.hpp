#pragma once

#include <cstddef>
#include <vector>

#include "conv_impl.hpp"
#include "lrpgraph/lrp.hpp"

namespace lrp::detail {

enum class WeightTransform { Identity, GammaGeneralized, Positive, Negative };

double transform_weight(WeightTransform t, double gamma, double w);

// One sign * input (.) rho(W)^T s contribution to the lower relevance.
// LRP-0/epsilon/gamma have a single term; z^B has three.
struct PropagationTerm {
  std::vector<double> input;
  WeightTransform transform = WeightTransform::Identity;
  double sign = 1.0;
  // Conv layers: rho(W) materialized as [Cout, Cin*kH*kW]. Linear layers
  // transform on the fly from the f32 weight.
  std::vector<double> conv_weight;
};

// Forward and division steps of a weighted layer, ready for the adjoint.
struct PreparedStep {
  LayerKind kind = LayerKind::Conv;
  ConvGeometry geometry;  // conv only
  std::size_t in_size = 0;
  std::size_t out_size = 0;
  const Tensor* weight = nullptr;
  double gamma = 0.0;
  std::vector<PropagationTerm> terms;
  std::vector<double> s;
  std::size_t dropped = 0;
};

PreparedStep prepare_weighted_step(const Network& net, std::size_t layer, const Tensor& a,
                                   const Tensor& r_above, const Rule& rule,
                                   const LrpOptions& options);

// Relevance at the layer input: sum over terms of sign * input (.) adjoint.
std::vector<double> backward_step(const PreparedStep& step);

// flow[j * out_channels + k]: relevance carried from output channel k into
// input channel group j, where input element i belongs to group
// i / (in_size / in_groups). Output channel k is a conv feature map or a
// single linear unit.
std::vector<double> channel_flow(const PreparedStep& step, std::size_t in_groups,
                                 std::size_t out_channels);

}  // namespace lrp::detail
