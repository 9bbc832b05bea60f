#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "lrpgraph/tensor.hpp"

namespace lrp {

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct PoolResult {
  Tensor output;
  SwitchMap switches;
};

// Cross-correlation (no kernel flip). input [Cin,H,W], weight
// [Cout,Cin,kH,kW], bias [Cout] or empty for no bias.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              ConvParams params);

// Adjoint of conv2d with zero bias. `output_hw` selects the spatial size of
// the result when the forward convolution truncated trailing rows/cols;
// otherwise (H'-1)*stride - 2*padding + kH is used.
Tensor conv_transpose2d(
    const Tensor& input, const Tensor& weight, ConvParams params,
    std::optional<std::pair<std::size_t, std::size_t>> output_hw = std::nullopt);

// out[k,j,u,v] = sum_p grad[k,p] * input[j, p*stride + (u,v) - padding].
// The per-tap correlation between an output map and an input map; summing
// it against a weight tensor gives channel-to-channel flow.
Tensor conv2d_weight_correlation(const Tensor& input, const Tensor& grad,
                                 std::size_t kernel_h, std::size_t kernel_w,
                                 ConvParams params);

// Floor semantics for non-divisible extents; ties go to the first element
// in row-major scan order of the window.
PoolResult maxpool2d_with_switches(const Tensor& input, std::size_t size,
                                   std::size_t stride);

Tensor max_unpool2d(const Tensor& pooled, const SwitchMap& switches,
                    const Shape& out_shape);

Tensor relu(const Tensor& input);

// weight [Nout,Nin], bias [Nout] or empty.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// weight^T * input, for weight [Nout,Nin] and input [Nout].
Tensor linear_transpose(const Tensor& input, const Tensor& weight);

Tensor flatten(const Tensor& input);

Tensor softmax(const Tensor& logits);

}  // namespace lrp
