#include "lrpgraph/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "conv_impl.hpp"
#include "lrpgraph/errors.hpp"

namespace lrp {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) +
                     ", got " + shape_to_string(t.shape()));
  }
}

detail::ConvGeometry forward_geometry(const Tensor& input, const Tensor& weight,
                                      ConvParams params) {
  require_rank(input, 3, "conv input");
  require_rank(weight, 4, "conv weight");
  if (params.stride == 0) throw ShapeError("conv stride must be >= 1");
  detail::ConvGeometry g;
  g.in_c = input.dim(0);
  g.in_h = input.dim(1);
  g.in_w = input.dim(2);
  g.out_c = weight.dim(0);
  g.k_h = weight.dim(2);
  g.k_w = weight.dim(3);
  g.stride = params.stride;
  g.pad = params.padding;
  if (weight.dim(1) != g.in_c) {
    throw ShapeError("conv weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(g.in_c));
  }
  if (g.k_h > g.in_h + 2 * g.pad || g.k_w > g.in_w + 2 * g.pad) {
    throw ShapeError("conv kernel " + shape_to_string(weight.shape()) +
                     " larger than padded input " + shape_to_string(input.shape()));
  }
  g.out_h = (g.in_h + 2 * g.pad - g.k_h) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.k_w) / g.stride + 1;
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              ConvParams params) {
  const auto g = forward_geometry(input, weight, params);
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != g.out_c)) {
    throw ShapeError("conv bias shape " + shape_to_string(bias.shape()) +
                     " does not match " + std::to_string(g.out_c) + " channels");
  }
  Tensor out({g.out_c, g.out_h, g.out_w});
  detail::conv_forward<float>(g, input.data().data(), weight.data().data(),
                              bias.empty() ? nullptr : bias.data().data(),
                              out.data().data());
  return out;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight,
                        ConvParams params,
                        std::optional<std::pair<std::size_t, std::size_t>> output_hw) {
  require_rank(input, 3, "conv_transpose input");
  require_rank(weight, 4, "conv_transpose weight");
  if (params.stride == 0) throw ShapeError("conv_transpose stride must be >= 1");
  if (input.dim(0) != weight.dim(0)) {
    throw ShapeError("conv_transpose input has " + std::to_string(input.dim(0)) +
                     " channels, weight produces " + std::to_string(weight.dim(0)));
  }
  detail::ConvGeometry g;
  g.out_c = weight.dim(0);
  g.in_c = weight.dim(1);
  g.k_h = weight.dim(2);
  g.k_w = weight.dim(3);
  g.stride = params.stride;
  g.pad = params.padding;
  g.out_h = input.dim(1);
  g.out_w = input.dim(2);
  if (output_hw) {
    g.in_h = output_hw->first;
    g.in_w = output_hw->second;
  } else {
    const std::size_t full_h = (g.out_h - 1) * g.stride + g.k_h;
    const std::size_t full_w = (g.out_w - 1) * g.stride + g.k_w;
    if (full_h <= 2 * g.pad || full_w <= 2 * g.pad) {
      throw ShapeError("conv_transpose padding leaves an empty output");
    }
    g.in_h = full_h - 2 * g.pad;
    g.in_w = full_w - 2 * g.pad;
  }
  if ((g.in_h + 2 * g.pad < g.k_h) || (g.in_w + 2 * g.pad < g.k_w) ||
      (g.in_h + 2 * g.pad - g.k_h) / g.stride + 1 != g.out_h ||
      (g.in_w + 2 * g.pad - g.k_w) / g.stride + 1 != g.out_w) {
    throw ShapeError("conv_transpose output size inconsistent with input " +
                     shape_to_string(input.shape()));
  }
  Tensor out({g.in_c, g.in_h, g.in_w});
  detail::conv_adjoint<float>(g, input.data().data(), weight.data().data(),
                              out.data().data());
  return out;
}

Tensor conv2d_weight_correlation(const Tensor& input, const Tensor& grad,
                                 std::size_t kernel_h, std::size_t kernel_w,
                                 ConvParams params) {
  require_rank(grad, 3, "correlation grad");
  const Tensor probe({grad.dim(0), input.rank() == 3 ? input.dim(0) : 1, kernel_h, kernel_w});
  const auto g = forward_geometry(input, probe, params);
  if (g.out_h != grad.dim(1) || g.out_w != grad.dim(2)) {
    throw ShapeError("correlation grad " + shape_to_string(grad.shape()) +
                     " does not match conv output of " + shape_to_string(input.shape()));
  }
  Tensor out({g.out_c, g.in_c, g.k_h, g.k_w});
  detail::conv_correlation<float>(g, input.data().data(), grad.data().data(),
                                  out.data().data());
  return out;
}

PoolResult maxpool2d_with_switches(const Tensor& input, std::size_t size,
                                   std::size_t stride) {
  require_rank(input, 3, "maxpool input");
  if (size == 0 || stride == 0) throw ShapeError("pool size and stride must be >= 1");
  const std::size_t channels = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (size > h || size > w) {
    throw ShapeError("pool size " + std::to_string(size) + " exceeds input " +
                     shape_to_string(input.shape()));
  }
  const std::size_t oh = (h - size) / stride + 1;
  const std::size_t ow = (w - size) / stride + 1;
  PoolResult result{Tensor({channels, oh, ow}),
                    SwitchMap{{channels, oh, ow}, input.shape(), {}}};
  result.switches.indices.resize(channels * oh * ow);
  const auto in = input.data();
  auto out = result.output.data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (c * h + i * stride) * w + j * stride;
        for (std::size_t di = 0; di < size; ++di) {
          for (std::size_t dj = 0; dj < size; ++dj) {
            const std::size_t idx = (c * h + i * stride + di) * w + j * stride + dj;
            // strict > keeps the first maximum in scan order
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = (c * oh + i) * ow + j;
        out[o] = in[best];
        result.switches.indices[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

Tensor max_unpool2d(const Tensor& pooled, const SwitchMap& switches,
                    const Shape& out_shape) {
  if (pooled.shape() != switches.pooled_shape ||
      switches.indices.size() != pooled.size()) {
    throw ShapeError("switch map shape " + shape_to_string(switches.pooled_shape) +
                     " does not match pooled tensor " + shape_to_string(pooled.shape()));
  }
  Tensor out(out_shape);
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const std::size_t idx = switches.indices[i];
    if (idx >= n) {
      throw CorruptionError("switch index " + std::to_string(idx) +
                            " outside unpool target " + shape_to_string(out_shape));
    }
    out[idx] += pooled[i];
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "linear weight");
  if (input.size() != weight.dim(1)) {
    throw ShapeError("linear expects " + std::to_string(weight.dim(1)) +
                     " inputs, got " + std::to_string(input.size()));
  }
  if (!bias.empty() && bias.size() != weight.dim(0)) {
    throw ShapeError("linear bias has " + std::to_string(bias.size()) +
                     " entries, expected " + std::to_string(weight.dim(0)));
  }
  Tensor out({weight.dim(0)});
  detail::ConstRowMap<float> w(weight.data().data(), weight.dim(0), weight.dim(1));
  Eigen::Map<const Eigen::VectorXf> x(input.data().data(), input.size());
  Eigen::Map<Eigen::VectorXf> y(out.data().data(), out.size());
  y.noalias() = w * x;
  if (!bias.empty()) y += Eigen::Map<const Eigen::VectorXf>(bias.data().data(), bias.size());
  return out;
}

Tensor linear_transpose(const Tensor& input, const Tensor& weight) {
  require_rank(weight, 2, "linear weight");
  if (input.size() != weight.dim(0)) {
    throw ShapeError("linear_transpose expects " + std::to_string(weight.dim(0)) +
                     " inputs, got " + std::to_string(input.size()));
  }
  Tensor out({weight.dim(1)});
  detail::ConstRowMap<float> w(weight.data().data(), weight.dim(0), weight.dim(1));
  Eigen::Map<const Eigen::VectorXf> x(input.data().data(), input.size());
  Eigen::Map<Eigen::VectorXf> y(out.data().data(), out.size());
  y.noalias() = w.transpose() * x;
  return out;
}

Tensor flatten(const Tensor& input) { return input.reshaped({input.size()}); }

Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  float peak = -std::numeric_limits<float>::infinity();
  for (float v : logits.data()) peak = std::max(peak, v);
  double total = 0.0;
  for (float& v : out.data()) {
    v = std::exp(v - peak);
    total += v;
  }
  for (float& v : out.data()) v = static_cast<float>(v / total);
  return out;
}

}  // namespace lrp
