#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrpgraph/lrp.hpp"
#include "lrpgraph/network.hpp"
#include "lrpgraph/tensor.hpp"

namespace lrp {

// One column of the layered graph: the input image or the output of a
// Conv/Linear layer. Node c is channel c (a feature map, or a single unit
// for linear layers).
struct GraphLayer {
  std::size_t boundary = 0;
  std::optional<std::size_t> network_layer;
  LayerKind kind = LayerKind::Conv;  // meaningless for the input layer
  std::vector<float> scores;
  std::vector<bool> retained;

  std::size_t size() const { return scores.size(); }
  bool is_input() const { return !network_layer.has_value(); }
};

// Row-major [rows = lower layer nodes, cols = upper layer nodes].
struct EdgeMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> weights;

  float at(std::size_t j, std::size_t k) const { return weights[j * cols + k]; }
};

struct RelevanceGraph {
  std::vector<GraphLayer> layers;
  // edges[g] connects layers[g] to layers[g+1].
  std::vector<EdgeMatrix> edges;

  std::size_t node_count() const;
  std::size_t edge_count() const;
  // Graph layer whose channels index the [C,H,W] tensor at `boundary`: the
  // closest graph layer at or below it with ReLU/MaxPool in between only.
  std::optional<std::size_t> layer_for_boundary(const Network& net, std::size_t boundary) const;
};

// Nodes ordered input to output, one channel index per graph layer.
struct Path {
  std::vector<std::uint32_t> nodes;
  double weight = 0.0;

  friend bool operator==(const Path&, const Path&) = default;
};

enum class PathAggregation { Sum, Min };

struct PathSearchOptions {
  PathAggregation aggregation = PathAggregation::Sum;
  // Skip nodes whose `retained` flag is false.
  bool respect_retention = true;
};

struct PathSearchResult {
  std::vector<Path> paths;
  // Fewer than k full paths exist.
  bool truncated = false;
  double total_paths = 0.0;
};

// Node score: relevance summed over the channel. Edge (j, k): relevance
// that output channel k sends into input channel j, i.e. one relevance step
// with R restricted to k, summed over j.
RelevanceGraph build_relevance_graph(const Network& net, const ForwardTrace& trace,
                                     const RelevanceMap& rmap, const LrpOptions& options = {});

enum class GetOptimizerMode {
  // keep sum > mean - std, zero the rest
  Prose,
  // where(sum > mean - std, 0, sum)
  Literal,
};

struct GetOptimizerResult {
  Tensor result;
  std::vector<bool> retained;
  double mean = 0.0;
  double stddev = 0.0;
  double threshold = 0.0;
};

// Difference of forward[index] and backward[index], summed over every
// axis but the first (channel) axis, thresholded at mean - std (population
// statistics). Retained entries keep their sum; others become 0.
GetOptimizerResult get_optimizer_detailed(std::span<const Tensor> forward,
                                          std::span<const Tensor> backward, std::size_t index,
                                          GetOptimizerMode mode = GetOptimizerMode::Prose);

Tensor get_optimizer(std::span<const Tensor> forward, std::span<const Tensor> backward,
                     std::size_t index, GetOptimizerMode mode = GetOptimizerMode::Prose);

// Sets GraphLayer::retained from activations (forward) and relevances
// (backward) at each graph layer's boundary.
void apply_get_optimizer(RelevanceGraph& graph, const ForwardTrace& trace,
                         const RelevanceMap& rmap, GetOptimizerMode mode);

// The k best full paths by (weight descending, node sequence ascending).
// Sum aggregation uses k-best dynamic programming over the layered DAG.
// Min aggregation ranks by the smallest edge weight on the path.
PathSearchResult top_k_paths(const RelevanceGraph& graph, std::size_t k,
                             PathSearchOptions options = {});

double path_weight(const RelevanceGraph& graph, const Path& path,
                   PathAggregation aggregation = PathAggregation::Sum);

// Union of path channels at every conv graph layer; conv layers of the
// graph without path nodes keep nothing.
ChannelMask paths_to_mask(const RelevanceGraph& graph, std::span<const Path> paths);

struct GraphExportOptions {
  // Skip non-path edges when the graph has more edges than this.
  std::size_t max_edges = 20000;
};

// Graphviz digraph; nodes "L{layer}C{channel}:{score}", path edges red.
std::string graph_to_dot(const RelevanceGraph& graph, std::span<const Path> paths,
                         GraphExportOptions options = {});
std::string graph_to_json(const RelevanceGraph& graph, std::span<const Path> paths,
                          GraphExportOptions options = {});

}  // namespace lrp
