#include "lrpgraph/graph.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <queue>
#include <set>

#include "lrp_internal.hpp"
#include "lrpgraph/errors.hpp"

namespace lrp {

std::size_t RelevanceGraph::node_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

std::size_t RelevanceGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& e : edges) n += e.weights.size();
  return n;
}

std::optional<std::size_t> RelevanceGraph::layer_for_boundary(const Network& net,
                                                              std::size_t boundary) const {
  if (boundary > net.layer_count()) return std::nullopt;
  for (std::size_t g = layers.size(); g-- > 0;) {
    const std::size_t b = layers[g].boundary;
    if (b > boundary) continue;
    for (std::size_t i = b; i < boundary; ++i) {
      const auto kind = net.layer(i).kind;
      if (kind != LayerKind::ReLU && kind != LayerKind::MaxPool) return std::nullopt;
    }
    const auto& shape = net.boundary_shape(boundary);
    if (shape.empty() || shape[0] != layers[g].size()) return std::nullopt;
    return g;
  }
  return std::nullopt;
}

namespace {

std::vector<float> channel_sums(const Tensor& t) {
  const std::size_t channels = t.rank() == 1 ? t.size() : t.dim(0);
  const std::size_t plane = t.size() / channels;
  std::vector<float> out(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += t[c * plane + i];
    out[c] = static_cast<float>(acc);
  }
  return out;
}

GraphLayer make_layer(std::size_t boundary, std::optional<std::size_t> network_layer,
                      LayerKind kind, const Tensor& relevance) {
  GraphLayer layer;
  layer.boundary = boundary;
  layer.network_layer = network_layer;
  layer.kind = kind;
  layer.scores = channel_sums(relevance);
  for (float s : layer.scores) {
    if (!std::isfinite(s)) {
      throw ConsistencyError("non-finite relevance at boundary " + std::to_string(boundary));
    }
  }
  layer.retained.assign(layer.scores.size(), true);
  return layer;
}

}  // namespace

RelevanceGraph build_relevance_graph(const Network& net, const ForwardTrace& trace,
                                     const RelevanceMap& rmap, const LrpOptions& options) {
  if (trace.boundaries.size() != net.layer_count() + 1 ||
      rmap.boundaries.size() != trace.boundaries.size()) {
    throw ConsistencyError("trace and relevance map do not match the network depth");
  }
  for (std::size_t b = 0; b < trace.boundaries.size(); ++b) {
    if (trace.boundaries[b].shape() != rmap.boundaries[b].shape() ||
        trace.boundaries[b].shape() != net.boundary_shape(b)) {
      throw ConsistencyError("trace/relevance shape mismatch at boundary " + std::to_string(b));
    }
  }
  rmap.rules.validate(net);
  LrpOptions step_options = options;
  step_options.strict = false;

  RelevanceGraph graph;
  graph.layers.push_back(make_layer(0, std::nullopt, LayerKind::Conv, rmap.boundaries[0]));
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const auto& spec = net.layer(i);
    if (!spec.has_weights()) continue;
    GraphLayer upper = make_layer(i + 1, i, spec.kind, rmap.boundaries[i + 1]);
    const GraphLayer& lower = graph.layers.back();
    const std::size_t in_size = trace.input(i).size();
    if (lower.size() == 0 || in_size % lower.size() != 0) {
      throw ConsistencyError("layer " + std::to_string(i) +
                             " input does not split into the previous graph layer's channels");
    }
    auto step = detail::prepare_weighted_step(net, i, trace.input(i), rmap.boundaries[i + 1],
                                              rmap.rules.rule(i), step_options);
    auto flow = detail::channel_flow(step, lower.size(), upper.size());
    EdgeMatrix edges{lower.size(), upper.size(), std::vector<float>(flow.begin(), flow.end())};
    graph.edges.push_back(std::move(edges));
    graph.layers.push_back(std::move(upper));
  }
  return graph;
}

GetOptimizerResult get_optimizer_detailed(std::span<const Tensor> forward,
                                          std::span<const Tensor> backward, std::size_t index,
                                          GetOptimizerMode mode) {
  if (index >= forward.size() || index >= backward.size()) {
    throw IndexError("get_optimizer index " + std::to_string(index) + " out of range");
  }
  const Tensor& f = forward[index];
  const Tensor& b = backward[index];
  if (f.shape() != b.shape()) {
    throw ShapeError("get_optimizer operands differ: " + shape_to_string(f.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  if (f.empty()) throw ShapeError("get_optimizer operand is empty");
  const std::size_t channels = f.rank() == 1 ? f.size() : f.dim(0);
  const std::size_t plane = f.size() / channels;
  std::vector<double> sums(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      sums[c] += static_cast<double>(f[c * plane + i]) - static_cast<double>(b[c * plane + i]);
    }
  }
  double mean = 0.0;
  for (double v : sums) mean += v;
  mean /= static_cast<double>(channels);
  double var = 0.0;
  for (double v : sums) var += (v - mean) * (v - mean);
  var /= static_cast<double>(channels);

  GetOptimizerResult out;
  out.mean = mean;
  out.stddev = std::sqrt(var);
  out.threshold = mean - out.stddev;
  out.result = Tensor({channels});
  out.retained.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const bool above = sums[c] > out.threshold;
    const bool keep = mode == GetOptimizerMode::Prose ? above : !above;
    out.retained[c] = keep;
    out.result[c] = keep ? static_cast<float>(sums[c]) : 0.0f;
  }
  return out;
}

Tensor get_optimizer(std::span<const Tensor> forward, std::span<const Tensor> backward,
                     std::size_t index, GetOptimizerMode mode) {
  return get_optimizer_detailed(forward, backward, index, mode).result;
}

void apply_get_optimizer(RelevanceGraph& graph, const ForwardTrace& trace,
                         const RelevanceMap& rmap, GetOptimizerMode mode) {
  for (auto& layer : graph.layers) {
    auto r = get_optimizer_detailed(trace.boundaries, rmap.boundaries, layer.boundary, mode);
    if (r.retained.size() != layer.size()) {
      throw ConsistencyError("get_optimizer channel count differs from graph layer");
    }
    layer.retained = std::move(r.retained);
  }
}

namespace {

struct Partial {
  double weight;
  std::uint32_t pred;
  std::uint32_t rank;
};

class KBestSearch {
 public:
  KBestSearch(const RelevanceGraph& graph, std::size_t k, PathSearchOptions options)
      : graph_(graph), k_(k), options_(options) {}

  PathSearchResult run() {
    PathSearchResult result;
    const std::size_t depth = graph_.layers.size();
    result.total_paths = 1.0;
    for (const auto& layer : graph_.layers) result.total_paths *= static_cast<double>(live_count(layer));

    table_.resize(depth);
    const double start =
        options_.aggregation == PathAggregation::Min && depth > 1
            ? std::numeric_limits<double>::infinity()
            : 0.0;
    table_[0].resize(graph_.layers[0].size());
    for (std::size_t v = 0; v < graph_.layers[0].size(); ++v) {
      if (live(0, v)) table_[0][v].push_back({start, 0, 0});
    }
    for (std::size_t g = 1; g < depth; ++g) extend(g);

    // Final ranking across every node of the last layer.
    struct Final {
      double weight;
      std::uint32_t node;
      std::uint32_t rank;
    };
    std::vector<Final> finals;
    const std::size_t last = depth - 1;
    for (std::size_t v = 0; v < table_[last].size(); ++v) {
      for (std::size_t r = 0; r < table_[last][v].size(); ++r) {
        finals.push_back({table_[last][v][r].weight, static_cast<std::uint32_t>(v),
                          static_cast<std::uint32_t>(r)});
      }
    }
    std::sort(finals.begin(), finals.end(), [&](const Final& a, const Final& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return nodes_of(last, a.node, a.rank) < nodes_of(last, b.node, b.rank);
    });
    if (finals.size() > k_) finals.resize(k_);
    for (const auto& f : finals) result.paths.push_back({nodes_of(last, f.node, f.rank), f.weight});
    result.truncated = static_cast<double>(k_) > result.total_paths;
    return result;
  }

 private:
  struct Candidate {
    double weight;
    std::uint32_t pred;
    std::uint32_t rank;
  };

  bool live(std::size_t g, std::size_t v) const {
    return !options_.respect_retention || graph_.layers[g].retained[v];
  }

  std::size_t live_count(const GraphLayer& layer) const {
    if (!options_.respect_retention) return layer.size();
    return static_cast<std::size_t>(std::count(layer.retained.begin(), layer.retained.end(), true));
  }

  std::vector<std::uint32_t> nodes_of(std::size_t g, std::uint32_t v, std::uint32_t r) const {
    std::vector<std::uint32_t> nodes(g + 1);
    for (std::size_t layer = g + 1; layer-- > 0;) {
      nodes[layer] = v;
      const Partial& p = table_[layer][v][r];
      v = p.pred;
      r = p.rank;
    }
    return nodes;
  }

  // a ranks before b: heavier first, then lexicographically smaller prefix.
  bool better(std::size_t prefix_layer, const Candidate& a, const Candidate& b) const {
    if (a.weight != b.weight) return a.weight > b.weight;
    if (a.pred == b.pred) return a.rank < b.rank;
    return nodes_of(prefix_layer, a.pred, a.rank) < nodes_of(prefix_layer, b.pred, b.rank);
  }

  void extend(std::size_t g) {
    const auto& edges = graph_.edges[g - 1];
    const auto& prev = table_[g - 1];
    table_[g].assign(graph_.layers[g].size(), {});
    std::vector<Candidate> pool;
    for (std::size_t v = 0; v < graph_.layers[g].size(); ++v) {
      if (!live(g, v)) continue;
      auto& out = table_[g][v];
      if (options_.aggregation == PathAggregation::Sum) {
        // Each predecessor list is already ordered, and adding the edge
        // weight preserves that order, so a k-way merge suffices.
        auto cmp = [&](const Candidate& a, const Candidate& b) { return better(g - 1, b, a); };
        std::priority_queue<Candidate, std::vector<Candidate>, decltype(cmp)> heap(cmp);
        for (std::size_t u = 0; u < prev.size(); ++u) {
          if (prev[u].empty()) continue;
          heap.push({prev[u][0].weight + static_cast<double>(edges.at(u, v)),
                     static_cast<std::uint32_t>(u), 0});
        }
        while (!heap.empty() && out.size() < k_) {
          const Candidate c = heap.top();
          heap.pop();
          out.push_back({c.weight, c.pred, c.rank});
          const auto& list = prev[c.pred];
          if (c.rank + 1 < list.size()) {
            heap.push({list[c.rank + 1].weight + static_cast<double>(edges.at(c.pred, v)), c.pred,
                       c.rank + 1});
          }
        }
      } else {
        pool.clear();
        for (std::size_t u = 0; u < prev.size(); ++u) {
          const double e = edges.at(u, v);
          for (std::size_t r = 0; r < prev[u].size(); ++r) {
            pool.push_back({std::min(prev[u][r].weight, e), static_cast<std::uint32_t>(u),
                            static_cast<std::uint32_t>(r)});
          }
        }
        const std::size_t keep = std::min(k_, pool.size());
        std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                          [&](const Candidate& a, const Candidate& b) { return better(g - 1, a, b); });
        for (std::size_t i = 0; i < keep; ++i) out.push_back({pool[i].weight, pool[i].pred, pool[i].rank});
      }
    }
  }

  const RelevanceGraph& graph_;
  std::size_t k_;
  PathSearchOptions options_;
  std::vector<std::vector<std::vector<Partial>>> table_;
};

}  // namespace

PathSearchResult top_k_paths(const RelevanceGraph& graph, std::size_t k, PathSearchOptions options) {
  if (k == 0) throw IndexError("top_k_paths needs k >= 1");
  if (graph.layers.empty()) throw ConsistencyError("graph has no layers");
  if (graph.edges.size() + 1 != graph.layers.size()) {
    throw ConsistencyError("graph edge layers do not match node layers");
  }
  return KBestSearch(graph, k, options).run();
}

double path_weight(const RelevanceGraph& graph, const Path& path, PathAggregation aggregation) {
  if (path.nodes.size() != graph.layers.size()) {
    throw ConsistencyError("path length differs from graph depth");
  }
  if (graph.edges.empty()) return 0.0;
  double w = aggregation == PathAggregation::Min ? std::numeric_limits<double>::infinity() : 0.0;
  for (std::size_t g = 0; g + 1 < path.nodes.size(); ++g) {
    const auto& e = graph.edges[g];
    if (path.nodes[g] >= e.rows || path.nodes[g + 1] >= e.cols) {
      throw ConsistencyError("path node outside graph layer " + std::to_string(g));
    }
    const double edge = e.at(path.nodes[g], path.nodes[g + 1]);
    w = aggregation == PathAggregation::Min ? std::min(w, edge) : w + edge;
  }
  return w;
}

ChannelMask paths_to_mask(const RelevanceGraph& graph, std::span<const Path> paths) {
  ChannelMask mask;
  std::vector<std::set<std::size_t>> kept(graph.layers.size());
  for (const auto& p : paths) {
    if (p.nodes.size() != graph.layers.size()) {
      throw ConsistencyError("path length differs from graph depth");
    }
    for (std::size_t g = 0; g < p.nodes.size(); ++g) kept[g].insert(p.nodes[g]);
  }
  for (std::size_t g = 0; g < graph.layers.size(); ++g) {
    const auto& layer = graph.layers[g];
    if (layer.is_input() || layer.kind != LayerKind::Conv) continue;
    mask.kept[*layer.network_layer] = {kept[g].begin(), kept[g].end()};
  }
  return mask;
}

namespace {

std::string node_id(std::size_t g, std::size_t c) { return fmt::format("L{}C{}", g, c); }

}  // namespace

std::string graph_to_dot(const RelevanceGraph& graph, std::span<const Path> paths,
                         GraphExportOptions options) {
  std::string out = "digraph relevance {\n  rankdir=LR;\n  node [shape=ellipse fontsize=10];\n";
  for (std::size_t g = 0; g < graph.layers.size(); ++g) {
    const auto& layer = graph.layers[g];
    out += fmt::format("  subgraph cluster_{} {{\n    label=\"{}\";\n", g,
                       layer.is_input() ? std::string("input")
                                        : fmt::format("layer {} ({})", *layer.network_layer,
                                                      layer_kind_name(layer.kind)));
    for (std::size_t c = 0; c < layer.size(); ++c) {
      out += fmt::format("    {} [label=\"{}:{:.3}\"{}];\n", node_id(g, c), node_id(g, c),
                         layer.scores[c], layer.retained[c] ? "" : " style=dashed");
    }
    out += "  }\n";
  }
  const bool all_edges = graph.edge_count() <= options.max_edges;
  if (all_edges) {
    for (std::size_t g = 0; g < graph.edges.size(); ++g) {
      const auto& e = graph.edges[g];
      for (std::size_t j = 0; j < e.rows; ++j) {
        for (std::size_t k = 0; k < e.cols; ++k) {
          out += fmt::format("  {} -> {} [color=gray label=\"{:.3}\"];\n", node_id(g, j),
                             node_id(g + 1, k), e.at(j, k));
        }
      }
    }
  } else {
    out += fmt::format("  // {} edges omitted (limit {})\n", graph.edge_count(), options.max_edges);
  }
  for (std::size_t p = 0; p < paths.size(); ++p) {
    out += fmt::format("  // path {} weight={:.6}\n", p + 1, paths[p].weight);
    for (std::size_t g = 0; g + 1 < paths[p].nodes.size(); ++g) {
      out += fmt::format("  {} -> {} [color=red penwidth=2 tooltip=\"path {}\"];\n",
                         node_id(g, paths[p].nodes[g]), node_id(g + 1, paths[p].nodes[g + 1]), p + 1);
    }
  }
  out += "}\n";
  return out;
}

std::string graph_to_json(const RelevanceGraph& graph, std::span<const Path> paths,
                          GraphExportOptions options) {
  using nlohmann::json;
  json doc;
  doc["layers"] = json::array();
  for (std::size_t g = 0; g < graph.layers.size(); ++g) {
    const auto& layer = graph.layers[g];
    json l;
    l["index"] = g;
    l["boundary"] = layer.boundary;
    l["network_layer"] = layer.network_layer ? json(*layer.network_layer) : json(nullptr);
    l["kind"] = layer.is_input() ? "input" : layer_kind_name(layer.kind);
    l["scores"] = layer.scores;
    std::vector<bool> retained(layer.retained.begin(), layer.retained.end());
    l["retained"] = retained;
    doc["layers"].push_back(std::move(l));
  }
  const bool all_edges = graph.edge_count() <= options.max_edges;
  doc["edges_omitted"] = !all_edges;
  doc["edges"] = json::array();
  if (all_edges) {
    for (std::size_t g = 0; g < graph.edges.size(); ++g) {
      const auto& e = graph.edges[g];
      json m = json::array();
      for (std::size_t j = 0; j < e.rows; ++j) {
        m.push_back(std::vector<float>(e.weights.begin() + static_cast<std::ptrdiff_t>(j * e.cols),
                                       e.weights.begin() + static_cast<std::ptrdiff_t>((j + 1) * e.cols)));
      }
      doc["edges"].push_back({{"from_layer", g}, {"weights", std::move(m)}});
    }
  }
  doc["paths"] = json::array();
  for (const auto& p : paths) doc["paths"].push_back({{"nodes", p.nodes}, {"weight", p.weight}});
  return doc.dump(1) + "\n";
}

}  // namespace lrp
