#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "lrpgraph/graph.hpp"
#include "lrpgraph/network.hpp"
#include "lrpgraph/tensor.hpp"

namespace lrp {

// Mean squared error. Throws ShapeError on length mismatch or empty input.
double mse(std::span<const float> pred, std::span<const float> act);
double mse(const Tensor& pred, const Tensor& act);

// Symmetric MAPE in percent, within [0, 200]. Pairs with |p| + |a| == 0
// contribute 0.
double smape(std::span<const float> pred, std::span<const float> act);
double smape(const Tensor& pred, const Tensor& act);

enum class KRule {
  // smallest k whose MSE is at most the sweep mean
  Mean,
  // k with the largest second difference of MSE; Mean when fewer than 3 rows
  Elbow,
};

KRule parse_k_rule(const std::string& name);

struct KChoice {
  std::size_t k = 0;
  std::string rationale;
};

// mse_by_k[i] is the MSE at k = i + 1.
KChoice choose_k(std::span<const double> mse_by_k, KRule rule);

struct MetricsRow {
  std::size_t k = 0;
  double mse = 0.0;
  double smape = 0.0;
  // Path-masked logits.
  Tensor prediction;
  std::size_t predicted_class = 0;
  float class_score = 0.0f;
};

struct MetricsReport {
  std::size_t class_index = 0;
  std::vector<MetricsRow> rows;
  std::size_t chosen_k = 0;
  std::string rationale;
  // The graph holds fewer than k_max paths; later rows reuse all of them.
  bool truncated = false;
};

struct SweepOptions {
  KRule rule = KRule::Mean;
  PathSearchOptions search;
  // Worker threads for the masked forward passes; 0 uses the hardware count.
  std::size_t jobs = 1;
};

// For k = 1..k_max: logits with only the channels on the top-k paths kept,
// compared to the unmasked logits.
MetricsReport k_sweep(const Network& net, const Tensor& image, const RelevanceGraph& graph,
                      std::size_t class_index, std::size_t k_max, const SweepOptions& options = {});

// "k,mse,smape" header plus one line per row.
std::string metrics_csv(const MetricsReport& report);
std::string metrics_table(const MetricsReport& report, const Network& net);

}  // namespace lrp
